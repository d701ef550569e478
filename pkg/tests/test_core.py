import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipmark.core import (
    Distribution,
    InvalidKey,
    InvalidParams,
    InvalidPermutation,
    NegativeProbability,
    NotNormalized,
    OutOfVocab,
    Permutation,
    SecretKey,
    Vocabulary,
    WatermarkParams,
    effective_gamma,
    permutation_inverse,
    red_list_size,
    validate_distribution,
)


def test_validate_accepts_and_freezes():
    d = validate_distribution([0.2, 0.3, 0.5])
    assert isinstance(d, Distribution)
    assert d.size == 3
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_validate_clamps_dust():
    d = validate_distribution([0.5, 0.5 + 5e-13, -5e-13])
    assert d[2] == 0.0
    assert abs(d.probs.sum() - 1.0) < 1e-15


def test_validate_rejects_negative_and_unnormalized():
    with pytest.raises(NegativeProbability):
        validate_distribution([1.1, -0.1])
    with pytest.raises(NotNormalized):
        validate_distribution([0.5, 0.4])
    with pytest.raises(NotNormalized):
        validate_distribution([np.nan, 1.0])
    with pytest.raises(InvalidParams):
        validate_distribution([])


def test_permutation_validation():
    p = Permutation([2, 0, 1])
    assert p.size == 3
    with pytest.raises(InvalidPermutation):
        Permutation([0, 0, 1])
    with pytest.raises(InvalidPermutation):
        Permutation([0, 3, 1])
    with pytest.raises(InvalidPermutation):
        Permutation([])


@given(st.permutations(list(range(9))))
def test_inverse_roundtrip(order):
    p = Permutation(order)
    inv = permutation_inverse(p)
    assert np.array_equal(p.order[inv.order], np.arange(9))
    assert permutation_inverse(inv) == p
    assert np.array_equal(p.ranks(), inv.order)
    assert p.reversed().reversed() == p


def test_secret_key():
    k = SecretKey.from_hex("00" * 16)
    assert k.hex() == "00" * 16
    assert "00" not in repr(k)
    with pytest.raises(InvalidKey):
        SecretKey(b"short")
    with pytest.raises(InvalidKey):
        SecretKey.from_hex("zz" * 16)


def test_params_bounds():
    WatermarkParams(alpha=0.0, gamma=0.0, window=3)
    WatermarkParams(alpha=1.0)
    for bad in ({"alpha": -0.1}, {"alpha": 1.1}, {"gamma": 1.0}, {"window": 0}, {"window": 1.5}):
        with pytest.raises(InvalidParams):
            WatermarkParams(**bad)


def test_vocabulary():
    v = Vocabulary(3, ("a", "b", "c"))
    assert v.decode([2, 0]) == "c a"
    assert v.check(2) == 2
    with pytest.raises(OutOfVocab):
        v.check(3)
    with pytest.raises(InvalidParams):
        Vocabulary(2, ("a",))


@pytest.mark.parametrize(
    "gamma,n,expected",
    [(0.5, 10, 5), (0.3, 10, 3), (0.5, 5, 3), (0.0, 7, 0), (0.99, 4, 4), (0.1, 1294, 130)],
)
def test_red_list_size(gamma, n, expected):
    assert red_list_size(gamma, n) == expected
    assert effective_gamma(gamma, n) == expected / n
