"""
Reweighting a distribution without changing it on average
=========================================================

A cipher is a keyed ordering of the vocabulary. The DiP reweight lays the
token probabilities out on [0, 1] in cipher order and reads off new masses,
so any single cipher tilts the distribution, yet the average over all
ciphers is the original distribution.
"""

import itertools

import numpy as np

from dipmark import Permutation, dip_reweight, validate_distribution

p = validate_distribution([0.5, 0.3, 0.2])
print("original      ", p.probs)

##############################################################################
# One cipher moves mass toward the tokens it ranks last.
theta = Permutation([0, 1, 2])
print("one cipher    ", dip_reweight(p, theta, alpha=0.45).probs)

##############################################################################
# Averaging over every ordering of three tokens gives the input back.
outs = [dip_reweight(p, Permutation(o), 0.45).probs for o in itertools.permutations(range(3))]
print("average of 3! ", np.mean(outs, axis=0))

##############################################################################
# A cipher and its reverse already cancel: their sum is twice the input.
pair = dip_reweight(p, theta, 0.45).probs + dip_reweight(p, theta.reversed(), 0.45).probs
print("cipher + reverse / 2", pair / 2)
