"""Distribution-preserving watermarking for token generators."""

__version__ = "0.1.0"

from .core import (
    Distribution,
    DipmarkError,
    Permutation,
    SecretKey,
    Vocabulary,
    WatermarkParams,
    permutation_inverse,
    validate_distribution,
)
from .cipher import CIPHER_VERSION, CipherCache, TextureKey, derive_seed, permutation_from_seed
from .reweight import ReweightStrategy, apply, dip_reweight, pw_alpha, soft_reweight
from .lm import NGramModel, TableModel, default_provider, ngram_train, top_k_truncate
from .generator import GenerationConfig, generate, generate_unwatermarked
from .detector import DetectionReport, DetectorConfig, detect, threshold_for_fpr
from .robustness import AttackSpec, attack, certified_radius, certified_radius_fixed_length

__all__ = [
    "CIPHER_VERSION",
    "AttackSpec",
    "CipherCache",
    "DetectionReport",
    "DetectorConfig",
    "DipmarkError",
    "Distribution",
    "GenerationConfig",
    "NGramModel",
    "Permutation",
    "ReweightStrategy",
    "SecretKey",
    "TableModel",
    "TextureKey",
    "Vocabulary",
    "WatermarkParams",
    "apply",
    "attack",
    "certified_radius",
    "certified_radius_fixed_length",
    "default_provider",
    "derive_seed",
    "detect",
    "dip_reweight",
    "generate",
    "generate_unwatermarked",
    "ngram_train",
    "permutation_from_seed",
    "permutation_inverse",
    "pw_alpha",
    "soft_reweight",
    "threshold_for_fpr",
    "top_k_truncate",
    "validate_distribution",
]
