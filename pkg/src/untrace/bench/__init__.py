"""Desk-scale evaluation bench: procedural generators with known
fingerprints, surrogate attribution classifiers, and report plumbing."""

from .features import dct_features, dct_log_map
from .generators import (
    DEFAULT_TINYGMS,
    TinyGM,
    generate_corpus,
    synthesize_real_corpus,
)
from .models import (
    AmKind,
    AsrResult,
    AttributionModel,
    asr,
    attribute,
    attribute_batch,
    evaluate_attack,
    load_am,
    save_am,
    train_am,
    train_am_arrays,
)
from .report import FULL_SCALE_REFERENCE, EvalReport, canonical_json

__all__ = [
    "AmKind",
    "AsrResult",
    "AttributionModel",
    "DEFAULT_TINYGMS",
    "EvalReport",
    "FULL_SCALE_REFERENCE",
    "TinyGM",
    "asr",
    "attribute",
    "attribute_batch",
    "canonical_json",
    "dct_features",
    "dct_log_map",
    "evaluate_attack",
    "generate_corpus",
    "load_am",
    "save_am",
    "synthesize_real_corpus",
    "train_am",
    "train_am_arrays",
]
