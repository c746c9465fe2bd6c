"""Shared primitives: images, datasets, seeded randomness, configuration."""

from .config import (
    AblationFlags,
    BaselineConfig,
    BenchConfig,
    CoreConfig,
    DefenseConfig,
    GbmsParams,
    LossWeights,
    ModelSpec,
    RunConfig,
    SynthesisConfig,
    TrainingConfig,
)
from .dataset import REAL_LABEL, Dataset, DatasetItem
from .images import (
    Image,
    ImageCropWarning,
    as_image,
    clip01,
    from_hwc,
    load_image,
    save_image,
    to_hwc,
    validate_image,
)
from .rng import Rng, derive_seed

__all__ = [
    "AblationFlags",
    "BaselineConfig",
    "BenchConfig",
    "CoreConfig",
    "Dataset",
    "DatasetItem",
    "DefenseConfig",
    "GbmsParams",
    "Image",
    "ImageCropWarning",
    "LossWeights",
    "ModelSpec",
    "REAL_LABEL",
    "Rng",
    "RunConfig",
    "SynthesisConfig",
    "TrainingConfig",
    "as_image",
    "clip01",
    "derive_seed",
    "from_hwc",
    "load_image",
    "save_image",
    "to_hwc",
    "validate_image",
]
