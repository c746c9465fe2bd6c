"""Run configuration.

Every pipeline knob lives in one RunConfig, loadable from a TOML file with
sections mirroring the module names. Every field has a default; a file
only needs the fields it overrides. Unknown sections or keys are rejected
so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ContractError, DataIOError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SAMPLING_MODES = ("nearest", "bilinear", "bicubic")


@dataclass(frozen=True)
class CoreConfig:
    resolution: int = 128  # working side length for bench corpora

    def validate(self):
        if self.resolution % 4 or self.resolution < 32:
            raise ContractError("resolution must be >= 32 and divisible by 4")


@dataclass(frozen=True)
class SynthesisConfig:
    p1: float = 0.9  # probability of applying the resampling stage
    p2: float = 0.9  # probability of applying a transform
    noise_sigma_range: tuple[float, float] = (5.0, 20.0)  # 0-255 scale
    blur_kernel_sizes: tuple[int, ...] = (1, 3, 5)
    crop_offset_range: tuple[float, float] = (0.05, 0.20)
    jpeg_quality_range: tuple[int, int] = (10, 75)
    relight_factor_range: tuple[float, float] = (0.5, 1.5)
    sampling_modes: tuple[str, ...] = SAMPLING_MODES
    downscale_factor: int = 2

    def validate(self):
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must be in [0,1], got {v}")
        for name in ("noise_sigma_range", "crop_offset_range",
                     "jpeg_quality_range", "relight_factor_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ContractError(f"{name} is empty: {lo}..{hi}")
        if not self.blur_kernel_sizes or any(
            k < 1 or k % 2 == 0 for k in self.blur_kernel_sizes
        ):
            raise ContractError("blur_kernel_sizes must be odd and >= 1")
        if not self.sampling_modes or any(
            m not in SAMPLING_MODES for m in self.sampling_modes
        ):
            raise ContractError(f"sampling_modes must be drawn from {SAMPLING_MODES}")
        if self.downscale_factor < 2:
            raise ContractError("downscale_factor must be >= 2")


@dataclass(frozen=True)
class ModelSpec:
    """Encoder-decoder layout: 3 convs (stride 1,2,2) + residual blocks at
    4x base width, then two x2 nearest-upsample stages and a final conv,
    sigmoid output. Reflection padding throughout."""

    base_channels: int = 32
    residual_blocks: int = 5
    io_kernel: int = 9  # first and last conv kernel

    def validate(self):
        if self.base_channels < 1 or self.residual_blocks < 1:
            raise ContractError("model spec must have positive sizes")
        if self.io_kernel % 2 == 0:
            raise ContractError("io_kernel must be odd")


DEFAULT_PERCEPTUAL_LAYERS = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")


@dataclass(frozen=True)
class LossWeights:
    beta: tuple[float, float, float] = (0.5, 0.1, 0.4)
    spectral_scales: tuple[float, ...] = (1.0, 0.5, 0.25)
    spectral_scale_weights: tuple[float, ...] = (0.5, 0.3, 0.2)
    perceptual_layers: tuple[str, ...] = DEFAULT_PERCEPTUAL_LAYERS
    epsilon: float = 1e-8
    # False: norms of the flattened difference (documented convention);
    # True: per-element means, which keeps the three terms commensurate.
    normalize: bool = False

    @property
    def perceptual_layer_weights(self) -> tuple[float, ...]:
        n = len(self.perceptual_layers)
        return tuple(1.0 / n for _ in range(n))

    def validate(self):
        if len(self.beta) != 3:
            raise ContractError("beta must have exactly three entries")
        if any(b < 0 for b in self.beta):
            raise ContractError("beta entries must be nonnegative")
        if len(self.spectral_scales) != len(self.spectral_scale_weights):
            raise ContractError("spectral scales and weights differ in length")
        if any(w < 0 for w in self.spectral_scale_weights):
            raise ContractError("spectral scale weights must be nonnegative")
        if any(s <= 0 for s in self.spectral_scales):
            raise ContractError("spectral scales must be positive")
        if not self.perceptual_layers:
            raise ContractError("perceptual_layers must be nonempty")
        if self.epsilon <= 0:
            raise ContractError("epsilon must be > 0")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 1234  # master seed; sub-streams are derived from it
    crop: int = 64  # training crop side; the model itself is size-agnostic
    steps_per_epoch: int = 0  # 0 = one pass over the data
    checkpoint_every: int = 0  # steps; 0 disables periodic checkpoints

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")
        if self.crop % 4 or self.crop < 16:
            raise ContractError("crop must be >= 16 and divisible by 4")


@dataclass(frozen=True)
class AblationFlags:
    use_sampling_unit: bool = True
    use_transformation_unit: bool = True
    use_gbms: bool = True
    use_spatial_loss: bool = True
    use_spectral_loss: bool = True

    def validate(self):
        pass

    def ablations(self) -> dict[str, "AblationFlags"]:
        """The five single-flag-off configurations."""
        out = {}
        for f in dataclasses.fields(self):
            out[f.name] = dataclasses.replace(self, **{f.name: False})
        return out


@dataclass(frozen=True)
class GbmsParams:
    blur_kernel: int = 3
    blur_sigma: float = 0.8
    spatial_radius: int = 4  # pixels
    color_radius: float = 0.04  # unit-interval rgb distance
    iterations: int = 5

    def validate(self):
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ContractError("blur_kernel must be odd and >= 1")
        if self.spatial_radius <= 0 or self.color_radius <= 0:
            raise ContractError("mean-shift radii must be > 0")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")


@dataclass(frozen=True)
class BenchConfig:
    attack_train_count: int = 2000  # real images used to train the attack model
    per_class: int = 300  # corpus size per label for attribution training
    eval_per_gm: int = 50  # held-back images per generator for attack eval
    holdout_fraction: float = 0.2  # calibration split inside train_am
    cnn_epochs: int = 24
    cnn_batch_size: int = 32
    cnn_learning_rate: float = 3e-3
    accuracy_gate: float = 0.90

    def validate(self):
        if not 0.0 < self.holdout_fraction < 0.5:
            raise ContractError("holdout_fraction must be in (0, 0.5)")
        if not 0.0 < self.accuracy_gate <= 1.0:
            raise ContractError("accuracy_gate must be in (0, 1]")


@dataclass(frozen=True)
class BaselineConfig:
    epsilon: float = 8.0 / 255.0
    step: float = 2.0 / 255.0
    iterations: int = 10

    def validate(self):
        if self.epsilon <= 0:
            raise ContractError("epsilon must be > 0")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")


@dataclass(frozen=True)
class DefenseConfig:
    augmentation_ratio: float = 1.0  # adversarial:clean
    inverter_pairs: int = 500
    inverter_epochs: int = 6
    inverter_batch_size: int = 8
    inverter_learning_rate: float = 1e-3

    def validate(self):
        if self.augmentation_ratio <= 0:
            raise ContractError("augmentation_ratio must be > 0")
        if self.inverter_pairs < 1:
            raise ContractError("inverter_pairs must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    core: CoreConfig = field(default_factory=CoreConfig)
    datasynth: SynthesisConfig = field(default_factory=SynthesisConfig)
    attack_model: ModelSpec = field(default_factory=ModelSpec)
    losses: LossWeights = field(default_factory=LossWeights)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    elimination: GbmsParams = field(default_factory=GbmsParams)
    bench: BenchConfig = field(default_factory=BenchConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()
        return self

    @property
    def seed(self) -> int:
        return self.training.seed

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs).validate()

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @staticmethod
    def load(path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except OSError as e:
            raise DataIOError(f"cannot read config {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ContractError(f"malformed config {path}: {e}") from e
        return RunConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        sections = {f.name: f for f in dataclasses.fields(RunConfig)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ContractError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, f in sections.items():
            if name in raw:
                kwargs[name] = _build_section(f.default_factory, raw[name], name)
        return RunConfig(**kwargs).validate()


def _build_section(dc_type, mapping: dict, section: str):
    if not isinstance(mapping, dict):
        raise ContractError(f"config section [{section}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(mapping) - set(fields)
    if unknown:
        raise ContractError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return dc_type(**kwargs)
    except TypeError as e:
        raise ContractError(f"bad value in [{section}]: {e}") from e


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
