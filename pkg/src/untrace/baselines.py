"""Additive attack baselines: x + p under an infinity-norm budget.

FIXED_PERTURBATION shares one pre-drawn perturbation across every image
(the classic shared-p additive signature: all residuals identical).
GRADIENT_SIGN attacks ascend the differentiable classifier's loss with
sign steps, single-shot or iterated with projection. TRANSFORMATION runs
the stochastic transform stage as a non-learned baseline. All outputs
are clamped to [0,1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch

from .bench.models import AttributionModel
from .core.config import BaselineConfig, SynthesisConfig
from .core.images import Image, clip01, validate_image
from .core.rng import Rng
from .datasynth import transform_unit
from .errors import ContractError


class AdditiveKind(enum.Enum):
    FIXED_PERTURBATION = "fixed_perturbation"
    GRADIENT_SIGN_SINGLE = "gradient_sign_single"
    GRADIENT_SIGN_ITERATIVE = "gradient_sign_iterative"
    TRANSFORMATION = "transformation"


@dataclass(frozen=True)
class AdditiveAttackConfig:
    kind: AdditiveKind
    epsilon: float = 8.0 / 255.0
    step: float = 2.0 / 255.0
    iterations: int = 10
    seed: int = 7  # fixed-p derivation and transform randomness
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)

    def validate(self):
        if self.epsilon <= 0:
            raise ContractError("epsilon must be > 0")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        return self

    @staticmethod
    def from_defaults(kind: AdditiveKind, base: BaselineConfig,
                      seed: int = 7,
                      synthesis: SynthesisConfig | None = None
                      ) -> "AdditiveAttackConfig":
        return AdditiveAttackConfig(
            kind=kind, epsilon=base.epsilon, step=base.step,
            iterations=base.iterations, seed=seed,
            synthesis=synthesis or SynthesisConfig(),
        ).validate()


def fixed_perturbation(shape: tuple[int, ...], cfg: AdditiveAttackConfig
                       ) -> np.ndarray:
    """The shared perturbation for this config and image shape.

    Derived from cfg.seed alone, so every call draws the same p: all
    images attacked under one config share one perturbation exactly.
    Images live on the 8-bit lattice, so p is truncated onto it; the
    shared residual then survives file round-trips bit-identically
    (truncation rather than rounding keeps |p| within the budget for
    any epsilon).
    """
    label = "p" + "x".join(str(s) for s in shape)
    r = Rng(cfg.seed).child(label)
    p = r.uniform(-cfg.epsilon, cfg.epsilon, size=shape)
    p = np.trunc(p * 255.0) / 255.0
    return p.astype(np.float32)


def _gradient_sign(x: Image, am: AttributionModel,
                   cfg: AdditiveAttackConfig, iterative: bool) -> Image:
    if not am.differentiable:
        raise ContractError(
            "gradient attacks need the differentiable pixel classifier"
        )
    x0 = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    batched = x0.ndim == 4
    if not batched:
        x0 = x0.unsqueeze(0)
    # the attack flees whatever the classifier currently believes, so the
    # target labels are its own clean predictions
    with torch.no_grad():
        labels = am.torch_logits(x0).argmax(dim=1)
    steps = cfg.iterations if iterative else 1
    step = cfg.step if iterative else cfg.epsilon
    adv = x0.clone()
    for _ in range(steps):
        adv = adv.detach().requires_grad_(True)
        loss = torch.nn.functional.cross_entropy(am.torch_logits(adv), labels)
        (grad,) = torch.autograd.grad(loss, adv)
        with torch.no_grad():
            adv = adv + step * grad.sign()
            adv = x0 + torch.clamp(adv - x0, -cfg.epsilon, cfg.epsilon)
            adv = torch.clamp(adv, 0.0, 1.0)
    out = adv.detach().numpy().astype(np.float32)
    return out if batched else out[0]


def additive_attack(x: Image, am: AttributionModel | None,
                    cfg: AdditiveAttackConfig,
                    rng: Rng | None = None) -> Image:
    """One adversarial image (or batch) under the configured attack.

    TRANSFORMATION is stochastic; pass rng for per-image variation,
    otherwise it derives a fixed stream from cfg.seed.
    """
    cfg.validate()
    if x.ndim == 3:
        validate_image(x)
    if cfg.kind is AdditiveKind.FIXED_PERTURBATION:
        shape = x.shape[-3:]
        p = fixed_perturbation(shape, cfg)
        return clip01(x + p)
    if cfg.kind is AdditiveKind.TRANSFORMATION:
        r = rng or Rng(cfg.seed).child("transform")
        if x.ndim == 4:
            return np.stack([
                transform_unit(img, cfg.synthesis, r.child(f"i{i}"))
                for i, img in enumerate(x)
            ])
        return transform_unit(x, cfg.synthesis, r)
    iterative = cfg.kind is AdditiveKind.GRADIENT_SIGN_ITERATIVE
    return _gradient_sign(x, am, cfg, iterative)


def additive_attack_corpus(images: np.ndarray, am: AttributionModel | None,
                           cfg: AdditiveAttackConfig,
                           batch_size: int = 32) -> np.ndarray:
    """Attack a stack (N,3,H,W); per-image randomness for TRANSFORMATION."""
    if cfg.kind is AdditiveKind.TRANSFORMATION:
        root = Rng(cfg.seed).child("transform")
        return np.stack([
            transform_unit(img, cfg.synthesis, root.child(f"img{i:06d}"))
            for i, img in enumerate(images)
        ])
    outs = []
    for start in range(0, images.shape[0], batch_size):
        outs.append(additive_attack(images[start:start + batch_size], am, cfg))
    return np.concatenate(outs, axis=0)
