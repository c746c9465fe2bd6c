"""Defense-side experiments: adversarial retraining and approximate inversion.

Adversarial training rebuilds an attribution model from clean data
augmented with adversarial copies of the generated-class images. A
scenario declares which attacks the defender knows about: the black-box
defender has never seen the multiplicative attack, while the white-box
defender trains on its outputs directly. The inversion experiment trains
a regression network mapping adversarial images back toward originals and
re-attributes the inverted images.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .attack_model import AttackModel
from .baselines import AdditiveAttackConfig, AdditiveKind, additive_attack_corpus
from .bench.models import (
    AmKind,
    AttributionModel,
    evaluate_attack,
    train_am_arrays,
)
from .bench.report import EvalReport
from .core.config import (
    BaselineConfig,
    BenchConfig,
    DefenseConfig,
    GbmsParams,
    SynthesisConfig,
)
from .core.dataset import REAL_LABEL, Dataset
from .core.images import clip01
from .core.rng import Rng
from .elimination import attack_corpus
from .errors import ContractError

SOURCE_OURS = "ours"
ADDITIVE_SOURCE_NAMES = tuple(k.value for k in AdditiveKind)
KNOWN_SOURCES = (SOURCE_OURS,) + ADDITIVE_SOURCE_NAMES


class DefenseMode(enum.Enum):
    BLACK_BOX = "black_box"
    WHITE_BOX = "white_box"


@dataclass(frozen=True)
class DefenseScenario:
    """Which attacks the defender can generate training data from.

    The white-box defender by definition trains on the multiplicative
    attack; the black-box defender by definition cannot, and the hygiene
    checks below keep its outputs out of every defender-side array.
    """

    mode: DefenseMode
    attack_sources: tuple[str, ...]
    augmentation_ratio: float = 1.0  # adversarial images per fake image

    def validate(self) -> "DefenseScenario":
        if not self.attack_sources:
            raise ContractError("scenario needs at least one attack source")
        unknown = sorted(set(self.attack_sources) - set(KNOWN_SOURCES))
        if unknown:
            raise ContractError(f"unknown attack sources: {unknown}")
        if len(set(self.attack_sources)) != len(self.attack_sources):
            raise ContractError("duplicate attack sources")
        has_ours = SOURCE_OURS in self.attack_sources
        if self.mode is DefenseMode.WHITE_BOX and not has_ours:
            raise ContractError(
                "white-box scenario must list the multiplicative attack"
            )
        if self.mode is DefenseMode.BLACK_BOX and has_ours:
            raise ContractError(
                "black-box scenario cannot list the multiplicative attack"
            )
        if self.augmentation_ratio <= 0:
            raise ContractError("augmentation_ratio must be > 0")
        return self

    @staticmethod
    def black_box(ratio: float = 1.0) -> "DefenseScenario":
        return DefenseScenario(
            DefenseMode.BLACK_BOX, ADDITIVE_SOURCE_NAMES, ratio
        ).validate()

    @staticmethod
    def white_box(ratio: float = 1.0) -> "DefenseScenario":
        return DefenseScenario(
            DefenseMode.WHITE_BOX, (SOURCE_OURS,) + ADDITIVE_SOURCE_NAMES, ratio
        ).validate()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "attack_sources": list(self.attack_sources),
            "augmentation_ratio": self.augmentation_ratio,
        }


@dataclass
class DefenseBudgets:
    """Everything the defender experiments need besides data and a seed."""

    bench: BenchConfig = field(default_factory=BenchConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    # the attacker's artifacts, needed only when "ours" is a source
    attack_model: AttackModel | None = None
    gbms: GbmsParams | None = None
    use_gbms: bool = True
    # differentiable stand-in for gradient-sign sources when the model
    # being hardened is not itself differentiable
    gradient_surrogate: AttributionModel | None = None
    attack_seed: int = 7


def apply_attack_source(source: str, images: np.ndarray,
                        budgets: DefenseBudgets,
                        surrogate: AttributionModel | None = None
                        ) -> np.ndarray:
    """Adversarial copies of `images` under one named attack source."""
    if source == SOURCE_OURS:
        if budgets.attack_model is None or budgets.gbms is None:
            raise ContractError(
                "the multiplicative source needs attack_model and gbms budgets"
            )
        return attack_corpus(
            budgets.attack_model, images, budgets.gbms, budgets.use_gbms
        )
    kind = AdditiveKind(source)
    cfg = AdditiveAttackConfig.from_defaults(
        kind, budgets.baselines, seed=budgets.attack_seed,
        synthesis=budgets.synthesis,
    )
    gradient = kind in (
        AdditiveKind.GRADIENT_SIGN_SINGLE, AdditiveKind.GRADIENT_SIGN_ITERATIVE
    )
    am = surrogate if gradient else None
    if gradient and (am is None or not am.differentiable):
        raise ContractError(
            f"{source} needs a differentiable attribution model"
        )
    return additive_attack_corpus(images, am, cfg)


def _accuracy(am: AttributionModel, images: np.ndarray,
              labels: list[str]) -> float:
    probs = am.predict_proba(images)
    cls_index = {c: i for i, c in enumerate(am.labels)}
    y = np.asarray([cls_index[lb] for lb in labels])
    return float((probs.argmax(axis=1) == y).mean())


def _holdout_split(labels: list[str], fraction: float, rng: Rng
                   ) -> tuple[np.ndarray, np.ndarray]:
    by_label: dict[str, list[int]] = {}
    for i, lb in enumerate(labels):
        by_label.setdefault(lb, []).append(i)
    fit, hold = [], []
    for lb in sorted(by_label):
        idx = np.asarray(by_label[lb])
        order = rng.child(f"holdout/{lb}").permutation(len(idx))
        n_hold = max(1, int(round(fraction * len(idx))))
        hold.extend(idx[order[:n_hold]].tolist())
        fit.extend(idx[order[n_hold:]].tolist())
    return np.asarray(sorted(fit)), np.asarray(sorted(hold))


def adversarial_training(am_kind: AmKind, clean: Dataset,
                         scenario: DefenseScenario,
                         budgets: DefenseBudgets | None = None,
                         rng: Rng | None = None) -> AttributionModel:
    """Harden an attribution model by retraining on adversarial examples.

    Carves a clean holdout, trains a pre-hardening model on the clean
    remainder, augments that remainder with adversarial copies of its
    generated-class images (true labels kept), retrains from scratch, and
    returns the hardened model. Clean accuracy of both models on the same
    holdout lands in the returned model's meta.
    """
    scenario.validate()
    budgets = budgets or DefenseBudgets()
    rng = rng or Rng(0)

    images = clean.load_all()
    labels = clean.labels()
    label_set = clean.label_set
    fit_idx, hold_idx = _holdout_split(
        labels, budgets.bench.holdout_fraction, rng
    )
    fit_images = images[fit_idx]
    fit_labels = [labels[i] for i in fit_idx]
    hold_images = images[hold_idx]
    hold_labels = [labels[i] for i in hold_idx]

    before = train_am_arrays(
        fit_images, fit_labels, am_kind, cfg=budgets.bench,
        rng=rng.child("pre"), gate=False, label_set=label_set,
    )
    acc_before = _accuracy(before, hold_images, hold_labels)

    # the defender only ever sees attacked copies of generated images;
    # attacking real images would not happen in deployment
    fake_idx = np.asarray(
        [i for i, lb in enumerate(fit_labels) if lb != REAL_LABEL]
    )
    if fake_idx.size == 0:
        raise ContractError("clean dataset has no generated-class images")
    n_adv = int(round(scenario.augmentation_ratio * fake_idx.size))
    n_adv = max(len(scenario.attack_sources), min(n_adv, fake_idx.size))
    order = rng.child("augment").permutation(fake_idx.size)
    chosen = fake_idx[order[:n_adv]]

    sources = tuple(sorted(scenario.attack_sources))
    surrogate = before if before.differentiable else budgets.gradient_surrogate
    adv_images, adv_labels, adv_tags = [], [], []
    for s_i, source in enumerate(sources):
        group = chosen[s_i::len(sources)]
        if group.size == 0:
            continue
        attacked = apply_attack_source(
            source, fit_images[group], budgets, surrogate
        )
        adv_images.append(attacked)
        adv_labels.extend(fit_labels[i] for i in group)
        adv_tags.extend([source] * group.size)

    if scenario.mode is DefenseMode.BLACK_BOX and SOURCE_OURS in adv_tags:
        raise ContractError(
            "black-box hygiene violated: multiplicative outputs in training set"
        )

    aug_images = np.concatenate([fit_images] + adv_images, axis=0)
    aug_labels = fit_labels + adv_labels
    hardened = train_am_arrays(
        aug_images, aug_labels, am_kind, cfg=budgets.bench,
        rng=rng.child("hardened"), gate=False, label_set=label_set,
    )
    acc_after = _accuracy(hardened, hold_images, hold_labels)

    counts = {s: adv_tags.count(s) for s in sources}
    hardened.meta.update({
        "scenario": scenario.to_dict(),
        "adversarial_counts": counts,
        "clean_accuracy_before": acc_before,
        "clean_accuracy_after": acc_after,
    })
    return hardened


class InverterKind(enum.Enum):
    DENOISER_STYLE = "denoiser_style"
    AUTOENCODER_STYLE = "autoencoder_style"


class _DenoiserNet(nn.Module):
    """Plain conv stack predicting a residual correction."""

    def __init__(self, width: int = 48, depth: int = 8):
        super().__init__()
        layers: list[nn.Module] = [
            nn.Conv2d(3, width, 3, padding=1), nn.ReLU(inplace=True)
        ]
        for _ in range(depth - 2):
            layers += [
                nn.Conv2d(width, width, 3, padding=1), nn.ReLU(inplace=True)
            ]
        layers.append(nn.Conv2d(width, 3, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return x + self.body(x)


class _AutoencoderNet(nn.Module):
    """Two stride-2 encoder steps mirrored by nearest-upsample decoding."""

    def __init__(self, widths: tuple[int, int] = (32, 64)):
        super().__init__()
        w1, w2 = widths
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w1, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(w1, w2, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.decoder = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w2, w1, 3, padding=1), nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w1, 3, 3, padding=1), nn.Sigmoid(),
        )

    def forward(self, x):
        return self.decoder(self.encoder(x))


def _init_inverter_net(net: nn.Module, rng: Rng) -> None:
    named = [(n, m) for n, m in net.named_modules()
             if isinstance(m, nn.Conv2d)]
    with torch.no_grad():
        for name, m in named:
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            std = float(np.sqrt(2.0 / fan_in))
            w = rng.child(f"{name}.weight").normal(
                0.0, std, size=tuple(m.weight.shape)
            )
            m.weight.copy_(torch.from_numpy(w.astype(np.float32)))
            m.bias.zero_()


@dataclass
class Inverter:
    """Shape-preserving regression from adversarial images to originals.

    `net=None` is the identity map, a useful reference point: evaluating
    through it must match evaluating the adversarial images directly.
    """

    kind: InverterKind
    net: nn.Module | None = None
    meta: dict = field(default_factory=dict)

    def invert(self, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
        if images.ndim == 3:
            return self.invert(images[None])[0]
        if images.ndim != 4 or images.shape[1] != 3:
            raise ContractError(f"expected (N,3,H,W), got {images.shape}")
        if self.net is None:
            return images.copy()
        self.net.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                chunk = torch.from_numpy(
                    np.ascontiguousarray(
                        images[start:start + batch_size], dtype=np.float32
                    )
                )
                outs.append(self.net(chunk).numpy())
        return clip01(np.concatenate(outs, axis=0))


def _coerce_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, tuple) and len(pairs) == 2 \
            and isinstance(pairs[0], np.ndarray) and pairs[0].ndim == 4:
        adv, orig = pairs
    else:
        if not pairs:
            raise ContractError("no pairs given")
        adv = np.stack([np.asarray(a, dtype=np.float32) for a, _ in pairs])
        orig = np.stack([np.asarray(o, dtype=np.float32) for _, o in pairs])
    if adv.shape != orig.shape:
        raise ContractError(
            f"pair shape mismatch: {adv.shape} vs {orig.shape}"
        )
    if adv.ndim != 4 or adv.shape[1] != 3:
        raise ContractError(f"expected (N,3,H,W) pairs, got {adv.shape}")
    return adv.astype(np.float32), orig.astype(np.float32)


def train_inverter(pairs, kind: InverterKind,
                   budgets: DefenseBudgets | None = None,
                   rng: Rng | None = None) -> Inverter:
    """Fit an inversion network on (adversarial, original) pairs.

    Plain supervised regression with an MSE objective; a held-out tenth
    of the pairs provides the validation pixel-L2 recorded in meta.
    """
    budgets = budgets or DefenseBudgets()
    cfg = budgets.defense
    rng = rng or Rng(0)
    adv, orig = _coerce_pairs(pairs)
    n = adv.shape[0]
    if n < cfg.inverter_pairs:
        raise ContractError(
            f"need >= {cfg.inverter_pairs} pairs, got {n}"
        )

    order = rng.child("split").permutation(n)
    n_val = max(1, n // 10)
    val_idx, fit_idx = order[:n_val], order[n_val:]

    net: nn.Module = (
        _DenoiserNet() if kind is InverterKind.DENOISER_STYLE
        else _AutoencoderNet()
    )
    _init_inverter_net(net, rng.child("init"))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.inverter_learning_rate)

    def val_l2() -> float:
        inv = Inverter(kind, net)
        out = inv.invert(adv[val_idx])
        diff = (out - orig[val_idx]).reshape(len(val_idx), -1)
        return float(np.sqrt((diff ** 2).sum(axis=1)).mean())

    curve = []
    net.train()
    for epoch in range(cfg.inverter_epochs):
        perm = rng.child(f"epoch{epoch}").permutation(len(fit_idx))
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(fit_idx), cfg.inverter_batch_size):
            sel = fit_idx[perm[start:start + cfg.inverter_batch_size]]
            xb = torch.from_numpy(np.ascontiguousarray(adv[sel]))
            yb = torch.from_numpy(np.ascontiguousarray(orig[sel]))
            opt.zero_grad(set_to_none=True)
            loss = torch.nn.functional.mse_loss(net(xb), yb)
            loss.backward()
            opt.step()
            epoch_loss += float(loss.item())
            batches += 1
        v = val_l2()
        net.train()
        curve.append({
            "epoch": epoch,
            "train_mse": epoch_loss / max(1, batches),
            "validation_l2": v,
        })

    meta = {
        "kind": kind.value,
        "pairs": n,
        "epochs": cfg.inverter_epochs,
        "validation_l2": curve[-1]["validation_l2"] if curve else None,
        "curve": curve,
    }
    return Inverter(kind, net, meta)


def invert_and_evaluate(inv: Inverter, am: AttributionModel,
                        adversarial, name: str = "inverted",
                        config_hash: str = "") -> EvalReport:
    """Attribute inverted adversarial images and report the residual ASR."""
    if isinstance(adversarial, Dataset):
        images = adversarial.load_all()
        labels = adversarial.labels()
    else:
        images, labels = adversarial
        labels = list(labels)
    restored = inv.invert(np.asarray(images, dtype=np.float32))
    result = evaluate_attack(am, restored, labels)
    return EvalReport.from_asr(
        name, am.kind.value, result, config_hash=config_hash,
        scenario={
            "inverter": inv.kind.value,
            "validation_l2": inv.meta.get("validation_l2"),
        },
    )
