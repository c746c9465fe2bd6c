"""Surrogate attribution classifiers and the attack-success metric.

Two model families: a multinomial linear classifier on pooled DCT
log-magnitude features (trained with scikit-learn, then run with plain
numpy inference from its extracted weights), and a small 4-block CNN on
raw pixels. Training gates on held-out clean accuracy: below the gate the
bench refuses to produce attack-success numbers at all.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from torch import nn

from ..core.archives import load_archive, peek_format, save_archive
from ..core.config import BenchConfig
from ..core.dataset import REAL_LABEL, Dataset
from ..core.rng import Rng
from ..errors import CalibrationError, CheckpointError, ContractError
from .features import DCT_EPS, POOL_GRID, dct_features

MIN_PER_CLASS = 50

DCT_FORMAT = "attribution-dct"
CNN_FORMAT = "attribution-cnn"
AM_VERSION = 1

_CNN_WIDTHS = (32, 64, 96, 128)


class AmKind(enum.Enum):
    DCT_LINEAR = "dct_linear"
    CNN_SMALL = "cnn_small"


class _SmallCnn(nn.Module):
    def __init__(self, n_classes: int, widths=_CNN_WIDTHS):
        super().__init__()
        layers: list[nn.Module] = []
        c_in = 3
        for c_out in widths:
            layers += [
                nn.Conv2d(c_in, c_out, 3, padding=1),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, n_classes)

    def forward(self, x):
        z = self.features(x)
        z = z.mean(dim=(2, 3))
        return self.head(z)


@dataclass
class AttributionModel:
    kind: AmKind
    labels: tuple[str, ...]
    coef: np.ndarray | None = None  # (K, F) logits weights, DCT kind
    intercept: np.ndarray | None = None
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None
    net: _SmallCnn | None = None
    meta: dict = field(default_factory=dict)

    @property
    def differentiable(self) -> bool:
        return self.kind is AmKind.CNN_SMALL

    def _dct_matrix(self, images: np.ndarray) -> np.ndarray:
        feats = np.stack([dct_features(img) for img in images])
        return (feats - self.feat_mean) / self.feat_std

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        """Probability matrix (N, K) for a stack of images (N,3,H,W)."""
        if images.ndim != 4:
            raise ContractError(f"expected (N,3,H,W), got {images.shape}")
        if self.kind is AmKind.DCT_LINEAR:
            z = self._dct_matrix(images) @ self.coef.T + self.intercept
        else:
            self.net.eval()
            with torch.no_grad():
                t = torch.from_numpy(
                    np.ascontiguousarray(images, dtype=np.float32)
                )
                z = self.net(t).numpy().astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def torch_logits(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable logits; gradient attacks need this path."""
        if not self.differentiable:
            raise ContractError(
                "gradient access requires the differentiable pixel classifier"
            )
        self.net.eval()
        return self.net(x)


def _stratified_split(labels: list[str], fraction: float, rng: Rng
                      ) -> tuple[list[int], list[int]]:
    by_label: dict[str, list[int]] = {}
    for i, lb in enumerate(labels):
        by_label.setdefault(lb, []).append(i)
    fit_idx, hold_idx = [], []
    for lb in sorted(by_label):
        idx = np.asarray(by_label[lb])
        perm = rng.child(f"split/{lb}").permutation(len(idx))
        n_hold = max(1, int(round(fraction * len(idx))))
        hold_idx.extend(idx[perm[:n_hold]].tolist())
        fit_idx.extend(idx[perm[n_hold:]].tolist())
    return sorted(fit_idx), sorted(hold_idx)


def _init_cnn(net: _SmallCnn, rng: Rng) -> None:
    with torch.no_grad():
        for name, m in net.named_modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = float(np.sqrt(2.0 / fan_in))
                w = rng.child(f"{name}.weight").normal(0.0, std,
                                                       size=tuple(m.weight.shape))
                m.weight.copy_(torch.from_numpy(w.astype(np.float32)))
                m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
            elif isinstance(m, nn.Linear):
                std = float(np.sqrt(1.0 / m.in_features))
                w = rng.child(f"{name}.weight").normal(0.0, std,
                                                       size=tuple(m.weight.shape))
                m.weight.copy_(torch.from_numpy(w.astype(np.float32)))
                m.bias.zero_()


def _train_cnn(images: np.ndarray, y: np.ndarray, n_classes: int,
               cfg: BenchConfig, rng: Rng) -> _SmallCnn:
    net = _SmallCnn(n_classes)
    _init_cnn(net, rng.child("init"))
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.cnn_learning_rate)
    # cosine decay to zero: the fingerprints are low-amplitude and high
    # frequency, so the loss needs a hot start and a converged finish
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(cfg.cnn_epochs, 1))
    ce = nn.CrossEntropyLoss()
    x_t = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    y_t = torch.from_numpy(y.astype(np.int64))
    n = len(y)
    bs = cfg.cnn_batch_size
    for epoch in range(cfg.cnn_epochs):
        order = rng.child(f"epoch{epoch}").permutation(n)
        for start in range(0, n, bs):
            idx = torch.from_numpy(order[start:start + bs].copy())
            opt.zero_grad(set_to_none=True)
            loss = ce(net(x_t[idx]), y_t[idx])
            loss.backward()
            opt.step()
        sched.step()
    net.eval()
    return net


def train_am_arrays(images: np.ndarray, labels: list[str], kind: AmKind,
                    cfg: BenchConfig | None = None, rng: Rng | None = None,
                    gate: bool = True,
                    label_set: tuple[str, ...] | None = None
                    ) -> AttributionModel:
    """Train an attribution model from in-memory arrays.

    With gate=True (the bench default), held-out clean accuracy below the
    configured gate raises CalibrationError instead of returning a model.
    """
    cfg = cfg or BenchConfig()
    rng = rng or Rng(0)
    if images.ndim != 4 or images.shape[0] != len(labels):
        raise ContractError("images and labels disagree")
    classes = tuple(sorted(label_set or set(labels)))
    if len(classes) < 2:
        raise ContractError("need at least two labels to attribute")
    stray = set(labels) - set(classes)
    if stray:
        raise ContractError(
            f"items carry labels outside the label set: {sorted(stray)}"
        )
    counts = {c: labels.count(c) for c in classes}
    thin = {c: k for c, k in counts.items() if k < MIN_PER_CLASS}
    if thin:
        raise ContractError(
            f"every label needs >= {MIN_PER_CLASS} samples, got {thin}"
        )
    cls_index = {c: i for i, c in enumerate(classes)}
    y = np.asarray([cls_index[lb] for lb in labels], dtype=np.int64)

    fit_idx, hold_idx = _stratified_split(labels, cfg.holdout_fraction, rng)
    fit_idx = np.asarray(fit_idx)
    hold_idx = np.asarray(hold_idx)

    if kind is AmKind.DCT_LINEAR:
        feats = np.stack([dct_features(img) for img in images])
        mean = feats[fit_idx].mean(axis=0)
        std = feats[fit_idx].std(axis=0)
        std = np.where(std < 1e-9, 1.0, std)
        z = (feats - mean) / std
        clf = LogisticRegression(max_iter=2000, C=1.0, random_state=0)
        clf.fit(z[fit_idx], y[fit_idx])
        coef, intercept = _expand_binary(clf, len(classes))
        am = AttributionModel(
            kind=kind, labels=classes, coef=coef, intercept=intercept,
            feat_mean=mean, feat_std=std,
        )
    elif kind is AmKind.CNN_SMALL:
        net = _train_cnn(images[fit_idx], y[fit_idx], len(classes), cfg,
                         rng.child("cnn"))
        am = AttributionModel(kind=kind, labels=classes, net=net)
    else:
        raise ContractError(f"unknown attribution kind {kind}")

    probs = am.predict_proba(images[hold_idx])
    pred = probs.argmax(axis=1)
    truth = y[hold_idx]
    accuracy = float((pred == truth).mean())
    recalls = {}
    for c, i in cls_index.items():
        m = truth == i
        recalls[c] = float((pred[m] == i).mean()) if m.any() else float("nan")
    am.meta = {
        "holdout_accuracy": accuracy,
        "per_class_recall": recalls,
        "holdout_size": int(len(hold_idx)),
        "train_size": int(len(fit_idx)),
        "accuracy_gate": cfg.accuracy_gate,
        "gate_passed": bool(accuracy >= cfg.accuracy_gate),
        "seed": rng.seed,
    }
    if gate and accuracy < cfg.accuracy_gate:
        raise CalibrationError(
            f"{kind.value} held-out accuracy {accuracy:.3f} below the "
            f"{cfg.accuracy_gate:.2f} gate; per-class recall {recalls}"
        )
    return am


def _expand_binary(clf: LogisticRegression, n_classes: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    coef = clf.coef_.astype(np.float64)
    intercept = clf.intercept_.astype(np.float64)
    if n_classes == 2 and coef.shape[0] == 1:
        # two-class sklearn stores one row; softmax([0, z]) == sigmoid(z)
        coef = np.vstack([np.zeros_like(coef[0]), coef[0]])
        intercept = np.asarray([0.0, float(intercept[0])])
    return coef, intercept


def train_am(train: Dataset, kind: AmKind, cfg: BenchConfig | None = None,
             rng: Rng | None = None, gate: bool = True) -> AttributionModel:
    """Train an attribution model from a labeled dataset on disk."""
    images = train.load_all()
    return train_am_arrays(images, train.labels(), kind, cfg, rng, gate,
                           label_set=tuple(train.label_set))


def attribute_batch(am: AttributionModel, images: np.ndarray
                    ) -> tuple[list[str], np.ndarray]:
    probs = am.predict_proba(images)
    pred = [am.labels[i] for i in probs.argmax(axis=1)]
    return pred, probs


def attribute(am: AttributionModel, x: np.ndarray) -> tuple[str, float]:
    """Predicted source label and its probability for one image."""
    probs = am.predict_proba(x[None])[0]
    i = int(probs.argmax())
    return am.labels[i], float(probs[i])


@dataclass(frozen=True)
class AsrResult:
    asr: float
    real_rate: float | None
    confusion: np.ndarray  # rows true, cols predicted, label order
    labels: tuple[str, ...]
    n: int

    def asr_from_confusion(self) -> float:
        total = int(self.confusion.sum())
        return 1.0 - float(np.trace(self.confusion)) / total


def evaluate_attack(am: AttributionModel, images: np.ndarray,
                    true_labels: list[str]) -> AsrResult:
    """Misattribution rate plus the full confusion matrix.

    Success is any prediction differing from the item's true source; the
    rate of predicting REAL for generated items is reported alongside.
    """
    if len(true_labels) != images.shape[0]:
        raise ContractError("images and labels disagree")
    unknown = set(true_labels) - set(am.labels)
    if unknown:
        raise ContractError(f"items carry labels the model lacks: {sorted(unknown)}")
    idx = {c: i for i, c in enumerate(am.labels)}
    pred, _ = attribute_batch(am, images)
    k = len(am.labels)
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(true_labels, pred):
        confusion[idx[t], idx[p]] += 1
    n = len(true_labels)
    wrong = sum(1 for t, p in zip(true_labels, pred) if t != p)
    real_rate = None
    if REAL_LABEL in idx:
        gen_mask = [t != REAL_LABEL for t in true_labels]
        n_gen = sum(gen_mask)
        if n_gen:
            as_real = sum(
                1 for t, p, g in zip(true_labels, pred, gen_mask)
                if g and p == REAL_LABEL
            )
            real_rate = as_real / n_gen
    return AsrResult(asr=wrong / n, real_rate=real_rate, confusion=confusion,
                     labels=am.labels, n=n)


def asr(am: AttributionModel, adversarial) -> float:
    """Fraction of items the model fails to attribute to their true source.

    Accepts a Dataset or an (images, true_labels) pair.
    """
    if isinstance(adversarial, Dataset):
        images, labels = adversarial.load_all(), adversarial.labels()
    else:
        images, labels = adversarial
    return evaluate_attack(am, images, list(labels)).asr


def save_am(am: AttributionModel, path) -> None:
    if am.kind is AmKind.DCT_LINEAR:
        arrays = {
            "coef": am.coef, "intercept": am.intercept,
            "feat_mean": am.feat_mean, "feat_std": am.feat_std,
        }
        meta = {
            "labels": list(am.labels), "meta": am.meta,
            "pool_grid": POOL_GRID, "eps": DCT_EPS,
        }
        save_archive(path, DCT_FORMAT, AM_VERSION, meta, arrays)
    else:
        arrays = {k: v.detach().numpy().copy()
                  for k, v in am.net.state_dict().items()}
        meta = {
            "labels": list(am.labels), "meta": am.meta,
            "widths": list(_CNN_WIDTHS),
        }
        save_archive(path, CNN_FORMAT, AM_VERSION, meta, arrays)


def load_am(path) -> AttributionModel:
    fmt = peek_format(path)
    if fmt == DCT_FORMAT:
        meta, arrays = load_archive(path, DCT_FORMAT, AM_VERSION)
        return AttributionModel(
            kind=AmKind.DCT_LINEAR, labels=tuple(meta["labels"]),
            coef=arrays["coef"], intercept=arrays["intercept"],
            feat_mean=arrays["feat_mean"], feat_std=arrays["feat_std"],
            meta=meta["meta"],
        )
    if fmt == CNN_FORMAT:
        meta, arrays = load_archive(path, CNN_FORMAT, AM_VERSION)
        net = _SmallCnn(len(meta["labels"]), widths=tuple(meta["widths"]))
        net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
        net.eval()
        return AttributionModel(kind=AmKind.CNN_SMALL,
                                labels=tuple(meta["labels"]), net=net,
                                meta=meta["meta"])
    raise CheckpointError(f"{path}: not an attribution model archive ({fmt})")
