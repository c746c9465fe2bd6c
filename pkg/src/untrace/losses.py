"""Training objectives: perceptual, spatial, and multi-scale spectral terms
and their weighted total.

All three terms accept numpy arrays or torch tensors of identical shape.
Torch inputs keep their autograd graph (the training path); numpy inputs
return plain floats (the analysis/test path). The documented convention
is the norm of the flattened difference; setting LossWeights.normalize
switches every norm to its per-element form (root-mean-square for L2,
mean absolute for L1), which keeps the three terms commensurate across
resolutions.
"""

from __future__ import annotations

import numpy as np
import torch

from .core.config import AblationFlags, LossWeights
from .errors import ContractError
from .features import FeatureExtractor


def _as_tensor(x) -> tuple[torch.Tensor, bool]:
    if isinstance(x, torch.Tensor):
        return x, True
    # float64 input keeps double precision; everything else runs in float32
    dtype = np.float64 if np.asarray(x).dtype == np.float64 else np.float32
    return torch.from_numpy(np.ascontiguousarray(x, dtype=dtype)), False


def _check_same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ContractError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _l2(diff: torch.Tensor, normalize: bool) -> torch.Tensor:
    # vector_norm is exactly zero at equality and has a zero subgradient
    # there, unlike sqrt(sum(sq)) whose gradient blows up
    n = torch.linalg.vector_norm(diff)
    if normalize:
        n = n / float(np.sqrt(diff.numel()))
    return n


def _l1(diff: torch.Tensor, normalize: bool) -> torch.Tensor:
    return diff.abs().mean() if normalize else diff.abs().sum()


def _maybe_float(value: torch.Tensor, was_tensor: bool):
    return value if was_tensor else float(value.item())


def spatial_loss(a, b):
    """Euclidean norm of the flattened pixel difference."""
    ta, tensor_a = _as_tensor(a)
    tb, tensor_b = _as_tensor(b)
    _check_same_shape(ta, tb)
    return _maybe_float(_l2(ta - tb, normalize=False), tensor_a or tensor_b)


def perceptual_loss(a, b, fx: FeatureExtractor, lw: LossWeights):
    """Weighted sum over tap points of feature-difference L2 norms."""
    ta, tensor_a = _as_tensor(a)
    tb, tensor_b = _as_tensor(b)
    _check_same_shape(ta, tb)
    grad = tensor_a or tensor_b
    batched = ta.ndim == 4
    if not batched:
        ta, tb = ta.unsqueeze(0), tb.unsqueeze(0)
    ctx = torch.enable_grad() if grad else torch.no_grad()
    with ctx:
        fa = fx.features(ta, lw.perceptual_layers)
        fb = fx.features(tb, lw.perceptual_layers)
        total = ta.new_zeros(())
        for name, w in zip(lw.perceptual_layers, lw.perceptual_layer_weights):
            total = total + w * _l2(fa[name] - fb[name], lw.normalize)
    return _maybe_float(total, grad)


def log_spectrum(x, scale: float, eps: float):
    """Per-channel log-magnitude spectrum of x rescaled by `scale`.

    Accepts (C,H,W) or (N,C,H,W). Bilinear rescaling, then a 2-D DFT over
    the trailing two dims, then log(|.| + eps). No center shift: the DC
    bin sits at index [0, 0] of each map.
    """
    t, was_tensor = _as_tensor(x)
    if t.ndim not in (3, 4):
        raise ContractError(f"expected (C,H,W) or (N,C,H,W), got {tuple(t.shape)}")
    if scale <= 0:
        raise ContractError("scale must be positive")
    batched = t.ndim == 4
    if scale != 1.0:
        h = max(1, int(round(t.shape[-2] * scale)))
        w = max(1, int(round(t.shape[-1] * scale)))
        u = t if batched else t.unsqueeze(0)
        u = torch.nn.functional.interpolate(
            u, size=(h, w), mode="bilinear", align_corners=False
        )
        t = u if batched else u.squeeze(0)
    f = torch.fft.fft2(t)
    mag = torch.sqrt(f.real.pow(2) + f.imag.pow(2) + 1e-24)
    out = torch.log(mag + eps)
    return out if was_tensor else out.numpy()


def spectral_loss(a, b, lw: LossWeights):
    """Weighted sum over scales of L1 distances between log-spectra."""
    ta, tensor_a = _as_tensor(a)
    tb, tensor_b = _as_tensor(b)
    _check_same_shape(ta, tb)
    grad = tensor_a or tensor_b
    ctx = torch.enable_grad() if grad else torch.no_grad()
    with ctx:
        total = ta.new_zeros(())
        for s, w in zip(lw.spectral_scales, lw.spectral_scale_weights):
            diff = log_spectrum(ta, s, lw.epsilon) - log_spectrum(tb, s, lw.epsilon)
            total = total + w * _l1(diff, lw.normalize)
    return _maybe_float(total, grad)


def loss_terms(a, b, fx: FeatureExtractor, lw: LossWeights,
               flags: AblationFlags | None = None) -> dict:
    """All three terms plus the beta-weighted total, as one dict.

    Disabled terms are reported as exact zeros and contribute no gradient.
    """
    if flags is None:
        flags = AblationFlags()
    ta, tensor_a = _as_tensor(a)
    tb, tensor_b = _as_tensor(b)
    _check_same_shape(ta, tb)
    grad = tensor_a or tensor_b
    b1, b2, b3 = lw.beta
    zero = ta.new_zeros(())
    perceptual = perceptual_loss(ta, tb, fx, lw)
    spatial = _l2(ta - tb, lw.normalize) if flags.use_spatial_loss else zero
    spectral = spectral_loss(ta, tb, lw) if flags.use_spectral_loss else zero
    total = b1 * perceptual + b2 * spatial + b3 * spectral
    out = {
        "perceptual": perceptual,
        "spatial": spatial,
        "spectral": spectral,
        "total": total,
    }
    if grad:
        return out
    return {k: float(v.item()) if isinstance(v, torch.Tensor) else float(v)
            for k, v in out.items()}


def total_loss(a, b, fx: FeatureExtractor, lw: LossWeights,
               flags: AblationFlags | None = None):
    """beta-weighted sum of the three terms, honoring ablation flags."""
    return loss_terms(a, b, fx, lw, flags)["total"]
