"""Frozen convolutional feature extractor for the perceptual objectives.

The backbone follows the 16-layer VGG convolutional layout (conv stages
64-64 / 128-128 / 256-256-256 / 512-512-512 with 2x max-pooling between
stages) with taps at the standard post-activation points relu1_2,
relu2_2, relu3_3 and relu4_3. Weights are variance-scaled draws from a
fixed seed rather than classification-pretrained values: this build runs
fully offline, and the perceptual terms are used as relative distances,
for which a frozen random deep filter bank is a well-established stand-in.
Inputs are normalized with the backbone's canonical per-channel mean and
standard deviation before the first conv.

The extractor is frozen and deterministic; gradients flow to its input
only.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .core.rng import Rng
from .errors import ContractError

# master seed for the fixed filter bank; changing it invalidates nothing
# but retunes every perceptual number, so it is a constant, not config
FEATURE_SEED = 2016

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# conv channel plan per stage; taps sit on the last relu of each stage
_VGG_STAGES = (
    ("relu1_2", (64, 64)),
    ("relu2_2", (128, 128)),
    ("relu3_3", (256, 256, 256)),
    ("relu4_3", (512, 512, 512)),
)


class FeatureExtractor:
    """A frozen conv network with named tap points.

    `layers` orders the taps; `features` returns {name: tensor} for a
    batched input.
    """

    def __init__(self, net: nn.Sequential, tap_indices: dict[str, int],
                 mean=None, std=None):
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net = net
        self.tap_indices = dict(tap_indices)
        self.layers = tuple(tap_indices)
        self._mean = None
        self._std = None
        if mean is not None:
            self._mean = torch.tensor(mean, dtype=torch.float32).view(1, -1, 1, 1)
            self._std = torch.tensor(std, dtype=torch.float32).view(1, -1, 1, 1)

    def features(self, x: torch.Tensor,
                 layers: tuple[str, ...] | None = None) -> dict[str, torch.Tensor]:
        if x.ndim != 4:
            raise ContractError(f"expected batched (N,C,H,W) input, got {x.shape}")
        wanted = self.layers if layers is None else tuple(layers)
        unknown = set(wanted) - set(self.tap_indices)
        if unknown:
            raise ContractError(f"unknown tap points: {sorted(unknown)}")
        # the net fixes the working precision; callers may pass float64
        x = x.to(next(self.net.parameters()).dtype)
        if self._mean is not None:
            x = (x - self._mean) / self._std
        out: dict[str, torch.Tensor] = {}
        last = max(self.tap_indices[n] for n in wanted)
        by_index = {self.tap_indices[n]: n for n in wanted}
        for i, layer in enumerate(self.net):
            x = layer(x)
            if i in by_index:
                out[by_index[i]] = x
            if i == last:
                break
        return out

    def features_np(self, img: np.ndarray,
                    layers: tuple[str, ...] | None = None) -> dict[str, np.ndarray]:
        """Convenience wrapper for a single unbatched numpy image."""
        t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
        with torch.no_grad():
            feats = self.features(t.unsqueeze(0), layers)
        return {k: v[0].numpy() for k, v in feats.items()}


def _init_conv(conv: nn.Conv2d, rng: Rng, name: str) -> None:
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    std = float(np.sqrt(2.0 / fan_in))
    w = rng.child(name).normal(0.0, std, size=tuple(conv.weight.shape))
    with torch.no_grad():
        conv.weight.copy_(torch.from_numpy(w.astype(np.float32)))
        conv.bias.zero_()


def default_feature_extractor(seed: int = FEATURE_SEED) -> FeatureExtractor:
    rng = Rng(seed)
    layers: list[nn.Module] = []
    taps: dict[str, int] = {}
    c_in = 3
    conv_id = 0
    for stage, (tap_name, widths) in enumerate(_VGG_STAGES):
        if stage > 0:
            layers.append(nn.MaxPool2d(2))
        for c_out in widths:
            conv = nn.Conv2d(c_in, c_out, 3, padding=1)
            _init_conv(conv, rng, f"conv{conv_id}")
            conv_id += 1
            layers.append(conv)
            layers.append(nn.ReLU(inplace=False))
            c_in = c_out
        taps[tap_name] = len(layers) - 1
    return FeatureExtractor(nn.Sequential(*layers), taps,
                            mean=IMAGENET_MEAN, std=IMAGENET_STD)


def toy_feature_extractor(channels: int = 3) -> FeatureExtractor:
    """Identity extractor: one 1x1 conv wired to the identity, one tap.

    With a single tap of weight 1, the perceptual objective degenerates to
    the plain L2 distance of the inputs, which tests exploit.
    """
    conv = nn.Conv2d(channels, channels, 1, bias=False)
    with torch.no_grad():
        conv.weight.zero_()
        for i in range(channels):
            conv.weight[i, i, 0, 0] = 1.0
    return FeatureExtractor(nn.Sequential(conv), {"identity": 0})
