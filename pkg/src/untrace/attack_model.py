"""The adversarial encoder-decoder.

A 3-conv encoder (strides 1,2,2), five residual blocks at the widest
width, and a decoder of two nearest-neighbor x2 upsampling stages plus a
final wide-kernel conv with sigmoid output. Instance normalization and
rectifiers throughout; reflection padding so borders carry no zero-pad
seam. Input and output are unit-interval RGB of the same shape, any H, W
divisible by 4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .core.archives import load_archive, save_archive
from .core.config import ModelSpec
from .core.images import Image
from .core.rng import Rng
from .errors import ContractError

CHECKPOINT_FORMAT = "attack-model"
CHECKPOINT_VERSION = 1


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1,
                               padding_mode="reflect")
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1,
                               padding_mode="reflect")
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x):
        y = torch.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return x + y


class _UpsampleBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1, padding_mode="reflect")
        self.norm = nn.InstanceNorm2d(c_out, affine=True)

    def forward(self, x):
        x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        return torch.relu(self.norm(self.conv(x)))


class EncoderDecoder(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        c = spec.base_channels
        pad = spec.io_kernel // 2
        self.enc1 = nn.Conv2d(3, c, spec.io_kernel, padding=pad,
                              padding_mode="reflect")
        self.enc1_norm = nn.InstanceNorm2d(c, affine=True)
        self.enc2 = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1,
                              padding_mode="reflect")
        self.enc2_norm = nn.InstanceNorm2d(2 * c, affine=True)
        self.enc3 = nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1,
                              padding_mode="reflect")
        self.enc3_norm = nn.InstanceNorm2d(4 * c, affine=True)
        self.blocks = nn.Sequential(
            *[_ResidualBlock(4 * c) for _ in range(spec.residual_blocks)]
        )
        self.up1 = _UpsampleBlock(4 * c, 2 * c)
        self.up2 = _UpsampleBlock(2 * c, c)
        self.out = nn.Conv2d(c, 3, spec.io_kernel, padding=pad,
                             padding_mode="reflect")

    def forward(self, x):
        x = torch.relu(self.enc1_norm(self.enc1(x)))
        x = torch.relu(self.enc2_norm(self.enc2(x)))
        x = torch.relu(self.enc3_norm(self.enc3(x)))
        x = self.blocks(x)
        x = self.up1(x)
        x = self.up2(x)
        return torch.sigmoid(self.out(x))


@dataclass
class AttackModel:
    spec: ModelSpec
    net: EncoderDecoder
    training_meta: dict = field(default_factory=dict)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            k: v.detach().cpu().numpy().copy()
            for k, v in self.net.state_dict().items()
        }


def build_model(spec: ModelSpec, rng: Rng) -> AttackModel:
    """Construct the network with variance-scaled weights drawn from rng.

    Each parameter gets its own derived stream keyed by its name, so the
    init is independent of traversal order.
    """
    spec.validate()
    net = EncoderDecoder(spec)
    init = rng.child("init")
    with torch.no_grad():
        for name, module in net.named_modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                std = float(np.sqrt(2.0 / fan_in))
                w = init.child(f"{name}.weight").normal(
                    0.0, std, size=tuple(module.weight.shape)
                )
                module.weight.copy_(torch.from_numpy(w.astype(np.float32)))
                module.bias.zero_()
            elif isinstance(module, nn.InstanceNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
    net = net.to(torch.float32)
    net.eval()
    return AttackModel(spec=spec, net=net, training_meta={"seed": rng.seed})


def _check_forward_shape(shape) -> None:
    if shape[-3] != 3:
        raise ContractError(f"expected 3 channels, got shape {tuple(shape)}")
    if shape[-2] % 4 or shape[-1] % 4:
        raise ContractError(
            f"H and W must be divisible by 4 for the strided encoder, "
            f"got {shape[-2]}x{shape[-1]}"
        )


def forward(model: AttackModel, x: Image) -> Image:
    """Run the model on one image (3,H,W) or a batch (N,3,H,W)."""
    if x.ndim not in (3, 4):
        raise ContractError(f"expected 3 or 4 dims, got {x.ndim}")
    _check_forward_shape(x.shape)
    batched = x.ndim == 4
    t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    if not batched:
        t = t.unsqueeze(0)
    model.net.eval()
    with torch.no_grad():
        y = model.net(t)
    out = y.numpy().astype(np.float32)
    return out if batched else out[0]


def save_model(model: AttackModel, path) -> None:
    meta = {
        "spec": {
            "base_channels": model.spec.base_channels,
            "residual_blocks": model.spec.residual_blocks,
            "io_kernel": model.spec.io_kernel,
        },
        "training_meta": model.training_meta,
    }
    save_archive(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, meta,
                 model.state_arrays())


def load_model(path) -> AttackModel:
    meta, arrays = load_archive(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)
    spec = ModelSpec(**meta["spec"])
    net = EncoderDecoder(spec)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    net.load_state_dict(state, strict=True)
    net.eval()
    return AttackModel(spec=spec, net=net, training_meta=meta["training_meta"])
