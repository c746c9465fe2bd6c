"""End-to-end optimization of the adversarial model on (x_r, x_s) pairs.

Pairs are synthesized on the fly. Every source of randomness at global
step g is re-derived from the master seed and g alone, so a run can be
checkpointed and resumed with a bit-identical trajectory: nothing about
the random state needs to be serialized beyond the seed and the step
counter.

The training path refuses datasets containing anything but REAL-labeled
items: the attack trains without ever seeing generated images.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .attack_model import AttackModel, EncoderDecoder, build_model
from .core.archives import load_archive, save_archive
from .core.config import ModelSpec, RunConfig
from .core.dataset import REAL_LABEL, Dataset
from .core.rng import Rng
from .datasynth import make_pair
from .errors import CheckpointError, ContractError, TrainingDivergedError
from .features import FeatureExtractor, default_feature_extractor
from .losses import loss_terms

STATE_FORMAT = "train-state"
STATE_VERSION = 1

CURVE_FIELDS = ("step", "perceptual", "spatial", "spectral", "total")


@dataclass
class TrainState:
    model: AttackModel
    optimizer: torch.optim.Adam
    epoch: int = 0
    step: int = 0
    loss_curve: list = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""


def _assert_real_only(dataset: Dataset) -> None:
    bad = [it.label for it in dataset.items if it.label != REAL_LABEL]
    if bad:
        raise ContractError(
            f"training data must be REAL-only; found labels {sorted(set(bad))}"
        )


def init_state(cfg: RunConfig) -> TrainState:
    rng = Rng(cfg.training.seed)
    model = build_model(cfg.attack_model, rng.child("model"))
    model.net.train()
    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.training.learning_rate)
    return TrainState(model=model, optimizer=opt, seed=cfg.training.seed,
                      config_hash=cfg.config_hash())


def _steps_per_epoch(n_items: int, cfg: RunConfig) -> int:
    if cfg.training.steps_per_epoch:
        return cfg.training.steps_per_epoch
    return max(1, n_items // cfg.training.batch_size)


def _make_batch(cache_u8: np.ndarray, cfg: RunConfig, step: int, root: Rng
                ) -> tuple[torch.Tensor, torch.Tensor]:
    n = cache_u8.shape[0]
    crop = cfg.training.crop
    r = root.child(f"step{step:08d}")
    idx = r.integers(0, n, size=cfg.training.batch_size)
    xr_list, xs_list = [], []
    for j, i in enumerate(idx):
        img = cache_u8[int(i)].astype(np.float32) / 255.0
        _, h, w = img.shape
        rj = r.child(f"item{j}")
        if h > crop or w > crop:
            top = int(rj.integers(0, h - crop + 1))
            left = int(rj.integers(0, w - crop + 1))
            img = np.ascontiguousarray(img[:, top:top + crop, left:left + crop])
        xr, xs = make_pair(img, cfg.datasynth, rj.child("synth"), cfg.ablation)
        xr_list.append(xr)
        xs_list.append(xs)
    xr_t = torch.from_numpy(np.stack(xr_list))
    xs_t = torch.from_numpy(np.stack(xs_list))
    return xr_t, xs_t


def train_step(state: TrainState, cache_u8: np.ndarray, cfg: RunConfig,
               fx: FeatureExtractor, root: Rng) -> dict:
    xr, xs = _make_batch(cache_u8, cfg, state.step, root)
    state.optimizer.zero_grad(set_to_none=True)
    out = state.model.net(xs)
    terms = loss_terms(out, xr, fx, cfg.losses, cfg.ablation)
    total = terms["total"]
    if not torch.isfinite(total):
        scalars = {k: float(v.item()) for k, v in terms.items()}
        raise TrainingDivergedError(
            f"non-finite loss at step {state.step}: {scalars}", terms=scalars
        )
    total.backward()
    state.optimizer.step()
    state.step += 1
    row = {k: float(v.item()) for k, v in terms.items()}
    row["step"] = state.step
    state.loss_curve.append(row)
    return row


def write_curve_csv(curve: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for row in curve:
            w.writerow({k: row[k] for k in CURVE_FIELDS})


def epoch_averages(curve: list[dict], steps_per_epoch: int) -> list[dict]:
    out = []
    for start in range(0, len(curve), steps_per_epoch):
        chunk = curve[start:start + steps_per_epoch]
        if not chunk:
            break
        out.append({
            k: float(np.mean([row[k] for row in chunk]))
            for k in ("perceptual", "spatial", "spectral", "total")
        })
    return out


def train(real_dataset: Dataset, cfg: RunConfig, *, out_dir=None,
          resume_from=None, fx: FeatureExtractor | None = None) -> AttackModel:
    """Train the attack model; returns it with loss curve metadata.

    `resume_from` continues a checkpointed run; the trajectory matches an
    uninterrupted run with the same seed bit-for-bit.
    """
    _assert_real_only(real_dataset)
    if len(real_dataset.items) < cfg.training.batch_size:
        raise ContractError(
            f"need at least one batch of images "
            f"({cfg.training.batch_size}), got {len(real_dataset.items)}"
        )
    if fx is None:
        fx = default_feature_extractor()
    images = real_dataset.load_all()
    if images.shape[-2] < cfg.training.crop or images.shape[-1] < cfg.training.crop:
        raise ContractError(
            f"images smaller than the training crop {cfg.training.crop}"
        )
    # images come from 8-bit files, so the uint8 cache is lossless and 4x
    # smaller than holding float32 for the whole corpus
    cache_u8 = np.rint(images * 255.0).astype(np.uint8)
    del images

    if resume_from is not None:
        state = load_checkpoint(resume_from, cfg)
    else:
        state = init_state(cfg)
    state.model.net.train()
    root = Rng(cfg.training.seed).child("train")

    spe = _steps_per_epoch(cache_u8.shape[0], cfg)
    total_steps = cfg.training.epochs * spe
    out_dir = Path(out_dir) if out_dir is not None else None

    while state.step < total_steps:
        train_step(state, cache_u8, cfg, fx, root)
        state.epoch = state.step // spe
        if (cfg.training.checkpoint_every and out_dir is not None
                and state.step % cfg.training.checkpoint_every == 0
                and state.step < total_steps):
            save_checkpoint(state, out_dir / f"state_step{state.step:08d}.zip")

    state.model.net.eval()
    state.model.training_meta = {
        "seed": cfg.training.seed,
        "epochs": cfg.training.epochs,
        "steps": state.step,
        "loss_curve": state.loss_curve,
        "config_hash": cfg.config_hash(),
    }
    if out_dir is not None:
        write_curve_csv(state.loss_curve, out_dir / "loss_curve.csv")
    return state.model


def save_checkpoint(state: TrainState, path) -> None:
    arrays = {f"model/{k}": v for k, v in state.model.state_arrays().items()}
    opt_sd = state.optimizer.state_dict()
    for idx, slot in opt_sd["state"].items():
        for key in ("exp_avg", "exp_avg_sq"):
            arrays[f"opt/{idx}/{key}"] = slot[key].detach().numpy().copy()
        arrays[f"opt/{idx}/step"] = np.asarray(
            [float(slot["step"])], dtype=np.float64
        )
    meta = {
        "seed": state.seed,
        "epoch": state.epoch,
        "step": state.step,
        "loss_curve": state.loss_curve,
        "config_hash": state.config_hash,
        "spec": {
            "base_channels": state.model.spec.base_channels,
            "residual_blocks": state.model.spec.residual_blocks,
            "io_kernel": state.model.spec.io_kernel,
        },
        "learning_rate": state.optimizer.param_groups[0]["lr"],
    }
    save_archive(path, STATE_FORMAT, STATE_VERSION, meta, arrays)


def load_checkpoint(path, cfg: RunConfig) -> TrainState:
    meta, arrays = load_archive(path, STATE_FORMAT, STATE_VERSION)
    if meta["config_hash"] != cfg.config_hash():
        raise CheckpointError(
            "checkpoint was produced under a different configuration; "
            "resuming would not reproduce the original trajectory"
        )
    spec = ModelSpec(**meta["spec"])
    net = EncoderDecoder(spec)
    model_state = {
        k[len("model/"):]: torch.from_numpy(v)
        for k, v in arrays.items() if k.startswith("model/")
    }
    net.load_state_dict(model_state, strict=True)
    net.train()
    model = AttackModel(spec=spec, net=net)
    opt = torch.optim.Adam(net.parameters(), lr=meta["learning_rate"])
    sd = opt.state_dict()
    n_params = len(list(net.parameters()))
    opt_state = {}
    for idx in range(n_params):
        prefix = f"opt/{idx}/"
        if f"{prefix}exp_avg" not in arrays:
            continue
        opt_state[idx] = {
            "step": torch.tensor(float(arrays[f"{prefix}step"][0])),
            "exp_avg": torch.from_numpy(arrays[f"{prefix}exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}exp_avg_sq"].copy()),
        }
    sd["state"] = opt_state
    opt.load_state_dict(sd)
    return TrainState(
        model=model, optimizer=opt, epoch=meta["epoch"], step=meta["step"],
        loss_curve=list(meta["loss_curve"]), seed=meta["seed"],
        config_hash=meta["config_hash"],
    )
