"""Command-line entry points.

Every command is driven by the same TOML config (``--config``) with
``--seed`` overriding the master seed, and maps 1:1 onto a library
operation. Exit codes: 0 success, 2 contract/precondition, 3 calibration,
4 I/O, 1 anything else.
"""

from __future__ import annotations

import dataclasses
import functools
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .analysis import (
    average_spectrum,
    harmonic_peak_prominence,
    residual_stats,
    save_spectrum_heatmap,
    spectrum_l1_distance,
)
from .attack_model import load_model, save_model
from .baselines import AdditiveAttackConfig, AdditiveKind, additive_attack_corpus
from .bench.generators import DEFAULT_TINYGMS, generate_corpus, synthesize_real_image
from .bench.models import AmKind, evaluate_attack, load_am, save_am, train_am
from .bench.report import EvalReport, write_confusion_csv, write_json
from .core.config import RunConfig
from .core.dataset import REAL_LABEL, Dataset
from .core.images import load_image, save_image
from .core.rng import Rng
from .datasynth import make_pair
from .defense import (
    DefenseBudgets,
    DefenseScenario,
    InverterKind,
    adversarial_training,
    invert_and_evaluate,
    train_inverter,
)
from .elimination import attack
from .errors import ContractError, DataIOError, UntraceError
from .pipeline import desk_profile, full_bench, micro_profile, quantize
from .training import train as train_attack_model

_KIND_CHOICES = [k.value for k in AdditiveKind]
_AM_CHOICES = [k.value for k in AmKind]
_INVERTER_CHOICES = [k.value for k in InverterKind]


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UntraceError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def _load_config(config: str | None, seed: int | None) -> RunConfig:
    cfg = RunConfig.load(config) if config else RunConfig()
    if seed is not None:
        cfg = cfg.replace(
            training=dataclasses.replace(cfg.training, seed=seed)
        )
    return cfg


def _config_options(fn):
    fn = click.option(
        "--config", type=click.Path(exists=True, dir_okay=False),
        default=None, help="TOML run configuration.",
    )(fn)
    fn = click.option(
        "--seed", type=int, default=None,
        help="Master seed override.",
    )(fn)
    return fn


def _image_folder(path: Path) -> tuple[np.ndarray, list[str]]:
    files = sorted(
        p for p in Path(path).iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not files:
        raise DataIOError(f"no images under {path}")
    return np.stack([load_image(p) for p in files]), [p.name for p in files]


def _labeled_folder(path: Path) -> Dataset:
    return Dataset.from_labeled_folders(path)


def _gm_by_id(gm_id: str):
    for gm in DEFAULT_TINYGMS:
        if gm.id == gm_id:
            return gm
    raise ContractError(
        f"unknown generator {gm_id!r}; known: "
        f"{[g.id for g in DEFAULT_TINYGMS]}"
    )


@click.group()
@click.version_option(__version__)
def main():
    """Fingerprint-elimination attack and its evaluation bench."""
    torch.set_num_threads(1)


@main.command()
@_config_options
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--count", type=int, default=0, help="Pairs to emit (0 = all).")
@_guarded
def synth(config, seed, data, out, count):
    """Emit paired real/synthetic folders plus a manifest CSV."""
    cfg = _load_config(config, seed)
    ds = Dataset.from_folder(Path(data), REAL_LABEL)
    n = len(ds) if count <= 0 else min(count, len(ds))
    out = Path(out)
    real_dir, synth_dir = out / "real", out / "synthetic"
    real_dir.mkdir(parents=True, exist_ok=True)
    synth_dir.mkdir(parents=True, exist_ok=True)
    root = Rng(cfg.seed).child("cli/synth")
    rows = []
    for i in range(n):
        x_r = ds.load(i)
        ops: list[str] = []
        ri = root.child(f"pair{i:06d}")
        x_r, x_s = make_pair(x_r, cfg.datasynth, ri, cfg.ablation, ops)
        pr, ps = real_dir / f"{i:06d}.png", synth_dir / f"{i:06d}.png"
        save_image(x_r, pr)
        save_image(quantize(x_s), ps)
        rows.append((pr.name, ps.name, ri.seed, ";".join(ops) or "none"))
    with open(out / "manifest.csv", "w", encoding="utf-8") as f:
        f.write("path_real,path_synth,seed,ops_applied\n")
        for name_r, name_s, pair_seed, ops_s in rows:
            f.write(f"{name_r},{name_s},{pair_seed},\"{ops_s}\"\n")
    click.echo(f"wrote {n} pairs under {out}")


@main.command("train-attack")
@_config_options
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@_guarded
def train_attack(config, seed, data, out, resume):
    """Train the adversarial model on real images only."""
    cfg = _load_config(config, seed)
    ds = Dataset.from_folder(Path(data), REAL_LABEL)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = train_attack_model(ds, cfg, out_dir=out, resume_from=resume)
    save_model(model, out / "model.zip")
    click.echo(
        f"trained {model.parameter_count()} parameters; "
        f"checkpoint at {out / 'model.zip'}"
    )


@main.command()
@_config_options
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--no-gbms", is_flag=True, default=False)
@_guarded
def apply(config, seed, ckpt, in_dir, out, no_gbms):
    """Apply the trained attack to every image in a folder."""
    cfg = _load_config(config, seed)
    model = load_model(ckpt)
    images, names = _image_folder(Path(in_dir))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for img, name in zip(images, names):
        y = attack(model, img, cfg.elimination, use_gbms=not no_gbms)
        save_image(quantize(y), out / name)
    click.echo(f"attacked {len(names)} images into {out}")


@main.command("gen-corpus")
@_config_options
@click.option("--real", type=click.Path(exists=True, file_okay=False), default=None,
              help="Real-image folder; synthesized procedurally when omitted.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--gm", "gm_id", default=None, help="One generator id (default: all).")
@click.option("--count", type=int, default=0, help="Images per class (0 = config).")
@_guarded
def gen_corpus(config, seed, real, out, gm_id, count):
    """Write labeled attribution corpora for the procedural generators."""
    cfg = _load_config(config, seed)
    n = count if count > 0 else cfg.bench.per_class
    out = Path(out)
    rng = Rng(cfg.seed).child("cli/gen-corpus")
    if real is not None:
        reals = Dataset.from_folder(Path(real), REAL_LABEL)
    else:
        real_dir = out / "real"
        real_dir.mkdir(parents=True, exist_ok=True)
        res = cfg.core.resolution
        for i in range(n):
            img = quantize(
                synthesize_real_image(rng.child(f"real/img{i:06d}"), res)
            )
            save_image(img, real_dir / f"{i:06d}.png")
        reals = Dataset.from_folder(real_dir, REAL_LABEL)
    gms = [_gm_by_id(gm_id)] if gm_id else list(DEFAULT_TINYGMS)
    for gm in gms:
        ds = generate_corpus(gm, reals, min(n, len(reals)),
                             rng.child(f"corpus/{gm.id}"), out / gm.id)
        click.echo(f"{gm.id}: {len(ds)} images under {out / gm.id}")


@main.command("train-am")
@_config_options
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False),
              help="Folder of labeled subfolders (one per class).")
@click.option("--kind", required=True, type=click.Choice(_AM_CHOICES))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guarded
def train_am_cmd(config, seed, data, kind, out):
    """Train and calibrate an attribution model; gate on held-out accuracy."""
    cfg = _load_config(config, seed)
    ds = _labeled_folder(Path(data))
    am = train_am(ds, AmKind(kind), cfg.bench,
                  rng=Rng(cfg.seed).child(f"cli/train-am/{kind}"))
    save_am(am, out)
    click.echo(
        f"{kind}: holdout accuracy {am.meta['holdout_accuracy']:.3f} "
        f"-> {out}"
    )


@main.command("baseline-attack")
@_config_options
@click.option("--kind", required=True, type=click.Choice(_KIND_CHOICES))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--am", "am_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Attribution model (gradient kinds).")
@_guarded
def baseline_attack(config, seed, kind, in_dir, out, am_path):
    """Apply one additive baseline attack to a folder of images."""
    cfg = _load_config(config, seed)
    images, names = _image_folder(Path(in_dir))
    am = load_am(am_path) if am_path else None
    acfg = AdditiveAttackConfig.from_defaults(
        AdditiveKind(kind), cfg.baselines, seed=cfg.seed,
        synthesis=cfg.datasynth,
    )
    attacked = additive_attack_corpus(images, am, acfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for img, name in zip(attacked, names):
        save_image(quantize(img), out / name)
    click.echo(f"{kind}: attacked {len(names)} images into {out}")


@main.command("eval")
@_config_options
@click.option("--am", "am_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Folder of labeled subfolders with true source labels.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--name", default="eval")
@_guarded
def eval_cmd(config, seed, am_path, in_dir, out, name):
    """Attribute a labeled folder and report ASR plus the confusion matrix."""
    cfg = _load_config(config, seed)
    am = load_am(am_path)
    ds = _labeled_folder(Path(in_dir))
    result = evaluate_attack(am, ds.load_all(), ds.labels())
    report = EvalReport.from_asr(
        name, am.kind.value, result, config_hash=cfg.config_hash()
    )
    out = Path(out)
    write_json(report.to_dict(), out)
    write_confusion_csv(report, out.with_suffix(".confusion.csv"))
    click.echo(f"asr {report.asr:.4f} over {report.n} images -> {out}")


@main.command("analyze-frequency")
@_config_options
@click.option("--in", "orig_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--attacked", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--gm", "gm_id", default=None,
              help="Generator id whose harmonic peaks to measure.")
@_guarded
def analyze_frequency(config, seed, orig_dir, attacked, out, gm_id):
    """Average log-spectra, heatmaps, and harmonic peak reductions."""
    del config, seed
    originals, _ = _image_folder(Path(orig_dir))
    attacked_imgs, _ = _image_folder(Path(attacked))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    avg_orig = average_spectrum(originals)
    avg_att = average_spectrum(attacked_imgs)
    save_spectrum_heatmap(avg_orig, out / "spectrum_original.png")
    save_spectrum_heatmap(avg_att, out / "spectrum_attacked.png")
    summary = {
        "l1_distance": spectrum_l1_distance(avg_orig, avg_att),
        "n_original": int(originals.shape[0]),
        "n_attacked": int(attacked_imgs.shape[0]),
    }
    if gm_id:
        gm = _gm_by_id(gm_id)
        peaks = []
        for fy, fx in gm.harmonics:
            p_orig = harmonic_peak_prominence(avg_orig, (fy, fx))
            p_att = harmonic_peak_prominence(avg_att, (fy, fx))
            peaks.append({
                "harmonic": [fy, fx],
                "original": p_orig,
                "attacked": p_att,
                "reduction": (p_orig - p_att) / p_orig if p_orig > 0 else None,
            })
        summary["harmonics"] = peaks
    write_json(summary, out / "frequency.json")
    click.echo(f"spectrum L1 distance {summary['l1_distance']:.4f} -> {out}")


@main.command("analyze-residual")
@_config_options
@click.option("--in", "orig_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--attacked", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def analyze_residual(config, seed, orig_dir, attacked, out):
    """Residual correlation and pairwise-distance statistics."""
    del config, seed
    originals, _ = _image_folder(Path(orig_dir))
    attacked_imgs, _ = _image_folder(Path(attacked))
    if originals.shape != attacked_imgs.shape:
        raise ContractError("original and attacked folders disagree in shape")
    stats = residual_stats(originals, attacked_imgs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = stats.summary()
    write_json(summary, out / "residual.json")
    hist = summary["pcc_histogram"]
    with open(out / "residual_pcc_hist.csv", "w", encoding="utf-8") as f:
        f.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(
            hist["edges"][:-1], hist["edges"][1:], hist["counts"]
        ):
            f.write(f"{lo},{hi},{c}\n")
    click.echo(
        f"median |pcc| {summary['pcc_abs_median']} over {summary['n']} "
        f"images -> {out}"
    )


@main.command("defense-advtrain")
@_config_options
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False),
              help="Clean labeled corpus (one subfolder per class).")
@click.option("--scenario", required=True,
              type=click.Choice(["black_box", "white_box"]))
@click.option("--am-kind", default=AmKind.CNN_SMALL.value,
              type=click.Choice(_AM_CHOICES))
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Attack checkpoint (required for white_box).")
@click.option("--surrogate-am", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Differentiable model for gradient sources.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def defense_advtrain(config, seed, data, scenario, am_kind, ckpt,
                     surrogate_am, out):
    """Retrain an attribution model on adversarially augmented data."""
    cfg = _load_config(config, seed)
    clean = _labeled_folder(Path(data))
    scen = (
        DefenseScenario.black_box(cfg.defense.augmentation_ratio)
        if scenario == "black_box"
        else DefenseScenario.white_box(cfg.defense.augmentation_ratio)
    )
    budgets = DefenseBudgets(
        bench=cfg.bench, baselines=cfg.baselines, defense=cfg.defense,
        synthesis=cfg.datasynth,
        attack_model=load_model(ckpt) if ckpt else None,
        gbms=cfg.elimination, use_gbms=cfg.ablation.use_gbms,
        gradient_surrogate=load_am(surrogate_am) if surrogate_am else None,
    )
    hardened = adversarial_training(
        AmKind(am_kind), clean, scen, budgets,
        rng=Rng(cfg.seed).child(f"cli/defense-advtrain/{scenario}"),
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_am(hardened, out / f"hardened_{scenario}.zip")
    write_json(
        {
            "scenario": scen.to_dict(),
            "clean_accuracy_before": hardened.meta["clean_accuracy_before"],
            "clean_accuracy_after": hardened.meta["clean_accuracy_after"],
            "adversarial_counts": hardened.meta["adversarial_counts"],
        },
        out / f"advtrain_{scenario}.json",
    )
    click.echo(
        f"clean accuracy {hardened.meta['clean_accuracy_before']:.3f} -> "
        f"{hardened.meta['clean_accuracy_after']:.3f}; artifacts in {out}"
    )


@main.command("defense-invert")
@_config_options
@click.option("--adversarial", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--original", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--kind", default=InverterKind.DENOISER_STYLE.value,
              type=click.Choice(_INVERTER_CHOICES))
@click.option("--am", "am_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--eval", "eval_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Labeled folder of adversarial images to re-attribute.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def defense_invert(config, seed, adversarial, original, kind, am_path,
                   eval_dir, out):
    """Train an inversion network on pairs and re-attribute its outputs."""
    cfg = _load_config(config, seed)
    adv, adv_names = _image_folder(Path(adversarial))
    orig, orig_names = _image_folder(Path(original))
    if adv_names != orig_names:
        raise ContractError(
            "adversarial and original folders must pair by filename"
        )
    budgets = DefenseBudgets(
        bench=cfg.bench, baselines=cfg.baselines, defense=cfg.defense,
        synthesis=cfg.datasynth,
    )
    rng = Rng(cfg.seed).child(f"cli/defense-invert/{kind}")
    inverter = train_inverter((adv, orig), InverterKind(kind), budgets, rng)
    am = load_am(am_path)
    ds = _labeled_folder(Path(eval_dir))
    report = invert_and_evaluate(
        inverter, am, (ds.load_all(), ds.labels()),
        name=f"inverted_{kind}", config_hash=cfg.config_hash(),
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out / f"invert_{kind}.json")
    click.echo(
        f"post-inversion asr {report.asr:.4f} "
        f"(validation L2 {inverter.meta['validation_l2']:.4f}) -> {out}"
    )


@main.command("full-bench")
@_config_options
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--real", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--profile", type=click.Choice(["desk", "micro"]), default=None,
              help="Built-in budget when no --config is given.")
@_guarded
def full_bench_cmd(config, seed, out, real, profile):
    """Run every stage end to end and write summary.json."""
    if config:
        cfg = _load_config(config, seed)
    else:
        make = micro_profile if profile == "micro" else desk_profile
        cfg = make(seed if seed is not None else 1234)
    summary = full_bench(cfg, out, real_dir=real)
    ours = summary["asr_table"].get("ours", {})
    click.echo(
        f"bench complete; ours average asr "
        f"{ours.get('average', float('nan')):.4f}; summary at "
        f"{Path(out) / 'summary.json'}"
    )


if __name__ == "__main__":
    main()
