"""Staged end-to-end bench runner.

One call builds the data, trains the attack model, calibrates the
attribution models, applies every attack, and runs the diagnostics and
defense experiments, persisting each stage's artifacts under a single
output directory. Every random stream derives from the config's master
seed and all reports are canonical JSON, so two runs with the same config
produce byte-identical summaries.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .analysis import (
    average_spectrum,
    grayscale_log_spectrum,
    harmonic_peak_prominence,
    mean_perceptual_distance,
    mean_ssim,
    residual_stats,
    save_spectrum_heatmap,
    spectrum_l1_distance,
)
from .attack_model import AttackModel, save_model
from .baselines import AdditiveAttackConfig, AdditiveKind, additive_attack_corpus
from .bench.generators import DEFAULT_TINYGMS, TinyGM, synthesize_real_image
from .bench.models import (
    AmKind,
    AttributionModel,
    evaluate_attack,
    save_am,
    train_am_arrays,
)
from .bench.report import (
    FULL_SCALE_REFERENCE,
    EvalReport,
    canonical_json,
    write_confusion_csv,
    write_json,
)
from .core.config import RunConfig
from .core.dataset import REAL_LABEL, Dataset, DatasetItem
from .core.images import save_image
from .core.rng import Rng
from .datasynth import make_pair
from .defense import (
    SOURCE_OURS,
    DefenseBudgets,
    DefenseScenario,
    InverterKind,
    adversarial_training,
    invert_and_evaluate,
    train_inverter,
)
from .elimination import attack_corpus
from .errors import ContractError, StageError
from .features import FeatureExtractor, default_feature_extractor
from .training import train

ATTACK_OURS = SOURCE_OURS
SUMMARY_SCHEMA_VERSION = 1
STAGE_ORDER = (
    "synth",
    "train-attack",
    "gen-corpus",
    "train-am",
    "apply",
    "baseline-attack",
    "eval",
    "analyze",
    "defense",
)
SYNTH_SAMPLE_PAIRS = 16


def quantize(images: np.ndarray) -> np.ndarray:
    """Snap pixels to the 8-bit grid the PNG artifacts use.

    Every corpus is quantized before any metric or model sees it, so
    in-memory arrays and their on-disk copies are the same data.
    """
    q = np.rint(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    return q.astype(np.float32)


def desk_profile(seed: int = 1234) -> RunConfig:
    """Budget tuned for a single-core desk run of the whole bench."""
    cfg = RunConfig()
    return cfg.replace(
        losses=dataclasses.replace(cfg.losses, normalize=True),
        training=dataclasses.replace(
            cfg.training, seed=seed, epochs=4, batch_size=6,
            steps_per_epoch=100, crop=64,
        ),
    )


def micro_profile(seed: int = 1234) -> RunConfig:
    """Smallest complete configuration; used for determinism checks."""
    cfg = RunConfig()
    return cfg.replace(
        losses=dataclasses.replace(cfg.losses, normalize=True),
        training=dataclasses.replace(
            cfg.training, seed=seed, epochs=2, batch_size=4,
            steps_per_epoch=20, crop=64,
        ),
        bench=dataclasses.replace(
            cfg.bench, attack_train_count=64, per_class=80, eval_per_gm=8,
            cnn_epochs=16, accuracy_gate=0.5,
        ),
        defense=dataclasses.replace(
            cfg.defense, inverter_pairs=60, inverter_epochs=2,
        ),
    )


@dataclass
class BenchContext:
    """Mutable state threaded through the stages of one bench run."""

    cfg: RunConfig
    out: Path
    fx: FeatureExtractor
    gms: tuple[TinyGM, ...] = DEFAULT_TINYGMS
    real_dir: Path | None = None

    train_reals: Dataset | None = None
    bench_images: np.ndarray | None = None
    bench_labels: list[str] = field(default_factory=list)
    eval_clean: np.ndarray | None = None
    eval_labels: list[str] = field(default_factory=list)
    model: AttackModel | None = None
    checkpoint_sha256: str = ""
    ams: dict[str, AttributionModel] = field(default_factory=dict)
    attacked: dict[str, np.ndarray] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    completed: list[str] = field(default_factory=list)

    def rng(self, label: str) -> Rng:
        return Rng(self.cfg.seed).child(f"bench/{label}")

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _write_corpus(images: np.ndarray, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        p = directory / f"{i:06d}.png"
        save_image(img, p)
        paths.append(p)
    return paths


def _corpus_dataset(paths: list[Path], label: str, source: str,
                    label_set: tuple[str, ...]) -> Dataset:
    items = tuple(
        DatasetItem(path=p, label=label, source=source) for p in paths
    )
    return Dataset(items=items, label_set=label_set)


def _synthesize_to_disk(n: int, resolution: int, rng: Rng,
                        directory: Path) -> list[Path]:
    # one image in memory at a time; corpora can be large
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        img = quantize(
            synthesize_real_image(rng.child(f"img{i:06d}"), resolution)
        )
        p = directory / f"{i:06d}.png"
        save_image(img, p)
        paths.append(p)
    return paths


def _load_real_folder(real_dir: Path, n: int, resolution: int) -> Dataset:
    ds = Dataset.from_folder(real_dir, REAL_LABEL)
    if len(ds) < n:
        raise ContractError(
            f"real folder {real_dir} has {len(ds)} images, need {n}"
        )
    return ds.subset(range(n))


def stage_synth(ctx: BenchContext) -> None:
    cfg = ctx.cfg
    res = cfg.core.resolution
    if ctx.real_dir is not None:
        ctx.train_reals = _load_real_folder(
            ctx.real_dir, cfg.bench.attack_train_count, res
        )
    else:
        paths = _synthesize_to_disk(
            cfg.bench.attack_train_count, res, ctx.rng("reals/train"),
            ctx.path("reals", "train"),
        )
        ctx.train_reals = _corpus_dataset(
            paths, REAL_LABEL, "clean", (REAL_LABEL,)
        )

    # a small materialized sample of training pairs, with the applied ops
    real_dir = ctx.path("synth", "real")
    synth_dir = ctx.path("synth", "synthetic")
    real_dir.mkdir(parents=True, exist_ok=True)
    synth_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    r = ctx.rng("synth/sample")
    n_sample = min(SYNTH_SAMPLE_PAIRS, len(ctx.train_reals))
    for i in range(n_sample):
        x_r = ctx.train_reals.load(i)
        ops: list[str] = []
        ri = r.child(f"pair{i:04d}")
        x_r2, x_s = make_pair(x_r, cfg.datasynth, ri, cfg.ablation, ops)
        pr = real_dir / f"{i:04d}.png"
        ps = synth_dir / f"{i:04d}.png"
        save_image(x_r2, pr)
        save_image(quantize(x_s), ps)
        rows.append((pr, ps, ri.seed, ";".join(ops) or "none"))
    with open(ctx.path("synth", "manifest.csv"), "w", encoding="utf-8") as f:
        f.write("path_real,path_synth,seed,ops_applied\n")
        for pr, ps, seed, ops_s in rows:
            f.write(f"{pr.name},{ps.name},{seed},\"{ops_s}\"\n")


def stage_train_attack(ctx: BenchContext) -> None:
    out = ctx.path("attack_model")
    out.mkdir(parents=True, exist_ok=True)
    ctx.model = train(ctx.train_reals, ctx.cfg, out_dir=out, fx=ctx.fx)
    ckpt = out / "model.zip"
    save_model(ctx.model, ckpt)
    ctx.checkpoint_sha256 = hashlib.sha256(ckpt.read_bytes()).hexdigest()


def stage_gen_corpus(ctx: BenchContext) -> None:
    cfg = ctx.cfg
    res = cfg.core.resolution
    rng = ctx.rng("corpus")
    # one shared content pool for every class, so attribution must key on
    # the imprinted fingerprints rather than on content differences
    base = np.stack([
        quantize(synthesize_real_image(rng.child(f"base/img{i:06d}"), res))
        for i in range(cfg.bench.per_class)
    ])
    _write_corpus(base, ctx.path("corpora", "real"))
    stacks = [base]
    labels = [REAL_LABEL] * base.shape[0]
    for gm in ctx.gms:
        fakes = quantize(np.stack([gm.apply(img) for img in base]))
        _write_corpus(fakes, ctx.path("corpora", gm.id))
        stacks.append(fakes)
        labels.extend([gm.id] * fakes.shape[0])
    ctx.bench_images = np.concatenate(stacks, axis=0)
    ctx.bench_labels = labels

    # fresh content for attack evaluation, unseen by attribution training
    eval_stacks, eval_labels = [], []
    for g_i, gm in enumerate(ctx.gms):
        fresh = np.stack([
            quantize(synthesize_real_image(
                rng.child(f"eval/{gm.id}/img{i:06d}"), res
            ))
            for i in range(cfg.bench.eval_per_gm)
        ])
        fakes = quantize(np.stack([gm.apply(img) for img in fresh]))
        _write_corpus(fakes, ctx.path("corpora", "eval", gm.id))
        eval_stacks.append(fakes)
        eval_labels.extend([gm.id] * fakes.shape[0])
    ctx.eval_clean = np.concatenate(eval_stacks, axis=0)
    ctx.eval_labels = eval_labels


def stage_train_am(ctx: BenchContext) -> None:
    label_set = tuple(sorted({REAL_LABEL, *(gm.id for gm in ctx.gms)}))
    calibration = {}
    for kind in (AmKind.DCT_LINEAR, AmKind.CNN_SMALL):
        am = train_am_arrays(
            ctx.bench_images, ctx.bench_labels, kind, cfg=ctx.cfg.bench,
            rng=ctx.rng(f"am/{kind.value}"), gate=True, label_set=label_set,
        )
        ctx.ams[kind.value] = am
        save_am(am, ctx.path("ams", f"{kind.value}.zip"))
        calibration[kind.value] = dict(am.meta)
    ctx.summary["calibration"] = calibration


def stage_apply(ctx: BenchContext) -> None:
    attacked = attack_corpus(
        ctx.model, ctx.eval_clean, ctx.cfg.elimination,
        use_gbms=ctx.cfg.ablation.use_gbms,
    )
    ctx.attacked[ATTACK_OURS] = quantize(attacked)
    _write_corpus(ctx.attacked[ATTACK_OURS], ctx.path("attacked", ATTACK_OURS))


def stage_baselines(ctx: BenchContext) -> None:
    cnn = ctx.ams[AmKind.CNN_SMALL.value]
    for kind in AdditiveKind:
        acfg = AdditiveAttackConfig.from_defaults(
            kind, ctx.cfg.baselines, synthesis=ctx.cfg.datasynth
        )
        gradient = kind in (
            AdditiveKind.GRADIENT_SIGN_SINGLE,
            AdditiveKind.GRADIENT_SIGN_ITERATIVE,
        )
        am = cnn if gradient else None
        out = additive_attack_corpus(ctx.eval_clean, am, acfg)
        ctx.attacked[kind.value] = quantize(out)
        _write_corpus(ctx.attacked[kind.value], ctx.path("attacked", kind.value))


def _fidelity(ctx: BenchContext, images: np.ndarray) -> tuple[float, float]:
    return (
        mean_ssim(ctx.eval_clean, images),
        mean_perceptual_distance(ctx.eval_clean, images, ctx.fx),
    )


def stage_eval(ctx: BenchContext) -> None:
    config_hash = ctx.cfg.config_hash()
    rows = []
    clean_rows = []
    fidelity = {}
    for am_name, am in sorted(ctx.ams.items()):
        result = evaluate_attack(am, ctx.eval_clean, ctx.eval_labels)
        clean_rows.append(
            EvalReport.from_asr(
                "clean", am_name, result, config_hash=config_hash
            ).to_dict()
        )
    for attack_name in sorted(ctx.attacked):
        images = ctx.attacked[attack_name]
        s, l = _fidelity(ctx, images)
        fidelity[attack_name] = {"mean_ssim": s, "mean_lpips": l}
        for am_name, am in sorted(ctx.ams.items()):
            result = evaluate_attack(am, images, ctx.eval_labels)
            report = EvalReport.from_asr(
                attack_name, am_name, result, config_hash=config_hash,
                mean_ssim=s, mean_lpips=l,
            )
            write_json(
                report.to_dict(),
                ctx.path("reports", f"eval_{attack_name}_{am_name}.json"),
            )
            write_confusion_csv(
                report,
                ctx.path("reports", f"confusion_{attack_name}_{am_name}.csv"),
            )
            rows.append(report.to_dict())
    ctx.summary["attacks"] = rows
    ctx.summary["clean_eval"] = clean_rows
    ctx.summary["fidelity"] = fidelity

    by_am = {}
    for row in rows:
        by_am.setdefault(row["name"], {})[row["am_kind"]] = row["asr"]
    ctx.summary["asr_table"] = {
        name: {**kinds, "average": float(np.mean(sorted(kinds.values())))}
        for name, kinds in sorted(by_am.items())
    }


def stage_analyze(ctx: BenchContext) -> None:
    eval_labels = np.asarray(ctx.eval_labels)
    spectra_dir = ctx.path("analysis", "spectra")
    spectra_dir.mkdir(parents=True, exist_ok=True)

    spectral_distance = {}
    for attack_name in sorted(ctx.attacked):
        images = ctx.attacked[attack_name]
        dists = [
            float(np.abs(
                grayscale_log_spectrum(a) - grayscale_log_spectrum(o)
            ).mean())
            for o, a in zip(ctx.eval_clean, images)
        ]
        spectral_distance[attack_name] = float(np.mean(dists))

    harmonics = {}
    for gm in ctx.gms:
        mask = eval_labels == gm.id
        originals = ctx.eval_clean[mask]
        avg_orig = average_spectrum(originals)
        save_spectrum_heatmap(avg_orig, spectra_dir / f"{gm.id}_original.png")
        gm_rows = {}
        for attack_name in sorted(ctx.attacked):
            avg_att = average_spectrum(ctx.attacked[attack_name][mask])
            if attack_name == ATTACK_OURS:
                save_spectrum_heatmap(
                    avg_att, spectra_dir / f"{gm.id}_{attack_name}.png"
                )
            peaks = []
            for fy, fx_ in gm.harmonics:
                p_orig = harmonic_peak_prominence(avg_orig, (fy, fx_))
                p_att = harmonic_peak_prominence(avg_att, (fy, fx_))
                reduction = (
                    (p_orig - p_att) / p_orig if p_orig > 0 else None
                )
                peaks.append({
                    "harmonic": [fy, fx_],
                    "original": p_orig,
                    "attacked": p_att,
                    "reduction": reduction,
                })
            gm_rows[attack_name] = peaks
        harmonics[gm.id] = gm_rows

    residual = {}
    for attack_name in sorted(ctx.attacked):
        stats = residual_stats(ctx.eval_clean, ctx.attacked[attack_name])
        residual[attack_name] = stats.summary()
        hist = residual[attack_name]["pcc_histogram"]
        with open(
            ctx.path("analysis", f"residual_pcc_{attack_name}.csv"),
            "w", encoding="utf-8",
        ) as f:
            f.write("bin_low,bin_high,count\n")
            for lo, hi, c in zip(
                hist["edges"][:-1], hist["edges"][1:], hist["counts"]
            ):
                f.write(f"{lo},{hi},{c}\n")

    ctx.summary["spectrum"] = {
        "l1_distance": spectral_distance,
        "harmonics": harmonics,
    }
    ctx.summary["residual"] = residual
    write_json(ctx.summary["spectrum"], ctx.path("analysis", "spectrum.json"))
    write_json(residual, ctx.path("analysis", "residual.json"))


def _defense_budgets(ctx: BenchContext) -> DefenseBudgets:
    return DefenseBudgets(
        bench=ctx.cfg.bench,
        baselines=ctx.cfg.baselines,
        defense=ctx.cfg.defense,
        synthesis=ctx.cfg.datasynth,
        attack_model=ctx.model,
        gbms=ctx.cfg.elimination,
        use_gbms=ctx.cfg.ablation.use_gbms,
        gradient_surrogate=ctx.ams[AmKind.CNN_SMALL.value],
    )


def _advtrain_one(ctx: BenchContext, scenario: DefenseScenario,
                  budgets: DefenseBudgets) -> dict:
    label_set = tuple(sorted({REAL_LABEL, *(gm.id for gm in ctx.gms)}))
    clean = Dataset(
        items=tuple(
            DatasetItem(path=p, label=lb, source="clean")
            for lb, gm_dir in (
                [(REAL_LABEL, ctx.out / "corpora" / "real")]
                + [(gm.id, ctx.out / "corpora" / gm.id) for gm in ctx.gms]
            )
            for p in sorted(gm_dir.glob("*.png"))
        ),
        label_set=label_set,
    )
    hardened = adversarial_training(
        AmKind.CNN_SMALL, clean, scenario, budgets,
        rng=ctx.rng(f"defense/advtrain/{scenario.mode.value}"),
    )
    save_am(
        hardened,
        ctx.path("defense", f"hardened_{scenario.mode.value}.zip"),
    )
    post_asr = {}
    for attack_name in sorted(ctx.attacked):
        result = evaluate_attack(
            hardened, ctx.attacked[attack_name], ctx.eval_labels
        )
        post_asr[attack_name] = result.asr
    row = {
        "scenario": scenario.to_dict(),
        "clean_accuracy_before": hardened.meta["clean_accuracy_before"],
        "clean_accuracy_after": hardened.meta["clean_accuracy_after"],
        "adversarial_counts": hardened.meta["adversarial_counts"],
        "post_asr": post_asr,
    }
    write_json(row, ctx.path(
        "defense", f"advtrain_{scenario.mode.value}.json"
    ))
    return row


def _inversion_pairs(ctx: BenchContext, attack_name: str,
                     budgets: DefenseBudgets
                     ) -> tuple[np.ndarray, np.ndarray]:
    n = ctx.cfg.defense.inverter_pairs
    fakes = ctx.bench_images[
        np.asarray(ctx.bench_labels) != REAL_LABEL
    ][:n]
    if attack_name == ATTACK_OURS:
        adv = attack_corpus(
            ctx.model, fakes, ctx.cfg.elimination,
            use_gbms=ctx.cfg.ablation.use_gbms,
        )
    else:
        acfg = AdditiveAttackConfig.from_defaults(
            AdditiveKind(attack_name), ctx.cfg.baselines,
            synthesis=ctx.cfg.datasynth,
        )
        adv = additive_attack_corpus(
            fakes, budgets.gradient_surrogate, acfg
        )
    return quantize(adv), fakes


def _crop_pairs(adv: np.ndarray, orig: np.ndarray, side: int,
                rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    # aligned random crops: inversion nets are size-agnostic, so training
    # on crops and inverting full images is sound and much cheaper
    _, _, h, w = adv.shape
    if h <= side or w <= side:
        return adv, orig
    a_out, o_out = [], []
    for i in range(adv.shape[0]):
        r = rng.child(f"crop{i:06d}")
        top = int(r.integers(0, h - side + 1))
        left = int(r.integers(0, w - side + 1))
        a_out.append(adv[i, :, top:top + side, left:left + side])
        o_out.append(orig[i, :, top:top + side, left:left + side])
    return np.stack(a_out), np.stack(o_out)


def stage_defense(ctx: BenchContext) -> None:
    budgets = _defense_budgets(ctx)
    ratio = ctx.cfg.defense.augmentation_ratio
    advtrain = {
        "black_box": _advtrain_one(
            ctx, DefenseScenario.black_box(ratio), budgets
        ),
        "white_box": _advtrain_one(
            ctx, DefenseScenario.white_box(ratio), budgets
        ),
    }

    inversion_rows = []
    crop_side = min(64, ctx.cfg.core.resolution)
    plans = [
        (ATTACK_OURS, InverterKind.DENOISER_STYLE),
        (ATTACK_OURS, InverterKind.AUTOENCODER_STYLE),
        (AdditiveKind.FIXED_PERTURBATION.value, InverterKind.DENOISER_STYLE),
    ]
    pair_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for attack_name, kind in plans:
        if attack_name not in pair_cache:
            pair_cache[attack_name] = _inversion_pairs(
                ctx, attack_name, budgets
            )
        adv, orig = pair_cache[attack_name]
        rng = ctx.rng(f"defense/invert/{attack_name}/{kind.value}")
        adv_c, orig_c = _crop_pairs(adv, orig, crop_side, rng.child("crops"))
        inverter = train_inverter((adv_c, orig_c), kind, budgets, rng)
        for am_name, am in sorted(ctx.ams.items()):
            report = invert_and_evaluate(
                inverter, am, (ctx.attacked[attack_name], ctx.eval_labels),
                name=f"inverted_{attack_name}",
                config_hash=ctx.cfg.config_hash(),
            )
            row = report.to_dict()
            row["attack"] = attack_name
            row["inverter_kind"] = kind.value
            inversion_rows.append(row)
            write_json(row, ctx.path(
                "defense",
                f"invert_{attack_name}_{kind.value}_{am_name}.json",
            ))

    ctx.summary["defense"] = {
        "adversarial_training": advtrain,
        "inversion": inversion_rows,
    }


def _ablation_name(cfg: RunConfig) -> str:
    off = [
        f.name for f in dataclasses.fields(cfg.ablation)
        if not getattr(cfg.ablation, f.name)
    ]
    if not off:
        return ATTACK_OURS
    return ATTACK_OURS + "_wo_" + "_wo_".join(
        n.removeprefix("use_") for n in off
    )


def _run_stage(ctx: BenchContext, name: str, fn) -> None:
    try:
        fn(ctx)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e
    ctx.completed.append(name)
    write_json({"completed": ctx.completed}, ctx.out / "stages.json")


def full_bench(cfg: RunConfig, out_dir, real_dir=None,
               gms: tuple[TinyGM, ...] = DEFAULT_TINYGMS,
               fx: FeatureExtractor | None = None) -> dict:
    """Run every stage and return the summary dict (also written to disk)."""
    torch.set_num_threads(1)
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = BenchContext(
        cfg=cfg, out=out, fx=fx or default_feature_extractor(),
        gms=gms, real_dir=Path(real_dir) if real_dir else None,
    )
    ctx.summary["schema_version"] = SUMMARY_SCHEMA_VERSION
    ctx.summary["config"] = cfg.to_dict()
    ctx.summary["config_hash"] = cfg.config_hash()
    ctx.summary["row_name"] = _ablation_name(cfg)
    ctx.summary["generators"] = [
        {
            "id": gm.id,
            "scale_factor": gm.scale_factor,
            "mode": gm.mode,
            "grid_period": gm.grid_period,
            "harmonics": [list(h) for h in gm.harmonics],
        }
        for gm in gms
    ]

    stages = (
        ("synth", stage_synth),
        ("train-attack", stage_train_attack),
        ("gen-corpus", stage_gen_corpus),
        ("train-am", stage_train_am),
        ("apply", stage_apply),
        ("baseline-attack", stage_baselines),
        ("eval", stage_eval),
        ("analyze", stage_analyze),
        ("defense", stage_defense),
    )
    for name, fn in stages:
        _run_stage(ctx, name, fn)
        if name == "train-attack":
            ctx.summary["checkpoint_sha256"] = ctx.checkpoint_sha256

    ctx.summary["full_scale_reference"] = FULL_SCALE_REFERENCE
    _validate_summary(ctx.summary)
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        f.write(canonical_json(ctx.summary))
        f.write("\n")
    return ctx.summary


def _validate_summary(summary: dict) -> None:
    import jsonschema

    from importlib import resources

    schema_text = (
        resources.files("untrace") / "schemas" / "summary.schema.json"
    ).read_text(encoding="utf-8")
    schema = json.loads(schema_text)
    try:
        jsonschema.validate(summary, schema)
    except jsonschema.ValidationError as e:
        raise ContractError(f"summary schema violation: {e.message}") from e
