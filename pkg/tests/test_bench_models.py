"""Attribution models: training determinism, accuracy gate, and an exact
confusion-matrix oracle built from a hand-crafted constant classifier."""

import dataclasses

import numpy as np
import pytest

from untrace.bench.features import POOL_GRID
from untrace.bench.generators import DEFAULT_TINYGMS, synthesize_real_corpus
from untrace.bench.models import (
    MIN_PER_CLASS,
    AmKind,
    AttributionModel,
    asr,
    attribute,
    evaluate_attack,
    load_am,
    save_am,
    train_am_arrays,
)
from untrace.core.config import BenchConfig
from untrace.core.rng import Rng
from untrace.errors import CalibrationError, ContractError


def _constant_model(labels=("A", "B"), winner=1):
    # zero weights and a one-hot intercept: predicts `winner` everywhere
    f = 3 * POOL_GRID * POOL_GRID
    intercept = np.zeros(len(labels))
    intercept[winner] = 10.0
    return AttributionModel(
        kind=AmKind.DCT_LINEAR,
        labels=tuple(labels),
        coef=np.zeros((len(labels), f)),
        intercept=intercept,
        feat_mean=np.zeros(f),
        feat_std=np.ones(f),
    )


def _separable_corpus(per_class=MIN_PER_CLASS, side=32, seed=0):
    reals = synthesize_real_corpus(per_class, side, Rng(seed))
    gm = DEFAULT_TINYGMS[2]  # explicit period-8 grid; trivially separable
    fakes = np.stack([gm.apply(x) for x in reals])
    images = np.concatenate([reals, fakes])
    labels = ["REAL"] * per_class + [gm.id] * per_class
    return images, labels


class TestConstantModelOracle:
    def test_asr_and_confusion_exact(self):
        am = _constant_model(winner=1)  # always predicts "B"
        images = Rng(1).uniform(size=(10, 3, 32, 32)).astype(np.float32)
        labels = ["A"] * 6 + ["B"] * 4
        res = evaluate_attack(am, images, labels)
        # all 6 As misattributed, all 4 Bs correct
        assert res.asr == pytest.approx(6 / 10)
        np.testing.assert_array_equal(res.confusion, [[0, 6], [0, 4]])
        assert res.asr == pytest.approx(res.asr_from_confusion())
        assert res.n == 10

    def test_real_rate_counts_real_predictions(self):
        am = _constant_model(labels=("REAL", "gm"), winner=0)
        images = Rng(2).uniform(size=(5, 3, 32, 32)).astype(np.float32)
        res = evaluate_attack(am, images, ["gm"] * 5)
        assert res.asr == 1.0
        assert res.real_rate == 1.0

    def test_asr_accepts_arrays_pair(self):
        am = _constant_model(winner=0)
        images = Rng(3).uniform(size=(4, 3, 32, 32)).astype(np.float32)
        assert asr(am, (images, ["B"] * 4)) == 1.0
        assert asr(am, (images, ["A"] * 4)) == 0.0

    def test_unknown_label_rejected(self):
        am = _constant_model()
        images = Rng(4).uniform(size=(2, 3, 32, 32)).astype(np.float32)
        with pytest.raises(ContractError):
            evaluate_attack(am, images, ["A", "C"])

    def test_attribute_single(self):
        am = _constant_model(winner=1)
        x = Rng(5).uniform(size=(3, 32, 32)).astype(np.float32)
        label, p = attribute(am, x)
        assert label == "B"
        assert p > 0.99


class TestTraining:
    def test_dct_linear_separates_grid_fingerprint(self):
        images, labels = _separable_corpus()
        am = train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                             BenchConfig(), Rng(6), gate=False)
        assert am.meta["holdout_accuracy"] == 1.0
        assert am.meta["gate_passed"]

    def test_training_is_deterministic(self):
        images, labels = _separable_corpus()
        a = train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                            BenchConfig(), Rng(7), gate=False)
        b = train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                            BenchConfig(), Rng(7), gate=False)
        np.testing.assert_array_equal(a.coef, b.coef)
        np.testing.assert_array_equal(a.intercept, b.intercept)
        assert a.meta == b.meta

    def test_gate_raises_on_unlearnable_task(self):
        # identical images under two labels cap accuracy near chance
        images = np.repeat(
            Rng(8).uniform(size=(MIN_PER_CLASS, 3, 32, 32)), 2, axis=0
        ).astype(np.float32)
        labels = ["A", "B"] * MIN_PER_CLASS
        with pytest.raises(CalibrationError):
            train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                            BenchConfig(accuracy_gate=0.9), Rng(9))

    def test_gate_off_reports_failure_in_meta(self):
        images = np.repeat(
            Rng(10).uniform(size=(MIN_PER_CLASS, 3, 32, 32)), 2, axis=0
        ).astype(np.float32)
        labels = ["A", "B"] * MIN_PER_CLASS
        am = train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                             BenchConfig(accuracy_gate=0.9), Rng(11),
                             gate=False)
        assert not am.meta["gate_passed"]
        assert am.meta["holdout_accuracy"] < 0.9

    def test_min_per_class_enforced(self):
        images = Rng(12).uniform(size=(60, 3, 32, 32)).astype(np.float32)
        labels = ["A"] * 49 + ["B"] * 11
        with pytest.raises(ContractError):
            train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                            BenchConfig(), Rng(13))

    def test_single_class_rejected(self):
        images = Rng(14).uniform(size=(60, 3, 32, 32)).astype(np.float32)
        with pytest.raises(ContractError):
            train_am_arrays(images, ["A"] * 60, AmKind.DCT_LINEAR,
                            BenchConfig(), Rng(15))

    def test_label_set_must_cover_item_labels(self):
        images, labels = _separable_corpus()
        with pytest.raises(ContractError):
            train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                            BenchConfig(), Rng(16), gate=False,
                            label_set=("REAL", "something_else"))


class TestCnnKind:
    def test_cnn_learns_and_is_deterministic(self):
        images, labels = _separable_corpus(side=32)
        cfg = BenchConfig(cnn_epochs=24, accuracy_gate=0.5)
        a = train_am_arrays(images, labels, AmKind.CNN_SMALL, cfg, Rng(17),
                            gate=False)
        b = train_am_arrays(images, labels, AmKind.CNN_SMALL, cfg, Rng(17),
                            gate=False)
        assert a.meta["holdout_accuracy"] == b.meta["holdout_accuracy"]
        x = images[:3]
        np.testing.assert_array_equal(a.predict_proba(x), b.predict_proba(x))
        assert a.meta["holdout_accuracy"] >= 0.9

    def test_torch_logits_only_for_cnn(self):
        import torch

        am = _constant_model()
        assert not am.differentiable
        with pytest.raises(ContractError):
            am.torch_logits(torch.zeros(1, 3, 32, 32))


class TestSerialization:
    def test_dct_roundtrip_bit_exact(self, tmp_path):
        images, labels = _separable_corpus()
        am = train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                             BenchConfig(), Rng(18), gate=False)
        p = tmp_path / "am.zip"
        save_am(am, p)
        back = load_am(p)
        assert back.kind is AmKind.DCT_LINEAR
        assert back.labels == am.labels
        assert back.meta == am.meta
        x = images[:4]
        np.testing.assert_array_equal(am.predict_proba(x),
                                      back.predict_proba(x))

    def test_cnn_roundtrip_bit_exact(self, tmp_path):
        images, labels = _separable_corpus()
        cfg = BenchConfig(cnn_epochs=2, accuracy_gate=0.0)
        am = train_am_arrays(images, labels, AmKind.CNN_SMALL, cfg, Rng(19),
                             gate=False)
        p = tmp_path / "am.zip"
        save_am(am, p)
        back = load_am(p)
        assert back.kind is AmKind.CNN_SMALL
        x = images[:4]
        np.testing.assert_array_equal(am.predict_proba(x),
                                      back.predict_proba(x))

    def test_probabilities_normalized(self):
        images, labels = _separable_corpus()
        am = train_am_arrays(images, labels, AmKind.DCT_LINEAR,
                             BenchConfig(), Rng(20), gate=False)
        probs = am.predict_proba(images[:8])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert probs.min() >= 0.0
