"""Configuration loading, validation, and hashing."""

import dataclasses

import pytest

from untrace.core.config import (
    AblationFlags,
    LossWeights,
    RunConfig,
    SynthesisConfig,
    TrainingConfig,
)
from untrace.errors import ContractError, DataIOError


class TestDefaults:
    def test_defaults_validate(self):
        cfg = RunConfig().validate()
        assert cfg.core.resolution == 128
        assert cfg.losses.beta == (0.5, 0.1, 0.4)
        assert cfg.datasynth.p1 == 0.9 and cfg.datasynth.p2 == 0.9
        assert cfg.baselines.epsilon == pytest.approx(8.0 / 255.0)

    def test_seed_property_tracks_training_seed(self):
        cfg = RunConfig().replace(
            training=dataclasses.replace(TrainingConfig(), seed=777)
        )
        assert cfg.seed == 777

    def test_replace_validates(self):
        with pytest.raises(ContractError):
            RunConfig().replace(
                training=dataclasses.replace(TrainingConfig(), epochs=0)
            )


class TestHash:
    def test_hash_is_stable(self):
        assert RunConfig().config_hash() == RunConfig().config_hash()

    def test_hash_sensitive_to_any_field(self):
        base = RunConfig()
        changed = base.replace(
            losses=dataclasses.replace(LossWeights(), epsilon=1e-7)
        )
        assert base.config_hash() != changed.config_hash()

    def test_hash_is_hex_sha256(self):
        h = RunConfig().config_hash()
        assert len(h) == 64
        int(h, 16)

    def test_to_dict_roundtrip(self):
        cfg = RunConfig()
        back = RunConfig.from_dict(cfg.to_dict())
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()


class TestTomlLoading:
    def test_load_overrides(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text(
            "[training]\nseed = 99\nepochs = 2\n"
            "[losses]\nnormalize = true\n"
            "[datasynth]\nblur_kernel_sizes = [1, 3]\n"
        )
        cfg = RunConfig.load(p)
        assert cfg.seed == 99
        assert cfg.training.epochs == 2
        assert cfg.losses.normalize is True
        assert cfg.datasynth.blur_kernel_sizes == (1, 3)
        # untouched sections keep defaults
        assert cfg.core.resolution == 128

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ContractError):
            RunConfig.load(p)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("[training]\nnot_a_field = 1\n")
        with pytest.raises(ContractError):
            RunConfig.load(p)

    def test_malformed_toml(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("[training\nbroken")
        with pytest.raises(ContractError):
            RunConfig.load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            RunConfig.load(tmp_path / "absent.toml")


class TestSectionValidation:
    def test_bad_probability(self):
        with pytest.raises(ContractError):
            dataclasses.replace(SynthesisConfig(), p1=1.5).validate()

    def test_bad_beta_length(self):
        with pytest.raises(ContractError):
            dataclasses.replace(LossWeights(), beta=(0.5, 0.5)).validate()

    def test_even_blur_kernel_rejected(self):
        with pytest.raises(ContractError):
            dataclasses.replace(
                SynthesisConfig(), blur_kernel_sizes=(2, 3)
            ).validate()


class TestAblationFlags:
    def test_all_on_by_default(self):
        f = AblationFlags()
        assert all(dataclasses.asdict(f).values())

    def test_ablations_cover_every_flag(self):
        runs = AblationFlags().ablations()
        names = set(runs)
        assert names == {
            "use_sampling_unit",
            "use_transformation_unit",
            "use_gbms",
            "use_spatial_loss",
            "use_spectral_loss",
        }
        for name, flags in runs.items():
            d = dataclasses.asdict(flags)
            assert d[name] is False
            assert sum(1 for v in d.values() if not v) == 1
