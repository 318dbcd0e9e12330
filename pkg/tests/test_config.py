"""Declarative experiment config: parsing, validation, seed overrides."""

from pathlib import Path

import pytest
import yaml

from stancekit.config import load_config, override_seeds
from stancekit.errors import ConfigError


def base_raw() -> dict:
    return {
        "data": {
            "train_stances": "data/train_stances.csv",
            "train_bodies": "data/train_bodies.csv",
            "test_stances": "data/test_stances.csv",
            "test_bodies": "data/test_bodies.csv",
        },
        "features": {"vocab_capacity": 50},
        "keywords": {
            "manual": {"selector": "manual", "terms": ["fake", "hoax"]},
            "auto": {"selector": "mi", "k": 5},
            "themed": {"selector": "micc", "themes": ["hoax"], "k": 3},
        },
        "pipelines": {
            "plain": {"blocks": ["baseline"]},
            "with_kw": {
                "blocks": ["baseline", {"kind": "indicator", "keywords": "manual"}]
            },
        },
        "models": {
            "base": {
                "pipeline": "plain",
                "hidden_dim": 8,
                "training": {
                    "epochs": 5,
                    "batch_size": 8,
                    "learning_rate": 0.05,
                    "dropout_keep": 1.0,
                    "l2_lambda": 0.0001,
                    "seed": 7,
                },
            },
            "kw": {
                "pipeline": "with_kw",
                "hidden_dim": 8,
                "training": {"seed": 8},
            },
        },
        "ensembles": {
            "duo": {"members": ["base", "kw"], "rule": "summation"},
        },
        "validation": {"fraction": 0.2, "seed": 13},
        "cv": {"folds": 3, "seed": 17},
        "output_dir": "out",
    }


def write_config(tmp_path: Path, raw: dict) -> Path:
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


def load_raw(tmp_path: Path, raw: dict):
    return load_config(write_config(tmp_path, raw))


class TestHappyPath:
    def test_full_config(self, tmp_path):
        cfg = load_raw(tmp_path, base_raw())
        assert set(cfg.models) == {"base", "kw"}
        assert set(cfg.ensembles) == {"duo"}
        assert cfg.targets() == ("base", "kw", "duo")
        assert cfg.features.vocab_capacity == 50
        assert cfg.models["base"].training.seed == 7
        assert cfg.cv.folds == 3
        assert cfg.validation.fraction == 0.2

    def test_paths_relative_to_config_dir(self, tmp_path):
        cfg = load_raw(tmp_path, base_raw())
        assert cfg.data.train_stances == tmp_path / "data/train_stances.csv"
        assert cfg.output_dir == tmp_path / "out"

    def test_training_defaults_fill_in(self, tmp_path):
        cfg = load_raw(tmp_path, base_raw())
        training = cfg.models["kw"].training
        assert training.seed == 8
        assert training.epochs == 90  # library default
        assert training.dropout_keep == 0.6

    def test_optional_sections_absent(self, tmp_path):
        raw = base_raw()
        del raw["validation"], raw["cv"], raw["ensembles"]
        del raw["data"]["test_stances"], raw["data"]["test_bodies"]
        cfg = load_raw(tmp_path, raw)
        assert cfg.validation is None and cfg.cv is None
        assert cfg.ensembles == {}
        assert cfg.data.test_stances is None


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="no such config file"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("models: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- just\n- a list\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        raw = base_raw()
        raw["modles"] = raw.pop("models")
        with pytest.raises(ConfigError, match="modles"):
            load_raw(tmp_path, raw)

    def test_seed_required(self, tmp_path):
        raw = base_raw()
        del raw["models"]["kw"]["training"]["seed"]
        with pytest.raises(ConfigError, match="explicit"):
            load_raw(tmp_path, raw)

    def test_bool_is_not_an_int(self, tmp_path):
        raw = base_raw()
        raw["models"]["kw"]["training"]["seed"] = True
        with pytest.raises(ConfigError, match="integer"):
            load_raw(tmp_path, raw)

    def test_test_files_come_together(self, tmp_path):
        raw = base_raw()
        del raw["data"]["test_bodies"]
        with pytest.raises(ConfigError, match="test"):
            load_raw(tmp_path, raw)

    def test_undefined_pipeline_reference(self, tmp_path):
        raw = base_raw()
        raw["models"]["base"]["pipeline"] = "ghost"
        with pytest.raises(ConfigError, match="ghost"):
            load_raw(tmp_path, raw)

    def test_undefined_keyword_reference(self, tmp_path):
        raw = base_raw()
        raw["pipelines"]["with_kw"]["blocks"][1]["keywords"] = "ghost"
        with pytest.raises(ConfigError, match="ghost"):
            load_raw(tmp_path, raw)

    def test_similarity_needs_embedding_section(self, tmp_path):
        raw = base_raw()
        raw["pipelines"]["plain"]["blocks"] = [
            "baseline", {"kind": "similarity", "mode": "centroid"}
        ]
        with pytest.raises(ConfigError, match="embedding"):
            load_raw(tmp_path, raw)

    def test_ensemble_member_must_be_model(self, tmp_path):
        raw = base_raw()
        raw["ensembles"]["duo"]["members"] = ["base", "ghost"]
        with pytest.raises(ConfigError, match="ghost"):
            load_raw(tmp_path, raw)

    def test_ensemble_name_collision_with_model(self, tmp_path):
        raw = base_raw()
        raw["ensembles"]["base"] = raw["ensembles"].pop("duo")
        with pytest.raises(ConfigError, match="base"):
            load_raw(tmp_path, raw)

    def test_unknown_fusion_rule(self, tmp_path):
        raw = base_raw()
        raw["ensembles"]["duo"]["rule"] = "vote"
        with pytest.raises(ConfigError, match="rule"):
            load_raw(tmp_path, raw)

    def test_concatenation_needs_combiner_seed(self, tmp_path):
        raw = base_raw()
        raw["ensembles"]["duo"]["rule"] = "concatenation"
        with pytest.raises(ConfigError, match="combiner_seed"):
            load_raw(tmp_path, raw)

    def test_concatenation_needs_validation_section(self, tmp_path):
        raw = base_raw()
        raw["ensembles"]["duo"]["rule"] = "concatenation"
        raw["ensembles"]["duo"]["combiner_seed"] = 3
        del raw["validation"]
        with pytest.raises(ConfigError, match="validation"):
            load_raw(tmp_path, raw)

    def test_cv_needs_two_folds(self, tmp_path):
        raw = base_raw()
        raw["cv"]["folds"] = 1
        with pytest.raises(ConfigError, match=">= 2"):
            load_raw(tmp_path, raw)

    def test_output_dir_required(self, tmp_path):
        raw = base_raw()
        del raw["output_dir"]
        with pytest.raises(ConfigError, match="output_dir"):
            load_raw(tmp_path, raw)


class TestSeedOverride:
    def test_overrides_every_seed(self, tmp_path):
        raw = base_raw()
        raw["ensembles"]["duo"]["rule"] = "concatenation"
        raw["ensembles"]["duo"]["combiner_seed"] = 3
        cfg = load_raw(tmp_path, raw)
        bumped = override_seeds(cfg, 999)
        assert all(m.training.seed == 999 for m in bumped.models.values())
        assert bumped.ensembles["duo"].combiner_seed == 999
        assert bumped.validation.seed == 999
        assert bumped.cv.seed == 999

    def test_summation_combiner_seed_stays_none(self, tmp_path):
        cfg = load_raw(tmp_path, base_raw())
        bumped = override_seeds(cfg, 5)
        assert bumped.ensembles["duo"].combiner_seed is None

    def test_original_untouched(self, tmp_path):
        cfg = load_raw(tmp_path, base_raw())
        override_seeds(cfg, 123)
        assert cfg.models["base"].training.seed == 7
