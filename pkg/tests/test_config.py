import json

import pytest

from pipgan.config import (
    CASCADE_ENV_VAR,
    build_train_config,
    flatten,
    load_config,
    write_resolved_config,
)
from pipgan.losses import LossWeights
from pipgan.synth import synth_schemas


@pytest.fixture
def pose_schema():
    return synth_schemas(5, 7)[0]


class TestLoadConfig:
    def test_nested_and_dotted_keys_flatten(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('[train]\nmax_steps = 7\n[loss]\nxi5 = 25.0\n')
        flat = load_config(path)
        assert flat == {"train.max_steps": 7, "loss.xi5": 25.0}
        assert flatten({"a": {"b": {"c": 1}}}) == {"a.b.c": 1}

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.toml")


class TestBuildTrainConfig:
    def test_file_keys_apply(self, pose_schema):
        flat = {"train.learning_rate": 1e-3, "train.batch_size": 4,
                "loss.xi4": 0.0, "loss.lambda_mode": "inverse_elements"}
        cfg = build_train_config("pose", pose_schema, flat)
        assert cfg.learning_rate == 1e-3
        assert cfg.batch_size == 4
        assert cfg.weights == LossWeights(xi4=0.0)
        assert cfg.lambda_mode == "inverse_elements"

    def test_overrides_beat_file(self, pose_schema):
        cfg = build_train_config("pose", pose_schema,
                                 {"train.max_steps": 10}, {"max_steps": 3})
        assert cfg.max_steps == 3

    def test_none_overrides_ignored(self, pose_schema):
        cfg = build_train_config("pose", pose_schema, {}, {"max_steps": None})
        assert cfg.max_steps == 2000

    def test_unknown_keys_rejected(self, pose_schema):
        with pytest.raises(ValueError, match="unknown config keys"):
            build_train_config("pose", pose_schema, {"train.warp": 1})

    def test_env_var_overrides_weights_path(self, pose_schema, tmp_path, monkeypatch):
        import torch
        from pipgan.networks import CascadeFeatures
        archive = tmp_path / "cascade.pt"
        torch.save(CascadeFeatures(seed=1).state_dict(), archive)
        monkeypatch.setenv(CASCADE_ENV_VAR, str(archive))
        cfg = build_train_config("pose", pose_schema,
                                 {"cascade.weights_path": "elsewhere.pt"})
        assert cfg.cascade_weights_path == str(archive)

    def test_defaults_when_empty(self, pose_schema):
        cfg = build_train_config("pose", pose_schema)
        assert cfg.learning_rate == 2e-4
        assert cfg.weights == LossWeights()


class TestResolvedConfig:
    def test_written_with_hash(self, tmp_path):
        path = write_resolved_config(tmp_path, {"command": "x", "seed": 3})
        body = json.loads(path.read_text())
        assert body["seed"] == 3 and len(body["config_hash"]) == 64
