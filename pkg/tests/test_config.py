from datetime import datetime, timezone

import pydantic
import pytest
import yaml

from mvpt.config import RunConfig
from mvpt.utilities.ids import RunID

from .fixtures.datasets import tiny_run_config


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.loss.lambda1 == 10.0
        assert config.loss.lambda3 == 5.0
        assert config.loss.epsilon == 400.0
        assert config.train.total_epochs == 300
        assert config.data.synth.n_views == 4

    def test_round_trip(self, tmp_path):
        config = tiny_run_config(lambda4=0.5)
        loaded = RunConfig.load(config.dump(tmp_path / "run.yaml"))
        assert loaded == config
        assert loaded.hash == config.hash

    def test_partial_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("train:\n  seed: 7\n")
        config = RunConfig.load(path)
        assert config.train.seed == 7
        assert config.model == RunConfig().model

    def test_empty_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("")
        assert RunConfig.load(path) == RunConfig()

    def test_unknown_keys(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump({"model": {"ngf": 8, "dropout": 0.5}}))
        with pytest.raises(pydantic.ValidationError, match="dropout"):
            RunConfig.load(path)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ValueError, match="mapping"):
            RunConfig.load(path)

    def test_hash(self):
        assert tiny_run_config().hash == tiny_run_config().hash
        assert tiny_run_config().hash != tiny_run_config(lambda4=2.0).hash
        assert len(tiny_run_config().hash) == 32

    def test_with_baseline(self):
        config = tiny_run_config(lambda4=3.0, lambda1=7.0)
        baseline = config.with_baseline()
        assert baseline.loss.lambda4 == 0.0
        assert baseline.loss.lambda1 == 7.0
        assert config.loss.lambda4 == 3.0
        assert baseline.hash != config.hash


class TestRunID:
    def test_new(self):
        now = datetime(2024, 5, 17, 8, 30, 5, tzinfo=timezone.utc)
        run_id = RunID.new(now)
        assert run_id.startswith("run_20240517T083005Z_")
        assert RunID.started_at(run_id) == now

    def test_unique(self):
        assert RunID.new() != RunID.new()

    def test_validated(self):
        class Holder(pydantic.BaseModel):
            run_id: RunID

        assert Holder(run_id=RunID.new()).run_id.startswith("run_")
        with pytest.raises(pydantic.ValidationError):
            Holder(run_id="run_1234")
        with pytest.raises(ValueError):
            RunID.started_at("nope")
