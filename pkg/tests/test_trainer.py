import json
import math
import shutil

import numpy as np
import pytest
import torch

from mvpt.config import TrainConfig
from mvpt.errors import (
    ConfigHashMismatchError,
    InsufficientViewsError,
    NonFiniteLossError,
)
from mvpt.models.model_set import ROLES
from mvpt.trainer import ImagePool, Trainer, lr_schedule, train_step
from mvpt.utilities.logging import get_logger

from .fixtures.datasets import tiny_run_config
from .fixtures.estimators import NaNEstimator


def assert_same_weights(first, second, roles=ROLES, views=("cam0", "cam1")):
    for role in roles:
        for view in views:
            ours = first.models.network(role, view).state_dict()
            theirs = second.models.network(role, view).state_dict()
            for key in ours:
                assert torch.equal(ours[key], theirs[key]), f"{role}_{view}.{key}"


def read_metrics(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestSchedule:
    def test_constant_then_linear(self):
        config = TrainConfig(epochs_constant=100, epochs_decay=200, base_lr=2e-4)
        assert lr_schedule(0, config) == 2e-4
        assert lr_schedule(99, config) == 2e-4
        assert lr_schedule(100, config) == 2e-4
        assert lr_schedule(200, config) == pytest.approx(1e-4)
        assert lr_schedule(300, config) == 0.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_schedule(-1)
        with pytest.raises(ValueError):
            lr_schedule(301)


class TestImagePool:
    def test_fills_then_mixes(self):
        pool = ImagePool(2, np.random.default_rng(0))
        first = torch.zeros(2, 3, 4, 4)
        assert torch.equal(pool.query(first), first)
        assert len(pool) == 2

        returned = pool.query(torch.ones(50, 3, 4, 4))
        assert len(pool) == 2
        from_history = (returned == 0).all(dim=(1, 2, 3)).sum()
        assert 0 < from_history <= 2

    def test_size_zero_passes_through(self):
        pool = ImagePool(0, np.random.default_rng(0))
        images = torch.rand(3, 3, 4, 4, requires_grad=True)
        out = pool.query(images)
        assert torch.equal(out, images)
        assert not out.requires_grad
        assert len(pool) == 0

    def test_same_seed_same_history(self):
        outputs = []
        for _ in range(2):
            pool = ImagePool(3, np.random.default_rng(5))
            for k in range(6):
                last = pool.query(torch.full((2, 1, 2, 2), float(k)))
            outputs.append(last)
        assert torch.equal(*outputs)


class TestTrainStep:
    def test_one_step(self, tiny_scene, estimator, tmp_path):
        trainer = Trainer(
            tiny_run_config(), tiny_scene, tmp_path, estimator, progress=False
        )
        before = [p.clone() for p in trainer.models.generator_parameters()]
        losses = train_step(
            trainer.models,
            trainer._batch("A", [0, 1]),
            trainer._batch("B", [2, 3]),
            trainer.config.loss,
            trainer.optimizers,
            trainer.pools,
            trainer.projections,
            trainer.profiles,
        )
        assert [v.view_id for v in losses.views] == ["cam0", "cam1"]
        assert math.isfinite(losses.total_generator)
        assert math.isfinite(losses.total_discriminator)
        assert losses.loss_3d_a_to_b >= 0 and losses.loss_3d_b_to_a >= 0
        after = list(trainer.models.generator_parameters())
        assert any(not torch.equal(a, b) for a, b in zip(before, after))
        assert all(len(pool) == 2 for pool in trainer.pools.values())

    def test_estimator_untouched(self, tiny_scene, estimator, tmp_path):
        expected = {k: v.clone() for k, v in estimator.state_dict().items()}
        trainer = Trainer(
            tiny_run_config(), tiny_scene, tmp_path, estimator, progress=False
        )
        trainer.train()
        for key, value in trainer.models.estimator.state_dict().items():
            assert torch.equal(value, expected[key])

    def test_frozen_discriminators(self, tiny_scene, tmp_path):
        trainer = Trainer(
            tiny_run_config(lambda4=0.0), tiny_scene, tmp_path, progress=False
        )
        before = [p.clone() for p in trainer.models.discriminator_parameters()]
        losses = train_step(
            trainer.models,
            trainer._batch("A", [0]),
            trainer._batch("B", [0]),
            trainer.config.loss,
            trainer.optimizers,
            trainer.pools,
            trainer.projections,
            trainer.profiles,
            update_discriminators=False,
        )
        after = list(trainer.models.discriminator_parameters())
        assert all(torch.equal(a, b) for a, b in zip(before, after))
        assert losses.loss_3d_a_to_b is None


class TestTrainer:
    def test_pose_term_needs_estimator(self, tiny_scene, tmp_path):
        with pytest.raises(ValueError, match="estimator"):
            Trainer(tiny_run_config(), tiny_scene, tmp_path)

    def test_pose_term_needs_two_views(self, tiny_scene, estimator, tmp_path):
        with pytest.raises(InsufficientViewsError):
            Trainer(tiny_run_config(), tiny_scene, tmp_path, estimator, views=["cam0"])

    def test_baseline_forces_lambda4(self, tiny_scene, tmp_path, caplog):
        logger = get_logger()
        logger.addHandler(caplog.handler)
        try:
            trainer = Trainer(
                tiny_run_config(lambda4=2.0), tiny_scene, tmp_path, baseline=True
            )
        finally:
            logger.removeHandler(caplog.handler)
        assert trainer.config.loss.lambda4 == 0.0
        assert trainer.config.loss.lambda1 == 10.0
        assert "lambda4" in caplog.text

    def test_run_layout(self, tiny_scene, estimator, tmp_path):
        trainer = Trainer(
            tiny_run_config(), tiny_scene, tmp_path, estimator, progress=False
        )
        last = trainer.train()
        assert last == tmp_path / "checkpoints" / "epoch_0002"
        assert (tmp_path / "checkpoints" / "epoch_0001" / "manifest.json").is_file()
        assert (last / "G_A_cam1.pt").is_file()
        assert (last / "estimator.pt").is_file()
        assert (tmp_path / "config.yaml").is_file()

        metrics = read_metrics(trainer.metrics_path)
        assert [m["step"] for m in metrics] == [0, 1, 2, 3]
        assert {m["config_hash"] for m in metrics} == {trainer.config.hash}
        assert [m["lr"] for m in metrics] == [2e-4, 2e-4, 2e-4, 2e-4]
        assert all(m["loss_3d_a_to_b"] is not None for m in metrics)
        assert all(m["loss_3d_b_to_a"] is not None for m in metrics)
        view = metrics[0]["views"][0]
        assert set(view) >= {
            "view_id",
            "gan_g",
            "gan_d",
            "cycle",
            "identity",
            "per_view_total",
        }

    def test_seed_changes_sample_order(self, tiny_scene, tmp_path):
        orders = []
        for seed in (0, 1):
            config = tiny_run_config(lambda4=0.0)
            config = config.copy(
                update={"train": config.train.copy(update={"seed": seed})}
            )
            trainer = Trainer(config, tiny_scene, tmp_path / str(seed), progress=False)
            trainer.train()
            orders.append([m["frames_a"] for m in read_metrics(trainer.metrics_path)])
        assert orders[0] != orders[1]

    def test_baseline_matches_independent_views(self, tiny_scene, tmp_path):
        config = tiny_run_config(lambda4=0.0)
        config = config.copy(
            update={"train": config.train.copy(update={"steps_per_epoch": 5})}
        )
        joint = Trainer(
            config, tiny_scene, tmp_path / "joint", baseline=True, progress=False
        )
        alone = Trainer(
            config,
            tiny_scene,
            tmp_path / "alone",
            baseline=True,
            views=["cam1"],
            progress=False,
        )
        joint.train()
        alone.train()

        joint_steps = read_metrics(joint.metrics_path)
        alone_steps = read_metrics(alone.metrics_path)
        assert len(joint_steps) == len(alone_steps) == 10
        for ours, theirs in zip(joint_steps, alone_steps):
            assert ours["frames_a"] == theirs["frames_a"]
            assert ours["frames_b"] == theirs["frames_b"]
            shared = ours["views"][1]
            assert shared["view_id"] == "cam1"
            for key, value in theirs["views"][0].items():
                if key != "view_id":
                    assert shared[key] == pytest.approx(value, abs=1e-6), key
        assert_same_weights(joint, alone, views=["cam1"])

    def test_unweighted_pose_term_leaves_generators_alone(
        self, tiny_scene, estimator, tmp_path
    ):
        config = tiny_run_config(lambda4=0.0)
        with_pose = Trainer(config, tiny_scene, tmp_path / "a", estimator)
        without = Trainer(config, tiny_scene, tmp_path / "b")
        reports = []
        for trainer in (with_pose, without):
            reports.append(
                train_step(
                    trainer.models,
                    trainer._batch("A", [0, 1]),
                    trainer._batch("B", [2, 3]),
                    trainer.config.loss,
                    trainer.optimizers,
                    trainer.pools,
                    trainer.projections,
                    trainer.profiles,
                )
            )
        assert reports[0].loss_3d_a_to_b is not None
        assert reports[1].loss_3d_a_to_b is None
        assert reports[0].total_generator == reports[1].total_generator
        assert_same_weights(with_pose, without, roles=("G_A", "G_B"))

    def test_nonfinite_pose_term_aborts(self, tiny_scene, tmp_path):
        trainer = Trainer(
            tiny_run_config(lambda4=0.0), tiny_scene, tmp_path, NaNEstimator()
        )
        with pytest.raises(NonFiniteLossError, match="3d_a_to_b") as exc:
            train_step(
                trainer.models,
                trainer._batch("A", [0]),
                trainer._batch("B", [0]),
                trainer.config.loss,
                trainer.optimizers,
                trainer.pools,
                trainer.projections,
                trainer.profiles,
                dump_dir=tmp_path / "nonfinite",
            )
        assert math.isnan(exc.value.terms["3d_b_to_a"])
        assert (tmp_path / "nonfinite" / "nonfinite.json").is_file()

    def test_resume_matches_uninterrupted(self, tiny_scene, estimator, tmp_path):
        config = tiny_run_config()
        first = Trainer(config, tiny_scene, tmp_path / "a", estimator, progress=False)
        first.train()

        shutil.copytree(tmp_path / "a", tmp_path / "b")
        second = Trainer(config, tiny_scene, tmp_path / "b", estimator, progress=False)
        second.train(resume=tmp_path / "b" / "checkpoints" / "epoch_0001")

        assert second.run_id == first.run_id
        assert second.epoch == first.epoch == 2
        assert read_metrics(second.metrics_path) == read_metrics(first.metrics_path)
        assert_same_weights(first, second)

    def test_resume_with_other_config(self, tiny_scene, estimator, tmp_path):
        Trainer(
            tiny_run_config(), tiny_scene, tmp_path, estimator, progress=False
        ).train()
        other = Trainer(
            tiny_run_config(lambda1=5.0), tiny_scene, tmp_path, estimator
        )
        with pytest.raises(ConfigHashMismatchError):
            other.load_checkpoint(tmp_path / "checkpoints" / "epoch_0001")
