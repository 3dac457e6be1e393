"""Desk-scale experiments on synthetic data. Run with MVPT_RUN_SLOW=1."""
import json

import numpy as np
import pytest
import torch

from mvpt.checkpoints import load_checkpoint
from mvpt.config import RunConfig
from mvpt.datasets import MultiViewDataset
from mvpt.estimators import estimate_pose, train_detector
from mvpt.evaluation import evaluate_model_set, evaluate_run, mpjpe
from mvpt.geometry import limb_profile
from mvpt.loaders.synthetic import synth_scene
from mvpt.losses import pose_3d_loss
from mvpt.models.generators import generate
from mvpt.models.model_set import TranslationModelSet
from mvpt.trainer import Trainer

from .fixtures.datasets import tiny_run_config, tiny_scene_config

pytestmark = pytest.mark.slow

RESOLUTION = 64


def desk_config(**loss) -> RunConfig:
    return RunConfig.parse_obj(
        {
            "data": {"resolution": RESOLUTION},
            "model": {"ngf": 16, "ndf": 16, "n_blocks": 3},
            "loss": loss,
            "train": {
                "epochs_constant": 10,
                "epochs_decay": 10,
                "steps_per_epoch": 100,
                "checkpoint_interval": 20,
            },
        }
    )


@pytest.fixture(scope="module")
def desk_scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    return synth_scene(tiny_scene_config(n_frames=500), seed=0, out=out)


@pytest.fixture(scope="module")
def desk_dataset(desk_scene):
    return MultiViewDataset(desk_scene, resolution=RESOLUTION)


@pytest.fixture(scope="module")
def detector(desk_dataset):
    return train_detector(desk_dataset, epochs=10, seed=0, progress=False)


@pytest.fixture(scope="module")
def desk_runs(desk_scene, detector, tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_runs")
    last = {}
    for name, baseline in (("joint", False), ("baseline", True)):
        trainer = Trainer(
            desk_config(),
            desk_scene,
            root / name,
            detector,
            baseline=baseline,
            progress=False,
        )
        last[name] = trainer.train()
    return last


@torch.no_grad()
def held_out_pose_loss(models, dataset, profile_b) -> float:
    P = torch.stack([c.as_tensor() for c in dataset.cameras])
    losses = []
    for t in dataset.split("A", "test"):
        sample = dataset.sample_batch("A", t)
        fakes = torch.stack(
            [
                generate(models.network("G_B", v), sample.images[i])
                for i, v in enumerate(models.views)
            ]
        )
        losses.append(
            pose_3d_loss(
                fakes,
                sample.gt_pose,
                profile_b,
                dataset.manifest.skeleton,
                models.estimator,
                P,
                sample.crop_tensor(),
                400.0,
            ).item()
        )
    return float(np.mean(losses))


@pytest.mark.parametrize("lambda4", [0.0, 1.0])
def test_smoke_training_reduces_loss(tiny_scene, estimator, tmp_path, lambda4):
    config = tiny_run_config(lambda4=lambda4)
    config = config.copy(
        update={
            "train": config.train.copy(
                update={"epochs_constant": 1, "epochs_decay": 0, "steps_per_epoch": 200}
            )
        }
    )
    trainer = Trainer(
        config,
        tiny_scene,
        tmp_path,
        estimator if lambda4 else None,
        progress=False,
    )
    trainer.train()
    lines = trainer.metrics_path.read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert len(records) == 200
    per_view = [sum(v["per_view_total"] for v in r["views"]) for r in records]
    assert np.mean(per_view[180:]) < np.mean(per_view[:20])
    if lambda4:
        pose_terms = [r["loss_3d_a_to_b"] + r["loss_3d_b_to_a"] for r in records]
        assert np.isfinite(pose_terms).all()
    else:
        totals = [r["total_generator"] for r in records]
        np.testing.assert_allclose(totals, per_view, rtol=1e-5)


def test_detector_accuracy(detector, desk_dataset):
    errors = []
    for person in ("A", "B"):
        for t in desk_dataset.split(person, "test"):
            sample = desk_dataset.sample_batch(person, t)
            with torch.no_grad():
                points = detector.detect(sample.images).points
            errors.append((points - sample.keypoints).norm(dim=-1).mean().item())
    assert np.mean(errors) < 2.0


def test_trained_detector_mpjpe(detector, desk_dataset):
    errors = []
    for t in desk_dataset.split("A", "test"):
        sample = desk_dataset.sample_batch("A", t)
        with torch.no_grad():
            pose = estimate_pose(
                detector, sample.images, desk_dataset.cameras, sample.crop_transforms
            )
        errors.append(mpjpe(pose, sample.gt_pose))
    assert np.mean(errors) < 3.0


def test_identity_generator_floor(detector, desk_dataset):
    models = TranslationModelSet(
        desk_dataset.views, RESOLUTION, desk_config().model, detector
    )
    for view in models.views:
        models.networks["G_B"][view] = torch.nn.Identity()
    manifest = desk_dataset.manifest
    profile_a = limb_profile(
        [manifest.records("A")[t].pose for t in desk_dataset.split("A")],
        manifest.skeleton,
    )
    report = evaluate_model_set(
        models, desk_dataset, directions=["A_to_B"], profiles={"B": profile_a}
    )
    assert report.mpjpe_cm < 3.0


def test_joint_training_beats_baseline(desk_runs, desk_scene):
    joint = evaluate_run(desk_runs["joint"], desk_scene)
    baseline = evaluate_run(desk_runs["baseline"], desk_scene)
    assert joint.mpjpe_cm < baseline.mpjpe_cm

    residual = {
        name: {
            (f.direction, f.position): f.residual_px
            for f in report.per_frame
            if f.residual_px is not None
        }
        for name, report in (("joint", joint), ("baseline", baseline))
    }
    common = residual["joint"].keys() & residual["baseline"].keys()
    better = sum(residual["joint"][k] < residual["baseline"][k] for k in common)
    assert better >= 0.7 * len(common)


def test_joint_training_lowers_held_out_pose_loss(desk_runs, desk_dataset, detector):
    trained, meta = load_checkpoint(desk_runs["joint"])
    config = meta.run_config
    initial = TranslationModelSet(
        meta.views, meta.resolution, config.model, detector, seed=config.train.seed
    )
    initial.eval()
    trained.eval()
    profile_b = meta.limb_profiles()["B"]
    before = held_out_pose_loss(initial, desk_dataset, profile_b)
    after = held_out_pose_loss(trained, desk_dataset, profile_b)
    assert after <= 0.5 * before
