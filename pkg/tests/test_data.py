import asyncio

import cv2
import numpy as np
import pydantic
import pytest
import torch

from mvpt.cameras import CropTransform
from mvpt.datasets import (
    MultiViewBatch,
    MultiViewDataset,
    crop_window,
    read_manifest,
    sample_batch,
    to_uint8_image,
)
from mvpt.errors import FrameRangeError, MissingCameraError
from mvpt.figures import default_styles, render_figure
from mvpt.geometry import limb_profile, project
from mvpt.loaders import SyntheticSceneLoader, synth_scene
from mvpt.poses import COCO17_SKELETON, Pose2D

from .fixtures.datasets import TINY_RESOLUTION, tiny_scene_config
from .fixtures.geometry import ring_of_cameras, walking_pose


class TestRenderer:
    def test_keypoints_are_exact_projections(self, pose, cameras):
        appearance = default_styles()["A"].appearance
        for camera in cameras:
            image, keypoints = render_figure(pose, camera, appearance, background=0)
            assert image.shape == (256, 256, 3) and image.dtype == np.uint8
            np.testing.assert_allclose(
                keypoints.points, project(pose, camera).points, atol=1e-6
            )
            assert (keypoints.confidence == 1).all()

    def test_keypoints_agree_with_projection_across_poses(self):
        rigs = [
            *ring_of_cameras(5, image_size=(160, 120), focal=180.0),
            *ring_of_cameras(3, distance=300.0, focal=420.0),
        ]
        for person, style in default_styles().items():
            for t in range(0, 60, 6):
                pose = walking_pose(seed=t, t=t, shape=style.shape)
                for camera in rigs:
                    _, keypoints = render_figure(pose, camera, style.appearance)
                    np.testing.assert_allclose(
                        keypoints.points,
                        project(pose, camera).points,
                        atol=1e-6,
                        err_msg=f"{person} t={t} {camera.view_id}",
                    )

    def test_figure_is_drawn(self, pose, cameras):
        appearance = default_styles()["A"].appearance
        image, keypoints = render_figure(pose, cameras[0], appearance, background=0)
        names = COCO17_SKELETON.joint_names
        torso = [names.index(n) for n in ("left_shoulder", "right_hip")]
        x, y = np.round(keypoints.points[torso].mean(axis=0)).astype(int)
        assert image[y - 2 : y + 3, x - 2 : x + 3].any()
        assert not image[0, 0].any()

    def test_persons_differ_in_build(self):
        styles = default_styles()
        a = limb_profile([walking_pose(shape=styles["A"].shape)], COCO17_SKELETON)
        b = limb_profile([walking_pose(shape=styles["B"].shape)], COCO17_SKELETON)
        assert b.bone_lengths.sum() > a.bone_lengths.sum()


class TestSyntheticScene:
    def test_deterministic(self, tmp_path):
        config = tiny_scene_config(n_frames=3)
        first = synth_scene(config, seed=11, out=tmp_path / "a")
        second = synth_scene(config, seed=11, out=tmp_path / "b")
        other = synth_scene(config, seed=12, out=tmp_path / "c")
        assert first.content_hash() == second.content_hash()
        assert first.content_hash() != other.content_hash()

    def test_layout(self, tiny_scene):
        root = tiny_scene.root
        assert (root / "manifest.json").is_file()
        assert (root / "poses" / "A.jsonl").is_file()
        assert tiny_scene.view_ids == ["cam0", "cam1"]
        assert len(tiny_scene.records("A")) == 10
        record = tiny_scene.records("B")[4]
        image = cv2.imread(str(tiny_scene.resolve(record.images["cam1"])))
        assert image.shape == (128, 128, 3)

    def test_records_match_cameras(self, tiny_scene):
        for record in tiny_scene.records("A"):
            for view in tiny_scene.view_ids:
                expected = project(record.pose, tiny_scene.camera(view))
                np.testing.assert_allclose(
                    record.keypoints[view].points, expected.points, atol=1e-6
                )

    def test_round_trip(self, tiny_scene):
        assert read_manifest(tiny_scene.root) == tiny_scene

    def test_single_view_rejected(self):
        with pytest.raises(pydantic.ValidationError, match="at least 2"):
            tiny_scene_config(n_views=1)

    def test_persons_must_be_a_and_b(self):
        with pytest.raises(pydantic.ValidationError):
            tiny_scene_config(persons={"A": default_styles()["A"]})

    def test_loader(self, tmp_path):
        loader = SyntheticSceneLoader(
            config=tiny_scene_config(n_frames=2), seed=4, output_dir=tmp_path
        )
        manifest = asyncio.run(loader.load())
        assert manifest.source == "synthetic"
        assert len(manifest.records("A")) == 2

    def test_missing_camera(self, tiny_scene):
        with pytest.raises(MissingCameraError, match="cam7"):
            tiny_scene.camera("cam7")


class TestSplit:
    def test_holdout_is_the_tail(self, tiny_scene):
        assert tiny_scene.split("A", "test", 0.1) == [9]
        assert tiny_scene.split("A", "train", 0.1) == list(range(9))
        assert tiny_scene.split("A", "test", 0.25) == [7, 8, 9]

    def test_no_holdout(self, tiny_scene):
        assert tiny_scene.split("A", "test", 0.0) == []

    def test_train_never_empty(self, tiny_scene):
        assert tiny_scene.split("A", "train", 0.99) == [0]


class TestSampler:
    def test_crops(self, tiny_dataset):
        sample = tiny_dataset.sample_batch("A", 0)
        R = TINY_RESOLUTION
        assert sample.images.shape == (2, 3, R, R)
        assert sample.images.min() >= -1 and sample.images.max() <= 1
        assert sample.keypoints.shape == (2, 17, 2)
        assert (sample.keypoints >= -0.5).all() and (sample.keypoints <= R - 0.5).all()
        assert sample.gt_pose == tiny_dataset.manifest.records("A")[0].pose

    def test_keypoints_map_back_to_full_frame(self, tiny_dataset):
        sample = tiny_dataset.sample_batch("B", 3)
        record = tiny_dataset.manifest.records("B")[3]
        for view, crop, points in zip(
            sample.view_ids, sample.crop_transforms, sample.keypoints
        ):
            np.testing.assert_allclose(
                crop.apply(points.double().numpy()),
                record.keypoints[view].points,
                atol=1e-3,
            )

    def test_augmentation_shifts_horizontally(self, tiny_dataset):
        plain = tiny_dataset.sample_batch("A", 1)
        rng = np.random.default_rng(0)
        shifted = tiny_dataset.sample_batch("A", 1, augment=True, rng=rng)
        for a, b in zip(plain.crop_transforms, shifted.crop_transforms):
            np.testing.assert_allclose(a.matrix[:, :2], b.matrix[:, :2])
            assert a.matrix[1, 2] == b.matrix[1, 2]
        points = shifted.keypoints
        assert ((points >= -0.5) & (points <= TINY_RESOLUTION - 0.5)).all()

    def test_per_view_streams(self, tiny_dataset):
        def rngs():
            return {v: np.random.default_rng(i) for i, v in enumerate(["cam0", "cam1"])}

        first = tiny_dataset.sample_batch("A", 2, augment=True, rng=rngs())
        second = tiny_dataset.sample_batch("A", 2, augment=True, rng=rngs())
        assert torch.equal(first.images, second.images)

        only = MultiViewDataset(
            tiny_dataset.manifest, resolution=TINY_RESOLUTION, views=["cam1"]
        )
        alone = only.sample_batch("A", 2, augment=True, rng=rngs())
        assert torch.equal(alone.images[0], first.images[1])

    def test_augmentation_needs_rng(self, tiny_dataset):
        with pytest.raises(ValueError):
            tiny_dataset.sample_batch("A", 0, augment=True)

    def test_out_of_range(self, tiny_dataset):
        with pytest.raises(FrameRangeError, match="0..9"):
            tiny_dataset.sample_batch("A", 10)

    def test_unknown_view(self, tiny_scene):
        with pytest.raises(MissingCameraError):
            MultiViewDataset(tiny_scene, views=["cam0", "cam9"])

    def test_module_level_sampler(self, tiny_scene):
        sample = sample_batch(tiny_scene, "B", 0, resolution=TINY_RESOLUTION)
        assert sample.person == "B" and sample.frame_index == 0

    def test_collate(self, tiny_dataset):
        samples = [tiny_dataset.sample_batch("A", t) for t in (0, 5, 6)]
        batch = MultiViewBatch.collate(samples)
        assert batch.images.shape == (3, 2, 3, TINY_RESOLUTION, TINY_RESOLUTION)
        assert batch.crop_transforms.shape == (3, 2, 2, 3)
        assert batch.crop_transforms.dtype == torch.float64
        assert batch.positions == [0, 5, 6]

    def test_to_uint8(self):
        image = torch.tensor([-1.0, 0.0, 1.0]).view(3, 1, 1)
        assert to_uint8_image(image)[0, 0].tolist() == [255, 128, 0]


def test_crop_window_keeps_box_inside():
    keypoints = Pose2D(
        points=np.array([[10.0, 20.0], [30.0, 80.0]] + [[20.0, 50.0]] * 15),
        confidence=np.ones(17),
    )
    x0, y0, side, margin = crop_window(keypoints, 1.2)
    assert side == pytest.approx(72.0)
    assert x0 + margin == pytest.approx(10.0)
    assert x0 + side - margin == pytest.approx(30.0)
    assert y0 < 20.0 and y0 + side > 80.0


def test_rig_faces_the_origin():
    for camera in ring_of_cameras(3):
        K, R, center = camera.decompose()
        assert R[2] @ (np.array([0.0, 0.0, 95.0]) - center) > 0


def test_augmentation_never_crops_the_figure(tiny_scene):
    rng = np.random.default_rng(0)
    records = tiny_scene.records("A") + tiny_scene.records("B")
    R = TINY_RESOLUTION
    for _ in range(10_000):
        record = records[rng.integers(len(records))]
        keypoints = record.keypoints[tiny_scene.view_ids[rng.integers(2)]]
        x0, y0, side, margin = crop_window(keypoints, 1.2)
        crop = CropTransform.from_window(x0, y0, side, R)
        moved = crop.shifted(rng.uniform(-margin, margin))
        assert np.array_equal(moved.matrix[1], crop.matrix[1])
        points = moved.inverse().apply(keypoints.points)
        assert (points >= -0.5 - 1e-9).all() and (points <= R - 0.5 + 1e-9).all()
