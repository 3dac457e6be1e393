"""Pose preservation and cross-view consistency of translated view tuples.

MPJPE compares the pose estimated from the translated views with the source
ground truth retargeted to the target person; the view-consistency residual
measures how well independently detected 2D poses agree with one 3D pose.
"""
import json
from pathlib import Path
from typing import Literal, Optional, Sequence

import cv2
import numpy as np
import torch
from pydantic import BaseModel, Field
from tqdm.auto import tqdm

from mvpt.cameras import CameraView, CropTransform
from mvpt.checkpoints import CheckpointManifest, load_checkpoint
from mvpt.datasets import DatasetManifest, MultiViewDataset, to_uint8_image
from mvpt.errors import (
    EmptyPoseError,
    FrameRangeError,
    IncompatibleCheckpointError,
    InsufficientViewsError,
    UndefinedDistanceError,
)
from mvpt.estimators.base import PoseEstimator, detect_views, estimate_pose
from mvpt.geometry import (
    dlt_triangulate,
    limb_profile,
    reprojection_residual,
    scale_pose,
)
from mvpt.models.generators import generate
from mvpt.models.model_set import TranslationModelSet
from mvpt.poses import LimbProfile, Pose3D
from mvpt.utilities.ids import RunID
from mvpt.utilities.logging import get_logger
from mvpt.utilities.strings import canonical_json

logger = get_logger(__name__)

Direction = Literal["A_to_B", "B_to_A"]
DIRECTIONS: tuple[Direction, ...] = ("A_to_B", "B_to_A")

# direction -> (source person, target person, generator role)
_ROUTES = {"A_to_B": ("A", "B", "G_B"), "B_to_A": ("B", "A", "G_A")}


class FrameEval(BaseModel):
    direction: Direction
    position: int
    frame_index: int
    mpjpe_cm: Optional[float] = None
    residual_px: Optional[float] = None
    failure: Optional[str] = None


class EvalReport(BaseModel):
    mpjpe_cm: float = Field(..., ge=0, description="mean of per_joint_error")
    per_joint_error: list[Optional[float]] = Field(
        ..., description="mean error per joint; None for joints never evaluated"
    )
    cross_view_residual_px: float = Field(..., ge=0)
    mpjpe_by_direction: dict[str, float] = Field(default_factory=dict)
    per_frame: list[FrameEval] = Field(default_factory=list)
    n_samples: int
    n_failed: int = 0
    split: str = "test"
    config_hash: Optional[str] = None
    run_id: Optional[RunID] = None
    baseline: bool = False

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: Path) -> "EvalReport":
        return cls.parse_file(path)


def joint_errors(pred: Pose3D, ref: Pose3D) -> np.ndarray:
    """Per-joint Euclidean distance, NaN where either pose is invalid."""
    if pred.joint_names != ref.joint_names:
        raise ValueError("poses must share one joint ordering")
    valid = pred.valid & ref.valid
    if not valid.any():
        raise UndefinedDistanceError("poses have no jointly valid joints")
    errors = np.linalg.norm(pred.joints - ref.joints, axis=-1)
    return np.where(valid, errors, np.nan)


def mpjpe(pred: Pose3D, ref: Pose3D) -> float:
    """Mean per-joint position error over jointly valid joints."""
    return float(np.nanmean(joint_errors(pred, ref)))


@torch.no_grad()
def view_consistency(
    fake_views: torch.Tensor,
    estimator: PoseEstimator,
    cameras: Sequence[CameraView],
    crop_transforms: Sequence[CropTransform],
) -> float:
    """Pixel residual between per-view detections and the reprojection of the
    pose triangulated from them.

    `fake_views` is (V, 3, R, R), one crop per camera.
    """
    if len(cameras) < 2 or fake_views.shape[0] < 2:
        raise InsufficientViewsError(
            f"view consistency needs at least 2 views, got {fake_views.shape[0]}"
        )
    detections = detect_views(estimator, fake_views, crop_transforms)
    P = torch.stack([c.as_tensor() for c in cameras])
    points = torch.as_tensor(np.stack([d.points for d in detections]))
    confidence = torch.as_tensor(np.stack([d.confidence for d in detections]))
    J = points.shape[1]
    joints, valid = dlt_triangulate(
        P.expand(J, *P.shape), points.transpose(0, 1), confidence.transpose(0, 1)
    )
    if not valid.any():
        raise EmptyPoseError("no joint could be triangulated from the detections")
    return float(reprojection_residual(P, points, confidence, joints, valid))


def _translate(
    models: TranslationModelSet, role: str, images: torch.Tensor
) -> torch.Tensor:
    return torch.stack(
        [
            generate(models.network(role, view), images[i])
            for i, view in enumerate(models.views)
        ]
    )


@torch.no_grad()
def evaluate_model_set(
    models: TranslationModelSet,
    dataset: MultiViewDataset,
    split: Literal["train", "test"] = "test",
    directions: Sequence[Direction] = DIRECTIONS,
    profiles: Optional[dict[str, LimbProfile]] = None,
    max_samples: Optional[int] = None,
    device: str = "cpu",
    progress: bool = False,
) -> EvalReport:
    """Translate every source tuple of `split` and score the result.

    `profiles` maps the target person to the limb profile source poses are
    retargeted to; by default each person's train split profile.
    """
    if models.estimator is None:
        raise IncompatibleCheckpointError("evaluation needs a pose estimator")
    if dataset.views != models.views:
        raise IncompatibleCheckpointError(
            f"dataset views {dataset.views} != model views {models.views}"
        )
    manifest = dataset.manifest
    skeleton = manifest.skeleton
    if profiles is None:
        profiles = {
            p: limb_profile(
                [manifest.records(p)[t].pose for t in dataset.split(p, "train")],
                skeleton,
            )
            for p in ("A", "B")
        }
    models.eval()
    cameras = dataset.cameras

    frames: list[FrameEval] = []
    errors: list[np.ndarray] = []
    by_direction: dict[str, list[float]] = {}
    for direction in directions:
        source, target, role = _ROUTES[direction]
        positions = dataset.split(source, split)[:max_samples]
        for t in tqdm(positions, desc=direction, disable=not progress):
            sample = dataset.sample_batch(source, t)
            frame = FrameEval(
                direction=direction, position=t, frame_index=sample.frame_index
            )
            frames.append(frame)
            fakes = _translate(models, role, sample.images.to(device))
            reference = scale_pose(sample.gt_pose, skeleton, profiles[target])
            try:
                estimate = estimate_pose(
                    models.estimator, fakes, cameras, sample.crop_transforms
                )
                per_joint = joint_errors(estimate, reference)
                frame.residual_px = view_consistency(
                    fakes, models.estimator, cameras, sample.crop_transforms
                )
            except (EmptyPoseError, UndefinedDistanceError) as exc:
                frame.failure = str(exc)
                logger.debug(f"{direction} record {t}: {exc}")
                continue
            frame.mpjpe_cm = float(np.nanmean(per_joint))
            errors.append(per_joint)
            by_direction.setdefault(direction, []).append(frame.mpjpe_cm)

    n_failed = sum(f.failure is not None for f in frames)
    if not errors:
        raise EmptyPoseError(f"all {n_failed} evaluated frames failed")
    if n_failed:
        logger.warning(f"{n_failed} of {len(frames)} frames could not be scored")

    stacked = np.stack(errors)
    seen = ~np.isnan(stacked).all(axis=0)
    means = np.full(stacked.shape[1], np.nan)
    means[seen] = np.nanmean(stacked[:, seen], axis=0)
    residuals = [f.residual_px for f in frames if f.residual_px is not None]
    return EvalReport(
        mpjpe_cm=float(np.mean(means[seen])),
        per_joint_error=[None if np.isnan(e) else float(e) for e in means],
        cross_view_residual_px=float(np.mean(residuals)),
        mpjpe_by_direction={d: float(np.mean(v)) for d, v in by_direction.items()},
        per_frame=frames,
        n_samples=len(errors),
        n_failed=n_failed,
        split=split,
    )


def _dataset_for(
    manifest: DatasetManifest, checkpoint: CheckpointManifest
) -> MultiViewDataset:
    missing = sorted(set(checkpoint.views) - set(manifest.view_ids))
    if missing:
        raise IncompatibleCheckpointError(
            f"checkpoint views {missing} are not cameras of the dataset"
            f" ({', '.join(manifest.view_ids)})"
        )
    data = checkpoint.run_config.data
    return MultiViewDataset(
        manifest,
        resolution=checkpoint.resolution,
        crop_scale=data.crop_scale,
        holdout_fraction=data.holdout_fraction,
        views=checkpoint.views,
    )


def evaluate_run(
    checkpoint: Path,
    manifest: DatasetManifest,
    split: Literal["train", "test"] = "test",
    directions: Sequence[Direction] = DIRECTIONS,
    max_samples: Optional[int] = None,
    estimator: Optional[PoseEstimator] = None,
    device: str = "cpu",
    progress: bool = False,
) -> EvalReport:
    """Score a checkpoint on `split` of `manifest`."""
    models, meta = load_checkpoint(checkpoint, estimator, map_location=device)
    if models.estimator is not None and models.estimator.resolution != meta.resolution:
        raise IncompatibleCheckpointError(
            f"estimator works on {models.estimator.resolution}px crops, checkpoint"
            f" on {meta.resolution}px"
        )
    dataset = _dataset_for(manifest, meta)
    report = evaluate_model_set(
        models,
        dataset,
        split=split,
        directions=directions,
        profiles=meta.limb_profiles() or None,
        max_samples=max_samples,
        device=device,
        progress=progress,
    )
    report = report.copy(
        update={
            "config_hash": meta.config_hash,
            "run_id": meta.run_id,
            "baseline": meta.baseline,
        }
    )
    logger.info(
        f"{meta.run_id}: MPJPE {report.mpjpe_cm:.2f} cm, residual"
        f" {report.cross_view_residual_px:.2f} px over {report.n_samples} samples"
    )
    return report


@torch.no_grad()
def render_comparison(
    joint_checkpoint: Path,
    baseline_checkpoint: Path,
    manifest: DatasetManifest,
    frames: Sequence[int],
    out_dir: Path,
    person: str = "A",
    split: Literal["train", "test"] = "test",
) -> list[Path]:
    """One PNG per record position in `frames`: rows are the real crops, the
    joint model's translation and the baseline's, columns are views.

    A JSON sidecar next to each grid names both runs and their config hashes.
    """
    joint, joint_meta = load_checkpoint(joint_checkpoint)
    baseline, baseline_meta = load_checkpoint(baseline_checkpoint)
    if joint_meta.views != baseline_meta.views:
        raise IncompatibleCheckpointError(
            f"joint views {joint_meta.views} != baseline views {baseline_meta.views}"
        )
    if joint_meta.resolution != baseline_meta.resolution:
        raise IncompatibleCheckpointError(
            f"joint resolution {joint_meta.resolution} != baseline resolution"
            f" {baseline_meta.resolution}"
        )
    dataset = _dataset_for(manifest, joint_meta)
    valid = dataset.split(person, split)
    for t in frames:
        if t not in valid:
            raise FrameRangeError(
                f"record {t} is not in the {split} split of person {person}"
                f" (valid: {valid[0]}..{valid[-1]})"
                if valid
                else f"the {split} split of person {person} is empty"
            )

    role = "G_B" if person == "A" else "G_A"
    joint.eval()
    baseline.eval()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for t in frames:
        sample = dataset.sample_batch(person, t)
        rows = [sample.images, _translate(joint, role, sample.images)]
        rows.append(_translate(baseline, role, sample.images))
        grid = np.concatenate(
            [np.concatenate([to_uint8_image(i) for i in row], axis=1) for row in rows],
            axis=0,
        )
        path = out_dir / f"{person}_{t:06d}.png"
        if not cv2.imwrite(str(path), grid):
            raise OSError(f"could not write {path}")
        sidecar = {
            "person": person,
            "position": t,
            "frame_index": sample.frame_index,
            "views": joint_meta.views,
            "rows": ["real", "joint", "baseline"],
            "joint": {
                "run_id": joint_meta.run_id,
                "config_hash": joint_meta.config_hash,
            },
            "baseline": {
                "run_id": baseline_meta.run_id,
                "config_hash": baseline_meta.config_hash,
            },
        }
        path.with_suffix(".json").write_text(canonical_json(sidecar) + "\n")
        written.append(path)
    logger.info(f"wrote {len(written)} comparison grids to {out_dir}")
    return written
