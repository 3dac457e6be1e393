from pathlib import Path

import torch

from .base import (
    Detection,
    PoseEstimator,
    crop_to_full_frame,
    detect_views,
    estimate_pose,
)
from .detector import (
    HeatmapStack,
    SyntheticPoseEstimator,
    detect_keypoints,
    normalize_heatmaps,
    soft_argmax,
    train_detector,
)
from .external import ExternalPoseEstimator


def build_estimator(descriptor: dict) -> PoseEstimator:
    descriptor = dict(descriptor)
    kind = descriptor.pop("kind")
    if kind == "synthetic":
        return SyntheticPoseEstimator(**descriptor)
    if kind == "external":
        return ExternalPoseEstimator(Path(descriptor["path"]), descriptor["resolution"])
    raise ValueError(f"unknown estimator kind {kind!r}")


def save_estimator(estimator: PoseEstimator, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {} if estimator.descriptor["kind"] == "external" else estimator.state_dict()
    torch.save({"descriptor": estimator.descriptor, "state": state}, path)
    return path


def load_estimator(path: Path, map_location: str = "cpu") -> PoseEstimator:
    """Rebuild a saved estimator, frozen and in eval mode."""
    payload = torch.load(Path(path), map_location=map_location)
    estimator = build_estimator(payload["descriptor"])
    if payload["state"]:
        estimator.load_state_dict(payload["state"])
    return estimator.freeze()
