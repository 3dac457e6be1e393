from abc import ABC, abstractmethod
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from mvpt.cameras import CameraView, CropTransform
from mvpt.errors import EmptyPoseError, InsufficientViewsError
from mvpt.geometry import dlt_triangulate
from mvpt.models.generators import check_resolution
from mvpt.poses import COCO17_JOINTS, Pose2D, Pose3D


class Detection(NamedTuple):
    points: torch.Tensor
    """(N, J, 2) crop pixel coordinates, x = column"""
    confidence: torch.Tensor
    """(N, J) in [0, 1]"""


def crop_to_full_frame(
    crop_transforms: torch.Tensor, points: torch.Tensor
) -> torch.Tensor:
    """Apply (..., 2, 3) crop -> full-frame maps to (..., J, 2) points."""
    linear, offset = crop_transforms[..., :2], crop_transforms[..., 2]
    return points @ linear.transpose(-1, -2) + offset[..., None, :]


class PoseEstimator(nn.Module, ABC):
    """Multi-view 3D pose estimator: per-view 2D detection on crops, confidence
    weighted triangulation in full-frame coordinates.

    Calling the module maps images (B, V, 3, H, W), projections (V, 3, 4) or
    (B, V, 3, 4) and crop transforms (B, V, 2, 3) to float64 joints (B, J, 3)
    and a validity mask (B, J). Everything is differentiable in the images.
    """

    joint_names: tuple[str, ...] = COCO17_JOINTS

    def __init__(self, resolution: int):
        super().__init__()
        self.resolution = resolution

    @abstractmethod
    def detect(self, images: torch.Tensor) -> Detection:
        """2D keypoints for a (N, 3, H, W) batch of crops."""

    def freeze(self) -> "PoseEstimator":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def forward(
        self,
        images: torch.Tensor,
        projections: torch.Tensor,
        crop_transforms: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        check_resolution(self, images.flatten(0, 1))
        B, V = images.shape[:2]
        if V < 2:
            raise InsufficientViewsError(f"need at least 2 views, got {V}")

        detection = self.detect(images.flatten(0, 1))
        J = detection.points.shape[1]
        points = crop_to_full_frame(
            crop_transforms.flatten(0, 1).to(torch.float64),
            detection.points.to(torch.float64),
        ).view(B, V, J, 2)
        confidence = detection.confidence.to(torch.float64).view(B, V, J)

        projections = projections.to(points).expand(B, V, 3, 4)
        return dlt_triangulate(
            projections[:, None].expand(B, J, V, 3, 4),
            points.transpose(1, 2),
            confidence.transpose(1, 2),
        )


def _stack_inputs(
    cameras: Sequence[CameraView], crop_transforms: Sequence[CropTransform]
) -> tuple[torch.Tensor, torch.Tensor]:
    if len(cameras) != len(crop_transforms):
        raise ValueError("one crop transform per camera is required")
    return (
        torch.stack([c.as_tensor() for c in cameras]),
        torch.stack([t.as_tensor(torch.float64) for t in crop_transforms]),
    )


@torch.no_grad()
def estimate_pose(
    estimator: PoseEstimator,
    images: torch.Tensor,
    cameras: Sequence[CameraView],
    crop_transforms: Sequence[CropTransform],
) -> Pose3D:
    """Estimate one 3D pose from V crops (V, 3, H, W) of a single instant."""
    projections, crops = _stack_inputs(cameras, crop_transforms)
    joints, valid = estimator(
        images[None], projections.to(images.device), crops[None].to(images.device)
    )
    valid = valid[0].cpu().numpy()
    if not valid.any():
        raise EmptyPoseError("the estimator triangulated no valid joint")
    joints = np.where(valid[:, None], joints[0].cpu().numpy(), 0.0)
    return Pose3D(joints=joints, valid=valid, joint_names=estimator.joint_names)


@torch.no_grad()
def detect_views(
    estimator: PoseEstimator,
    images: torch.Tensor,
    crop_transforms: Sequence[CropTransform],
) -> list[Pose2D]:
    """Full-frame 2D detections for V crops (V, 3, H, W)."""
    check_resolution(estimator, images)
    detection = estimator.detect(images)
    crops = torch.stack([t.as_tensor(torch.float64) for t in crop_transforms])
    points = crop_to_full_frame(
        crops.to(images.device), detection.points.to(torch.float64)
    )
    return [
        Pose2D(
            points=p.cpu().numpy(),
            confidence=c.clamp(0, 1).cpu().numpy(),
            joint_names=estimator.joint_names,
        )
        for p, c in zip(points, detection.confidence.to(torch.float64))
    ]
