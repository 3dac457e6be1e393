"""Multi-view geometry: projection, weighted DLT triangulation, pose scaling and
the smooth-MSE pose distance.

The public functions work on the pydantic types and raise on bad input. The
`*_tensor` kernels and `dlt_triangulate` are batched torch versions that the
estimators and losses call inside autograd; they report failures through
validity masks instead of exceptions.
"""
from typing import Sequence

import numpy as np
import torch

from mvpt.cameras import CameraView
from mvpt.errors import (
    DegenerateBoneError,
    DegenerateGeometryError,
    EmptyPoseError,
    IncompleteProfileError,
    InsufficientViewsError,
    ProjectionError,
    UndefinedDistanceError,
)
from mvpt.poses import LimbProfile, Pose2D, Pose3D, Skeleton

MIN_DEPTH = 1e-9


def _rank_tolerance(dtype: torch.dtype) -> float:
    return 1e-10 if dtype == torch.float64 else 1e-5


def project_tensor(
    projections: torch.Tensor, points: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """(..., 3, 4) x (..., J, 3) -> pixels (..., J, 2) and depths w (..., J)."""
    homo = torch.cat([points, torch.ones_like(points[..., :1])], dim=-1)
    image = homo @ projections.transpose(-1, -2)
    w = image[..., 2]
    safe_w = torch.where(w.abs() < MIN_DEPTH, torch.ones_like(w), w)
    return image[..., :2] / safe_w[..., None], w


def project(pose: Pose3D, camera: CameraView) -> Pose2D:
    joints = np.where(pose.valid[:, None], pose.joints, 0.0)
    image = np.hstack([joints, np.ones((len(joints), 1))]) @ camera.projection.T
    w = image[:, 2]
    for j in np.flatnonzero(pose.valid & (np.abs(w) < MIN_DEPTH)):
        raise ProjectionError(int(j), float(w[j]))
    safe_w = np.where(np.abs(w) < MIN_DEPTH, 1.0, w)
    points = np.where(pose.valid[:, None], image[:, :2] / safe_w[:, None], 0.0)
    return Pose2D(
        points=points,
        confidence=pose.valid.astype(np.float64),
        joint_names=pose.joint_names,
    )


def _fallback_system(rows: int, like: torch.Tensor) -> torch.Tensor:
    # full rank with distinct singular values so SVD backward stays finite
    A = torch.zeros(rows, 4, dtype=like.dtype, device=like.device)
    n = min(rows, 4)
    A[:n, :n] = torch.diag(torch.arange(1, n + 1, dtype=like.dtype))
    return A


def dlt_triangulate(
    projections: torch.Tensor,
    points: torch.Tensor,
    weights: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Confidence-weighted algebraic triangulation.

    Args:
        projections: (..., V, 3, 4) camera matrices.
        points: (..., V, 2) observations in full-frame pixels.
        weights: (..., V) nonnegative weights.

    Returns:
        (..., 3) points and a (...) validity mask. A point is invalid when fewer
        than two views carry positive weight or the system is rank deficient.
    """
    rows = points[..., None] * projections[..., 2:3, :] - projections[..., :2, :]
    A = (rows * weights[..., None, None]).flatten(-3, -2)

    enough = (weights > 0).sum(dim=-1) >= 2
    A = torch.where(enough[..., None, None], A, _fallback_system(A.shape[-2], A))

    _, s, vh = torch.linalg.svd(A, full_matrices=False)
    homo = vh[..., -1, :]
    tol = _rank_tolerance(A.dtype)
    full_rank = s[..., -2] > tol * s[..., 0]
    finite_w = homo[..., 3].abs() > tol
    valid = enough & full_rank & finite_w

    w = torch.where(finite_w, homo[..., 3], torch.ones_like(homo[..., 3]))
    return homo[..., :3] / w[..., None], valid


def triangulate_point(
    observations: Sequence[tuple[CameraView, Sequence[float], float]],
) -> np.ndarray:
    weights = np.array([w for _, _, w in observations], dtype=np.float64)
    if (weights < 0).any():
        raise ValueError("triangulation weights must be nonnegative")
    if (weights > 0).sum() < 2:
        raise InsufficientViewsError(
            f"need at least 2 positively weighted views, got {(weights > 0).sum()}"
        )
    P = torch.as_tensor(np.stack([c.projection for c, _, _ in observations]))
    x = torch.as_tensor(np.array([p for _, p, _ in observations], dtype=np.float64))
    point, valid = dlt_triangulate(P, x, torch.as_tensor(weights))
    if not bool(valid):
        raise DegenerateGeometryError(
            "DLT system is rank deficient; cameras are not in general position"
        )
    return point.numpy()


def triangulate_pose(per_view: Sequence[tuple[CameraView, Pose2D]]) -> Pose3D:
    if not per_view:
        raise InsufficientViewsError("no views given")
    names = per_view[0][1].joint_names
    if any(p.joint_names != names for _, p in per_view):
        raise ValueError("all 2D poses must share one joint ordering")

    # (J, V, ...) so joints form the batch dimension
    P = torch.as_tensor(np.stack([c.projection for c, _ in per_view]))
    P = P.expand(len(names), *P.shape)
    x = torch.as_tensor(np.stack([p.points for _, p in per_view], axis=1))
    w = torch.as_tensor(np.stack([p.confidence for _, p in per_view], axis=1))
    joints, valid = dlt_triangulate(P, x, w)

    valid = valid.numpy()
    if not valid.any():
        raise EmptyPoseError("no joint could be triangulated from the given views")
    joints = np.where(valid[:, None], joints.numpy(), 0.0)
    return Pose3D(joints=joints, valid=valid, joint_names=names)


def smooth_mse_tensor(
    pred: torch.Tensor,
    target: torch.Tensor,
    valid: torch.Tensor,
    epsilon: float,
) -> torch.Tensor:
    """Smooth MSE over jointly valid joints; (..., J, 3) poses -> (...) losses.

    Rows without any valid joint come out as 0; callers check `valid.any(-1)`.
    """
    diff = torch.where(valid[..., None], pred - target, torch.zeros_like(pred))
    count = (valid.sum(dim=-1) * 3).clamp(min=1)
    mse = (diff**2).sum(dim=(-1, -2)) / count
    below = mse < epsilon
    compressed = torch.where(below, torch.full_like(mse, epsilon), mse)
    return torch.where(below, mse, compressed**0.1 * epsilon**0.9)


def smooth_mse(p: Pose3D, q: Pose3D, epsilon: float) -> float:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if p.joint_names != q.joint_names:
        raise ValueError("poses must share one joint ordering")
    valid = p.valid & q.valid
    if not valid.any():
        raise UndefinedDistanceError("poses have no jointly valid joints")
    loss = smooth_mse_tensor(
        torch.as_tensor(np.where(valid[:, None], p.joints, 0.0)),
        torch.as_tensor(np.where(valid[:, None], q.joints, 0.0)),
        torch.as_tensor(valid),
        epsilon,
    )
    return float(loss)


def limb_profile(poses: Sequence[Pose3D], skeleton: Skeleton) -> LimbProfile:
    """Mean length of every bone over the poses in which it is measurable."""
    if not poses:
        raise ValueError("limb_profile needs at least one pose")
    lengths = np.stack([pose.bone_lengths(skeleton) for pose in poses])
    measured = ~np.isnan(lengths)
    for i in np.flatnonzero(~measured.any(axis=0)):
        j, p = skeleton.bones[i]
        raise IncompleteProfileError(
            (j, p), (skeleton.joint_names[j], skeleton.joint_names[p])
        )
    means = np.nansum(lengths, axis=0) / measured.sum(axis=0)
    return LimbProfile(bone_lengths=means)


def scale_pose(source: Pose3D, skeleton: Skeleton, target: LimbProfile) -> Pose3D:
    """Retarget `source` to the bone lengths of `target`.

    Walks the tree from the root, keeping every bone's direction and the root
    position. Joints below an invalid joint become invalid.
    """
    root = skeleton.root
    if not source.valid[root]:
        raise ValueError("the source root joint must be valid")
    if len(target.bone_lengths) != len(skeleton.bones):
        raise ValueError(
            f"profile has {len(target.bone_lengths)} bones, skeleton has"
            f" {len(skeleton.bones)}"
        )

    joints = np.zeros_like(source.joints)
    valid = np.zeros_like(source.valid)
    joints[root], valid[root] = source.joints[root], True
    bone_index = skeleton.bone_index

    for j in skeleton.traversal():
        p = skeleton.parent[j]
        if not (valid[p] and source.valid[j]):
            continue
        bone = source.joints[j] - source.joints[p]
        length = np.linalg.norm(bone)
        if length < 1e-12:
            raise DegenerateBoneError((j, p))
        joints[j] = joints[p] + bone / length * target.bone_lengths[bone_index[j]]
        valid[j] = True

    return Pose3D(
        joints=joints, valid=valid, joint_names=source.joint_names, units=source.units
    )


def reprojection_residual(
    projections: torch.Tensor,
    points: torch.Tensor,
    confidence: torch.Tensor,
    joints: torch.Tensor,
    valid: torch.Tensor,
) -> torch.Tensor:
    """Confidence-weighted mean pixel distance between observations and the
    reprojected 3D joints.

    Shapes: projections (V, 3, 4), points (V, J, 2), confidence (V, J),
    joints (J, 3), valid (J,).
    """
    expanded = joints.expand(len(projections), -1, -1)
    reprojected, _ = project_tensor(projections, expanded)
    error = (reprojected - points).norm(dim=-1)
    weights = confidence * valid[None, :].to(confidence.dtype)
    total = weights.sum()
    if total <= 0:
        raise UndefinedDistanceError("no confidently observed valid joints")
    return (error * weights).sum() / total
