from typing import TYPE_CHECKING, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field

from mvpt.errors import NonFiniteError, ShapeMismatchError, UndefinedDistanceError
from mvpt.geometry import scale_pose, smooth_mse_tensor
from mvpt.poses import LimbProfile, Pose3D, Skeleton

if TYPE_CHECKING:
    from mvpt.estimators.base import PoseEstimator

GanMode = Literal["log", "least_squares"]


class LossWeights(BaseModel):
    """Weights of the full objective and the smooth-MSE threshold."""

    class Config:
        extra = "forbid"

    lambda1: float = Field(default=10.0, ge=0, description="cycle consistency")
    lambda2: float = Field(default=1.0, ge=0, description="adversarial")
    lambda3: float = Field(default=5.0, ge=0, description="identity")
    lambda4: float = Field(default=1.0, ge=0, description="shared 3D pose term")
    epsilon: float = Field(
        default=400.0, gt=0, description="smooth-MSE threshold, cm^2"
    )
    gan_mode: GanMode = "least_squares"
    non_saturating: bool = Field(
        default=True, description="generator minimizes -log D(fake) in log mode"
    )


class ViewLossComponents(NamedTuple):
    cycle: torch.Tensor
    gan_a: torch.Tensor
    gan_b: torch.Tensor
    identity_a: torch.Tensor
    identity_b: torch.Tensor


class ViewLossReport(BaseModel):
    view_id: str
    gan_g: float
    gan_d: float
    cycle: float
    identity: float
    per_view_total: float
    gan_a: float
    gan_b: float
    identity_a: float
    identity_b: float

    @classmethod
    def from_components(
        cls,
        view_id: str,
        components: ViewLossComponents,
        gan_d: float,
        weights: LossWeights,
    ) -> "ViewLossReport":
        values = {k: float(v) for k, v in components._asdict().items()}
        return cls(
            view_id=view_id,
            gan_g=values["gan_a"] + values["gan_b"],
            gan_d=gan_d,
            identity=values["identity_a"] + values["identity_b"],
            per_view_total=float(per_view_objective(components, weights)),
            **values,
        )


def _check_finite(*scores: torch.Tensor) -> None:
    for s in scores:
        if not torch.isfinite(s).all():
            raise NonFiniteError("discriminator scores must be finite")


def generator_adversarial(
    d_on_fake: torch.Tensor, mode: GanMode, non_saturating: bool = True
) -> torch.Tensor:
    _check_finite(d_on_fake)
    if mode == "least_squares":
        return ((d_on_fake - 1) ** 2).mean()
    if non_saturating:
        return F.binary_cross_entropy_with_logits(d_on_fake, torch.ones_like(d_on_fake))
    # literal minimisation of log(1 - D(fake)); nonpositive by construction
    return -F.binary_cross_entropy_with_logits(d_on_fake, torch.zeros_like(d_on_fake))


def discriminator_adversarial(
    d_on_real: torch.Tensor, d_on_fake: torch.Tensor, mode: GanMode
) -> torch.Tensor:
    _check_finite(d_on_real, d_on_fake)
    if mode == "least_squares":
        return 0.5 * (((d_on_real - 1) ** 2).mean() + (d_on_fake**2).mean())
    real = F.binary_cross_entropy_with_logits(d_on_real, torch.ones_like(d_on_real))
    fake = F.binary_cross_entropy_with_logits(d_on_fake, torch.zeros_like(d_on_fake))
    return real + fake


def gan_loss(
    d_on_real: torch.Tensor,
    d_on_fake: torch.Tensor,
    mode: GanMode = "least_squares",
    non_saturating: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator adversarial terms, averaged over the score maps.

    In log mode scores are logits; the discriminator term is the negated
    objective -(log D(real) + log(1 - D(fake))), so it is a nonnegative loss.
    """
    return (
        generator_adversarial(d_on_fake, mode, non_saturating),
        discriminator_adversarial(d_on_real, d_on_fake, mode),
    )


def _l1(real: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
    if real.shape != other.shape:
        raise ShapeMismatchError(f"{tuple(real.shape)} != {tuple(other.shape)}")
    return (real - other).abs().mean()


def cycle_loss(real: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    return _l1(real, reconstructed)


def identity_loss(real: torch.Tensor, same_domain_mapped: torch.Tensor) -> torch.Tensor:
    return _l1(real, same_domain_mapped)


def per_view_objective(components: ViewLossComponents, w: LossWeights) -> torch.Tensor:
    return (
        w.lambda1 * components.cycle
        + w.lambda2 * (components.gan_a + components.gan_b)
        + w.lambda3 * (components.identity_a + components.identity_b)
    )


def scaled_targets(
    sources: Sequence[Pose3D], skeleton: Skeleton, profile: LimbProfile
) -> tuple[torch.Tensor, torch.Tensor]:
    """S_{A->B} applied to every source pose: (B, J, 3) float64 and (B, J) mask."""
    scaled = [scale_pose(p, skeleton, profile) for p in sources]
    return (
        torch.as_tensor(np.stack([p.joints for p in scaled])),
        torch.as_tensor(np.stack([p.valid for p in scaled])),
    )


def pose_3d_loss(
    fake_views: torch.Tensor,
    source_gt: Union[Pose3D, Sequence[Pose3D]],
    scaler_profile: LimbProfile,
    skeleton: Skeleton,
    estimator: "PoseEstimator",
    projections: torch.Tensor,
    crop_transforms: torch.Tensor,
    epsilon: float,
) -> torch.Tensor:
    """Smooth MSE between the scaled source pose and the pose estimated from the
    translated views.

    Args:
        fake_views: (B, V, 3, H, W) or (V, 3, H, W) translated crops.
        source_gt: ground-truth pose(s) of the source person, one per batch item.
        projections: (V, 3, 4) or (B, V, 3, 4) full-frame camera matrices.
        crop_transforms: (B, V, 2, 3) or (V, 2, 3) crop -> full-frame maps.

    Returns:
        The batch mean. Gradients reach `fake_views`; the estimator is frozen.
    """
    if fake_views.dim() == 4:
        fake_views, crop_transforms = fake_views[None], crop_transforms[None]
    if isinstance(source_gt, Pose3D):
        source_gt = [source_gt]
    if len(source_gt) != fake_views.shape[0]:
        raise ShapeMismatchError("one source pose per batch item is required")

    target, target_valid = scaled_targets(source_gt, skeleton, scaler_profile)
    predicted, predicted_valid = estimator(fake_views, projections, crop_transforms)
    valid = predicted_valid & target_valid.to(predicted_valid.device)
    if not valid.any(dim=-1).all():
        raise UndefinedDistanceError(
            "estimated pose shares no valid joint with the scaled source pose"
        )
    return smooth_mse_tensor(predicted, target.to(predicted), valid, epsilon).mean()


def total_objective(
    view_losses: Sequence[torch.Tensor],
    pose_losses_AtoB_and_BtoA: tuple[Optional[torch.Tensor], Optional[torch.Tensor]],
    w: LossWeights,
) -> torch.Tensor:
    """Sum of per-view objectives plus lambda4 times both directional 3D terms.

    With lambda4 == 0 the 3D terms are left out of the graph entirely.
    """
    total = sum(view_losses[1:], view_losses[0])
    if w.lambda4 == 0:
        return total
    a_to_b, b_to_a = pose_losses_AtoB_and_BtoA
    if a_to_b is None or b_to_a is None:
        raise ValueError("both directional 3D losses are required when lambda4 > 0")
    return total + w.lambda4 * (a_to_b + b_to_a)
