"""Heatmap keypoint detector with a differentiable soft-argmax readout.

Heatmaps are softmax-normalized over space at inverse temperature 100 and the
keypoint is their center of mass, so pixel gradients reach the coordinates.
"""
from typing import TYPE_CHECKING, NamedTuple, Sequence

import numpy as np
import torch
from torch import nn
from tqdm.auto import tqdm

from mvpt.estimators.base import Detection, PoseEstimator
from mvpt.models.generators import check_resolution, init_weights
from mvpt.poses import NUM_JOINTS, Pose2D
from mvpt.utilities.collections import batched
from mvpt.utilities.logging import get_logger

if TYPE_CHECKING:
    from mvpt.datasets import MultiViewDataset

logger = get_logger(__name__)

DEFAULT_TEMPERATURE = 100.0


def normalize_heatmaps(
    logits: torch.Tensor, temperature: float = DEFAULT_TEMPERATURE
) -> torch.Tensor:
    """(N, J, h, w) raw maps -> nonnegative maps summing to 1 per joint."""
    n, j, h, w = logits.shape
    flat = torch.softmax(logits.reshape(n, j, h * w) * temperature, dim=-1)
    return flat.reshape(n, j, h, w)


def soft_argmax(heatmaps: torch.Tensor) -> torch.Tensor:
    """Center of mass of normalized (N, J, h, w) maps as (x, y) cell coordinates."""
    h, w = heatmaps.shape[-2:]
    xs = torch.arange(w, dtype=heatmaps.dtype, device=heatmaps.device)
    ys = torch.arange(h, dtype=heatmaps.dtype, device=heatmaps.device)
    x = (heatmaps.sum(dim=-2) * xs).sum(dim=-1)
    y = (heatmaps.sum(dim=-1) * ys).sum(dim=-1)
    return torch.stack([x, y], dim=-1)


class HeatmapStack(NamedTuple):
    heatmaps: torch.Tensor
    """(N, J, h, w), each map sums to 1"""
    stride: int
    """crop pixels per heatmap cell"""

    def crop_points(self) -> torch.Tensor:
        # cell centers sit at stride * (i + 0.5) - 0.5 in crop pixels
        return (soft_argmax(self.heatmaps) + 0.5) * self.stride - 0.5

    def peak_mass(self) -> torch.Tensor:
        return self.heatmaps.flatten(-2).amax(dim=-1)


def _conv(in_features: int, out_features: int, stride: int = 1, dilation: int = 1):
    return [
        nn.Conv2d(
            in_features,
            out_features,
            3,
            stride=stride,
            padding=dilation,
            dilation=dilation,
        ),
        nn.InstanceNorm2d(out_features, affine=True),
        nn.SiLU(),
    ]


class KeypointDetector(nn.Module):
    """Small fully convolutional net producing one raw heatmap per joint."""

    def __init__(
        self,
        num_joints: int = NUM_JOINTS,
        width: int = 32,
        stride: int = 2,
        channels: int = 3,
    ):
        super().__init__()
        if stride < 1 or stride & (stride - 1):
            raise ValueError(f"heatmap stride must be a power of two, got {stride}")
        layers = _conv(channels, width)
        for _ in range(stride.bit_length() - 1):
            layers += _conv(width, width, stride=2)
        for dilation in (1, 2, 4, 8):
            layers += _conv(width, width, dilation=dilation)
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(width, num_joints, 1)
        self.apply(init_weights)
        # uniform heatmaps at init
        nn.init.zeros_(self.head.weight)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


class SyntheticPoseEstimator(PoseEstimator):
    """Detector trained on rendered crops; confidence is the heatmap peak mass."""

    def __init__(
        self,
        resolution: int,
        num_joints: int = NUM_JOINTS,
        width: int = 32,
        stride: int = 2,
        temperature: float = DEFAULT_TEMPERATURE,
    ):
        super().__init__(resolution)
        if resolution % stride:
            raise ValueError(f"resolution {resolution} not divisible by {stride}")
        self.stride = stride
        self.temperature = temperature
        self.detector = KeypointDetector(num_joints, width=width, stride=stride)
        self.descriptor = {
            "kind": "synthetic",
            "resolution": resolution,
            "num_joints": num_joints,
            "width": width,
            "stride": stride,
            "temperature": temperature,
        }

    def heatmaps(self, images: torch.Tensor) -> HeatmapStack:
        logits = self.detector(images)
        return HeatmapStack(normalize_heatmaps(logits, self.temperature), self.stride)

    def detect(self, images: torch.Tensor) -> Detection:
        stack = self.heatmaps(images)
        return Detection(stack.crop_points(), stack.peak_mass())


@torch.no_grad()
def detect_keypoints(
    estimator: SyntheticPoseEstimator, image: torch.Tensor
) -> tuple[Pose2D, HeatmapStack]:
    """2D keypoints (crop pixels) and heatmaps for a single (3, H, W) crop."""
    check_resolution(estimator, image)
    stack = estimator.heatmaps(image[None])
    pose = Pose2D(
        points=stack.crop_points()[0].double().cpu().numpy(),
        confidence=stack.peak_mass()[0].double().clamp(0, 1).cpu().numpy(),
        joint_names=estimator.joint_names,
    )
    return pose, stack


def keypoint_loss(
    predicted: torch.Tensor, target: torch.Tensor, visible: torch.Tensor
) -> torch.Tensor:
    """Mean L1 pixel error over visible joints."""
    error = (predicted - target).abs().sum(dim=-1)
    weights = visible.to(error.dtype)
    return (error * weights).sum() / weights.sum().clamp(min=1)


def train_detector(
    dataset: "MultiViewDataset",
    persons: Sequence[str] = ("A", "B"),
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 4,
    width: int = 32,
    stride: int = 2,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = 0,
    device: str = "cpu",
    progress: bool = True,
) -> SyntheticPoseEstimator:
    """Fit a `SyntheticPoseEstimator` on the training split of `persons`.

    Targets are the ground-truth 2D keypoints mapped into crop pixels; joints
    behind the camera or outside the crop do not contribute.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    estimator = SyntheticPoseEstimator(
        dataset.resolution, width=width, stride=stride, temperature=temperature
    ).to(device)
    optimizer = torch.optim.Adam(estimator.parameters(), lr=lr)
    items = [(p, t) for p in persons for t in dataset.split(p, "train")]
    R = dataset.resolution

    for epoch in range(epochs):
        order = rng.permutation(len(items))
        total, count = 0.0, 0
        batches = list(batched(order, batch_size))
        for batch in tqdm(batches, desc=f"detector {epoch}", disable=not progress):
            samples = [
                dataset.sample_batch(*items[i], augment=True, rng=rng) for i in batch
            ]
            images = torch.cat([s.images for s in samples]).to(device)
            target = torch.cat([s.keypoints for s in samples]).to(device)
            inside = ((target >= -0.5) & (target <= R - 0.5)).all(dim=-1)
            confidence = torch.cat([s.keypoint_confidence for s in samples])
            visible = inside & (confidence.to(device) > 0)

            loss = keypoint_loss(estimator.detect(images).points, target, visible)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total, count = total + float(loss), count + 1
        logger.info(f"detector epoch {epoch}: mean L1 {total / max(count, 1):.3f}px")

    return estimator.freeze()

