from pathlib import Path

import torch

from mvpt.estimators.base import Detection, PoseEstimator


class ExternalPoseEstimator(PoseEstimator):
    """Adapter for a TorchScript 2D keypoint model.

    The scripted module maps a (N, 3, H, W) batch of crops in [-1, 1] to
    `(points, confidence)`: (N, 17, 2) crop pixels in COCO-17 order and (N, 17)
    confidences. Triangulation happens here, so any such model plugs into the
    3D loss and the evaluation.
    """

    def __init__(self, path: Path, resolution: int):
        super().__init__(resolution)
        self.path = Path(path)
        if not self.path.is_file():
            raise FileNotFoundError(f"no TorchScript estimator at {self.path}")
        self.module = torch.jit.load(str(self.path), map_location="cpu")
        self.descriptor = {
            "kind": "external",
            "resolution": resolution,
            "path": str(path),
        }

    def detect(self, images: torch.Tensor) -> Detection:
        points, confidence = self.module(images)
        if points.shape[:-1] != confidence.shape or points.shape[-1] != 2:
            raise ValueError(
                f"external estimator returned points {tuple(points.shape)} and"
                f" confidence {tuple(confidence.shape)}"
            )
        return Detection(points, confidence.clamp(0, 1))
