from typing import Sequence

import cv2
import numpy as np
import torch
from pydantic import Field, validator

from mvpt.poses import ArrayModel


class CameraView(ArrayModel):
    """A calibrated viewpoint: 3x4 projection world -> homogeneous pixels."""

    view_id: str
    projection: np.ndarray = Field(..., description="3 x 4 projection matrix.")
    image_size: tuple[int, int] = Field(..., description="(width_px, height_px)")

    @validator("projection", pre=True)
    def validate_projection(cls, v):
        v = np.array(v, dtype=np.float64).reshape(3, 4)
        if not np.isfinite(v).all():
            raise ValueError("projection must be finite")
        if np.linalg.matrix_rank(v) != 3:
            raise ValueError("projection must have rank 3")
        if abs(np.linalg.det(v[:, :3])) < 1e-12:
            raise ValueError("projection is not decomposable as K[R|t]")
        return v

    @classmethod
    def from_krt(
        cls,
        view_id: str,
        K: np.ndarray,
        R: np.ndarray,
        t: np.ndarray,
        image_size: tuple[int, int],
    ) -> "CameraView":
        t = np.asarray(t, dtype=np.float64).reshape(3, 1)
        P = np.asarray(K, dtype=np.float64) @ np.hstack([np.asarray(R), t])
        return cls(view_id=view_id, projection=P, image_size=tuple(image_size))

    @classmethod
    def look_at(
        cls,
        view_id: str,
        center: Sequence[float],
        target: Sequence[float],
        focal: float,
        image_size: tuple[int, int],
        up: Sequence[float] = (0.0, 0.0, 1.0),
    ) -> "CameraView":
        """Pinhole camera at `center` looking at `target`, image y pointing down."""
        center, target = np.asarray(center, float), np.asarray(target, float)
        forward = target - center
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, float))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        w, h = image_size
        K = np.array([[focal, 0, (w - 1) / 2], [0, focal, (h - 1) / 2], [0, 0, 1]])
        return cls.from_krt(view_id, K, R, -R @ center, image_size)

    def decompose(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """K (positive diagonal, K[2,2] = 1), R (det +1) and the camera center."""
        P = self.projection
        if np.linalg.det(P[:, :3]) < 0:
            P = -P
        _, K, R, *_ = cv2.RQDecomp3x3(P[:, :3])
        signs = np.diag(np.sign(np.diag(K)))
        K, R = K @ signs, signs @ R
        t = np.linalg.solve(K, P[:, 3])
        K = K / K[2, 2]
        return K, R, -R.T @ t

    @property
    def center(self) -> np.ndarray:
        return self.decompose()[2]

    def as_tensor(self, dtype=torch.float64, device=None) -> torch.Tensor:
        return torch.as_tensor(self.projection, dtype=dtype, device=device)

    def to_json_dict(self) -> dict:
        return {
            "view_id": self.view_id,
            "P": self.projection.reshape(-1).tolist(),
            "width": self.image_size[0],
            "height": self.image_size[1],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CameraView":
        return cls(
            view_id=data["view_id"],
            projection=data["P"],
            image_size=(data["width"], data["height"]),
        )


class CropTransform(ArrayModel):
    """Affine map from crop pixels to full-frame pixels (2 x 3 matrix)."""

    matrix: np.ndarray

    @validator("matrix", pre=True)
    def validate_matrix(cls, v):
        v = np.array(v, dtype=np.float64).reshape(2, 3)
        if abs(np.linalg.det(v[:, :2])) < 1e-12:
            raise ValueError("crop transform must be invertible")
        return v

    @classmethod
    def from_window(cls, x0: float, y0: float, side: float, resolution: int):
        """Square window [x0, x0 + side] x [y0, y0 + side] resampled to
        `resolution`; the crop's outer pixel edges land on the window edges.
        """
        s = side / resolution
        return cls(matrix=[[s, 0, x0 + 0.5 * s], [0, s, y0 + 0.5 * s]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self) -> "CropTransform":
        return CropTransform(matrix=cv2.invertAffineTransform(self.matrix))

    def shifted(self, dx: float) -> "CropTransform":
        """The same window moved horizontally by `dx` full-frame pixels."""
        m = self.matrix.copy()
        m[0, 2] += dx
        return CropTransform(matrix=m)

    @property
    def scale(self) -> float:
        return float(np.sqrt(abs(np.linalg.det(self.matrix[:, :2]))))

    def as_tensor(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.as_tensor(self.matrix, dtype=dtype, device=device)

    def to_json_dict(self) -> list:
        return self.matrix.tolist()
