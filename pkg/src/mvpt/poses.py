from collections import deque
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, Field, validator

from mvpt.errors import NonFiniteError

# COCO-17 order; every Pose3D/Pose2D in a run uses it unless told otherwise.
COCO17_JOINTS: tuple[str, ...] = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

NUM_JOINTS = len(COCO17_JOINTS)


def _values_equal(a: Any, b: Any) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (
            isinstance(a, np.ndarray)
            and isinstance(b, np.ndarray)
            and a.shape == b.shape
            and np.array_equal(a, b, equal_nan=a.dtype.kind == "f")
        )
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_values_equal(a[k], b[k]) for k in a)
    return a == b


class ArrayModel(BaseModel):
    """Base model for types that carry numpy arrays."""

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False
        extra = "forbid"
        json_encoders = {np.ndarray: lambda a: a.tolist()}

    def __eq__(self, other: Any) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return all(
            _values_equal(getattr(self, k), getattr(other, k)) for k in self.__fields__
        )

    __hash__ = None


class Skeleton(ArrayModel):
    """Kinematic tree over the joints, stored as a parent array (root has -1).

    Bones are `(j, parent[j])` for every non-root joint, ordered by `j`.
    """

    joint_names: tuple[str, ...] = COCO17_JOINTS
    parent: tuple[int, ...]

    @validator("parent")
    def validate_tree(cls, v, values):
        names = values.get("joint_names", COCO17_JOINTS)
        if len(v) != len(names):
            raise ValueError(f"parent has {len(v)} entries for {len(names)} joints")
        roots = [j for j, p in enumerate(v) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"skeleton must have exactly one root, found {roots}")
        for j, p in enumerate(v):
            if p != -1 and not 0 <= p < len(v):
                raise ValueError(f"parent of joint {j} out of range: {p}")
        for j in range(len(v)):
            seen, k = set(), j
            while k != -1:
                if k in seen:
                    raise ValueError(f"parent array has a cycle through joint {j}")
                seen.add(k)
                k = v[k]
        return v

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    @property
    def bones(self) -> list[tuple[int, int]]:
        return [(j, p) for j, p in enumerate(self.parent) if p != -1]

    @property
    def bone_index(self) -> dict[int, int]:
        """child joint -> position in `bones`"""
        return {j: i for i, (j, _) in enumerate(self.bones)}

    def traversal(self) -> list[int]:
        """Non-root joints in breadth-first order from the root."""
        children: dict[int, list[int]] = {j: [] for j in range(len(self.parent))}
        for j, p in self.bones:
            children[p].append(j)
        order, queue = [], deque(children[self.root])
        while queue:
            j = queue.popleft()
            order.append(j)
            queue.extend(children[j])
        return order


# Rooted at the left hip (COCO has no pelvis joint). The shoulder girdle hangs off
# the left shoulder and the face off the nose.
COCO17_SKELETON = Skeleton(
    parent=(5, 0, 0, 1, 2, 11, 5, 5, 6, 7, 8, -1, 11, 11, 12, 13, 14),
)


class Pose3D(ArrayModel):
    """3D joint positions in world units (centimeters by default)."""

    joints: np.ndarray = Field(..., description="J x 3 world coordinates.")
    valid: Optional[np.ndarray] = Field(default=None, description="J booleans.")
    joint_names: tuple[str, ...] = COCO17_JOINTS
    units: str = "cm"

    @validator("joints", pre=True)
    def validate_joints(cls, v):
        v = np.array(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"joints must be J x 3, got {v.shape}")
        return v

    @validator("valid", pre=True, always=True)
    def validate_valid(cls, v, values):
        if "joints" not in values:
            return v
        joints = values["joints"]
        if v is None:
            v = np.isfinite(joints).all(axis=1)
        v = np.array(v, dtype=bool)
        if v.shape != (len(joints),):
            raise ValueError(f"valid must have {len(joints)} entries, got {v.shape}")
        if not np.isfinite(joints[v]).all():
            raise NonFiniteError("valid joints must have finite coordinates")
        return v

    @validator("joint_names", always=True)
    def validate_names(cls, v, values):
        if "joints" in values and len(v) != len(values["joints"]):
            raise ValueError(
                f"{len(v)} joint names for {len(values['joints'])} joints"
            )
        return tuple(v)

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    def bone_lengths(self, skeleton: Skeleton) -> np.ndarray:
        """Per-bone lengths; NaN where an endpoint is invalid."""
        child, parent = np.array(skeleton.bones).T
        lengths = np.linalg.norm(self.joints[child] - self.joints[parent], axis=1)
        return np.where(self.valid[child] & self.valid[parent], lengths, np.nan)

    def has_positive_bones(self, skeleton: Skeleton) -> bool:
        lengths = self.bone_lengths(skeleton)
        measured = lengths[~np.isnan(lengths)]
        return bool((measured > 0).all())

    def to_json_dict(self) -> dict:
        return {
            "joints": self.joints.tolist(),
            "valid": self.valid.tolist(),
            "units": self.units,
        }

    @classmethod
    def from_json_dict(cls, data: dict, joint_names=COCO17_JOINTS) -> "Pose3D":
        return cls(
            joints=data["joints"],
            valid=data["valid"],
            units=data.get("units", "cm"),
            joint_names=joint_names,
        )


class Pose2D(ArrayModel):
    """Pixel coordinates with per-joint confidences in [0, 1]."""

    points: np.ndarray = Field(..., description="J x 2 pixel coordinates.")
    confidence: np.ndarray = Field(..., description="J confidences.")
    joint_names: tuple[str, ...] = COCO17_JOINTS

    @validator("points", pre=True)
    def validate_points(cls, v):
        v = np.array(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError(f"points must be J x 2, got {v.shape}")
        if not np.isfinite(v).all():
            raise NonFiniteError("2D points must be finite")
        return v

    @validator("confidence", pre=True)
    def validate_confidence(cls, v, values):
        v = np.array(v, dtype=np.float64)
        if "points" in values and v.shape != (len(values["points"]),):
            raise ValueError(f"confidence shape {v.shape} does not match points")
        if not ((v >= 0) & (v <= 1)).all():
            raise ValueError("confidences must lie in [0, 1]")
        return v

    def to_json_dict(self) -> dict:
        return {"points": self.points.tolist(), "confidence": self.confidence.tolist()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Pose2D":
        return cls(points=data["points"], confidence=data["confidence"])


class LimbProfile(ArrayModel):
    """Per-bone lengths, indexed like `Skeleton.bones`."""

    bone_lengths: np.ndarray

    @validator("bone_lengths", pre=True)
    def validate_lengths(cls, v):
        v = np.array(v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("bone_lengths must be a vector")
        if not (np.isfinite(v) & (v > 0)).all():
            raise ValueError("bone lengths must be finite and strictly positive")
        return v

    def scaled(self, factor: float) -> "LimbProfile":
        return LimbProfile(bone_lengths=self.bone_lengths * factor)
