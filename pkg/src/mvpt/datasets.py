"""On-disk multi-view datasets and the cropping sampler.

A dataset directory holds `manifest.json` (cameras, skeleton, source, units),
one `poses/<person>.jsonl` per person with a record per synchronized instant,
and the full-frame images those records point to.
"""
import json
import math
import threading
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Sequence, Union

import cv2
import numpy as np
import torch
from cachetools import LRUCache, cachedmethod
from pydantic import BaseModel, Field

from mvpt.cameras import CameraView, CropTransform
from mvpt.errors import FrameRangeError, MissingCameraError
from mvpt.poses import COCO17_SKELETON, ArrayModel, Pose2D, Pose3D, Skeleton
from mvpt.utilities.logging import LoggerMixin
from mvpt.utilities.strings import StreamHasher, canonical_json

PersonId = Literal["A", "B"]
PERSONS: tuple[str, ...] = ("A", "B")
MANIFEST_FILE = "manifest.json"

RngLike = Union[np.random.Generator, Mapping[str, np.random.Generator], None]


class SampleRecord(ArrayModel):
    """One synchronized instant of one person seen by every camera."""

    frame_index: int
    pose: Pose3D
    keypoints: dict[str, Pose2D] = Field(
        ..., description="view_id -> exact full-frame 2D keypoints"
    )
    images: dict[str, str] = Field(..., description="view_id -> image path")

    def to_json_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "pose": self.pose.to_json_dict(),
            "keypoints": {v: k.to_json_dict() for v, k in self.keypoints.items()},
            "images": self.images,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SampleRecord":
        return cls(
            frame_index=data["frame_index"],
            pose=Pose3D.from_json_dict(data["pose"]),
            keypoints={
                v: Pose2D.from_json_dict(k) for v, k in data["keypoints"].items()
            },
            images=data["images"],
        )


class DatasetManifest(ArrayModel):
    source: Literal["synthetic", "panoptic"]
    units: str = "cm"
    cameras: list[CameraView]
    skeleton: Skeleton = COCO17_SKELETON
    persons: dict[str, list[SampleRecord]]
    background: int = 96
    metadata: dict[str, Any] = Field(default_factory=dict)
    root: Optional[Path] = Field(
        default=None, description="Directory image paths are relative to."
    )

    @property
    def view_ids(self) -> list[str]:
        return [c.view_id for c in self.cameras]

    def camera(self, view_id: str) -> CameraView:
        for c in self.cameras:
            if c.view_id == view_id:
                return c
        raise MissingCameraError(view_id, self.view_ids)

    def records(self, person: str) -> list[SampleRecord]:
        if person not in self.persons:
            raise KeyError(f"person {person!r} not in dataset ({sorted(self.persons)})")
        return self.persons[person]

    def resolve(self, path: str) -> Path:
        return Path(path) if self.root is None else self.root / path

    def split(
        self,
        person: str,
        which: Literal["train", "test"],
        holdout_fraction: float = 0.1,
    ) -> list[int]:
        """Record positions of a split; the last `holdout_fraction` is held out."""
        n = len(self.records(person))
        n_test = math.ceil(n * holdout_fraction) if holdout_fraction > 0 else 0
        n_test = min(n_test, n - 1) if n > 1 else 0
        if which == "train":
            return list(range(n - n_test))
        if which == "test":
            return list(range(n - n_test, n))
        raise ValueError(f"unknown split {which!r}")

    def header(self) -> dict:
        return {
            "source": self.source,
            "units": self.units,
            "cameras": [c.to_json_dict() for c in self.cameras],
            "skeleton": {
                "joint_names": list(self.skeleton.joint_names),
                "parent": list(self.skeleton.parent),
            },
            "persons": {
                p: {"records": f"poses/{p}.jsonl", "count": len(r)}
                for p, r in sorted(self.persons.items())
            },
            "background": self.background,
            "metadata": self.metadata,
        }

    def content_hash(self, include_images: bool = True) -> str:
        """xxh3-128 over the header, every record and (optionally) image bytes."""
        hasher = StreamHasher().update(canonical_json(self.header()))
        for person in sorted(self.persons):
            for record in self.persons[person]:
                hasher.update(canonical_json(record.to_json_dict()))
                if include_images:
                    for view in sorted(record.images):
                        hasher.update(self.resolve(record.images[view]).read_bytes())
        return hasher.hexdigest()


def write_manifest(manifest: DatasetManifest, directory: Path) -> Path:
    directory = Path(directory)
    (directory / "poses").mkdir(parents=True, exist_ok=True)
    for person, records in sorted(manifest.persons.items()):
        lines = [json.dumps(r.to_json_dict(), sort_keys=True) for r in records]
        (directory / "poses" / f"{person}.jsonl").write_text(
            "".join(line + "\n" for line in lines)
        )
    path = directory / MANIFEST_FILE
    path.write_text(json.dumps(manifest.header(), sort_keys=True, indent=2) + "\n")
    return path


def read_manifest(directory: Path) -> DatasetManifest:
    directory = Path(directory)
    path = directory / MANIFEST_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    header = json.loads(path.read_text())
    persons = {}
    for person, entry in header["persons"].items():
        with open(directory / entry["records"]) as f:
            persons[person] = [
                SampleRecord.from_json_dict(json.loads(line))
                for line in f
                if line.strip()
            ]
    return DatasetManifest(
        source=header["source"],
        units=header["units"],
        cameras=[CameraView.from_json_dict(c) for c in header["cameras"]],
        skeleton=Skeleton(**header["skeleton"]),
        persons=persons,
        background=header.get("background", 96),
        metadata=header.get("metadata", {}),
        root=directory,
    )


class MultiViewSample(BaseModel):
    """Crops of one record, one per view, ready for the networks."""

    class Config:
        arbitrary_types_allowed = True

    person: str
    position: int
    frame_index: int
    view_ids: list[str]
    images: torch.Tensor = Field(..., description="(V, 3, R, R) RGB in [-1, 1]")
    crop_transforms: list[CropTransform]
    keypoints: torch.Tensor = Field(..., description="(V, J, 2) crop pixels")
    keypoint_confidence: torch.Tensor = Field(..., description="(V, J)")
    gt_pose: Pose3D

    def crop_tensor(self) -> torch.Tensor:
        return torch.stack([t.as_tensor(torch.float64) for t in self.crop_transforms])


class MultiViewBatch(BaseModel):
    class Config:
        arbitrary_types_allowed = True

    images: torch.Tensor = Field(..., description="(B, V, 3, R, R)")
    crop_transforms: torch.Tensor = Field(..., description="(B, V, 2, 3) float64")
    gt_poses: list[Pose3D]
    positions: list[int]
    frame_indices: list[int]

    @classmethod
    def collate(cls, samples: Sequence[MultiViewSample]) -> "MultiViewBatch":
        return cls(
            images=torch.stack([s.images for s in samples]),
            crop_transforms=torch.stack([s.crop_tensor() for s in samples]),
            gt_poses=[s.gt_pose for s in samples],
            positions=[s.position for s in samples],
            frame_indices=[s.frame_index for s in samples],
        )

    def to(self, device: str) -> "MultiViewBatch":
        return self.copy(
            update={
                "images": self.images.to(device),
                "crop_transforms": self.crop_transforms.to(device),
            }
        )


def crop_window(keypoints: Pose2D, crop_scale: float = 1.2) -> tuple[float, ...]:
    """Square window around the confident keypoints: (x0, y0, side, x margin).

    Shifting the window horizontally by up to the x margin either way keeps
    the keypoint box inside it.
    """
    points = keypoints.points[keypoints.confidence > 0]
    if not len(points):
        raise ValueError("no visible keypoints to crop around")
    (x_min, y_min), (x_max, y_max) = points.min(axis=0), points.max(axis=0)
    width, height = x_max - x_min, y_max - y_min
    side = max(crop_scale * max(width, height), 1.0)
    cx, cy = (x_min + x_max) / 2, (y_min + y_max) / 2
    return cx - side / 2, cy - side / 2, side, (side - width) / 2


class MultiViewDataset(LoggerMixin):
    """Person-centered crops of every view, with an LRU cache of decoded frames."""

    def __init__(
        self,
        manifest: DatasetManifest,
        resolution: int = 64,
        crop_scale: float = 1.2,
        holdout_fraction: float = 0.1,
        views: Optional[Sequence[str]] = None,
        cache_size: int = 512,
    ):
        self.manifest = manifest
        self.resolution = resolution
        self.crop_scale = crop_scale
        self.holdout_fraction = holdout_fraction
        self.views = list(views) if views is not None else manifest.view_ids
        for v in self.views:
            manifest.camera(v)
        self._cache: LRUCache = LRUCache(maxsize=cache_size)
        self._lock = threading.Lock()

    @property
    def cameras(self) -> list[CameraView]:
        return [self.manifest.camera(v) for v in self.views]

    def split(
        self, person: str, which: Literal["train", "test"] = "train"
    ) -> list[int]:
        return self.manifest.split(person, which, self.holdout_fraction)

    @cachedmethod(lambda self: self._cache, lock=lambda self: self._lock)
    def load_image(self, path: Path) -> np.ndarray:
        image = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if image is None:
            raise FileNotFoundError(f"could not read image {path}")
        return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)

    def sample_batch(
        self,
        person: str,
        t: int,
        augment: bool = False,
        rng: RngLike = None,
    ) -> MultiViewSample:
        """Crops of record `t` of `person` in every view.

        With `augment`, each view's window is shifted horizontally by a uniform
        amount that keeps the body inside the crop. `rng` is one generator or
        one per view id.
        """
        records = self.manifest.records(person)
        if not 0 <= t < len(records):
            raise FrameRangeError(
                f"record {t} out of range for person {person} (0..{len(records) - 1})"
            )
        if augment and rng is None:
            raise ValueError("augmentation needs a random generator")
        record = records[t]
        R = self.resolution
        border = (self.manifest.background,) * 3

        images, crops, keypoints, confidence = [], [], [], []
        for view in self.views:
            kp = record.keypoints[view]
            x0, y0, side, margin = crop_window(kp, self.crop_scale)
            crop = CropTransform.from_window(x0, y0, side, R)
            if augment:
                view_rng = rng[view] if isinstance(rng, Mapping) else rng
                crop = crop.shifted(float(view_rng.uniform(-margin, margin)))

            full = self.load_image(self.manifest.resolve(record.images[view]))
            patch = cv2.warpAffine(
                full,
                crop.matrix,
                (R, R),
                flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                borderMode=cv2.BORDER_CONSTANT,
                borderValue=border,
            )
            images.append(torch.from_numpy(patch).permute(2, 0, 1))
            crops.append(crop)
            keypoints.append(torch.from_numpy(crop.inverse().apply(kp.points)))
            confidence.append(torch.from_numpy(kp.confidence))

        return MultiViewSample(
            person=person,
            position=t,
            frame_index=record.frame_index,
            view_ids=self.views,
            images=torch.stack(images).float() / 127.5 - 1.0,
            crop_transforms=crops,
            keypoints=torch.stack(keypoints).float(),
            keypoint_confidence=torch.stack(confidence).float(),
            gt_pose=record.pose,
        )


def sample_batch(
    manifest: DatasetManifest,
    person: str,
    t: int,
    augment: bool = False,
    resolution: int = 64,
    rng: RngLike = None,
) -> MultiViewSample:
    return MultiViewDataset(manifest, resolution=resolution).sample_batch(
        person, t, augment=augment, rng=rng
    )


def to_uint8_image(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor in [-1, 1] -> (H, W, 3) BGR uint8 for cv2."""
    array = ((image.detach().cpu().float().clamp(-1, 1) + 1) * 127.5).round()
    rgb = array.permute(1, 2, 0).numpy().astype(np.uint8)
    return cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)
