"""Loader for CMU Panoptic Studio captures.

Expected layout under `root`:

    <sequence>/calibration_<sequence>.json
    <sequence>/hdPose3d_stage1_coco19/body3DScene_<frame:08d>.json
    <sequence>/hdImgs/<camera>/<camera>_<frame:08d>.jpg

Poses are converted from the dataset's 19-joint layout to COCO-17; centimeters
are kept. Lens distortion is ignored.
"""
import asyncio
import json
import re
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import aiofiles
import numpy as np
from pydantic import BaseModel, Field

from mvpt.cameras import CameraView
from mvpt.datasets import DatasetManifest, SampleRecord, write_manifest
from mvpt.errors import (
    MalformedSkeletonError,
    MissingCalibrationError,
    MissingCameraError,
    MissingFramesError,
    ProjectionError,
)
from mvpt.geometry import project
from mvpt.loaders.base import Loader
from mvpt.poses import COCO17_JOINTS, COCO17_SKELETON, Pose3D
from mvpt.utilities.collections import batched, numbered_files

SKELETON_DIR = "hdPose3d_stage1_coco19"
IMAGE_DIR = "hdImgs"
FRAME_PATTERN = re.compile(r"_(\d+)\.(?:jpg|jpeg|png)$")
SKELETON_PATTERN = re.compile(r"body3DScene_(\d+)\.json$")


@lru_cache()
def joint_mapping() -> tuple[tuple[str, ...], tuple[int, ...]]:
    """Source joint names and, per COCO-17 joint, its source index."""
    text = resources.files("mvpt.resources").joinpath("panoptic_coco19.json")
    table = json.loads(text.read_text())
    return tuple(table["source_joints"]), tuple(table["coco17_from_source"])


def map_19_to_17(joints19: np.ndarray, confidence_threshold: float = 0.1) -> Pose3D:
    """(19, 4) rows of x, y, z, confidence -> a COCO-17 pose.

    Joints at or below the confidence threshold are marked invalid.
    """
    joints19 = np.asarray(joints19, dtype=np.float64)
    if joints19.shape != (19, 4):
        raise MalformedSkeletonError(
            f"expected (19, 4) joint rows, got {joints19.shape}"
        )
    _, index = joint_mapping()
    rows = joints19[list(index)]
    valid = (rows[:, 3] > confidence_threshold) & np.isfinite(rows[:, :3]).all(axis=1)
    joints = np.where(valid[:, None], rows[:, :3], 0.0)
    return Pose3D(joints=joints, valid=valid, joint_names=COCO17_JOINTS)


def read_calibration(
    sequence_dir: Path, camera_ids: list[str]
) -> list[CameraView]:
    sequence = sequence_dir.name
    path = sequence_dir / f"calibration_{sequence}.json"
    if not path.is_file():
        raise MissingCalibrationError(f"no calibration file at {path}")
    cameras = {c["name"]: c for c in json.loads(path.read_text())["cameras"]}
    views = []
    for camera_id in camera_ids:
        if camera_id not in cameras:
            raise MissingCameraError(camera_id, sorted(cameras))
        c = cameras[camera_id]
        views.append(
            CameraView.from_krt(
                camera_id,
                np.array(c["K"]),
                np.array(c["R"]),
                np.array(c["t"]),
                tuple(c["resolution"]),
            )
        )
    return views


def parse_skeleton(path: Path, text: str) -> dict[int, np.ndarray]:
    """body id -> (19, 4) joint rows of one skeleton file."""
    try:
        bodies = json.loads(text)["bodies"]
        parsed = {}
        for body in bodies:
            rows = np.asarray(body["joints19"], dtype=np.float64)
            if rows.size != 19 * 4:
                raise ValueError(f"joints19 has {rows.size} values, expected 76")
            parsed[int(body["id"])] = rows.reshape(19, 4)
        return parsed
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedSkeletonError(f"{path}: {exc}") from exc


class PanopticPerson(BaseModel):
    """Which body of which sequence plays a person."""

    class Config:
        extra = "forbid"

    sequence: str
    body_id: int = 0
    start: int = 0
    stop: Optional[int] = None
    step: int = Field(1, ge=1)


class PersonIngestReport(BaseModel):
    frames_seen: int = 0
    frames_kept: int = 0
    dropped: dict[str, int] = Field(default_factory=dict)

    def drop(self, reason: str) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + 1


class IngestReport(BaseModel):
    persons: dict[str, PersonIngestReport] = Field(default_factory=dict)


class PanopticLoader(Loader):
    root: Path
    camera_ids: list[str]
    persons: dict[str, PanopticPerson]
    confidence_threshold: float = 0.1
    concurrency: int = 64
    batch_size: int = 256

    async def _read_skeletons(self, paths: list[Path]) -> list[dict[int, np.ndarray]]:
        semaphore = asyncio.Semaphore(self.concurrency)

        async def read(path: Path) -> dict[int, np.ndarray]:
            async with semaphore:
                async with aiofiles.open(path, "r") as f:
                    return parse_skeleton(path, await f.read())

        results = []
        for batch in batched(paths, self.batch_size):
            results.extend(await asyncio.gather(*(read(p) for p in batch)))
        return results

    async def _load_person(
        self, person: str, source: PanopticPerson, cameras: list[CameraView]
    ) -> tuple[list[SampleRecord], PersonIngestReport]:
        sequence_dir = self.root / source.sequence
        report = PersonIngestReport()

        images = {}
        for camera in cameras:
            camera_dir = sequence_dir / IMAGE_DIR / camera.view_id
            found = numbered_files(camera_dir, FRAME_PATTERN)
            if not found:
                raise MissingFramesError(
                    f"no frames for camera {camera.view_id} in {camera_dir}"
                )
            images[camera.view_id] = found

        skeletons = numbered_files(sequence_dir / SKELETON_DIR, SKELETON_PATTERN)
        frames = [
            f
            for f in sorted(skeletons)
            if f >= source.start and (source.stop is None or f < source.stop)
        ][:: source.step]
        bodies = await self._read_skeletons([skeletons[f] for f in frames])

        records = []
        for frame, frame_bodies in zip(frames, bodies):
            report.frames_seen += 1
            if any(frame not in images[c.view_id] for c in cameras):
                report.drop("missing_view_frame")
                continue
            if source.body_id not in frame_bodies:
                report.drop("missing_body")
                continue
            pose = map_19_to_17(frame_bodies[source.body_id], self.confidence_threshold)
            if not pose.valid[COCO17_SKELETON.root]:
                report.drop("invalid_root")
                continue
            try:
                keypoints = {c.view_id: project(pose, c) for c in cameras}
            except ProjectionError:
                report.drop("degenerate_projection")
                continue
            records.append(
                SampleRecord(
                    frame_index=frame,
                    pose=pose,
                    keypoints=keypoints,
                    images={
                        c.view_id: str(images[c.view_id][frame].resolve())
                        for c in cameras
                    },
                )
            )
            report.frames_kept += 1

        self.logger.info(
            f"person {person}: kept {report.frames_kept}/{report.frames_seen} frames"
            f" of {source.sequence} ({report.dropped or 'none dropped'})"
        )
        return records, report

    async def ingest(self) -> tuple[DatasetManifest, IngestReport]:
        """Build, write and return the manifest and a per-person drop report."""
        order = sorted(self.persons)
        calibrations = {
            p: read_calibration(self.root / self.persons[p].sequence, self.camera_ids)
            for p in order
        }
        cameras = calibrations[order[0]]
        for p in order[1:]:
            if any(
                not np.allclose(a.projection, b.projection, rtol=1e-6, atol=1e-6)
                for a, b in zip(cameras, calibrations[p])
            ):
                self.logger.warning(
                    f"calibration of {self.persons[p].sequence} differs from"
                    f" {self.persons[order[0]].sequence}; keeping the latter"
                )

        report = IngestReport()
        persons = {}
        for p in order:
            persons[p], report.persons[p] = await self._load_person(
                p, self.persons[p], calibrations[p]
            )

        manifest = DatasetManifest(
            source="panoptic",
            cameras=cameras,
            persons=persons,
            metadata={
                "root": str(self.root.resolve()),
                "persons": {p: s.dict() for p, s in sorted(self.persons.items())},
                "confidence_threshold": self.confidence_threshold,
            },
            root=self.output_dir,
        )
        write_manifest(manifest, self.output_dir)
        (self.output_dir / "ingest_report.json").write_text(
            json.dumps(report.dict(), sort_keys=True, indent=2) + "\n"
        )
        return manifest, report

    async def load(self) -> DatasetManifest:
        manifest, _ = await self.ingest()
        return manifest


def ingest_panoptic(
    root: Path,
    camera_ids: list[str],
    persons: dict[str, PanopticPerson],
    out: Path,
    confidence_threshold: float = 0.1,
) -> tuple[DatasetManifest, IngestReport]:
    loader = PanopticLoader(
        root=Path(root),
        camera_ids=camera_ids,
        persons=persons,
        output_dir=Path(out),
        confidence_threshold=confidence_threshold,
    )
    return asyncio.run(loader.ingest())
