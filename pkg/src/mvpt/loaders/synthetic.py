import asyncio
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
from pydantic import BaseModel, Field, validator

import mvpt
from mvpt.cameras import CameraView
from mvpt.datasets import DatasetManifest, SampleRecord, write_manifest
from mvpt.figures import (
    MotionParams,
    MotionRanges,
    PersonStyle,
    default_styles,
    pose_at,
    render_figure,
)
from mvpt.loaders.base import Loader
from mvpt.utilities.logging import get_logger

logger = get_logger(__name__)


class SyntheticSceneConfig(BaseModel):
    """A ring of cameras around two procedurally animated people."""

    class Config:
        extra = "forbid"

    n_views: int = 4
    n_frames: int = Field(500, ge=1)
    image_size: tuple[int, int] = (256, 256)
    camera_distance: float = Field(500.0, gt=0, description="cm from the origin")
    camera_height: float = 160.0
    target_height: float = 95.0
    focal_ratio: float = Field(1.1, gt=0, description="focal length / image width")
    view_spread: float = Field(70.0, description="degrees between adjacent cameras")
    jitter: float = Field(5.0, ge=0, description="degrees of azimuth noise")
    joint_noise: float = Field(0.0, ge=0, description="cm of Gaussian joint noise")
    background: Optional[int] = Field(None, ge=0, le=255)
    persons: dict[str, PersonStyle] = Field(default_factory=default_styles)
    motion: MotionRanges = Field(default_factory=MotionRanges)

    @validator("n_views")
    def validate_views(cls, v):
        if v < 2:
            raise ValueError(
                f"n_views must be at least 2 for triangulation, got {v}"
            )
        return v

    @validator("persons")
    def validate_persons(cls, v):
        if sorted(v) != ["A", "B"]:
            raise ValueError(f"persons must be exactly A and B, got {sorted(v)}")
        return v


def make_cameras(config: SyntheticSceneConfig, rng: np.random.Generator):
    az0 = rng.uniform(0, 360)
    focal = config.focal_ratio * config.image_size[0]
    cameras = []
    for i in range(config.n_views):
        offset = i * config.view_spread + rng.uniform(-1, 1) * config.jitter
        az = np.deg2rad(az0 + offset)
        distance = config.camera_distance * (1 + rng.uniform(-0.05, 0.05))
        height = config.camera_height + rng.uniform(-10, 10)
        cameras.append(
            CameraView.look_at(
                f"cam{i}",
                center=(distance * np.cos(az), distance * np.sin(az), height),
                target=(0.0, 0.0, config.target_height),
                focal=focal,
                image_size=config.image_size,
            )
        )
    return cameras


def synth_scene(config: SyntheticSceneConfig, seed: int, out: Path) -> DatasetManifest:
    """Render a synthetic two-person multi-view dataset into `out`.

    Both people draw their motion from the same distribution; they differ in
    build and appearance. The same seed writes byte-identical files.
    """
    out = Path(out)
    background = config.background
    if background is None:
        background = mvpt.settings.render.background

    camera_seq, *person_seqs = np.random.SeedSequence(seed).spawn(
        1 + len(config.persons)
    )
    cameras = make_cameras(config, np.random.default_rng(camera_seq))

    persons = {}
    for person, seq in zip(sorted(config.persons), person_seqs):
        style = config.persons[person]
        rng = np.random.default_rng(seq)
        motion = MotionParams.sample(rng, config.motion)
        records = []
        for t in range(config.n_frames):
            pose = pose_at(style.shape, motion, t, config.joint_noise, rng)
            keypoints, images = {}, {}
            for camera in cameras:
                image, keypoints[camera.view_id] = render_figure(
                    pose, camera, style.appearance, background
                )
                relative = f"images/{person}/{camera.view_id}/{t:06d}.png"
                (out / relative).parent.mkdir(parents=True, exist_ok=True)
                if not cv2.imwrite(str(out / relative), image):
                    raise OSError(f"could not write {out / relative}")
                images[camera.view_id] = relative
            records.append(
                SampleRecord(
                    frame_index=t, pose=pose, keypoints=keypoints, images=images
                )
            )
        persons[person] = records
        logger.debug(f"rendered {len(records)} frames of person {person}")

    manifest = DatasetManifest(
        source="synthetic",
        cameras=cameras,
        persons=persons,
        background=background,
        metadata={"seed": seed, "config": config.dict()},
        root=out,
    )
    write_manifest(manifest, out)
    logger.info(
        f"wrote {config.n_views} views x {config.n_frames} frames x 2 people to {out}"
    )
    return manifest


class SyntheticSceneLoader(Loader):
    config: SyntheticSceneConfig = Field(default_factory=SyntheticSceneConfig)
    seed: int = 0

    async def load(self) -> DatasetManifest:
        return await asyncio.to_thread(
            synth_scene, self.config, self.seed, self.output_dir
        )
