"""Procedural articulated figures: rigid COCO-17 bodies, a parametric walking
motion and an OpenCV renderer that returns exact 2D ground truth.
"""
from typing import Optional

import cv2
import numpy as np
from pydantic import BaseModel, Field

import mvpt
from mvpt.cameras import CameraView
from mvpt.poses import COCO17_JOINTS, Pose2D, Pose3D

J = {name: i for i, name in enumerate(COCO17_JOINTS)}

BGR = tuple[int, int, int]


class BodyShape(BaseModel):
    """Segment dimensions in centimeters."""

    class Config:
        extra = "forbid"

    hip_width: float = Field(26.0, gt=0)
    shoulder_width: float = Field(38.0, gt=0)
    torso: float = Field(52.0, gt=0, description="pelvis to neck")
    thigh: float = Field(44.0, gt=0)
    shin: float = Field(42.0, gt=0)
    upper_arm: float = Field(30.0, gt=0)
    forearm: float = Field(26.0, gt=0)
    head_up: float = Field(24.0, gt=0, description="neck to nose, vertical")
    nose_forward: float = Field(9.0, gt=0)
    eye_up: float = Field(3.5, gt=0)
    eye_back: float = Field(2.0, gt=0)
    eye_spacing: float = Field(6.5, gt=0)
    ear_up: float = Field(1.5, gt=0)
    ear_back: float = Field(9.0, gt=0)
    ear_spacing: float = Field(15.0, gt=0)


class Appearance(BaseModel):
    class Config:
        extra = "forbid"

    torso_color: BGR = (40, 40, 200)
    left_color: BGR = (60, 180, 60)
    right_color: BGR = (200, 120, 40)
    head_color: BGR = (150, 200, 230)
    face_color: BGR = (20, 20, 20)
    limb_width: float = Field(10.0, gt=0, description="cm")
    head_radius: float = Field(11.0, gt=0, description="cm")


class PersonStyle(BaseModel):
    class Config:
        extra = "forbid"

    shape: BodyShape = Field(default_factory=BodyShape)
    appearance: Appearance = Field(default_factory=Appearance)


def default_styles() -> dict[str, PersonStyle]:
    """Two people with clearly different builds and clothing."""
    return {
        "A": PersonStyle(),
        "B": PersonStyle(
            shape=BodyShape(
                hip_width=31.0,
                shoulder_width=45.0,
                torso=58.0,
                thigh=49.0,
                shin=46.0,
                upper_arm=33.0,
                forearm=28.0,
                head_up=26.0,
            ),
            appearance=Appearance(
                torso_color=(200, 160, 40),
                left_color=(40, 200, 230),
                right_color=(180, 60, 180),
                head_color=(110, 150, 190),
                face_color=(240, 240, 240),
                limb_width=13.0,
                head_radius=12.0,
            ),
        ),
    }


class MotionRanges(BaseModel):
    """Uniform ranges the per-person motion parameters are drawn from.

    Angles in degrees, periods in frames, distances in centimeters.
    """

    class Config:
        extra = "forbid"

    period: tuple[float, float] = (30.0, 60.0)
    leg_swing: tuple[float, float] = (10.0, 35.0)
    knee_flex: tuple[float, float] = (10.0, 60.0)
    arm_swing: tuple[float, float] = (10.0, 40.0)
    arm_raise: tuple[float, float] = (0.0, 70.0)
    raise_period: tuple[float, float] = (80.0, 200.0)
    abduction: tuple[float, float] = (5.0, 30.0)
    elbow_flex: tuple[float, float] = (5.0, 90.0)
    yaw_rate: tuple[float, float] = (-0.03, 0.03)
    path_radius: tuple[float, float] = (0.0, 60.0)
    path_rate: tuple[float, float] = (0.002, 0.01)


class MotionParams(BaseModel):
    class Config:
        extra = "forbid"

    period: float
    leg_swing: float
    knee_flex: float
    arm_swing: float
    arm_raise: tuple[float, float]
    raise_period: float
    abduction: tuple[float, float]
    elbow_flex: tuple[float, float]
    yaw0: float
    yaw_rate: float
    path_radius: float
    path_rate: float
    phases: tuple[float, ...]

    @classmethod
    def sample(cls, rng: np.random.Generator, ranges: MotionRanges) -> "MotionParams":
        def draw(name: str, n: Optional[int] = None):
            lo, hi = getattr(ranges, name)
            return float(rng.uniform(lo, hi)) if n is None else tuple(
                float(x) for x in rng.uniform(lo, hi, size=n)
            )

        return cls(
            period=draw("period"),
            leg_swing=draw("leg_swing"),
            knee_flex=draw("knee_flex"),
            arm_swing=draw("arm_swing"),
            arm_raise=draw("arm_raise", 2),
            raise_period=draw("raise_period"),
            abduction=draw("abduction", 2),
            elbow_flex=draw("elbow_flex", 2),
            yaw0=float(rng.uniform(0, 2 * np.pi)),
            yaw_rate=draw("yaw_rate"),
            path_radius=draw("path_radius"),
            path_rate=draw("path_rate"),
            phases=tuple(float(x) for x in rng.uniform(0, 2 * np.pi, size=6)),
        )


def _limb_direction(
    up: np.ndarray, forward: np.ndarray, side: np.ndarray, swing: float, spread: float
) -> np.ndarray:
    """Unit vector hanging down, rotated forward by `swing` and outward by
    `spread` (radians)."""
    return (
        -up * np.cos(swing) * np.cos(spread)
        + forward * np.sin(swing) * np.cos(spread)
        + side * np.sin(spread)
    )


def pose_at(
    shape: BodyShape,
    motion: MotionParams,
    t: int,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Pose3D:
    """World pose (z up, cm) of the figure at frame `t`.

    Every bone keeps a fixed length; `noise` adds isotropic Gaussian joint jitter
    of that standard deviation.
    """
    rad = np.deg2rad
    ph = motion.phases
    phase = 2 * np.pi * t / motion.period + ph[0]
    slow = 2 * np.pi * t / motion.raise_period

    yaw = motion.yaw0 + motion.yaw_rate * t
    up = np.array([0.0, 0.0, 1.0])
    forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    left = np.array([-np.sin(yaw), np.cos(yaw), 0.0])

    angle = motion.path_rate * t + ph[1]
    ground = motion.path_radius * np.array([np.cos(angle), np.sin(angle), 0.0])
    bounce = 1.5 * abs(np.sin(phase))
    pelvis = ground + up * (shape.thigh + shape.shin + bounce)
    neck = pelvis + up * shape.torso

    joints = np.zeros((len(COCO17_JOINTS), 3))
    for i, (side, sign) in enumerate((("left", 1.0), ("right", -1.0))):
        lateral = left * sign
        step = phase + np.pi * i

        hip = pelvis + lateral * shape.hip_width / 2
        swing = rad(motion.leg_swing) * np.sin(step)
        flex = rad(motion.knee_flex) * (0.5 + 0.5 * np.sin(step + ph[2]))
        knee = hip + _limb_direction(up, forward, lateral, swing, rad(4)) * shape.thigh
        ankle = knee + (
            _limb_direction(up, forward, lateral, swing - flex, rad(4)) * shape.shin
        )

        shoulder = neck + lateral * shape.shoulder_width / 2
        raised = rad(motion.arm_raise[i]) * (0.5 + 0.5 * np.sin(slow + ph[3 + i]))
        swing = -rad(motion.arm_swing) * np.sin(step) + raised
        lo, hi = motion.abduction
        spread = rad(lo + (hi - lo) * (0.5 + 0.5 * np.sin(slow / 2 + ph[5])))
        lo, hi = motion.elbow_flex
        bend = rad(lo + (hi - lo) * (0.5 + 0.5 * np.sin(step + ph[2 + i])))
        elbow = shoulder + (
            _limb_direction(up, forward, lateral, swing, spread) * shape.upper_arm
        )
        wrist = elbow + (
            _limb_direction(up, forward, lateral, swing + bend, spread) * shape.forearm
        )

        for name, point in (
            ("hip", hip),
            ("knee", knee),
            ("ankle", ankle),
            ("shoulder", shoulder),
            ("elbow", elbow),
            ("wrist", wrist),
        ):
            joints[J[f"{side}_{name}"]] = point

    nose = neck + up * shape.head_up + forward * shape.nose_forward
    joints[J["nose"]] = nose
    for side, sign in (("left", 1.0), ("right", -1.0)):
        joints[J[f"{side}_eye"]] = (
            nose
            + up * shape.eye_up
            - forward * shape.eye_back
            + left * sign * shape.eye_spacing / 2
        )
        joints[J[f"{side}_ear"]] = (
            nose
            + up * shape.ear_up
            - forward * shape.ear_back
            + left * sign * shape.ear_spacing / 2
        )

    if noise > 0:
        if rng is None:
            raise ValueError("joint noise needs a random generator")
        joints = joints + rng.normal(0.0, noise, size=joints.shape)
    return Pose3D(joints=joints)


LIMBS = (
    ("left_shoulder", "left_elbow", "left"),
    ("left_elbow", "left_wrist", "left"),
    ("right_shoulder", "right_elbow", "right"),
    ("right_elbow", "right_wrist", "right"),
    ("left_hip", "left_knee", "left"),
    ("left_knee", "left_ankle", "left"),
    ("right_hip", "right_knee", "right"),
    ("right_knee", "right_ankle", "right"),
)
TORSO = ("left_shoulder", "right_shoulder", "right_hip", "left_hip")
FACE_MARKERS = ("nose", "left_eye", "right_eye", "left_ear", "right_ear")

# fixed-point precision for subpixel drawing
SHIFT = 4


def project_with_opencv(
    pose: Pose3D, camera: CameraView
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates and camera-frame depths via `cv2.projectPoints`."""
    K, R, center = camera.decompose()
    tvec = -R @ center
    rvec, _ = cv2.Rodrigues(R)
    points, _ = cv2.projectPoints(
        pose.joints.reshape(-1, 1, 3), rvec, tvec, K, np.zeros(5)
    )
    depth = pose.joints @ R[2] + tvec[2]
    return np.nan_to_num(points.reshape(-1, 2)), depth


def render_figure(
    pose: Pose3D,
    camera: CameraView,
    appearance: Appearance,
    background: Optional[int] = None,
) -> tuple[np.ndarray, Pose2D]:
    """Draw the figure into a full-frame BGR image.

    Parts are painted far to near. The returned keypoints are the exact
    projections of the joints; joints behind the camera get confidence 0.
    """
    settings = mvpt.settings.render
    background = settings.background if background is None else background
    width, height = camera.image_size
    image = np.full((height, width, 3), background, dtype=np.uint8)
    line_type = cv2.LINE_AA if settings.antialias else cv2.LINE_8

    points, depth = project_with_opencv(pose, camera)
    focal = camera.decompose()[0][0, 0]
    visible = depth > 1e-6
    fixed = np.round(np.clip(points, -1e4, 1e4) * 2**SHIFT).astype(np.int32)

    def px(cm: float, at_depth: float) -> float:
        return cm * focal / max(at_depth, 1e-6)

    side_color = {"left": appearance.left_color, "right": appearance.right_color}
    parts = []
    for a, b, side in LIMBS:
        i, j = J[a], J[b]
        if visible[i] and visible[j]:
            parts.append(((depth[i] + depth[j]) / 2, "limb", (i, j), side_color[side]))
    torso = [J[n] for n in TORSO]
    if visible[torso].all():
        parts.append((depth[torso].mean(), "torso", torso, appearance.torso_color))
    ears = [J["left_ear"], J["right_ear"]]
    if visible[ears].all():
        parts.append((depth[ears].mean(), "head", ears, appearance.head_color))
    for name in FACE_MARKERS:
        if visible[J[name]]:
            parts.append((depth[J[name]], "marker", [J[name]], appearance.face_color))

    for d, kind, idx, color in sorted(parts, key=lambda part: -part[0]):
        if kind == "limb":
            thickness = max(1, int(round(px(appearance.limb_width, d))))
            p, q = (tuple(int(v) for v in fixed[k]) for k in idx)
            cv2.line(image, p, q, color, thickness, line_type, SHIFT)
        elif kind == "torso":
            cv2.fillPoly(image, [fixed[idx]], color, line_type, SHIFT)
        elif kind == "head":
            center = tuple(int(v) for v in fixed[idx].mean(axis=0))
            radius = int(round(px(appearance.head_radius, d) * 2**SHIFT))
            cv2.circle(image, center, max(radius, 1), color, -1, line_type, SHIFT)
        else:
            radius = int(round(px(0.25 * appearance.limb_width, d) * 2**SHIFT))
            center = tuple(int(v) for v in fixed[idx[0]])
            cv2.circle(image, center, max(radius, 1), color, -1, line_type, SHIFT)

    keypoints = Pose2D(
        points=points,
        confidence=visible.astype(np.float64),
        joint_names=pose.joint_names,
    )
    return image, keypoints
