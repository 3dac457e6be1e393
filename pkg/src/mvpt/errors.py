"""Exceptions raised across mvpt.

Each subclasses the builtin a caller would expect, so `except ValueError`
keeps working for invalid inputs and `except OSError` for filesystem trouble.
"""


class ProjectionError(ValueError):
    """A joint lies on the camera's principal plane."""

    def __init__(self, joint: int, w: float):
        super().__init__(f"Joint {joint} projects with |w|={abs(w):.3g} < 1e-9.")
        self.joint = joint


class InsufficientViewsError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


class EmptyPoseError(ValueError):
    pass


class UndefinedDistanceError(ValueError):
    pass


class IncompleteProfileError(ValueError):
    def __init__(self, bone: tuple[int, int], names: tuple[str, str]):
        super().__init__(
            f"Bone {names[0]}-{names[1]} {bone} is never measurable in the given"
            " poses."
        )
        self.bone = bone


class DegenerateBoneError(ValueError):
    def __init__(self, bone: tuple[int, int]):
        super().__init__(f"Bone {bone} has zero length; its direction is undefined.")
        self.bone = bone


class ShapeMismatchError(ValueError):
    pass


class ResolutionMismatchError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, terms: dict[str, float]):
        super().__init__(message)
        self.terms = terms


class MissingCameraError(ValueError):
    def __init__(self, camera_id: str, available: list[str]):
        super().__init__(
            f"Camera {camera_id!r} is not in the calibration file (available:"
            f" {', '.join(available) or 'none'})."
        )
        self.camera_id = camera_id


class MissingCalibrationError(FileNotFoundError):
    pass


class MissingFramesError(FileNotFoundError):
    pass


class MalformedSkeletonError(ValueError):
    pass


class IncompatibleCheckpointError(ValueError):
    pass


class ConfigHashMismatchError(ValueError):
    pass


class FrameRangeError(IndexError):
    pass
