"""Thin-lens optics and projective camera geometry.

Unit conventions, used consistently across the package:

* focal length and circle of confusion are in millimeters (lens convention),
* focus distance and depth-of-field limits are in meters (scene convention),
* pixels are floats with the origin at the top-left image corner, u right,
  v down.

The camera frame is z forward (depth), x right, y down, so that pixel
coordinates grow in the same direction as the camera axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Distinguished far-limit value: everything beyond the near limit is sharp.
INFINITE_FAR = math.inf

_MM_PER_M = 1000.0


def mm_to_m(value_mm: float) -> float:
    """Single conversion point between lens millimeters and scene meters."""
    return value_mm / _MM_PER_M


class OpticsError(ValueError):
    """Base class for optics-domain errors."""


class SingularDofError(OpticsError):
    """Depth-of-field denominator is non-positive (non-physical setup)."""


class BehindCameraError(OpticsError):
    """Point to project has non-positive depth."""


class SingularCalibrationError(OpticsError):
    """Calibration matrix is not invertible."""


@dataclass(frozen=True)
class CameraSensorSpec:
    """Fixed sensor/lens-mount constants of one camera body.

    ``beta_x``/``beta_y`` are the pixel-per-millimeter scale factors of the
    sensor.  The physical sensor size is derived from them so the identity
    ``beta = image_size / sensor_size`` holds exactly; use
    :meth:`from_sensor_size` when the datasheet gives millimeters instead.
    """

    image_width: float
    image_height: float
    beta_x: float
    beta_y: float
    principal_u: float
    principal_v: float
    skew: float = 0.0
    circle_of_confusion: float = 0.03  # mm

    def __post_init__(self) -> None:
        for name in ("image_width", "image_height", "beta_x", "beta_y",
                     "circle_of_confusion"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def sensor_width(self) -> float:
        """Sensor width in millimeters."""
        return self.image_width / self.beta_x

    @property
    def sensor_height(self) -> float:
        """Sensor height in millimeters."""
        return self.image_height / self.beta_y

    @classmethod
    def from_sensor_size(cls, image_width: float, image_height: float,
                         sensor_width_mm: float, sensor_height_mm: float,
                         principal_u: float, principal_v: float,
                         skew: float = 0.0,
                         circle_of_confusion: float = 0.03,
                         ) -> "CameraSensorSpec":
        """Build a spec from physical sensor dimensions in millimeters."""
        if sensor_width_mm <= 0.0 or sensor_height_mm <= 0.0:
            raise ValueError("sensor dimensions must be strictly positive")
        return cls(
            image_width=image_width,
            image_height=image_height,
            beta_x=image_width / sensor_width_mm,
            beta_y=image_height / sensor_height_mm,
            principal_u=principal_u,
            principal_v=principal_v,
            skew=skew,
            circle_of_confusion=circle_of_confusion,
        )


@dataclass(frozen=True)
class IntrinsicState:
    """Controllable lens state: focal length (mm), focus distance (m),
    aperture (f-stop)."""

    focal_length: float
    focus_distance: float
    aperture: float

    def __post_init__(self) -> None:
        if self.focal_length <= 0.0:
            raise ValueError("focal_length must be strictly positive")
        if self.focus_distance <= 0.0:
            raise ValueError("focus_distance must be strictly positive")
        if self.aperture <= 0.0:
            raise ValueError("aperture must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.focal_length, self.focus_distance, self.aperture])


@dataclass(frozen=True)
class DepthOfField:
    """Sharpness interval of a lens configuration, all in meters.

    ``far_distance`` may be :data:`INFINITE_FAR` when focusing at or beyond
    the hyperfocal distance.
    """

    hyperfocal: float
    near_distance: float
    far_distance: float

    @property
    def far_is_infinite(self) -> bool:
        return math.isinf(self.far_distance)


def hyperfocal(intr: IntrinsicState, spec: CameraSensorSpec) -> float:
    """Hyperfocal distance in meters: f^2 / (A c) + f, evaluated in mm."""
    f = intr.focal_length
    h_mm = f * f / (intr.aperture * spec.circle_of_confusion) + f
    return mm_to_m(h_mm)


def depth_of_field(intr: IntrinsicState,
                   spec: CameraSensorSpec) -> DepthOfField:
    """Near and far sharpness limits for the given lens state.

    Focusing at or beyond the hyperfocal distance makes the far limit
    infinite; that case is reported via :data:`INFINITE_FAR`, not as a
    float overflow.
    """
    h = hyperfocal(intr, spec)
    f_m = mm_to_m(intr.focal_length)
    focus = intr.focus_distance

    denom_near = h + focus - 2.0 * f_m
    if denom_near <= 0.0:
        raise SingularDofError(
            f"H + F - 2f = {denom_near:.6g} <= 0 for f={intr.focal_length} mm,"
            f" F={focus} m, A={intr.aperture}")

    numer = focus * (h - f_m)
    near = numer / denom_near
    far = INFINITE_FAR if focus >= h else numer / (h - focus)
    return DepthOfField(hyperfocal=h, near_distance=near, far_distance=far)


def calibration_matrix(intr: IntrinsicState,
                       spec: CameraSensorSpec) -> np.ndarray:
    """3x3 pinhole calibration matrix with the focal length in millimeters."""
    f = intr.focal_length
    return np.array([
        [spec.beta_x * f, spec.skew, spec.principal_u],
        [0.0, spec.beta_y * f, spec.principal_v],
        [0.0, 0.0, 1.0],
    ])


def project(rel_pos: np.ndarray, k_matrix: np.ndarray) -> np.ndarray:
    """Project a camera-frame point (meters, z forward) to a pixel pair."""
    rel_pos = np.asarray(rel_pos, dtype=float)
    depth = rel_pos[2]
    if depth <= 0.0:
        raise BehindCameraError(f"point depth {depth} is not positive")
    homogeneous = k_matrix @ rel_pos
    return homogeneous[:2] / depth


def back_project(pixel: np.ndarray, depth: float,
                 k_matrix: np.ndarray) -> np.ndarray:
    """Invert :func:`project`: pixel + depth -> camera-frame point."""
    if depth <= 0.0:
        raise BehindCameraError(f"depth {depth} is not positive")
    if abs(np.linalg.det(k_matrix)) < 1e-12:
        raise SingularCalibrationError("calibration matrix is singular")
    pixel = np.asarray(pixel, dtype=float)
    homogeneous = np.array([pixel[0], pixel[1], 1.0])
    return depth * np.linalg.solve(k_matrix, homogeneous)
