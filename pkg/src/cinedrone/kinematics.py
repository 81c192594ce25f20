"""Discrete-time rig dynamics and inter-step command interpolation.

The drone/gimbal mount orientation is stored as a rotation matrix in the
ROS-style body convention (x forward, y left, z up) over a z-up world, so a
level mount looking along world +x is the identity and roll/pitch/yaw bounds
read naturally.  The optical axes used for projection (x right, y down,
z forward) are reached through the fixed :data:`BODY_TO_CAMERA` rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optics import IntrinsicState

#: Columns are the camera axes (right, down, forward) in body coordinates.
BODY_TO_CAMERA = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])
BODY_TO_CAMERA.setflags(write=False)

_ORTHONORMAL_TOL = 1e-9
_REORTHONORMALIZE_TOL = 1e-12


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector (cross-product operator)."""
    wx, wy, wz = w
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues closed form of the rotation exponential."""
    theta = float(np.linalg.norm(w))
    k = hat(w)
    if theta < 1e-8:
        # second-order series; exact enough below the branch point
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix."""
    trace = float(np.trace(rotation))
    cos_theta = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    theta = math.acos(cos_theta)
    if theta < 1e-8:
        # first-order: R ~ I + w^
        return np.array([
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]) * 0.5
    if theta > math.pi - 1e-6:
        # the antisymmetric part degenerates near pi; recover the axis
        # from the dominant column of R + I, sign from the residue
        m = rotation + np.eye(3)
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / np.linalg.norm(m[:, i])
        residue = np.array([
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ])
        if residue @ axis < 0.0:
            axis = -axis
        return axis * theta
    factor = theta / (2.0 * math.sin(theta))
    return factor * np.array([
        rotation[2, 1] - rotation[1, 2],
        rotation[0, 2] - rotation[2, 0],
        rotation[1, 0] - rotation[0, 1],
    ])


def hat_batch(w: np.ndarray) -> np.ndarray:
    """Skew matrices of a stack of 3-vectors: (n, 3) -> (n, 3, 3)."""
    out = np.zeros((len(w), 3, 3))
    out[:, 0, 1] = -w[:, 2]
    out[:, 0, 2] = w[:, 1]
    out[:, 1, 0] = w[:, 2]
    out[:, 1, 2] = -w[:, 0]
    out[:, 2, 0] = -w[:, 1]
    out[:, 2, 1] = w[:, 0]
    return out


def so3_exp_batch(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula over a stack of rotation vectors; bitwise
    identical to mapping :func:`so3_exp` row by row."""
    theta = np.linalg.norm(w, axis=1)
    k = hat_batch(w)
    k2 = k @ k
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    return np.eye(3) + a[:, None, None] * k + b[:, None, None] * k2


def so3_right_jacobian_batch(w: np.ndarray) -> np.ndarray:
    """Right Jacobians over a stack of rotation vectors."""
    theta = np.linalg.norm(w, axis=1)
    k = hat_batch(w)
    k2 = k @ k
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    t2 = safe * safe
    a = np.where(small, 0.5, (1.0 - np.cos(safe)) / t2)
    b = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / (t2 * safe))
    return np.eye(3) - a[:, None, None] * k + b[:, None, None] * k2


def so3_right_jacobian(w: np.ndarray) -> np.ndarray:
    """Right Jacobian of the exponential map:
    exp((w + dw)^) ~ exp(w^) exp((J_r(w) dw)^)."""
    theta = float(np.linalg.norm(w))
    k = hat(w)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * k + (1.0 / 6.0) * (k @ k)
    t2 = theta * theta
    a = (1.0 - math.cos(theta)) / t2
    b = (theta - math.sin(theta)) / (t2 * theta)
    return np.eye(3) - a * k + b * (k @ k)


def project_to_so3(matrix: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) via polar decomposition."""
    u, _, vt = np.linalg.svd(matrix)
    rotation = u @ vt
    if np.linalg.det(rotation) < 0.0:
        u[:, -1] = -u[:, -1]
        rotation = u @ vt
    return rotation


def rotation_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X Euler angles to rotation matrix (yaw about z, then pitch, roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rpy_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Z-Y-X Euler angles (roll, pitch, yaw) of a rotation matrix."""
    pitch = -math.asin(min(1.0, max(-1.0, rotation[2, 0])))
    roll = math.atan2(rotation[2, 1], rotation[2, 2])
    yaw = math.atan2(rotation[1, 0], rotation[0, 0])
    return np.array([roll, pitch, yaw])


def _readonly(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def _check_rotation(rotation: np.ndarray) -> None:
    drift = np.linalg.norm(rotation.T @ rotation - np.eye(3))
    det = np.linalg.det(rotation)
    if drift > _ORTHONORMAL_TOL or abs(det - 1.0) > _ORTHONORMAL_TOL:
        raise ValueError(
            f"orientation is not a rotation: |R^T R - I|={drift:.3g},"
            f" det={det:.12g}")


@dataclass(frozen=True, eq=False)
class DroneState:
    """Mount pose: position (m), velocity (m/s), body orientation matrix."""

    position: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _readonly(self.position))
        object.__setattr__(self, "velocity", _readonly(self.velocity))
        object.__setattr__(self, "orientation", _readonly(self.orientation))
        _check_rotation(self.orientation)

    @property
    def rpy(self) -> np.ndarray:
        return rpy_from_rotation(self.orientation)


@dataclass(frozen=True, eq=False)
class DroneInput:
    """Acceleration (m/s^2) and gimbal angular velocity (rad/s)."""

    acceleration: np.ndarray
    angular_velocity: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "acceleration",
                           _readonly(self.acceleration))
        object.__setattr__(self, "angular_velocity",
                           _readonly(self.angular_velocity))


@dataclass(frozen=True)
class IntrinsicInput:
    """Lens actuation rates: focal (mm/s), focus (m/s), aperture (f-stop/s)."""

    focal_rate: float
    focus_rate: float
    aperture_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.focal_rate, self.focus_rate,
                         self.aperture_rate])


@dataclass(frozen=True)
class CameraRig:
    """Joint mount + lens state at one control step."""

    drone: DroneState
    intrinsics: IntrinsicState
    time_index: int = 0

    def camera_rotation(self) -> np.ndarray:
        """Optical-axes matrix (columns: right, down, forward in world)."""
        return self.drone.orientation @ BODY_TO_CAMERA

    def camera_frame(self, world_point: np.ndarray) -> np.ndarray:
        """Express a world point in the optical frame of this rig."""
        return self.camera_rotation().T @ (
            np.asarray(world_point, dtype=float) - self.drone.position)


def _raw_state(position: np.ndarray, velocity: np.ndarray,
               orientation: np.ndarray) -> DroneState:
    # internal fast path: the step functions produce states that satisfy
    # the invariants by construction, so skip re-validation
    state = object.__new__(DroneState)
    object.__setattr__(state, "position", position)
    object.__setattr__(state, "velocity", velocity)
    object.__setattr__(state, "orientation", orientation)
    return state


def step_translation(state: DroneState, inp: DroneInput,
                     dt: float) -> DroneState:
    """Double-integrator step; position advances with the pre-update
    velocity."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return _raw_state(state.position + dt * state.velocity,
                      state.velocity + dt * inp.acceleration,
                      state.orientation)


def step_rotation(state: DroneState, inp: DroneInput,
                  dt: float) -> DroneState:
    """Advance orientation at constant angular velocity for dt seconds."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    rotation = state.orientation @ so3_exp(dt * inp.angular_velocity)
    drift = np.linalg.norm(rotation.T @ rotation - np.eye(3))
    if drift > _REORTHONORMALIZE_TOL:
        rotation = project_to_so3(rotation)
    return _raw_state(state.position, state.velocity, rotation)


def step_intrinsics(intr: IntrinsicState, inp: IntrinsicInput,
                    dt: float) -> IntrinsicState:
    """Single-integrator lens step.  Bounds are a constraint concern and are
    deliberately not clamped here."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return IntrinsicState(
        focal_length=intr.focal_length + dt * inp.focal_rate,
        focus_distance=intr.focus_distance + dt * inp.focus_rate,
        aperture=intr.aperture + dt * inp.aperture_rate,
    )


def step_rig(rig: CameraRig, drone_input: DroneInput,
             intr_input: IntrinsicInput, dt: float) -> CameraRig:
    """Advance the full rig one control period."""
    drone = step_rotation(step_translation(rig.drone, drone_input, dt),
                          drone_input, dt)
    return CameraRig(
        drone=drone,
        intrinsics=step_intrinsics(rig.intrinsics, intr_input, dt),
        time_index=rig.time_index + 1,
    )


def rollout(initial: CameraRig, inputs: list[tuple[DroneInput,
                                                   IntrinsicInput]],
            dt: float) -> list[CameraRig]:
    """Roll the dynamics forward; returns len(inputs) + 1 rigs, each
    produced by exactly one :func:`step_rig` application."""
    rigs = [initial]
    for drone_input, intr_input in inputs:
        rigs.append(step_rig(rigs[-1], drone_input, intr_input, dt))
    return rigs


def _lerp_clipped(a: np.ndarray, b: np.ndarray, frac: float) -> np.ndarray:
    # convex combination, clipped so floating point can never overshoot
    # the closed interval of the endpoints
    value = (1.0 - frac) * np.asarray(a) + frac * np.asarray(b)
    return np.clip(value, np.minimum(a, b), np.maximum(a, b))


def interpolate_commands(start: CameraRig, end: CameraRig,
                         substeps: int) -> list[CameraRig]:
    """Split one control command into ``substeps`` intermediate set-points.

    Scalars interpolate linearly, the orientation along its geodesic, so no
    set-point ever oversteps the commanded segment.  The final set-point is
    exactly ``end``.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    delta_rotation = so3_log(start.drone.orientation.T
                             @ end.drone.orientation)
    start_intr = start.intrinsics.as_array()
    end_intr = end.intrinsics.as_array()

    points: list[CameraRig] = []
    for i in range(1, substeps):
        frac = i / substeps
        drone = DroneState(
            position=_lerp_clipped(start.drone.position,
                                   end.drone.position, frac),
            velocity=_lerp_clipped(start.drone.velocity,
                                   end.drone.velocity, frac),
            orientation=start.drone.orientation
            @ so3_exp(frac * delta_rotation),
        )
        intr = _lerp_clipped(start_intr, end_intr, frac)
        points.append(CameraRig(
            drone=drone,
            intrinsics=IntrinsicState(*intr),
            time_index=end.time_index,
        ))
    points.append(end)
    return points
