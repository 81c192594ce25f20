"""Feasibility inequalities for the planner: g(...) >= 0.

Covers input and state box bounds, the collision safety distance, and the
image-plane occlusion-separation constraints.  Occlusion constraints are
activated once per planning instance from the bounding-box configuration at
the solve time and held fixed across solver iterations, which keeps the
problem smooth instead of mixed-integer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import BODY_TO_CAMERA, CameraRig, rpy_from_rotation
from .objectives import StageGradient, TargetPrediction
from .optics import BehindCameraError, CameraSensorSpec

#: Residuals below this count as violations; smaller negatives are noise.
VIOLATION_TOL = -1e-9


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned image box, y down: left-top <= right-bottom."""

    x_lt: float
    y_lt: float
    x_rb: float
    y_rb: float

    def contains(self, pixel: np.ndarray) -> bool:
        return (self.x_lt <= pixel[0] <= self.x_rb
                and self.y_lt <= pixel[1] <= self.y_rb)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Bounds and scene-safety parameters for one platform/scenario.

    Array bounds are ordered: drone input (accel xyz, angular velocity xyz),
    lens input (focal/focus/aperture rates), position, velocity, roll/pitch/
    yaw, lens state (focal mm, focus m, aperture).
    """

    drone_input_low: np.ndarray
    drone_input_high: np.ndarray
    intr_input_low: np.ndarray
    intr_input_high: np.ndarray
    position_low: np.ndarray
    position_high: np.ndarray
    velocity_low: np.ndarray
    velocity_high: np.ndarray
    rpy_low: np.ndarray
    rpy_high: np.ndarray
    intr_low: np.ndarray
    intr_high: np.ndarray
    safety_distance: float = 0.0
    occlusion_enabled: bool = False
    epsilon_slack: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("drone_input", "intr_input", "position", "velocity",
                     "rpy", "intr"):
            low = np.asarray(getattr(self, name + "_low"), dtype=float)
            high = np.asarray(getattr(self, name + "_high"), dtype=float)
            if low.shape != high.shape:
                raise ValueError(f"{name} bounds have mismatched shapes")
            if np.any(low > high):
                raise ValueError(f"{name} lower bound exceeds upper bound")
            object.__setattr__(self, name + "_low", low)
            object.__setattr__(self, name + "_high", high)
        if self.safety_distance < 0.0:
            raise ValueError("safety_distance must be >= 0")

    @classmethod
    def default(cls) -> "ConstraintSet":
        """Stock simulation bounds: a gentle cinematography platform."""
        return cls(
            drone_input_low=np.array([-1.0] * 3 + [-0.25] * 3),
            drone_input_high=np.array([1.0] * 3 + [0.25] * 3),
            intr_input_low=np.array([-7.0, -15.0, -3.0]),
            intr_input_high=np.array([7.0, 15.0, 3.0]),
            position_low=np.full(3, -30.0),
            position_high=np.full(3, 30.0),
            velocity_low=np.full(3, -40.0),
            velocity_high=np.full(3, 40.0),
            rpy_low=np.full(3, -0.25),
            rpy_high=np.full(3, 0.25),
            intr_low=np.array([15.0, 4.0, 1.2]),
            intr_high=np.array([500.0, 2000.0, 22.0]),
        )


@dataclass(frozen=True)
class OcclusionRecord:
    """Frozen image-plane ordering of one target pair at solve time.

    While active, the planner must keep the right-hand box's left edge to
    the right of the left-hand box's right edge.
    """

    left_id: str
    right_id: str
    active: bool


def predict_bounding_box(rig: CameraRig, pred: TargetPrediction, step: int,
                         height: float, width: float,
                         spec: CameraSensorSpec) -> PixelBox:
    """Project a world-vertical box around a target center to pixel corners.

    The half extents are applied in the image axes at the center's depth,
    so the box stays axis-aligned in the image.
    """
    center = pred.point_position(step, "center")
    q = rig.camera_frame(center)
    if q[2] <= 0.0:
        raise BehindCameraError(f"target center depth {q[2]:.4g}")
    f_mm = rig.intrinsics.focal_length
    u = (spec.beta_x * f_mm * q[0] + spec.skew * q[1]) / q[2] \
        + spec.principal_u
    v = spec.beta_y * f_mm * q[1] / q[2] + spec.principal_v
    half_w = spec.beta_x * f_mm * (width / 2.0) / q[2]
    half_h = spec.beta_y * f_mm * (height / 2.0) / q[2]
    return PixelBox(x_lt=u - half_w, y_lt=v - half_h,
                    x_rb=u + half_w, y_rb=v + half_h)


def boxes_vertically_overlap(box_a: PixelBox, box_b: PixelBox) -> bool:
    return box_a.y_lt < box_b.y_rb and box_b.y_lt < box_a.y_rb


def occlusion_activation(box_first: PixelBox, box_second: PixelBox,
                         first_id: str, second_id: str) -> OcclusionRecord:
    """Decide whether to keep the pair horizontally separated.

    Active exactly when the vertical pixel intervals overlap and the second
    box is strictly to the right of the first: two vertically conflicting
    targets that are still separated must not cross in the image.
    """
    active = (boxes_vertically_overlap(box_first, box_second)
              and box_second.x_lt > box_first.x_rb)
    return OcclusionRecord(left_id=first_id, right_id=second_id,
                           active=active)


def activate_occlusions(rig: CameraRig, preds: dict[str, TargetPrediction],
                        sizes: dict[str, tuple[float, float]],
                        spec: CameraSensorSpec) -> list[OcclusionRecord]:
    """Evaluate the activation predicate for every ordered visible pair."""
    boxes: dict[str, PixelBox] = {}
    for tid, pred in preds.items():
        if tid not in sizes:
            continue
        height, width = sizes[tid]
        try:
            boxes[tid] = predict_bounding_box(rig, pred, 0, height, width,
                                              spec)
        except BehindCameraError:
            continue
    records = []
    ids = sorted(boxes)
    for i, first in enumerate(ids):
        for second in ids[i + 1:]:
            for a, b in ((first, second), (second, first)):
                record = occlusion_activation(boxes[a], boxes[b], a, b)
                if record.active:
                    records.append(record)
    return records


def separation_residual(rig: CameraRig, preds: dict[str, TargetPrediction],
                        sizes: dict[str, tuple[float, float]],
                        record: OcclusionRecord, step: int,
                        spec: CameraSensorSpec,
                        grads: StageGradient | None = None) -> float:
    """Signed pixel gap between the right box's left edge and the left
    box's right edge; feasible when >= 0.

    Optionally accumulates the analytic gradient with respect to the rig
    state into ``grads``.
    """
    f_mm = rig.intrinsics.focal_length
    r_cam = rig.camera_rotation()
    p_d = rig.drone.position
    edges = []
    for tid, sign in ((record.right_id, -1.0), (record.left_id, +1.0)):
        height, width = sizes[tid]
        center = preds[tid].point_position(step, "center")
        rel = center - p_d
        q = r_cam.T @ rel
        qz = max(q[2], 1e-6)
        bxf = spec.beta_x * f_mm
        u = (bxf * q[0] + spec.skew * q[1]) / qz + spec.principal_u
        half_w = bxf * (width / 2.0) / qz
        edge = u + sign * half_w
        edges.append(edge)
        if grads is not None:
            # residual = edge(right) - edge(left): right enters +, left -
            outer_sign = 1.0 if sign < 0.0 else -1.0
            du_dq = np.array([bxf / qz, spec.skew / qz,
                              -(bxf * q[0] + spec.skew * q[1]) / (qz * qz)])
            dhw_dq = np.array([0.0, 0.0, -half_w / qz])
            g_q = outer_sign * (du_dq + sign * dhw_dq)
            grads.position -= r_cam @ g_q
            grads.rotation += np.outer(rel, g_q) @ BODY_TO_CAMERA.T
            grads.intrinsics[0] += outer_sign * (
                spec.beta_x * q[0] / qz
                + sign * spec.beta_x * (width / 2.0) / qz)
    return edges[0] - edges[1]


def separation_pieces(positions: np.ndarray, cam_rotations: np.ndarray,
                      f_mm: np.ndarray, preds: dict[str, TargetPrediction],
                      sizes: dict[str, tuple[float, float]],
                      record: OcclusionRecord, start_step: int,
                      spec: CameraSensorSpec,
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                 np.ndarray]:
    """Stacked :func:`separation_residual` over consecutive steps.

    Returns (residuals, d/d position, d/d rotation, d/d focal) for steps
    ``start_step .. start_step + len(positions) - 1``; the caller scales
    the gradient pieces by its penalty slopes.
    """
    n = len(positions)
    steps = slice(start_step, start_step + n)
    residual = np.zeros(n)
    d_pos = np.zeros((n, 3))
    d_rot = np.zeros((n, 3, 3))
    d_f = np.zeros(n)
    for tid, sign in ((record.right_id, -1.0), (record.left_id, +1.0)):
        outer_sign = 1.0 if sign < 0.0 else -1.0
        width = sizes[tid][1]
        pred = preds[tid]
        centers = pred.positions[steps] + np.einsum(
            "kij,j->ki", pred.rotations[steps], pred.anchors["center"])
        rel = centers - positions
        q = np.einsum("kji,kj->ki", cam_rotations, rel)
        qz = np.maximum(q[:, 2], 1e-6)
        bxf = spec.beta_x * f_mm
        u_num = bxf * q[:, 0] + spec.skew * q[:, 1]
        u = u_num / qz + spec.principal_u
        half_w = bxf * (width / 2.0) / qz
        residual += outer_sign * (u + sign * half_w)

        g_q = np.empty((n, 3))
        g_q[:, 0] = bxf / qz
        g_q[:, 1] = spec.skew / qz
        g_q[:, 2] = -(u_num + sign * bxf * (width / 2.0)) / (qz * qz)
        g_q *= outer_sign
        d_pos -= np.einsum("kij,kj->ki", cam_rotations, g_q)
        d_rot += np.einsum("ki,kj->kij", rel, g_q) @ BODY_TO_CAMERA.T
        d_f += outer_sign * (spec.beta_x * q[:, 0]
                             + sign * spec.beta_x * (width / 2.0)) / qz
    return residual, d_pos, d_rot, d_f


def state_bound_residuals(rig: CameraRig, cset: ConstraintSet) -> np.ndarray:
    """Stacked state-box residuals for one rig: x - lo, hi - x."""
    rpy = rpy_from_rotation(rig.drone.orientation)
    state = np.concatenate([
        rig.drone.position, rig.drone.velocity, rpy,
        rig.intrinsics.as_array(),
    ])
    low = np.concatenate([cset.position_low, cset.velocity_low,
                          cset.rpy_low, cset.intr_low])
    high = np.concatenate([cset.position_high, cset.velocity_high,
                           cset.rpy_high, cset.intr_high])
    return np.concatenate([state - low, high - state])


def input_bound_residuals(drone_input, intr_input,
                          cset: ConstraintSet) -> np.ndarray:
    u = np.concatenate([drone_input.acceleration,
                        drone_input.angular_velocity,
                        intr_input.as_array()])
    low = np.concatenate([cset.drone_input_low, cset.intr_input_low])
    high = np.concatenate([cset.drone_input_high, cset.intr_input_high])
    return np.concatenate([u - low, high - u])


def evaluate_constraints(inputs, rollout: list[CameraRig],
                         preds: dict[str, TargetPrediction],
                         sizes: dict[str, tuple[float, float]],
                         cset: ConstraintSet,
                         records: list[OcclusionRecord],
                         spec: CameraSensorSpec) -> np.ndarray:
    """Stack every inequality residual of a candidate plan.

    Feasibility requires all entries >= 0 (up to :data:`VIOLATION_TOL`).
    Order: input boxes per step, state boxes per state, collision distances
    per target and state, occlusion separations per record and state.
    """
    parts = [input_bound_residuals(di, ii, cset) for di, ii in inputs]
    parts += [state_bound_residuals(rig, cset) for rig in rollout]
    for tid, pred in preds.items():
        for k, rig in enumerate(rollout):
            dist = float(np.linalg.norm(pred.positions[k]
                                        - rig.drone.position))
            parts.append(np.array([dist - cset.safety_distance]))
    for record in records:
        if not record.active:
            continue
        for k, rig in enumerate(rollout):
            parts.append(np.array([separation_residual(
                rig, preds, sizes, record, k, spec)]))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)
