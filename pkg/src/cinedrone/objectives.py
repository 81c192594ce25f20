"""Cinematographic objective terms and their horizon sums.

Four weighted terms are evaluated per control step: depth-of-field tracking,
image composition, relative camera-target pose, and focal-length tracking.
Analytic gradients with respect to the stacked input sequence are provided
for the planner; they are chained through the rig dynamics with a backward
(adjoint) pass.

Desired values may be expressed relative to a target (distance offsets) or
as time schedules (focal ramps); call :meth:`Instructions.resolve` before
evaluating costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import (BODY_TO_CAMERA, CameraRig, DroneInput,
                         IntrinsicInput, so3_exp_batch,
                         so3_right_jacobian_batch)
from .optics import (BehindCameraError, CameraSensorSpec, IntrinsicState,
                     SingularDofError, hyperfocal, mm_to_m)

#: Depth below which the in-planner projection switches to a smooth barrier.
BARRIER_DEPTH = 0.1
#: Weight of the barrier penalty on the depth shortfall.
BARRIER_GAIN = 1e4
#: In-planner smoothing of the rotation norm's kink at zero; the smoothed
#: value differs from the exact norm by at most this amount.
ROTATION_NORM_EPS = 1e-3
#: Slope of the in-planner surrogate used where the far limit is infinite
#: but a finite one is requested; steers the focus back below hyperfocal.
_FAR_BARRIER = 1e9

_ZERO3 = np.zeros(3)


@dataclass(frozen=True)
class RelativeDistance:
    """A distance expressed as 'current camera-target distance + offset'."""

    target_id: str
    offset: float


@dataclass(frozen=True)
class FocalSchedule:
    """Piecewise-linear desired focal length over absolute time, clamped at
    the ends."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("schedule needs matching, nonempty breakpoints")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("schedule times must be strictly increasing")

    @classmethod
    def constant(cls, value_mm: float) -> "FocalSchedule":
        return cls(times=(0.0,), values=(value_mm,))

    def value_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class DofTarget:
    """Desired near/far sharpness limits with their weights.

    ``near``/``far`` may be absolute meters, :class:`RelativeDistance`, or
    ``math.inf`` for 'sharp to infinity' (which disables the far term).
    """

    near: float | RelativeDistance | None = None
    far: float | RelativeDistance | None = None
    w_near: float = 0.0
    w_far: float = 0.0

    def __post_init__(self) -> None:
        if self.w_near < 0.0 or self.w_far < 0.0:
            raise ValueError("depth-of-field weights must be >= 0")


@dataclass(frozen=True)
class CompositionTarget:
    """Place a named target point at a desired pixel; per-axis weights."""

    target_id: str
    point_id: str
    pixel: tuple[float, float]
    weight: tuple[float, float]

    def __post_init__(self) -> None:
        if min(self.weight) < 0.0:
            raise ValueError("composition weights must be >= 0")


@dataclass(frozen=True, eq=False)
class PoseTarget:
    """Desired camera-target distance and relative mount rotation.

    ``rotation`` is compared against the transpose of the relative rotation
    (mount-to-target); configs store this desired matrix directly.
    """

    target_id: str
    distance: float | None = None
    w_distance: float = 0.0
    rotation: np.ndarray | None = None
    w_rotation: float = 0.0

    def __post_init__(self) -> None:
        if self.w_distance < 0.0 or self.w_rotation < 0.0:
            raise ValueError("pose weights must be >= 0")
        if self.rotation is not None:
            rot = np.array(self.rotation, dtype=float)
            if np.linalg.norm(rot.T @ rot - np.eye(3)) > 1e-6:
                raise ValueError("desired relative rotation is not in SO(3)")
            rot.setflags(write=False)
            object.__setattr__(self, "rotation", rot)


@dataclass(frozen=True)
class FocalTarget:
    """Desired focal length (possibly a ramp) and its weight."""

    schedule: FocalSchedule | None = None
    weight: float = 0.0

    def __post_init__(self) -> None:
        if self.weight < 0.0:
            raise ValueError("focal weight must be >= 0")


@dataclass(frozen=True)
class Instructions:
    """One sequence worth of recording set-points.

    ``focal_steps`` holds the per-horizon-step desired focal length after
    :meth:`resolve`; cost evaluation requires resolved instructions unless
    every time-varying / target-relative form is absent.
    """

    dof: DofTarget = DofTarget()
    composition: tuple[CompositionTarget, ...] = ()
    poses: tuple[PoseTarget, ...] = ()
    focal: FocalTarget = FocalTarget()
    focal_steps: tuple[float, ...] | None = None

    def resolve(self, t0: float, dt: float, n_steps: int,
                distances: dict[str, float] | None = None) -> "Instructions":
        """Materialize schedules and target-relative distances.

        ``distances`` maps target ids to the current estimated camera-target
        distance; required only when a dof limit is target-relative.
        """
        def materialize(limit):
            if isinstance(limit, RelativeDistance):
                if distances is None or limit.target_id not in distances:
                    raise KeyError(
                        f"no current distance for target '{limit.target_id}'")
                return distances[limit.target_id] + limit.offset
            return limit

        dof = replace(self.dof, near=materialize(self.dof.near),
                      far=materialize(self.dof.far))
        steps = None
        if self.focal.schedule is not None:
            steps = tuple(self.focal.schedule.value_at(t0 + k * dt)
                          for k in range(n_steps + 1))
        return replace(self, dof=dof, focal_steps=steps)

    def focal_value(self, step: int) -> float:
        if self.focal_steps is not None:
            return self.focal_steps[min(step, len(self.focal_steps) - 1)]
        schedule = self.focal.schedule
        if schedule is None:
            raise ValueError("no desired focal length configured")
        if len(schedule.times) > 1:
            raise ValueError("time-varying focal target: call resolve() first")
        return schedule.values[0]

    def _dof_limit(self, limit, name: str):
        if isinstance(limit, RelativeDistance):
            raise ValueError(
                f"target-relative {name} limit: call resolve() first")
        return limit


@dataclass(eq=False)
class TargetPrediction:
    """Predicted world track of one target over the horizon.

    ``positions`` follow the tracked reference point of the target;
    ``anchors`` are body-frame offsets from that point for each named
    point of interest (the reserved key ``"center"`` locates the physical
    center used for bounding boxes).
    """

    positions: np.ndarray
    rotations: np.ndarray
    anchors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be (n, 3)")
        if self.rotations.shape != (len(self.positions), 3, 3):
            raise ValueError("rotations must be (n, 3, 3)")
        for rot in self.rotations:
            if np.linalg.norm(rot.T @ rot - np.eye(3)) > 1e-6:
                raise ValueError("prediction rotation is not in SO(3)")
        self.anchors = {name: np.asarray(off, dtype=float)
                        for name, off in self.anchors.items()}
        self.anchors.setdefault("center", np.zeros(3))

    def __len__(self) -> int:
        return len(self.positions)

    def point_position(self, step: int, point_id: str) -> np.ndarray:
        """World position of a named point at the given horizon step."""
        return (self.positions[step]
                + self.rotations[step] @ self.anchors[point_id])


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    """Per-step values of the four cost terms over a horizon."""

    dof: np.ndarray
    image: np.ndarray
    pose: np.ndarray
    focal: np.ndarray

    @property
    def step_totals(self) -> np.ndarray:
        return self.dof + self.image + self.pose + self.focal

    @property
    def total(self) -> float:
        return float(np.sum(self.step_totals))


class StageGradient:
    """Gradient of a scalar with respect to one rig state (used as a
    scratch accumulator for per-stage constraint terms)."""

    __slots__ = ("position", "velocity", "rotation", "intrinsics")

    def __init__(self) -> None:
        self.position = np.zeros(3)
        self.velocity = np.zeros(3)
        self.rotation = np.zeros((3, 3))
        self.intrinsics = np.zeros(3)


class HorizonGradients:
    """Stacked gradients of the accumulated cost w.r.t. every rig state."""

    __slots__ = ("position", "velocity", "rotation", "intrinsics")

    def __init__(self, n: int) -> None:
        self.position = np.zeros((n, 3))
        self.velocity = np.zeros((n, 3))
        self.rotation = np.zeros((n, 3, 3))
        self.intrinsics = np.zeros((n, 3))

    def add_stage(self, k: int, stage: StageGradient,
                  scale: float = 1.0) -> None:
        self.position[k] += scale * stage.position
        self.velocity[k] += scale * stage.velocity
        self.rotation[k] += scale * stage.rotation
        self.intrinsics[k] += scale * stage.intrinsics


def _dof_vec(intr: np.ndarray, spec: CameraSensorSpec, instr: Instructions,
             barrier: bool, grads: HorizonGradients | None) -> np.ndarray:
    n = len(intr)
    dof = instr.dof
    near_star = instr._dof_limit(dof.near, "near")
    far_star = instr._dof_limit(dof.far, "far")
    near_active = dof.w_near > 0.0 and near_star is not None
    far_active = (dof.w_far > 0.0 and far_star is not None
                  and math.isfinite(far_star))
    cost = np.zeros(n)
    if not near_active and not far_active:
        return cost

    f_mm, focus, aperture = intr[:, 0], intr[:, 1], intr[:, 2]
    c_m = mm_to_m(spec.circle_of_confusion)
    f_m = f_mm / 1000.0
    h = f_m * f_m / (aperture * c_m) + f_m
    dh_df_m = 2.0 * f_m / (aperture * c_m) + 1.0
    dh_da = -f_m * f_m / (aperture * aperture * c_m)

    denom = h + focus - 2.0 * f_m
    if np.any(denom <= 0.0):
        raise SingularDofError(
            f"H + F - 2f = {denom.min():.6g} <= 0")
    h_f = h - f_m

    if near_active:
        near = focus * h_f / denom
        err = near - near_star
        cost += dof.w_near * err * err
        if grads is not None:
            dn_dh = focus * (focus - f_m) / (denom * denom)
            dn_df_direct = focus * (h - focus) / (denom * denom)
            dn_dfocus = h_f * (h - 2.0 * f_m) / (denom * denom)
            scale = 2.0 * dof.w_near * err
            grads.intrinsics[:, 0] += scale * (dn_dh * dh_df_m
                                               + dn_df_direct) / 1000.0
            grads.intrinsics[:, 1] += scale * dn_dfocus
            grads.intrinsics[:, 2] += scale * dn_dh * dh_da
    if far_active:
        infinite = focus >= h
        if np.any(infinite) and not barrier:
            cost[infinite] = math.inf
        finite = ~infinite
        h_focus = np.where(finite, h - focus, 1.0)
        far = focus * h_f / h_focus
        err = far - far_star
        term = dof.w_far * err * err
        cost += np.where(finite, term, 0.0)
        if barrier and np.any(infinite):
            # sloped surrogate where the far limit went infinite: steers
            # the focus back below the hyperfocal distance
            over = focus - h
            cost += np.where(infinite,
                             dof.w_far * _FAR_BARRIER * (1.0 + over), 0.0)
        if grads is not None:
            df_dh = focus * (f_m - focus) / (h_focus * h_focus)
            df_df_direct = -focus / h_focus
            df_dfocus = h_f * h / (h_focus * h_focus)
            scale = np.where(finite, 2.0 * dof.w_far * err, 0.0)
            g_f = scale * (df_dh * dh_df_m + df_df_direct) / 1000.0
            g_focus = scale * df_dfocus
            g_a = scale * df_dh * dh_da
            if barrier and np.any(infinite):
                bar = dof.w_far * _FAR_BARRIER
                g_f = g_f + np.where(infinite, -bar * dh_df_m / 1000.0, 0.0)
                g_focus = g_focus + np.where(infinite, bar, 0.0)
                g_a = g_a + np.where(infinite, -bar * dh_da, 0.0)
            grads.intrinsics[:, 0] += g_f
            grads.intrinsics[:, 1] += g_focus
            grads.intrinsics[:, 2] += g_a
    return cost


def _image_vec(positions: np.ndarray, cam_rotations: np.ndarray,
               f_mm: np.ndarray, point_tracks, spec: CameraSensorSpec,
               barrier: bool, grads: HorizonGradients | None) -> np.ndarray:
    n = len(positions)
    cost = np.zeros(n)
    for ct, points in point_tracks:
        w_u, w_v = ct.weight
        if w_u == 0.0 and w_v == 0.0:
            continue
        rel = points - positions
        q = np.einsum("kji,kj->ki", cam_rotations, rel)
        qz = q[:, 2]
        if barrier:
            clamped = qz < BARRIER_DEPTH
            qz_eff = np.where(clamped, BARRIER_DEPTH, qz)
        else:
            if np.any(qz <= 0.0):
                raise BehindCameraError(
                    f"composition point '{ct.point_id}' of target"
                    f" '{ct.target_id}' has depth {qz.min():.4g}")
            clamped = np.zeros(n, dtype=bool)
            qz_eff = qz

        bxf = spec.beta_x * f_mm
        byf = spec.beta_y * f_mm
        u_num = bxf * q[:, 0] + spec.skew * q[:, 1]
        u = u_num / qz_eff + spec.principal_u
        v = byf * q[:, 1] / qz_eff + spec.principal_v
        e_u = u - ct.pixel[0]
        e_v = v - ct.pixel[1]
        cost += w_u * e_u * e_u + w_v * e_v * e_v
        if np.any(clamped):
            shortfall = np.where(clamped, BARRIER_DEPTH - qz, 0.0)
            cost += BARRIER_GAIN * shortfall * shortfall

        if grads is not None:
            su = 2.0 * w_u * e_u
            sv = 2.0 * w_v * e_v
            g_q = np.empty((n, 3))
            g_q[:, 0] = su * bxf / qz_eff
            g_q[:, 1] = (su * spec.skew + sv * byf) / qz_eff
            g_q[:, 2] = np.where(
                clamped, 0.0,
                -(su * u_num + sv * byf * q[:, 1]) / (qz_eff * qz_eff))
            if np.any(clamped):
                g_q[:, 2] -= np.where(
                    clamped, 2.0 * BARRIER_GAIN * (BARRIER_DEPTH - qz), 0.0)
            grads.position -= np.einsum("kij,kj->ki", cam_rotations, g_q)
            grads.rotation += np.einsum(
                "ki,kj->kij", rel, g_q) @ BODY_TO_CAMERA.T
            grads.intrinsics[:, 0] += (su * spec.beta_x * q[:, 0]
                                       + sv * spec.beta_y * q[:, 1]) / qz_eff
    return cost


def _pose_vec(positions: np.ndarray, rotations: np.ndarray,
              pose_tracks, smooth: bool,
              grads: HorizonGradients | None) -> np.ndarray:
    n = len(positions)
    cost = np.zeros(n)
    for pt, target_positions, target_rotations in pose_tracks:
        if pt.w_distance > 0.0 and pt.distance is not None:
            diff = positions - target_positions
            dist = np.linalg.norm(diff, axis=1)
            err = dist - pt.distance
            cost += pt.w_distance * err * err
            if grads is not None:
                safe = np.maximum(dist, 1e-12)
                scale = np.where(dist > 1e-12,
                                 2.0 * pt.w_distance * err / safe, 0.0)
                grads.position += scale[:, None] * diff
        if pt.w_rotation > 0.0 and pt.rotation is not None:
            residual = np.einsum("kji,kjl->kil", target_rotations,
                                 rotations) - pt.rotation
            norm = np.sqrt(np.einsum("kij,kij->k", residual, residual))
            if smooth:
                root = np.sqrt(norm * norm + ROTATION_NORM_EPS ** 2)
                cost += pt.w_rotation * (root - ROTATION_NORM_EPS)
                if grads is not None:
                    grads.rotation += (pt.w_rotation / root)[:, None, None] \
                        * np.einsum("kij,kjl->kil", target_rotations,
                                    residual)
            else:
                cost += pt.w_rotation * norm
                if grads is not None:
                    safe = np.maximum(norm, 1e-12)
                    scale = np.where(norm > 1e-12, pt.w_rotation / safe, 0.0)
                    grads.rotation += scale[:, None, None] * np.einsum(
                        "kij,kjl->kil", target_rotations, residual)
    return cost


def _focal_vec(f_mm: np.ndarray, f_star: np.ndarray, weight: float,
               grads: HorizonGradients | None) -> np.ndarray:
    if weight == 0.0:
        return np.zeros(len(f_mm))
    err = f_mm - f_star
    if grads is not None:
        grads.intrinsics[:, 0] += 2.0 * weight * err
    return weight * err * err


def _point_tracks(preds: dict[str, TargetPrediction], instr: Instructions,
                  n: int):
    tracks = []
    for ct in instr.composition:
        pred = preds[ct.target_id]
        anchor = pred.anchors[ct.point_id]
        points = pred.positions[:n] + np.einsum(
            "kij,j->ki", pred.rotations[:n], anchor)
        tracks.append((ct, points))
    return tracks


def _pose_tracks(preds: dict[str, TargetPrediction], instr: Instructions,
                 n: int):
    return [(pt, preds[pt.target_id].positions[:n],
             preds[pt.target_id].rotations[:n]) for pt in instr.poses]


def dof_cost(intr: IntrinsicState, spec: CameraSensorSpec,
             instr: Instructions) -> float:
    """Squared tracking error of the near/far sharpness limits."""
    return float(_dof_vec(intr.as_array()[None, :], spec, instr, False,
                          None)[0])


def composition_cost(rig: CameraRig, preds: dict[str, TargetPrediction],
                     spec: CameraSensorSpec, instr: Instructions,
                     step: int = 0, barrier: bool = False) -> float:
    """Weighted squared pixel error of every composition point.

    With ``barrier=True`` (the planner's mode) points closer than
    :data:`BARRIER_DEPTH` are projected at that depth and penalized
    smoothly instead of raising :class:`BehindCameraError`.
    """
    tracks = [(ct, points[step:step + 1])
              for ct, points in _point_tracks(preds, instr, step + 1)]
    return float(_image_vec(rig.drone.position[None, :],
                            rig.camera_rotation()[None, :, :],
                            np.array([rig.intrinsics.focal_length]),
                            tracks, spec, barrier, None)[0])


def pose_cost(rig: CameraRig, preds: dict[str, TargetPrediction],
              instr: Instructions, step: int = 0) -> float:
    """Relative-pose error: Frobenius distance of the relative rotation's
    transpose to its set-point plus squared distance error."""
    tracks = [(pt, pos[step:step + 1], rot[step:step + 1])
              for pt, pos, rot in _pose_tracks(preds, instr, step + 1)]
    return float(_pose_vec(rig.drone.position[None, :],
                           rig.drone.orientation[None, :, :], tracks,
                           False, None)[0])


def focal_cost(intr: IntrinsicState, instr: Instructions,
               step: int = 0) -> float:
    """Squared focal-length tracking error."""
    if instr.focal.weight == 0.0:
        return 0.0
    return float(_focal_vec(np.array([intr.focal_length]),
                            np.array([instr.focal_value(step)]),
                            instr.focal.weight, None)[0])


class HorizonTracks:
    """Per-solve precomputed target data: composition point tracks, pose
    tracks and the per-step desired focal length.  None of it depends on
    the decision variables, so the planner builds it once per instance."""

    __slots__ = ("points", "poses", "f_star", "n")

    def __init__(self, preds: dict[str, TargetPrediction],
                 instr: Instructions, n: int):
        for tid, pred in preds.items():
            if len(pred) < n:
                raise ValueError(f"prediction for '{tid}' has {len(pred)}"
                                 f" steps, rollout {n}")
        self.n = n
        self.points = _point_tracks(preds, instr, n)
        self.poses = _pose_tracks(preds, instr, n)
        if instr.focal.weight > 0.0:
            self.f_star = np.array([instr.focal_value(k) for k in range(n)])
        else:
            self.f_star = np.zeros(n)


def evaluate_horizon_stacked(positions: np.ndarray, rotations: np.ndarray,
                             intr: np.ndarray, tracks: HorizonTracks,
                             spec: CameraSensorSpec, instr: Instructions,
                             barrier: bool, with_grads: bool,
                             smooth: bool,
                             ) -> tuple[CostBreakdown,
                                        HorizonGradients | None]:
    """Stacked-array core of :func:`evaluate_horizon`."""
    n = len(positions)
    cam_rotations = rotations @ BODY_TO_CAMERA
    grads = HorizonGradients(n) if with_grads else None
    dof = _dof_vec(intr, spec, instr, barrier, grads)
    image = _image_vec(positions, cam_rotations, intr[:, 0], tracks.points,
                       spec, barrier, grads)
    pose = _pose_vec(positions, rotations, tracks.poses, smooth, grads)
    focal = _focal_vec(intr[:, 0], tracks.f_star, instr.focal.weight,
                       grads)
    return CostBreakdown(dof=dof, image=image, pose=pose, focal=focal), grads


def evaluate_horizon(rollout: list[CameraRig],
                     preds: dict[str, TargetPrediction],
                     spec: CameraSensorSpec, instr: Instructions,
                     barrier: bool = False,
                     with_grads: bool = False,
                     smooth: bool | None = None,
                     ) -> tuple[CostBreakdown, HorizonGradients | None]:
    """Evaluate all four terms at every step of a rollout.

    Returns the per-step breakdown and, when requested, the stacked
    per-state gradients for the backward pass.
    """
    if smooth is None:
        smooth = barrier
    n = len(rollout)
    tracks = HorizonTracks(preds, instr, n)
    positions = np.stack([r.drone.position for r in rollout])
    rotations = np.stack([r.drone.orientation for r in rollout])
    intr = np.stack([r.intrinsics.as_array() for r in rollout])
    return evaluate_horizon_stacked(positions, rotations, intr, tracks,
                                    spec, instr, barrier, with_grads,
                                    smooth)


def horizon_cost(rollout: list[CameraRig],
                 preds: dict[str, TargetPrediction],
                 spec: CameraSensorSpec, instr: Instructions,
                 barrier: bool = False) -> CostBreakdown:
    """Sum of the four cost terms over a state rollout."""
    breakdown, _ = evaluate_horizon(rollout, preds, spec, instr,
                                    barrier=barrier)
    return breakdown


def chain_through_dynamics(grads: HorizonGradients,
                           rollout: list[CameraRig],
                           inputs: list[tuple[DroneInput, IntrinsicInput]],
                           dt: float) -> np.ndarray:
    """Backward pass: per-state gradients -> gradient per input.

    Input layout per step: acceleration (3), angular velocity (3), focal /
    focus / aperture rates (3).
    """
    n = len(inputs)
    grad = np.zeros((n, 9))
    thetas = np.array([dt * di.angular_velocity for di, _ in inputs])
    exps = so3_exp_batch(thetas)
    jacobians = so3_right_jacobian_batch(thetas)
    g_p = np.zeros(3)
    g_v = np.zeros(3)
    g_rot = np.zeros((3, 3))
    g_intr = np.zeros(3)
    for k in range(n, 0, -1):
        g_p = g_p + grads.position[k]
        g_v = g_v + grads.velocity[k]
        g_rot = g_rot + grads.rotation[k]
        g_intr = g_intr + grads.intrinsics[k]

        grad[k - 1, 0:3] = dt * g_v
        m = rollout[k].drone.orientation.T @ g_rot
        vee = np.array([m[2, 1] - m[1, 2],
                        m[0, 2] - m[2, 0],
                        m[1, 0] - m[0, 1]])
        grad[k - 1, 3:6] = dt * (jacobians[k - 1].T @ vee)
        grad[k - 1, 6:9] = dt * g_intr

        g_v = g_v + dt * g_p
        g_rot = g_rot @ exps[k - 1].T
    return grad


def cost_gradient(rollout: list[CameraRig],
                  inputs: list[tuple[DroneInput, IntrinsicInput]],
                  preds: dict[str, TargetPrediction],
                  spec: CameraSensorSpec, instr: Instructions,
                  dt: float) -> np.ndarray:
    """Analytic gradient of the horizon cost w.r.t. the stacked inputs.

    The rollout must have been generated from ``inputs`` by the rig
    dynamics.  Projection uses the smooth barrier so the gradient stays
    defined arbitrarily close to the camera plane.
    """
    _, grads = evaluate_horizon(rollout, preds, spec, instr, barrier=True,
                                with_grads=True)
    return chain_through_dynamics(grads, rollout, inputs, dt).ravel()
