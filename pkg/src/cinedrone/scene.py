"""Deterministic kinematic world and the sense-estimate-plan-act loop.

Targets follow scripted waypoint trajectories; a synthetic RGB-D-style
detector replaces a learned one, producing bounding boxes, representative
pixels and noisy depth patches from ground-truth geometry.  The rig executes
planned states kinematically on the same substep grid as the low-level
interpolation, so identical scenario + seed reproduce a bit-identical log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

import logging

from . import constraints as cons
from . import estimation as est
from . import objectives as obj
from . import solver as sol
from .kinematics import CameraRig, interpolate_commands, \
    rpy_from_rotation
from .optics import (BehindCameraError, CameraSensorSpec,
                     calibration_matrix, depth_of_field, project)
from .runlog import RunLog

if TYPE_CHECKING:  # pragma: no cover
    from .config import ScenarioConfig

logger = logging.getLogger(__name__)

_MAX_PATCH_ROWS = 12
_MAX_PATCH_COLS = 6


@dataclass(eq=False)
class ScriptedTarget:
    """A scene actor or obstacle on a time-stamped waypoint script.

    ``points`` are named body-frame offsets from the target center used as
    composition anchors.
    """

    target_id: str
    meta: est.TargetMeta
    times: np.ndarray
    waypoints: np.ndarray
    interpolation: str = "linear"
    is_obstacle: bool = False
    points: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.times.ndim != 1 or len(self.times) != len(self.waypoints):
            raise ValueError("waypoint times/positions length mismatch")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("waypoint times must be strictly increasing")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        self.points = {name: np.asarray(off, dtype=float)
                       for name, off in self.points.items()}


@dataclass(frozen=True)
class SensorModel:
    """Noise/dropout description of the synthetic RGB-D detector."""

    depth_sigma: float = 0.0
    dropout: float = 0.0
    pixel_jitter: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")
        if self.depth_sigma < 0.0 or self.pixel_jitter < 0.0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass
class SimClock:
    """Control-period timing of the loop."""

    period: float
    substeps: int = 5
    step: int = 0

    def __post_init__(self) -> None:
        if self.period <= 0.0:
            raise ValueError("period must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def time(self) -> float:
        return self.step * self.period


def _script_tangent(target: ScriptedTarget, t: float) -> np.ndarray:
    times, pts = target.times, target.waypoints
    if len(times) < 2 or t <= times[0] or t >= times[-1]:
        return np.zeros(3)
    i = int(np.searchsorted(times, t, side="right") - 1)
    i = min(i, len(times) - 2)
    if target.interpolation == "linear":
        return (pts[i + 1] - pts[i]) / (times[i + 1] - times[i])
    return _hermite(target, t, i, derivative=True)


def _hermite_tangents(target: ScriptedTarget) -> np.ndarray:
    times, pts = target.times, target.waypoints
    n = len(times)
    tangents = np.zeros_like(pts)
    for i in range(n):
        lo = max(i - 1, 0)
        hi = min(i + 1, n - 1)
        tangents[i] = (pts[hi] - pts[lo]) / (times[hi] - times[lo])
    return tangents


def _hermite(target: ScriptedTarget, t: float, segment: int,
             derivative: bool = False) -> np.ndarray:
    times, pts = target.times, target.waypoints
    tangents = _hermite_tangents(target)
    t0, t1 = times[segment], times[segment + 1]
    h = t1 - t0
    s = (t - t0) / h
    p0, p1 = pts[segment], pts[segment + 1]
    m0, m1 = tangents[segment] * h, tangents[segment + 1] * h
    if derivative:
        ds = np.array([6 * s * s - 6 * s, 3 * s * s - 4 * s + 1,
                       -6 * s * s + 6 * s, 3 * s * s - 2 * s])
        return (ds[0] * p0 + ds[1] * m0 + ds[2] * p1 + ds[3] * m1) / h
    basis = np.array([2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s,
                      -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2])
    return basis[0] * p0 + basis[1] * m0 + basis[2] * p1 + basis[3] * m1


def target_pose_at(target: ScriptedTarget,
                   t: float) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (position, rotation) of a scripted target, clamped to
    the script span; orientation follows the motion direction when moving."""
    times, pts = target.times, target.waypoints
    if t <= times[0]:
        position = pts[0].copy()
    elif t >= times[-1]:
        position = pts[-1].copy()
    elif target.interpolation == "linear":
        position = np.array([np.interp(t, times, pts[:, i])
                             for i in range(3)])
    else:
        i = int(np.searchsorted(times, t, side="right") - 1)
        position = _hermite(target, t, min(i, len(times) - 2))
    rotation = est.orientation_from_velocity(
        _script_tangent(target, t), target.meta.preliminary_rotation)
    return position, rotation


def _box_from_center(rig: CameraRig, center: np.ndarray, height: float,
                     width: float, spec: CameraSensorSpec
                     ) -> cons.PixelBox | None:
    q = rig.camera_frame(center)
    if q[2] <= 0.0:
        return None
    f_mm = rig.intrinsics.focal_length
    u = (spec.beta_x * f_mm * q[0] + spec.skew * q[1]) / q[2] \
        + spec.principal_u
    v = spec.beta_y * f_mm * q[1] / q[2] + spec.principal_v
    half_w = spec.beta_x * f_mm * (width / 2.0) / q[2]
    half_h = spec.beta_y * f_mm * (height / 2.0) / q[2]
    return cons.PixelBox(u - half_w, v - half_h, u + half_w, v + half_h)


def synthesize_detection(rig: CameraRig, target: ScriptedTarget, t: float,
                         sensor: SensorModel, spec: CameraSensorSpec,
                         rng: np.random.Generator,
                         obstacles: list[ScriptedTarget] = (),
                         ) -> est.Detection | None:
    """Detector stand-in over ground-truth geometry.

    Returns nothing when the target is behind the camera, out of frame,
    occluded by a closer obstacle box, or dropped out; otherwise a detection
    with the projected box, a jittered representative pixel and a noisy
    depth patch.
    """
    center, rotation = target_pose_at(target, t)
    reference = center + rotation @ est.reference_offset(target.meta)
    q = rig.camera_frame(reference)
    if q[2] <= 0.0:
        return None
    pixel_true = project(q, calibration_matrix(rig.intrinsics, spec))
    if not (0.0 <= pixel_true[0] <= spec.image_width
            and 0.0 <= pixel_true[1] <= spec.image_height):
        return None
    box = _box_from_center(rig, center, target.meta.height,
                           target.meta.width, spec)
    if box is None:
        return None
    for obstacle in obstacles:
        opos, _ = target_pose_at(obstacle, t)
        oq = rig.camera_frame(opos)
        if oq[2] <= 0.0 or oq[2] >= q[2]:
            continue
        obox = _box_from_center(rig, opos, obstacle.meta.height,
                                obstacle.meta.width, spec)
        if obox is not None and obox.contains(pixel_true):
            return None
    if sensor.dropout > 0.0 and rng.random() < sensor.dropout:
        return None
    pixel = pixel_true.copy()
    if sensor.pixel_jitter > 0.0:
        pixel = pixel + rng.normal(0.0, sensor.pixel_jitter, 2)
    rows = int(np.clip(round(box.y_rb - box.y_lt), 1, _MAX_PATCH_ROWS))
    cols = int(np.clip(round(box.x_rb - box.x_lt), 1, _MAX_PATCH_COLS))
    patch = np.full((rows, cols), q[2])
    if sensor.depth_sigma > 0.0:
        patch = patch + rng.normal(0.0, sensor.depth_sigma, (rows, cols))
    patch = np.maximum(patch, 1e-3)
    return est.Detection(target_id=target.target_id, box=box, pixel=pixel,
                         depth_patch=patch)


def _prune_instructions(instr: obj.Instructions,
                        available: set[str]) -> obj.Instructions:
    """Drop set-points that reference targets we have no estimate for."""
    dof = instr.dof
    near = dof.near
    far = dof.far
    if isinstance(near, obj.RelativeDistance) and near.target_id \
            not in available:
        near = None
    if isinstance(far, obj.RelativeDistance) and far.target_id \
            not in available:
        far = None
    return replace(
        instr,
        dof=replace(dof, near=near, far=far),
        composition=tuple(c for c in instr.composition
                          if c.target_id in available),
        poses=tuple(p for p in instr.poses if p.target_id in available),
    )


def _anchor_map(target: ScriptedTarget) -> dict[str, np.ndarray]:
    """Composition anchors re-based from the target center to the tracked
    reference point."""
    ref = est.reference_offset(target.meta)
    anchors = {name: off - ref for name, off in target.points.items()}
    anchors["center"] = -ref
    return anchors


def _log_columns(config: "ScenarioConfig") -> list[str]:
    columns = ["step", "time",
               "drone_px", "drone_py", "drone_pz",
               "drone_vx", "drone_vy", "drone_vz",
               "roll", "pitch", "yaw",
               "focal_mm", "focus_m", "aperture",
               "input_ax", "input_ay", "input_az",
               "input_wx", "input_wy", "input_wz",
               "input_vf", "input_vF", "input_vA",
               "cost_now", "cost_plan", "cost_dof", "cost_im", "cost_pose",
               "cost_focal",
               "solver_iterations", "solver_converged", "plan_feasible",
               "plan_min_residual",
               "dn_actual", "df_actual", "dn_target", "df_target",
               "f_target_mm", "collision_residual_min"]
    for target in config.targets:
        tid = target.target_id
        columns += [f"{tid}_gt_x", f"{tid}_gt_y", f"{tid}_gt_z",
                    f"{tid}_distance"]
        if not target.is_obstacle:
            columns += [f"{tid}_est_x", f"{tid}_est_y", f"{tid}_est_z",
                        f"{tid}_est_vx", f"{tid}_est_vy", f"{tid}_est_vz",
                        f"{tid}_cov_trace", f"{tid}_detected"]
    for tid, pid in config.composition_points():
        columns += [f"{tid}_{pid}_u", f"{tid}_{pid}_v",
                    f"{tid}_{pid}_u_des", f"{tid}_{pid}_v_des"]
    for target in config.targets:
        if not target.is_obstacle:
            continue
        for filmed in config.targets:
            if filmed.is_obstacle:
                continue
            columns.append(
                f"sep_{target.target_id}_{filmed.target_id}")
    return columns


def _boxes_disjoint(a: cons.PixelBox | None,
                    b: cons.PixelBox | None) -> bool:
    if a is None or b is None:
        return True
    return (a.x_rb < b.x_lt or b.x_rb < a.x_lt
            or a.y_rb < b.y_lt or b.y_rb < a.y_lt)


def run_closed_loop(config: "ScenarioConfig", seed: int) -> RunLog:
    """Run one seeded scenario: sense, estimate, plan, interpolate, act.

    The loop stops early and marks the log when the rig comes within the
    contact radius of any obstacle (a collision event); otherwise it runs
    for the configured duration.  Identical config + seed give bit-identical
    logs.
    """
    rng = np.random.default_rng(seed)
    spec = config.camera
    cset = config.constraints
    scfg = config.solver
    sensor = config.sensor
    period = config.control.period
    n_steps = scfg.horizon

    targets = list(config.targets)
    filmed = [t for t in targets if not t.is_obstacle]
    obstacles = [t for t in targets if t.is_obstacle]
    sizes = {t.target_id: (t.meta.height, t.meta.width) for t in targets}
    anchors = {t.target_id: _anchor_map(t) for t in filmed}

    rig = config.build_initial_rig(rng)
    tracks: dict[str, est.TargetTrack] = {}
    prev_plan: sol.Plan | None = None
    clock = SimClock(period=period, substeps=config.control.substeps)
    over_budget = 0
    slowest = 0.0

    log = RunLog(columns=_log_columns(config), meta={
        "name": config.name,
        "seed": seed,
        "safety_distance": cset.safety_distance,
        "contact_radius": config.contact_radius,
        "period": period,
        "status": "completed",
    })

    n_periods = int(round(config.control.duration / period))
    for k0 in range(n_periods):
        clock.step = k0
        t = clock.time
        gt_poses = {tg.target_id: target_pose_at(tg, t) for tg in targets}

        detections: dict[str, est.Detection] = {}
        for target in filmed:
            det = synthesize_detection(rig, target, t, sensor, spec, rng,
                                       obstacles)
            if det is not None:
                detections[target.target_id] = det

        for target in filmed:
            tid = target.target_id
            track = tracks.get(tid)
            if track is not None:
                track = est.kf_predict(track, period,
                                       config.estimation.accel_sigma)
            if tid in detections:
                measured = est.measure_world_position(detections[tid], rig,
                                                      spec)
                if track is None:
                    track = est.initialize_track(
                        measured, config.estimation.meas_sigma,
                        config.estimation.velocity_sigma,
                        orientation=target.meta.preliminary_rotation)
                else:
                    track = est.kf_update(track, measured,
                                          config.estimation.meas_sigma)
            if track is not None:
                track = replace(track, orientation=est.orientation_from_velocity(
                    track.velocity, target.meta.preliminary_rotation))
                tracks[tid] = track

        preds: dict[str, obj.TargetPrediction] = {}
        for target in filmed:
            track = tracks.get(target.target_id)
            if track is not None:
                preds[target.target_id] = est.predict_horizon(
                    track, n_steps, period, anchors[target.target_id])
        for obstacle in obstacles:
            future = [target_pose_at(obstacle, t + k * period)
                      for k in range(n_steps + 1)]
            preds[obstacle.target_id] = obj.TargetPrediction(
                positions=np.array([p for p, _ in future]),
                rotations=np.array([r for _, r in future]))

        instr = _prune_instructions(config.active_instructions(t),
                                    set(preds))
        distances = {tid: float(np.linalg.norm(track.position
                                               - rig.drone.position))
                     for tid, track in tracks.items()}
        for obstacle in obstacles:
            distances[obstacle.target_id] = float(np.linalg.norm(
                gt_poses[obstacle.target_id][0] - rig.drone.position))
        resolved = instr.resolve(t, period, n_steps, distances)

        plan = sol.solve(rig, preds, resolved, cset, scfg, spec,
                         warm=prev_plan, sizes=sizes)
        prev_plan = plan
        if plan.stats.wall_time > period:
            over_budget += 1
            slowest = max(slowest, plan.stats.wall_time)

        setpoints = interpolate_commands(plan.predicted_states[0],
                                         plan.predicted_states[1],
                                         clock.substeps)
        collision = None
        for j, sp in enumerate(setpoints):
            t_sub = t + (j + 1) * period / config.control.substeps
            for obstacle in obstacles:
                opos, _ = target_pose_at(obstacle, t_sub)
                gap = float(np.linalg.norm(sp.drone.position - opos))
                if gap < config.contact_radius:
                    collision = {"step": k0, "time": t_sub,
                                 "obstacle": obstacle.target_id,
                                 "distance": gap}
                    break
            if collision is not None:
                break

        log.append(_log_row(config, k0, t, rig, plan, resolved, tracks,
                            detections, gt_poses, spec, cset))
        if collision is not None:
            log.meta["status"] = "collision"
            log.meta["collision"] = collision
            break
        rig = plan.predicted_states[1]
    if over_budget:
        logger.warning("%s seed %s: %d/%d solves exceeded the %.3gs control"
                       " period (worst %.3gs)", config.name, seed,
                       over_budget, n_periods, period, slowest)
    return log


def _log_row(config, k0, t, rig, plan, instr, tracks, detections, gt_poses,
             spec, cset) -> dict:
    nan = math.nan
    drone_input, intr_input = plan.inputs[0]
    row = {
        "step": k0, "time": t,
        "drone_px": rig.drone.position[0],
        "drone_py": rig.drone.position[1],
        "drone_pz": rig.drone.position[2],
        "drone_vx": rig.drone.velocity[0],
        "drone_vy": rig.drone.velocity[1],
        "drone_vz": rig.drone.velocity[2],
        "focal_mm": rig.intrinsics.focal_length,
        "focus_m": rig.intrinsics.focus_distance,
        "aperture": rig.intrinsics.aperture,
        "input_ax": drone_input.acceleration[0],
        "input_ay": drone_input.acceleration[1],
        "input_az": drone_input.acceleration[2],
        "input_wx": drone_input.angular_velocity[0],
        "input_wy": drone_input.angular_velocity[1],
        "input_wz": drone_input.angular_velocity[2],
        "input_vf": intr_input.focal_rate,
        "input_vF": intr_input.focus_rate,
        "input_vA": intr_input.aperture_rate,
        "cost_now": plan.cost.step_totals[0],
        "cost_plan": plan.cost.total,
        "cost_dof": float(np.sum(plan.cost.dof)),
        "cost_im": float(np.sum(plan.cost.image)),
        "cost_pose": float(np.sum(plan.cost.pose)),
        "cost_focal": float(np.sum(plan.cost.focal)),
        "solver_iterations": plan.stats.iterations,
        "solver_converged": float(plan.stats.converged),
        "plan_feasible": float(plan.feasible),
        "plan_min_residual": float(np.min(plan.residuals))
        if plan.residuals.size else nan,
        "f_target_mm": instr.focal_value(0)
        if instr.focal.weight > 0.0 else nan,
    }
    rpy = rpy_from_rotation(rig.drone.orientation)
    row["roll"], row["pitch"], row["yaw"] = rpy

    dof = depth_of_field(rig.intrinsics, spec)
    row["dn_actual"] = dof.near_distance
    row["df_actual"] = dof.far_distance
    row["dn_target"] = instr.dof.near if isinstance(instr.dof.near,
                                                    (int, float)) else nan
    row["df_target"] = instr.dof.far if isinstance(instr.dof.far,
                                                   (int, float)) else nan

    collision_residuals = []
    for target in config.targets:
        tid = target.target_id
        position, rotation = gt_poses[tid]
        dist = float(np.linalg.norm(position - rig.drone.position))
        collision_residuals.append(dist - cset.safety_distance)
        row[f"{tid}_gt_x"], row[f"{tid}_gt_y"], row[f"{tid}_gt_z"] = position
        row[f"{tid}_distance"] = dist
        if target.is_obstacle:
            continue
        track = tracks.get(tid)
        if track is None:
            row.update({f"{tid}_est_x": nan, f"{tid}_est_y": nan,
                        f"{tid}_est_z": nan, f"{tid}_est_vx": nan,
                        f"{tid}_est_vy": nan, f"{tid}_est_vz": nan,
                        f"{tid}_cov_trace": nan})
        else:
            row[f"{tid}_est_x"], row[f"{tid}_est_y"], row[f"{tid}_est_z"] = \
                track.position
            row[f"{tid}_est_vx"], row[f"{tid}_est_vy"], row[f"{tid}_est_vz"] \
                = track.velocity
            row[f"{tid}_cov_trace"] = float(np.trace(track.covariance))
        row[f"{tid}_detected"] = float(tid in detections)
    row["collision_residual_min"] = min(collision_residuals) \
        if collision_residuals else nan

    k_matrix = calibration_matrix(rig.intrinsics, spec)
    desired = {(ct.target_id, ct.point_id): ct.pixel
               for ct in instr.composition}
    targets_by_id = {tg.target_id: tg for tg in config.targets}
    for tid, pid in config.composition_points():
        target = targets_by_id[tid]
        position, rotation = gt_poses[tid]
        point = position + rotation @ (target.points[pid]
                                       if pid != "center" else np.zeros(3))
        try:
            pixel = project(rig.camera_frame(point), k_matrix)
            row[f"{tid}_{pid}_u"], row[f"{tid}_{pid}_v"] = pixel
        except BehindCameraError:
            row[f"{tid}_{pid}_u"] = row[f"{tid}_{pid}_v"] = nan
        pix_des = desired.get((tid, pid))
        row[f"{tid}_{pid}_u_des"] = pix_des[0] if pix_des else nan
        row[f"{tid}_{pid}_v_des"] = pix_des[1] if pix_des else nan

    for obstacle in config.targets:
        if not obstacle.is_obstacle:
            continue
        obox = _box_from_center(rig, gt_poses[obstacle.target_id][0],
                                obstacle.meta.height, obstacle.meta.width,
                                spec)
        for filmed in config.targets:
            if filmed.is_obstacle:
                continue
            fbox = _box_from_center(rig, gt_poses[filmed.target_id][0],
                                    filmed.meta.height, filmed.meta.width,
                                    spec)
            row[f"sep_{obstacle.target_id}_{filmed.target_id}"] = float(
                _boxes_disjoint(obox, fbox))
    return row
