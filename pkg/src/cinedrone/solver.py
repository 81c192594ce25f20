"""Receding-horizon planner for the camera rig.

Each call minimizes the horizon cost over the stacked drone + lens input
sequence subject to the rig dynamics and the feasibility inequalities.
Inputs are normalized to [-1, 1] by their bounds and held in that box by
the bounded quasi-Newton descent; state, collision and occlusion
inequalities enter through an augmented-Lagrangian penalty whose
multipliers are updated between descent rounds.  Everything is
deterministic for identical arguments.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import constraints as cons
from . import kinematics as kin
from . import objectives as obj
from .optics import CameraSensorSpec

logger = logging.getLogger(__name__)

_BIG_MERIT = 1e30
#: Lens values (focal mm, focus m, aperture) may never reach zero; solver
#: candidates are clamped here and penalized back toward the real bounds.
_DOMAIN_FLOOR = 1e-3
_DOMAIN_GAIN = 1e6
#: Pixels per unit of penalized occlusion-separation residual.
_SEPARATION_SCALE = 100.0


class InfeasibleStartError(ValueError):
    """Initial state violates the hard state bounds beyond the slack."""


@dataclass
class SolverConfig:
    """Tuning knobs of one planner instance."""

    horizon: int = 5
    dt: float = 0.2
    max_iterations: int = 150
    convergence_tol: float = 1e-5
    penalty_initial: float = 10.0
    penalty_growth: float = 10.0
    outer_rounds: int = 6
    warm_start: bool = True
    constraint_margin: float = 0.0
    start_slack: float = 0.25
    time_budget: float | None = None

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.convergence_tol <= 0.0:
            raise ValueError("convergence_tol must be positive")


@dataclass
class SolveStats:
    iterations: int = 0
    outer_rounds: int = 0
    converged: bool = False
    max_violation: float = 0.0
    wall_time: float = 0.0


@dataclass(eq=False)
class Plan:
    """Result of one planning instance.

    ``predicted_states[i + 1]`` is exactly the dynamics applied to
    ``predicted_states[i]`` under ``inputs[i]`` (single shooting).
    ``multipliers``/``penalty`` carry the augmented-Lagrangian state into
    the next warm-started solve."""

    inputs: list[tuple[kin.DroneInput, kin.IntrinsicInput]]
    predicted_states: list[kin.CameraRig]
    cost: obj.CostBreakdown
    residuals: np.ndarray
    feasible: bool
    stats: SolveStats
    records: list[cons.OcclusionRecord] = field(default_factory=list)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    penalty: float = 0.0


def shift_warm_start(prev: Plan | None, n_steps: int) -> np.ndarray:
    """Shift a previous plan's inputs one step, repeating the last one.

    Returns an (n_steps, 9) array in the solver's input layout; zeros when
    there is no usable previous plan."""
    guess = np.zeros((n_steps, 9))
    if prev is None or not prev.inputs:
        return guess
    rows = [np.concatenate([di.acceleration, di.angular_velocity,
                            ii.as_array()]) for di, ii in prev.inputs]
    shifted = rows[1:] + [rows[-1]]
    for i in range(min(n_steps, len(shifted))):
        guess[i] = shifted[i]
    for i in range(len(shifted), n_steps):
        guess[i] = shifted[-1]
    return guess


def _build_inputs(u: np.ndarray) -> list[tuple[kin.DroneInput,
                                               kin.IntrinsicInput]]:
    return [(kin.DroneInput(acceleration=row[0:3],
                            angular_velocity=row[3:6]),
             kin.IntrinsicInput(*row[6:9])) for row in u]


def _al_value(g: np.ndarray, lam: np.ndarray, rho: float) -> float:
    # augmented-Lagrangian term for inequalities g >= 0; its slope w.r.t.
    # g is -max(0, lam - rho g), inlined at the accumulation sites
    slack = np.maximum(0.0, lam - rho * g)
    return float(np.sum(slack * slack - lam * lam) / (2.0 * rho))


class _PenaltyModel:
    """Fixed-order penalized inequality set for one solve instance."""

    def __init__(self, cset: cons.ConstraintSet, preds, sizes, records,
                 spec: CameraSensorSpec, n_steps: int, margin: float):
        self.cset = cset
        self.preds = preds
        self.sizes = sizes
        self.records = [r for r in records if r.active]
        self.spec = spec
        self.n_steps = n_steps
        self.margin = margin
        self.state_low = np.concatenate([cset.position_low,
                                         cset.velocity_low, cset.rpy_low,
                                         cset.intr_low])
        self.state_high = np.concatenate([cset.position_high,
                                          cset.velocity_high, cset.rpy_high,
                                          cset.intr_high])
        self.collision_ids = sorted(preds) if cset.safety_distance > 0.0 \
            else []
        per_step = (2 * len(self.state_low) + len(self.collision_ids)
                    + len(self.records))
        self.size = per_step * n_steps

    def residuals_and_grads(self, all_positions, all_velocities,
                            all_rotations, all_intr, rollout, grads,
                            lam: np.ndarray,
                            rho: float) -> tuple[float, np.ndarray]:
        """Total AL penalty; gradients accumulated into ``grads`` when
        given.  Residual layout per state 1..N: 24 state-box entries, one
        collision entry per target, one separation entry per record."""
        n = self.n_steps
        per_step = self.size // n if n else 0
        g_all = np.zeros((n, per_step))

        positions = all_positions[1:]
        velocities = all_velocities[1:]
        rotations = all_rotations[1:]
        intr = all_intr[1:]
        rpy = np.stack([
            np.arctan2(rotations[:, 2, 1], rotations[:, 2, 2]),
            -np.arcsin(np.clip(rotations[:, 2, 0], -1.0, 1.0)),
            np.arctan2(rotations[:, 1, 0], rotations[:, 0, 0]),
        ], axis=1)
        state = np.hstack([positions, velocities, rpy, intr])
        n_state = state.shape[1]
        low_res = state - self.state_low
        high_res = self.state_high - state
        g_all[:, :n_state] = low_res
        g_all[:, n_state:2 * n_state] = high_res

        lam_steps = lam.reshape(n, per_step) if self.size else lam
        if grads is not None and self.size:
            lam_low = lam_steps[:, :n_state]
            lam_high = lam_steps[:, n_state:2 * n_state]
            slopes = (np.maximum(0.0, lam_high - rho * high_res)
                      - np.maximum(0.0, lam_low - rho * low_res))
            grads.position[1:] += slopes[:, 0:3]
            grads.velocity[1:] += slopes[:, 3:6]
            grads.intrinsics[1:] += slopes[:, 9:12]
            self._add_rpy_slopes(rotations, slopes[:, 6:9],
                                 grads.rotation[1:])

        idx = 2 * n_state
        for tid in self.collision_ids:
            diff = positions - self.preds[tid].positions[1:n + 1]
            dist = np.linalg.norm(diff, axis=1)
            g_all[:, idx] = dist - (self.cset.safety_distance + self.margin)
            if grads is not None:
                slope = -np.maximum(0.0, lam_steps[:, idx]
                                    - rho * g_all[:, idx])
                safe = np.maximum(dist, 1e-9)
                grads.position[1:] += (slope / safe)[:, None] * diff
            idx += 1

        if self.records:
            cam_rotations = rotations @ kin.BODY_TO_CAMERA
        for record in self.records:
            # pixel gap scaled to O(1) so the shared penalty weight
            # conditions all inequality groups comparably; the margin
            # keeps the held gap strictly positive, which keeps the
            # activation predicate firing at the next solve
            res, d_pos, d_rot, d_f = cons.separation_pieces(
                positions, cam_rotations, intr[:, 0], self.preds,
                self.sizes, record, 1, self.spec)
            g_all[:, idx] = res / _SEPARATION_SCALE - self.margin
            if grads is not None:
                slope = -np.maximum(0.0, lam_steps[:, idx]
                                    - rho * g_all[:, idx]) \
                    / _SEPARATION_SCALE
                grads.position[1:] += slope[:, None] * d_pos
                grads.rotation[1:] += slope[:, None, None] * d_rot
                grads.intrinsics[1:, 0] += slope * d_f
            idx += 1

        g_flat = g_all.ravel()
        return _al_value(g_flat, lam, rho), g_flat

    @staticmethod
    def _add_rpy_slopes(rotations: np.ndarray, slopes: np.ndarray,
                        rot_grads: np.ndarray) -> None:
        # d(rpy)/dR for Z-Y-X extraction; bounds keep pitch off +-pi/2
        d_roll, d_pitch, d_yaw = slopes[:, 0], slopes[:, 1], slopes[:, 2]
        denom = rotations[:, 2, 1] ** 2 + rotations[:, 2, 2] ** 2
        rot_grads[:, 2, 1] += d_roll * rotations[:, 2, 2] / denom
        rot_grads[:, 2, 2] -= d_roll * rotations[:, 2, 1] / denom
        rot_grads[:, 2, 0] -= d_pitch / np.sqrt(
            np.maximum(1.0 - rotations[:, 2, 0] ** 2, 1e-12))
        denom = rotations[:, 0, 0] ** 2 + rotations[:, 1, 0] ** 2
        rot_grads[:, 1, 0] += d_yaw * rotations[:, 0, 0] / denom
        rot_grads[:, 0, 0] -= d_yaw * rotations[:, 1, 0] / denom


def solve(initial: kin.CameraRig, preds: dict[str, obj.TargetPrediction],
          instr: obj.Instructions, cset: cons.ConstraintSet,
          cfg: SolverConfig, spec: CameraSensorSpec,
          warm: Plan | None = None,
          sizes: dict[str, tuple[float, float]] | None = None) -> Plan:
    """Plan the next ``cfg.horizon`` inputs from the given rig state.

    ``sizes`` (target id -> (height, width) in meters) enables occlusion
    handling when ``cset.occlusion_enabled``; the activation set is frozen
    from the initial state before descent starts.
    """
    start_time = time.perf_counter()
    n = cfg.horizon
    dt = cfg.dt
    sizes = sizes or {}

    start_residuals = cons.state_bound_residuals(initial, cset)
    widths = np.concatenate([
        cset.position_high - cset.position_low,
        cset.velocity_high - cset.velocity_low,
        cset.rpy_high - cset.rpy_low,
        cset.intr_high - cset.intr_low,
    ])
    # slack scales with each interval so executed penalty-method dust on a
    # narrow bound is tolerated while genuinely bad starts are rejected
    slack = np.maximum(cfg.start_slack * np.maximum(widths, 1.0),
                       cset.epsilon_slack)
    slack = np.concatenate([slack, slack])
    worst = np.min(start_residuals + slack)
    if worst < 0.0:
        raise InfeasibleStartError(
            f"initial state violates bounds by {-worst:.3g} beyond slack")

    records: list[cons.OcclusionRecord] = []
    if cset.occlusion_enabled and sizes:
        records = cons.activate_occlusions(initial, preds, sizes, spec)

    low = np.concatenate([cset.drone_input_low, cset.intr_input_low])
    high = np.concatenate([cset.drone_input_high, cset.intr_input_high])
    width = high - low
    free = width > 1e-12
    center = 0.5 * (low + high)
    half = np.where(free, 0.5 * width, 1.0)

    def to_scaled(u: np.ndarray) -> np.ndarray:
        z = (u - center) / half
        z[:, ~free] = 0.0
        return np.clip(z, -1.0, 1.0)

    def to_inputs(z: np.ndarray) -> np.ndarray:
        u = center + z * half
        u[:, ~free] = low[~free]
        return u

    model = _PenaltyModel(cset, preds, sizes, records, spec, n,
                          cfg.constraint_margin)
    lam = np.zeros(model.size)
    rho = cfg.penalty_initial
    if (cfg.warm_start and warm is not None
            and warm.multipliers.size == model.size):
        lam = warm.multipliers.copy()
        # carry the penalty weight but let it relax one growth step per
        # solve, so a transient never ratchets the merit stiff for good
        rho = max(rho, warm.penalty / cfg.penalty_growth)

    intr0 = initial.intrinsics.as_array()
    tracks = obj.HorizonTracks(preds, instr, n + 1)

    def evaluate(z: np.ndarray, with_grads: bool):
        u = to_inputs(z)
        # keep the lens trajectory inside its physical domain: clamp the
        # candidate to a small floor and penalize the shortfall with an
        # analytic slope, so the line search is never left on a plateau
        trajectory = intr0 + dt * np.cumsum(u[:, 6:9], axis=0)
        shortfall = np.maximum(0.0, _DOMAIN_FLOOR - trajectory)
        domain_penalty = 0.0
        domain_grad = None
        if shortfall.any():
            clamped = np.maximum(trajectory, _DOMAIN_FLOOR)
            previous = np.vstack([intr0, clamped[:-1]])
            u = u.copy()
            u[:, 6:9] = (clamped - previous) / dt
            domain_penalty = _DOMAIN_GAIN * float(np.sum(shortfall ** 2))
            per_state = -2.0 * _DOMAIN_GAIN * dt * shortfall
            domain_grad = np.cumsum(per_state[::-1], axis=0)[::-1]
        inputs = _build_inputs(u)
        rollout = kin.rollout(initial, inputs, dt)
        positions = np.stack([r.drone.position for r in rollout])
        velocities = np.stack([r.drone.velocity for r in rollout])
        rotations = np.stack([r.drone.orientation for r in rollout])
        intr_states = np.stack([r.intrinsics.as_array() for r in rollout])
        breakdown, grads = obj.evaluate_horizon_stacked(
            positions, rotations, intr_states, tracks, spec, instr,
            barrier=True, with_grads=with_grads, smooth=True)
        penalty, g_all = model.residuals_and_grads(
            positions, velocities, rotations, intr_states, rollout, grads,
            lam, rho)
        merit = breakdown.total + penalty + domain_penalty
        if not with_grads:
            return merit, None, (inputs, rollout, breakdown, g_all)
        grad_u = obj.chain_through_dynamics(grads, rollout, inputs, dt)
        if domain_grad is not None:
            grad_u = grad_u.copy()
            grad_u[:, 6:9] += domain_grad
        grad_z = grad_u * half
        grad_z[:, ~free] = 0.0
        return merit, grad_z, (inputs, rollout, breakdown, g_all)

    guess = shift_warm_start(warm, n) if (cfg.warm_start and warm is not None) \
        else np.zeros((n, 9))
    z = to_scaled(guess)
    if not math.isfinite(evaluate(z, with_grads=False)[0]):
        z = to_scaled(np.zeros((n, 9)))  # shifted guess left the domain

    def merit_fun(z_flat: np.ndarray):
        merit, grad, _ = evaluate(z_flat.reshape(n, 9), with_grads=True)
        if not math.isfinite(merit):
            # out-of-domain candidate: huge flat value, line search retreats
            return _BIG_MERIT, np.zeros(n * 9)
        return merit, grad.ravel()

    bounds = [(-1.0, 1.0)] * (n * 9)
    stats = SolveStats()
    converged = False
    prev_violation = math.inf
    for outer in range(cfg.outer_rounds):
        stats.outer_rounds = outer + 1
        result = scipy.optimize.minimize(
            merit_fun, z.ravel(), jac=True, method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_iterations, "maxls": 60,
                     "maxcor": 20,
                     "ftol": 1e-7, "gtol": cfg.convergence_tol})
        z = np.clip(result.x.reshape(n, 9), -1.0, 1.0)
        stats.iterations += int(result.nit)
        converged = bool(result.status in (0, 2))  # tolerance reached

        _, _, info = evaluate(z, with_grads=True)
        g_all = info[3]
        violation = float(max(0.0, -np.min(g_all))) if g_all.size else 0.0
        if violation <= 1e-7:
            break
        lam = np.maximum(0.0, lam - rho * g_all)
        if violation > 0.25 * prev_violation:
            rho = min(rho * cfg.penalty_growth, 1e8)
        prev_violation = violation

    inputs, rollout, _, g_all = info
    # report the exact cost; the descent merit smooths the rotation norm
    breakdown, _ = obj.evaluate_horizon(rollout, preds, spec, instr,
                                        barrier=True, smooth=False)
    residuals = cons.evaluate_constraints(inputs, rollout, preds, sizes,
                                          cset, records, spec)
    stats.converged = converged
    stats.max_violation = float(max(0.0, -np.min(residuals))) \
        if residuals.size else 0.0
    stats.wall_time = time.perf_counter() - start_time
    budget = cfg.time_budget if cfg.time_budget is not None else dt
    if stats.wall_time > budget:
        logger.debug("solve exceeded its %.3gs budget: %.3gs",
                     budget, stats.wall_time)
    feasible = bool(residuals.size == 0 or np.min(residuals) >= -1e-6)
    lam = np.maximum(0.0, lam - rho * g_all) if g_all.size else lam
    return Plan(inputs=inputs, predicted_states=rollout, cost=breakdown,
                residuals=residuals, feasible=feasible, stats=stats,
                records=records, multipliers=lam, penalty=rho)
