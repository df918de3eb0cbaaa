"""Prioritized task stack: null-space cascades and the cascaded box-constrained QP.

Tasks are couples (J_j, e_j) with a diagonal gain, a relative weight, and
either a hard priority level or soft priority. Hard levels are solved
strictly in order; all soft tasks share the final level, where their
relative weights trade them off against each other. Both solve paths (the
closed-form null-space recursion and the cascaded QP) realize the same
lexicographic problem, so they agree whenever the velocity bounds are
inactive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kinematics import (
    KinematicChain,
    Pose,
    analytic_cartesian_jacobian,
    cartesian_task_error,
    forward_kinematics,
)
from .qp import kkt_residual, solve_box_qp

SOLVER_SCHEMA_VERSION = "solver.v1"


@dataclass
class SolverConfig:
    damping: float = 1e-4
    gains: dict = field(default_factory=lambda: {
        "cartesian": 2.0, "force": 1.0, "manipulability": 1.0, "joint_limit": 1.0,
    })
    alphas: dict = field(default_factory=lambda: {
        "cartesian": 1.0, "force": 1.0, "manipulability": 0.5, "joint_limit": 0.5,
    })
    qdot_bounds: tuple = (-2.5, 2.5)
    qp_tolerance: float = 1e-10
    max_active_set_iters: int = 100

    @classmethod
    def from_dict(cls, cfg: dict) -> "SolverConfig":
        if cfg.get("schema", SOLVER_SCHEMA_VERSION) != SOLVER_SCHEMA_VERSION:
            raise ValueError(f"unsupported solver schema {cfg.get('schema')!r}")
        base = cls()
        gains = dict(base.gains)
        gains.update(cfg.get("gains", {}))
        alphas = dict(base.alphas)
        alphas.update(cfg.get("alphas", {}))
        return cls(
            damping=float(cfg.get("damping", base.damping)),
            gains=gains,
            alphas=alphas,
            qdot_bounds=tuple(cfg.get("qdot_bounds", base.qdot_bounds)),
            qp_tolerance=float(cfg.get("qp_tolerance", base.qp_tolerance)),
            max_active_set_iters=int(cfg.get("max_active_set_iters", base.max_active_set_iters)),
        )


@dataclass
class ControlState:
    """Minimal state handed to task callables: arm joints plus extras."""

    q: np.ndarray
    jaw: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class TaskSpec:
    """One task couple: Jacobian and error callables over the control state.

    priority is a hard level (int, 0 = highest) or None for soft priority.
    gain holds the diagonal entries of the positive-definite gain matrix.
    """

    id: str
    jacobian: Callable[[ControlState], np.ndarray]
    error: Callable[[ControlState], np.ndarray]
    gain: np.ndarray
    weight: float = 1.0
    priority: int | None = 0

    def __post_init__(self):
        self.gain = np.atleast_1d(np.asarray(self.gain, dtype=float))
        if np.any(self.gain <= 0.0):
            raise ValueError("gain entries must be positive")
        if self.weight < 0.0:
            raise ValueError("task weight must be non-negative")


@dataclass
class TaskStack:
    tasks: list
    velocity_bounds: tuple | None = None
    dt: float = 0.001

    def __post_init__(self):
        hard0 = [t for t in self.tasks if t.priority == 0]
        if len(hard0) != 1:
            raise ValueError(f"exactly one hard level-0 task required, got {len(hard0)}")

    def levels(self) -> list[list[TaskSpec]]:
        """Hard levels in ascending order, soft tasks grouped last."""
        hard = sorted((t for t in self.tasks if t.priority is not None), key=lambda t: t.priority)
        out: list[list[TaskSpec]] = []
        for t in hard:
            if out and out[-1][0].priority == t.priority:
                out[-1].append(t)
            else:
                out.append([t])
        soft = [t for t in self.tasks if t.priority is None]
        if soft:
            out.append(soft)
        return out


@dataclass
class Solution:
    qdot: np.ndarray
    residuals: dict
    slack_norms: list
    kkt_residual: float | None = None


def pseudoinverse(J: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """Moore-Penrose for damping=0, damped least-squares J'(JJ'+l^2 I)^-1 else."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if damping < 0.0:
        raise ValueError("damping must be non-negative")
    if damping == 0.0:
        return np.linalg.pinv(J)
    m = J.shape[0]
    return J.T @ np.linalg.inv(J @ J.T + damping**2 * np.eye(m))


def null_space_projector(J: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """N = I - J^+ J; maps velocities into motions invisible to J.

    The exact (SVD-truncated) pseudoinverse keeps the projector identities
    J N = 0 and N^2 = N at machine precision even for rank-deficient J;
    a positive damping trades that exactness for extra smoothing.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    n = J.shape[1]
    return np.eye(n) - pseudoinverse(J, damping) @ J


def augmented_jacobian(tasks: list, state: ControlState) -> tuple[np.ndarray, np.ndarray]:
    """Row-stack weight * J_j and weight * e_j in the given task order."""
    jac_blocks, err_blocks = [], []
    for t in tasks:
        jac_blocks.append(t.weight * np.atleast_2d(t.jacobian(state)))
        err_blocks.append(t.weight * np.atleast_1d(t.error(state)))
    return np.vstack(jac_blocks), np.concatenate(err_blocks)


def _level_system(level: list, state: ControlState) -> tuple[np.ndarray, np.ndarray]:
    """Weighted stack of (J_j, Omega_j e_j) for one priority level."""
    jac_blocks, tgt_blocks = [], []
    for t in level:
        J = np.atleast_2d(t.jacobian(state))
        e = np.atleast_1d(t.error(state))
        jac_blocks.append(t.weight * J)
        tgt_blocks.append(t.weight * (t.gain * e))
    return np.vstack(jac_blocks), np.concatenate(tgt_blocks)


def _task_residuals(stack: TaskStack, state: ControlState, qdot: np.ndarray) -> dict:
    out = {}
    for t in stack.tasks:
        J = np.atleast_2d(t.jacobian(state))
        e = np.atleast_1d(t.error(state))
        out[t.id] = J @ qdot - t.gain * e
    return out


def solve_prioritized(
    stack: TaskStack, state: ControlState, damping: float = 1e-4,
    with_residuals: bool = True,
) -> Solution:
    """Closed-form recursive prioritized solution.

    Level 0 is the damped least-squares solve; each later level corrects
    inside the null space of everything above it, leaving higher-priority
    task velocities untouched.
    """
    levels = stack.levels()
    J0, r0 = _level_system(levels[0], state)
    n = J0.shape[1]
    qdot = pseudoinverse(J0, damping) @ r0
    J_above = J0
    slack = [float(np.linalg.norm(J0 @ qdot - r0))]
    for level in levels[1:]:
        Jl, rl = _level_system(level, state)
        N = null_space_projector(J_above)
        M = Jl @ N
        rho = rl - Jl @ qdot
        qdot = qdot + N @ (pseudoinverse(M, damping) @ rho)
        J_above = np.vstack([J_above, Jl])
        slack.append(float(np.linalg.norm(Jl @ qdot - rl)))
    residuals = _task_residuals(stack, state, qdot) if with_residuals else {}
    return Solution(qdot=qdot, residuals=residuals, slack_norms=slack)


def solve_cascaded_qp(
    stack: TaskStack,
    state: ControlState,
    bounds: tuple | None = None,
    config: SolverConfig | None = None,
    with_residuals: bool = True,
    verify: bool = True,
) -> Solution:
    """Cascaded QP: each level minimizes its weighted task residual inside
    the optimal set of the levels above (locked as equality constraints),
    subject to the joint-velocity box. Task error that the box makes
    unreachable lands in the per-level slack (the residual norm).
    """
    config = config or SolverConfig()
    levels = stack.levels()
    J0, _ = _level_system(levels[0], state)
    n = J0.shape[1]
    lo, hi = _expand_bounds(bounds if bounds is not None else stack.velocity_bounds, n)
    if np.any(lo > hi):
        raise ValueError("velocity bounds must satisfy lower <= upper")
    lam2 = config.damping**2

    qdot = np.clip(np.zeros(n), lo, hi)
    A = np.zeros((0, n))
    b = np.zeros(0)
    slack = []
    worst_kkt = 0.0
    for level in levels:
        Jl, rl = _level_system(level, state)
        H = Jl.T @ Jl + lam2 * np.eye(n)
        g = -(Jl.T @ rl + lam2 * qdot)
        res = solve_box_qp(
            H, g, A, b, lo, hi, x0=qdot,
            tol=config.qp_tolerance, max_iters=config.max_active_set_iters,
        )
        if verify:
            worst_kkt = max(worst_kkt, kkt_residual(H, g, A, b, lo, hi, res.x))
        qdot = res.x
        A = np.vstack([A, Jl])
        b = A @ qdot
        slack.append(float(np.linalg.norm(Jl @ qdot - rl)))
    qdot = np.clip(qdot, lo, hi)
    residuals = _task_residuals(stack, state, qdot) if with_residuals else {}
    return Solution(
        qdot=qdot,
        residuals=residuals,
        slack_norms=slack,
        kkt_residual=worst_kkt if verify else None,
    )


def _expand_bounds(bounds, n: int) -> tuple[np.ndarray, np.ndarray]:
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo, hi = bounds
    lo = np.full(n, float(lo)) if np.isscalar(lo) else np.asarray(lo, dtype=float).ravel()
    hi = np.full(n, float(hi)) if np.isscalar(hi) else np.asarray(hi, dtype=float).ravel()
    return lo, hi


def integrate_step(
    q: np.ndarray, qdot: np.ndarray, dt: float, chain: KinematicChain
) -> tuple[np.ndarray, np.ndarray]:
    """Euler step then clamp to joint limits; returns (q_next, saturated mask)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    raw = np.asarray(q, dtype=float) + np.asarray(qdot, dtype=float) * dt
    clamped = chain.clamp(raw)
    return clamped, raw != clamped


# ---------------------------------------------------------------------------
# Performance task functions


def manipulability_value(q: np.ndarray) -> float:
    """0.5 * sum of sin^2 over the interior joints (2..n-1, one-based)."""
    q = np.asarray(q, dtype=float).ravel()
    return 0.5 * float(np.sum(np.sin(q[1:-1]) ** 2))


def manipulability_jacobian(q: np.ndarray) -> np.ndarray:
    """Gradient of manipulability_value: cos*sin on interior joints, 0 outside."""
    q = np.asarray(q, dtype=float).ravel()
    J = np.zeros((1, q.size))
    J[0, 1:-1] = np.cos(q[1:-1]) * np.sin(q[1:-1])
    return J


def joint_limit_value(q: np.ndarray, chain: KinematicChain) -> float:
    """Normalized mean-square distance of joints from their range midpoints."""
    q = np.asarray(q, dtype=float).ravel()
    span = chain.q_upper - chain.q_lower
    z = (q - chain.midpoints) / span
    return float(np.sum(z**2) / (2.0 * chain.n))


def joint_limit_jacobian(q: np.ndarray, chain: KinematicChain) -> np.ndarray:
    """Gradient of joint_limit_value (consistent with finite differences)."""
    q = np.asarray(q, dtype=float).ravel()
    span = chain.q_upper - chain.q_lower
    return ((q - chain.midpoints) / span**2 / chain.n).reshape(1, -1)


# ---------------------------------------------------------------------------
# Force-task helpers


def force_task_error(
    f_c_sensor: np.ndarray, f_desired: np.ndarray, rotation_s_to_base: np.ndarray
) -> np.ndarray:
    """Base-frame force error f_desired - R f_c for the force-based task."""
    R = np.asarray(rotation_s_to_base, dtype=float)
    if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
        raise ValueError("rotation must be orthonormal")
    return np.asarray(f_desired, dtype=float) - R @ np.asarray(f_c_sensor, dtype=float)


def gripper_jacobian(jaw_axis_base: np.ndarray) -> np.ndarray:
    """3x2 jaw Jacobian: jaw closing speeds map to +/- the jaw axis."""
    y = np.asarray(jaw_axis_base, dtype=float).ravel()
    return np.column_stack([y, -y])


def kineto_static_dual(J: np.ndarray, f_e: np.ndarray) -> np.ndarray:
    """Static force-to-joint-velocity mapping J' f_e for stiff grasp holds."""
    return np.atleast_2d(np.asarray(J, dtype=float)).T @ np.asarray(f_e, dtype=float).ravel()


# ---------------------------------------------------------------------------
# Task factories used by the controller and tests


def embed_columns(J: np.ndarray, n_total: int, offset: int) -> np.ndarray:
    """Place a task Jacobian into a wider joint space at a column offset."""
    J = np.atleast_2d(J)
    out = np.zeros((J.shape[0], n_total))
    out[:, offset:offset + J.shape[1]] = J
    return out


def cartesian_pose_task(
    chain: KinematicChain,
    target: Pose | Callable[[ControlState], Pose],
    gain: float = 2.0,
    weight: float = 1.0,
    priority: int | None = 0,
    n_total: int | None = None,
    task_id: str = "cartesian",
) -> TaskSpec:
    """Cartesian pose task toward a fixed or state-dependent target."""
    width = n_total or chain.n

    def jac(state: ControlState) -> np.ndarray:
        return embed_columns(analytic_cartesian_jacobian(chain, state.q), width, 0)

    def err(state: ControlState) -> np.ndarray:
        desired = target(state) if callable(target) else target
        return cartesian_task_error(forward_kinematics(chain, state.q), desired)

    return TaskSpec(task_id, jac, err, gain * np.ones(5), weight, priority)


def manipulability_task(
    chain: KinematicChain,
    chi_desired: float,
    gain: float = 1.0,
    weight: float = 0.5,
    n_total: int | None = None,
) -> TaskSpec:
    width = n_total or chain.n

    def jac(state: ControlState) -> np.ndarray:
        return embed_columns(manipulability_jacobian(state.q), width, 0)

    def err(state: ControlState) -> np.ndarray:
        return np.array([chi_desired - manipulability_value(state.q)])

    return TaskSpec("manipulability", jac, err, np.array([gain]), weight, None)


def joint_limit_task(
    chain: KinematicChain,
    gain: float = 1.0,
    weight: float = 0.5,
    n_total: int | None = None,
) -> TaskSpec:
    width = n_total or chain.n

    def jac(state: ControlState) -> np.ndarray:
        return embed_columns(joint_limit_jacobian(state.q, chain), width, 0)

    def err(state: ControlState) -> np.ndarray:
        return np.array([-joint_limit_value(state.q, chain)])

    return TaskSpec("joint_limit", jac, err, np.array([gain]), weight, None)
