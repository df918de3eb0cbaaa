import numpy as np
import pytest

from isot.kinematics import KinematicChain, forward_kinematics
from isot.tasks import (
    ControlState,
    SolverConfig,
    TaskSpec,
    TaskStack,
    augmented_jacobian,
    cartesian_pose_task,
    force_task_error,
    gripper_jacobian,
    integrate_step,
    joint_limit_jacobian,
    joint_limit_task,
    joint_limit_value,
    kineto_static_dual,
    manipulability_jacobian,
    manipulability_task,
    manipulability_value,
    null_space_projector,
    pseudoinverse,
    solve_cascaded_qp,
    solve_prioritized,
)

RNG = np.random.default_rng(99)
CHAIN = KinematicChain.default()


def _const_task(task_id, J, e, gain=1.0, weight=1.0, priority=0):
    J = np.atleast_2d(np.asarray(J, dtype=float))
    e = np.atleast_1d(np.asarray(e, dtype=float))
    return TaskSpec(task_id, lambda s: J, lambda s: e, gain * np.ones(J.shape[0]), weight, priority)


# --- projector and pseudoinverse ---------------------------------------------


def test_projector_square_full_rank_is_zero():
    J = _random_full_rank(7, 7)
    assert np.linalg.norm(null_space_projector(J)) < 1e-9


def _random_full_rank(m, n):
    while True:
        J = RNG.normal(size=(m, n))
        if np.linalg.matrix_rank(J) == min(m, n):
            return J


def test_projector_identities_random():
    for _ in range(50):
        J = RNG.normal(size=(5, 7))
        N = null_space_projector(J)
        assert np.linalg.norm(J @ N, "fro") < 1e-9
        assert np.linalg.norm(N @ N - N, "fro") < 1e-9


def test_projector_of_zero_task_is_identity():
    assert np.allclose(null_space_projector(np.zeros((3, 7))), np.eye(7))


def test_pseudoinverse_identity():
    assert np.allclose(pseudoinverse(np.eye(4)), np.eye(4))


def test_pseudoinverse_penrose_condition():
    for _ in range(20):
        J = _random_full_rank(5, 7)
        Jp = pseudoinverse(J, 0.0)
        assert np.linalg.norm(J @ Jp @ J - J) < 1e-9


def test_pseudoinverse_damped_bounded_on_rank_deficient():
    J = np.vstack([_random_full_rank(2, 7), np.zeros((3, 7))])
    lam = 0.01
    Jp = pseudoinverse(J, lam)
    assert np.all(np.isfinite(Jp))
    # SVD oracle: largest gain of the damped inverse is max s/(s^2+lam^2) <= 1/(2 lam).
    s = np.linalg.svd(J, compute_uv=False)
    gains = s / (s**2 + lam**2)
    assert np.linalg.norm(Jp, 2) <= max(gains.max(), 1e-12) + 1e-9
    assert np.linalg.norm(Jp, 2) <= 1.0 / (2 * lam) + 1e-9
    with pytest.raises(ValueError):
        pseudoinverse(J, -1.0)


# --- prioritized solve --------------------------------------------------------


def test_all_zero_errors_give_zero_velocity():
    stack = TaskStack([
        _const_task("a", RNG.normal(size=(5, 7)), np.zeros(5)),
        _const_task("b", RNG.normal(size=(1, 7)), np.zeros(1), priority=None),
    ])
    sol = solve_prioritized(stack, ControlState(q=np.zeros(7)))
    assert np.allclose(sol.qdot, 0.0)


def test_single_task_matches_normal_equations_oracle():
    lam = 1e-4
    for _ in range(10):
        J = RNG.normal(size=(5, 7))
        e = RNG.normal(size=5)
        gain = 2.0
        stack = TaskStack([_const_task("t", J, e, gain=gain)])
        sol = solve_prioritized(stack, ControlState(q=np.zeros(7)), damping=lam)
        oracle = np.linalg.solve(J.T @ J + lam**2 * np.eye(7), J.T @ (gain * e))
        assert np.allclose(sol.qdot, oracle, atol=1e-9)


def test_secondary_does_not_disturb_primary():
    for _ in range(10):
        J0 = RNG.normal(size=(5, 7))
        e0 = RNG.normal(size=5)
        primary_only = TaskStack([_const_task("p", J0, e0)])
        both = TaskStack([
            _const_task("p", J0, e0),
            _const_task("s", RNG.normal(size=(1, 7)), RNG.normal(size=1), weight=0.5, priority=None),
        ])
        state = ControlState(q=np.zeros(7))
        qp = solve_prioritized(primary_only, state).qdot
        qb = solve_prioritized(both, state).qdot
        assert np.linalg.norm(J0 @ (qb - qp)) < 1e-9


def test_augmented_jacobian_stacking():
    state = ControlState(q=np.zeros(7))
    t0 = _const_task("a", RNG.normal(size=(5, 7)), RNG.normal(size=5), weight=1.0)
    J, e = augmented_jacobian([t0], state)
    assert np.array_equal(J, t0.jacobian(state))
    assert np.array_equal(e, t0.error(state))

    t1 = _const_task("b", RNG.normal(size=(2, 7)), RNG.normal(size=2), weight=0.0)
    J, e = augmented_jacobian([t0, t1], state)
    assert np.array_equal(J[5:], np.zeros((2, 7)))
    assert np.array_equal(e[5:], np.zeros(2))

    t2 = _const_task("c", RNG.normal(size=(3, 7)), RNG.normal(size=3), weight=0.7)
    J, e = augmented_jacobian([t0, t2], state)
    manual_J = np.vstack([1.0 * t0.jacobian(state), 0.7 * t2.jacobian(state)])
    manual_e = np.concatenate([1.0 * t0.error(state), 0.7 * t2.error(state)])
    assert np.array_equal(J, manual_J)
    assert np.array_equal(e, manual_e)


# --- performance task functions -----------------------------------------------


def test_manipulability_zero_configuration():
    assert manipulability_value(np.zeros(7)) == 0.0


def test_manipulability_interior_right_angles():
    q = np.zeros(7)
    q[1:6] = np.pi / 2  # one-based joints 2..6
    assert abs(manipulability_value(q) - 2.5) < 1e-12


def test_manipulability_gradient_matches_fd():
    for _ in range(20):
        q = RNG.uniform(-1.5, 1.5, 7)
        J = manipulability_jacobian(q)
        eps = 1e-6
        for i in range(7):
            d = np.zeros(7)
            d[i] = eps
            fd = (manipulability_value(q + d) - manipulability_value(q - d)) / (2 * eps)
            assert abs(J[0, i] - fd) < 1e-8


def test_joint_limit_midpoint_zero_and_upper_bound_value():
    assert joint_limit_value(CHAIN.midpoints, CHAIN) == 0.0
    assert abs(joint_limit_value(CHAIN.q_upper, CHAIN) - 0.125) < 1e-12


def test_joint_limit_gradient_matches_fd():
    for _ in range(20):
        q = RNG.uniform(CHAIN.q_lower, CHAIN.q_upper)
        J = joint_limit_jacobian(q, CHAIN)
        eps = 1e-6
        for i in range(7):
            d = np.zeros(7)
            d[i] = eps
            fd = (joint_limit_value(q + d, CHAIN) - joint_limit_value(q - d, CHAIN)) / (2 * eps)
            assert abs(J[0, i] - fd) < 1e-8


# --- force helpers --------------------------------------------------------------


def test_force_error_zero_when_matched():
    f = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(force_task_error(f, f, np.eye(3)), np.zeros(3))


def test_force_error_axis_permutation():
    c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    e = force_task_error(np.array([1.0, 0, 0]), np.zeros(3), R)
    assert np.allclose(e, [0.0, -1.0, 0.0], atol=1e-12)


def test_force_error_rotation_oracle_and_validation():
    for _ in range(10):
        axis = RNG.normal(size=3)
        axis /= np.linalg.norm(axis)
        th = RNG.uniform(-np.pi, np.pi)
        K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        R = np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K
        f_c = RNG.normal(size=3)
        f_d = RNG.normal(size=3)
        assert np.array_equal(force_task_error(f_c, f_d, R), f_d - R @ f_c)
    with pytest.raises(ValueError):
        force_task_error(np.zeros(3), np.zeros(3), np.eye(3) * 1.001)


def test_kineto_static_dual():
    assert np.array_equal(kineto_static_dual(RNG.normal(size=(3, 7)), np.zeros(3)), np.zeros(7))
    J = np.hstack([np.eye(3), np.zeros((3, 4))])
    f = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(kineto_static_dual(J, f), np.concatenate([f, np.zeros(4)]))
    J = RNG.normal(size=(3, 7))
    f = RNG.normal(size=3)
    assert np.array_equal(kineto_static_dual(J, f), J.T @ f)


def test_gripper_jacobian_columns():
    y = np.array([0.0, 1.0, 0.0])
    Jg = gripper_jacobian(y)
    assert Jg.shape == (3, 2)
    assert np.array_equal(Jg[:, 0], y)
    assert np.array_equal(Jg[:, 1], -y)


# --- cascaded QP -----------------------------------------------------------------


def _random_stack(rng, with_soft=True):
    tasks = [_const_task("p", rng.normal(size=(5, 7)), rng.normal(size=5), gain=2.0)]
    if with_soft:
        tasks.append(_const_task("m", rng.normal(size=(1, 7)), rng.normal(size=1),
                                 weight=0.5, priority=None))
        tasks.append(_const_task("l", rng.normal(size=(1, 7)), rng.normal(size=1),
                                 weight=0.5, priority=None))
    return TaskStack(tasks, velocity_bounds=(-50.0, 50.0))


def test_qp_matches_closed_form_when_bounds_inactive():
    cfg = SolverConfig()
    for trial in range(25):
        rng = np.random.default_rng(300 + trial)
        stack = _random_stack(rng)
        state = ControlState(q=np.zeros(7))
        closed = solve_prioritized(stack, state, damping=cfg.damping)
        qp = solve_cascaded_qp(stack, state, config=cfg)
        assert np.max(np.abs(closed.qdot - qp.qdot)) < 1e-6
        assert qp.kkt_residual < 1e-8


def test_qp_pinned_velocity_absorbs_error_in_slack():
    stack = TaskStack([_const_task("p", RNG.normal(size=(5, 7)), RNG.normal(size=5), gain=2.0)],
                      velocity_bounds=(0.0, 0.0))
    sol = solve_cascaded_qp(stack, ControlState(q=np.zeros(7)))
    assert np.array_equal(sol.qdot, np.zeros(7))
    J, e = stack.tasks[0].jacobian(None), stack.tasks[0].error(None)
    assert abs(sol.slack_norms[0] - np.linalg.norm(2.0 * e)) < 1e-12


def test_qp_two_joint_toy_matches_grid_search():
    """One active bound; oracle is exhaustive search over the feasible box
    at 1e-4 resolution."""
    J = np.array([[1.0, 0.4], [-0.3, 1.2]])
    e = np.array([0.9, -0.2])
    gain = 1.0
    lo, hi = np.array([-0.05, -0.05]), np.array([0.05, 0.05])
    stack = TaskStack([_const_task("p", J, e, gain=gain)], velocity_bounds=(lo, hi))
    cfg = SolverConfig(damping=1e-4)
    sol = solve_cascaded_qp(stack, ControlState(q=np.zeros(2)), config=cfg)

    xs = np.linspace(-0.05, 0.05, 1001)  # 1e-4 steps
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    r = P @ J.T - gain * e
    cost = 0.5 * np.sum(r**2, axis=1) + 0.5 * cfg.damping**2 * np.sum(P**2, axis=1)
    best = P[np.argmin(cost)]
    assert np.max(np.abs(sol.qdot - best)) < 1e-3
    assert np.any(np.isclose(np.abs(sol.qdot), 0.05, atol=1e-9))  # a bound is active
    assert sol.kkt_residual < 1e-8


def test_qp_velocity_bounds_never_violated():
    for trial in range(15):
        rng = np.random.default_rng(900 + trial)
        stack = _random_stack(rng)
        lo, hi = np.full(7, -0.01), np.full(7, 0.01)
        sol = solve_cascaded_qp(stack, ControlState(q=np.zeros(7)), bounds=(lo, hi))
        assert np.all(sol.qdot >= lo) and np.all(sol.qdot <= hi)
        assert sol.kkt_residual < 1e-8


def test_qp_hard_priority_preserved_with_bounds_inactive():
    cfg = SolverConfig()
    for trial in range(10):
        rng = np.random.default_rng(40 + trial)
        J0 = rng.normal(size=(5, 7))
        e0 = rng.normal(size=5)
        base = TaskStack([_const_task("p", J0, e0, gain=2.0)], velocity_bounds=(-50, 50))
        full = _random_stack(rng)
        full.tasks[0] = _const_task("p", J0, e0, gain=2.0)
        state = ControlState(q=np.zeros(7))
        q_base = solve_cascaded_qp(base, state, config=cfg).qdot
        q_full = solve_cascaded_qp(full, state, config=cfg).qdot
        assert np.linalg.norm(J0 @ (q_full - q_base)) < 1e-6


def test_stack_requires_exactly_one_level0():
    with pytest.raises(ValueError):
        TaskStack([_const_task("a", np.eye(3, 7), np.zeros(3), priority=1)])
    with pytest.raises(ValueError):
        TaskStack([
            _const_task("a", np.eye(3, 7), np.zeros(3), priority=0),
            _const_task("b", np.eye(3, 7), np.zeros(3), priority=0),
        ])


# --- integration -------------------------------------------------------------


def test_integrate_zero_velocity():
    q = RNG.uniform(CHAIN.q_lower, CHAIN.q_upper)
    q2, sat = integrate_step(q, np.zeros(7), 1e-3, CHAIN)
    assert np.array_equal(q, q2)
    assert not np.any(sat)


def test_integrate_step_size():
    q = CHAIN.midpoints.copy()
    qdot = np.zeros(7)
    qdot[0] = 1.0
    q2, sat = integrate_step(q, qdot, 1e-3, CHAIN)
    assert abs((q2[0] - q[0]) - 1e-3) < 1e-15
    assert not np.any(sat)


def test_integrate_clamps_and_flags_saturation():
    q = CHAIN.q_upper - 1e-5
    qdot = np.ones(7)
    q2, sat = integrate_step(q, qdot, 1e-3, CHAIN)
    assert np.array_equal(q2, CHAIN.q_upper)
    assert np.all(sat)
    with pytest.raises(ValueError):
        integrate_step(q, qdot, 0.0, CHAIN)


# --- convergence -------------------------------------------------------------


def test_cartesian_convergence_monotone_after_transient():
    target = forward_kinematics(CHAIN, np.array([0.3, 0.6, -0.2, -0.8, 0.3, 1.2, 0.1]))
    task = cartesian_pose_task(CHAIN, target, gain=2.0)
    stack = TaskStack([task], velocity_bounds=(-2.5, 2.5))
    q = np.array([0.0, 0.618, 0.0, -0.9, 0.0, 1.6212, 0.0])
    errs = []
    for k in range(5000):
        sol = solve_prioritized(stack, ControlState(q=q))
        q, _ = integrate_step(q, sol.qdot, 1e-3, CHAIN)
        if k % 100 == 0:
            errs.append(np.linalg.norm(forward_kinematics(CHAIN, q).position - target.position))
    assert errs[-1] < 1e-3
    tail = errs[10:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_task_factories_embed_into_wider_space():
    m = manipulability_task(CHAIN, 0.5, n_total=9)
    l = joint_limit_task(CHAIN, n_total=9)
    state = ControlState(q=CHAIN.midpoints)
    assert m.jacobian(state).shape == (1, 9)
    assert l.jacobian(state).shape == (1, 9)
    assert np.array_equal(m.jacobian(state)[0, 7:], np.zeros(2))


def test_solver_config_round_trip():
    cfg = SolverConfig.from_dict({"damping": 5e-4, "gains": {"cartesian": 3.0},
                                  "qdot_bounds": [-1.0, 1.0]})
    assert cfg.damping == 5e-4
    assert cfg.gains["cartesian"] == 3.0
    assert cfg.gains["force"] == 1.0
    assert cfg.qdot_bounds == (-1.0, 1.0)
    with pytest.raises(ValueError):
        SolverConfig.from_dict({"schema": "solver.v2"})
