"""Deterministic multi-rate simulation: world synthesis, control loop, logging.

One simulated clock drives everything. Control runs at 1 kHz; tracking
frames land at 5 Hz, detection frames at 25 Hz, and tactile frames are
synthesized every control tick (the sensor's nominal raw rate is kept as
decimation bookkeeping on the frames). Identical (scenario, seed) pairs
produce byte-identical logs.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tactile
from .fsm import Events, Phase, StackDirective, SwitchingFsm, TransitionRecord
from .kinematics import (
    GAMMA,
    KinematicChain,
    Pose,
    canonicalize_quat,
    cartesian_task_error,
    forward_kinematics,
    geometric_jacobian,
    joint_transforms,
    quat_from_axis_angle,
    quat_multiply,
)
from .metrics import MetricsReport, TrialLog, compute_report, dumps_report, render_text_table
from .perception import (
    ArmTracker,
    CameraExtrinsics,
    CameraIntrinsics,
    PointCloud,
    SkeletonScenario,
    detect_objects,
    skeleton_from_wrist,
)
from .scenario import ObjectSpec, Scenario
from .tactile import (
    DeformationVector,
    ForceMapper,
    check_friction_cone,
    force_to_base,
    interpolate_taxels,
    map_force,
    modulate_grip,
    synth_calibration_data,
    taxels_from_deformation,
    train_force_mapper,
)
from .tasks import (
    ControlState,
    TaskSpec,
    TaskStack,
    force_task_error,
    gripper_jacobian,
    kineto_static_dual,
    solve_cascaded_qp,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("t,phase,q1,q2,q3,q4,q5,q6,q7,ee_x,ee_y,ee_z,ee_qw,ee_qx,ee_qy,ee_qz,"
              "wrist_x,wrist_y,wrist_z,fx,fy,fz,Dx,Dy,Dz,slip,event")
TRANSITION_HEADER = "t,from,to,trigger,wrist_z,setpoint_z"

# Sensor frame on the jaw: x along the tool axis, y across it, z into the
# object (the jaw closing axis). Columns are sensor axes in EE coordinates.
R_SENSOR_TO_EE = np.array([
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
])


def tool_axis_cartesian_task(
    chain: KinematicChain,
    target: Pose,
    gain: float = 2.0,
    weight: float = 1.0,
    priority: int | None = 0,
    n_total: int | None = None,
    task_id: str = "cartesian",
) -> TaskSpec:
    """Production Cartesian task: position plus tool-axis alignment.

    The orientation rows measure the minimal tilt between the current tool
    z-axis and the target pose's tool z-axis, leaving yaw free; see
    align_tool_axis for why fixed-quaternion targets are avoided.
    """
    width = n_total or chain.n
    z_d = target.rotation()[:, 2]

    def jac(state: ControlState) -> np.ndarray:
        J = geometric_jacobian(chain, state.q)
        out = np.zeros((5, width))
        out[:3, :chain.n] = J[:3]
        out[3:, :chain.n] = GAMMA @ J[3:]
        return out

    def err(state: ControlState) -> np.ndarray:
        cur = forward_kinematics(chain, state.q)
        return _tool_axis_error(cur.position, cur.rotation()[:, 2], target.position, z_d)

    return TaskSpec(task_id, jac, err, gain * np.ones(5), weight, priority)


def _tool_axis_error(p_cur, z_c, p_d, z_d) -> np.ndarray:
    """Direct form of cartesian_task_error against align_tool_axis(cur, target):
    the error quaternion is the minimal tilt rotation itself."""
    axis = np.array([
        z_c[1] * z_d[2] - z_c[2] * z_d[1],
        z_c[2] * z_d[0] - z_c[0] * z_d[2],
        z_c[0] * z_d[1] - z_c[1] * z_d[0],
    ])
    s = float(np.linalg.norm(axis))
    c = float(np.clip(z_c @ z_d, -1.0, 1.0))
    if s < 1e-12:
        e_o = np.zeros(2) if c > 0.0 else np.array([1.0, 0.0])
    else:
        e_o = (axis / s * np.sqrt(max(0.0, 0.5 * (1.0 - c))))[:2]
    return np.concatenate([p_d - p_cur, e_o])


def align_tool_axis(current: Pose, target: Pose) -> Pose:
    """Yaw-free orientation target: the smallest rotation taking the current
    tool z-axis onto the target pose's z-axis, composed with the current
    orientation. Keeps the two constrained orientation rows measuring pure
    tilt; a fixed full quaternion would contaminate them with the
    uncontrolled yaw angle.
    """
    z_c = current.rotation()[:, 2]
    z_d = target.rotation()[:, 2]
    c = float(np.clip(z_c @ z_d, -1.0, 1.0))
    axis = np.cross(z_c, z_d)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        if c > 0.0:
            return Pose(target.position, current.quaternion.copy())
        dq = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), np.pi)
    else:
        dq = quat_from_axis_angle(axis / n, float(np.arctan2(n, c)))
    return Pose(target.position, canonicalize_quat(quat_multiply(dq, current.quaternion)))


@dataclass
class SimObject:
    spec: ObjectSpec
    position: np.ndarray
    yaw: float
    attached: bool = False
    attach_offset: np.ndarray | None = None

    @property
    def width(self) -> float:
        return float(min(self.spec.dims[0], self.spec.dims[1]))


@dataclass
class SimulationRun:
    scenario_name: str
    seed: int
    trials: list
    stats: dict
    workspace_diagonal: float


class ScriptedLeader:
    """Keyframe-driven leader wrist and gesture source."""

    def __init__(self, skeleton_scenario: SkeletonScenario):
        self.scenario = skeleton_scenario

    def sample(self, t: float):
        return self.scenario.sample(t)

    def occluded_at(self, t: float) -> bool:
        return self.scenario.occluded_at(t)


class InteractiveLeader:
    """Command-driven leader source for live sessions.

    The wrist holds its last commanded position; gesture commands latch
    their flag for a short window so the tracker's debouncing sees at
    least two frames.
    """

    def __init__(self, home_wrist: np.ndarray, home_radius: float = 0.05,
                 gesture_hold: float = 0.8):
        self.home_wrist = np.asarray(home_wrist, dtype=float)
        self.wrist = self.home_wrist.copy()
        self.home_radius = home_radius
        self.gesture_hold = gesture_hold
        self._open_palm_until = -np.inf
        self._home_until = -np.inf

    def set_wrist(self, xyz) -> None:
        self.wrist = np.asarray(xyz, dtype=float).copy()

    def gesture(self, name: str, t: float) -> None:
        if name == "open_palm":
            self._open_palm_until = t + self.gesture_hold
        elif name == "home":
            self._home_until = t + self.gesture_hold
        else:
            raise ValueError(f"unknown gesture {name!r}")

    def sample(self, t: float):
        near_home = np.linalg.norm(self.wrist - self.home_wrist) <= self.home_radius
        home = near_home or t <= self._home_until
        return self.wrist.copy(), t <= self._open_palm_until, home

    def occluded_at(self, t: float) -> bool:
        return False


class TrialSim:
    """One trial of one scenario on the shared simulated clock."""

    def __init__(
        self,
        scenario: Scenario,
        trial_index: int,
        mapper: ForceMapper,
        seed: int,
        leader=None,
    ):
        self.scenario = scenario
        self.trial_index = trial_index
        self.mapper = mapper
        self.chain = scenario.chain
        self.rng = np.random.default_rng([seed, trial_index])
        self.grasp_cfg = scenario.grasp

        self.objects = self._place_objects()
        self.leader = leader or ScriptedLeader(self._skeleton_scenario())

        self.tracking_intr = CameraIntrinsics()
        self.tracking_extr = CameraExtrinsics.look_at(scenario.tracking_eye, scenario.tracking_look_at)
        self.T_c_e = np.eye(4)
        self.T_c_e[:3, 3] = scenario.detection_offset
        self.T_s_e = np.eye(4)
        self.T_s_e[:3, :3] = R_SENSOR_TO_EE

        self.tracker = ArmTracker(scenario.leader_arm, window=5,
                                  staleness_horizon=scenario.fsm.staleness_horizon)
        home_pose = forward_kinematics(self.chain, scenario.home_q)
        self.fsm = SwitchingFsm(home_pose, scenario.fsm)
        self.fsm.set_contact_threshold(scenario.friction.contact_force_threshold)

        self.q = scenario.home_q.copy()
        self.jaw = np.zeros(2)
        self.dt = scenario.rates.dt
        self.n_ticks = scenario.n_ticks
        self.directive: StackDirective = self.fsm.directive()
        self.hold_started: float | None = None
        self._stack_cache: tuple | None = None

        # Perception caches shared across ticks until the next frame lands.
        self._wrist = None
        self._wrist_t = -np.inf
        self._flags = (False, False)
        self._tracking_lost = False
        self._detections: list = []
        self._detections_t = -np.inf
        self._track_count = 0
        self._det_count = 0
        self._tactile_count = 0

        self._alloc_logs()

    # -- setup ------------------------------------------------------------

    def _place_objects(self) -> list:
        out = []
        jitter = self.scenario.object_jitter
        for spec in self.scenario.objects:
            pos = spec.xyz.copy()
            yaw = spec.yaw
            if jitter > 0.0:
                pos = pos + np.concatenate([self.rng.uniform(-jitter, jitter, 2), [0.0]])
                yaw = yaw + self.rng.uniform(-0.3, 0.3)
            out.append(SimObject(spec, pos, yaw))
        return out

    def _skeleton_scenario(self) -> SkeletonScenario:
        anchor = self.objects[0].position if self.objects else np.zeros(3)
        keyframes = []
        for k in self.scenario.keyframes:
            wrist = np.asarray(k["wrist"], dtype=float).copy()
            if k.get("at_object"):
                wrist[0] += anchor[0]
                wrist[1] += anchor[1]
            keyframes.append({
                "t": k["t"], "wrist": wrist,
                "open_palm": bool(k.get("open_palm")), "home": bool(k.get("home")),
            })
        return SkeletonScenario(keyframes, self.scenario.leader_torso, self.scenario.leader_arm)

    def _alloc_logs(self):
        n = self.n_ticks
        self.log_t = np.zeros(n)
        self.log_phase = [""] * n
        self.log_q = np.zeros((n, self.chain.n))
        self.log_ee_pos = np.zeros((n, 3))
        self.log_ee_quat = np.zeros((n, 4))
        self.log_wrist = np.full((n, 3), np.nan)
        self.log_force = np.zeros((n, 3))
        self.log_deform = np.zeros((n, 3))
        self.log_slip = np.zeros(n, dtype=int)
        self.log_events = [""] * n
        self.log_jaw = np.zeros((n, 2))
        self.transitions: list = []

    # -- per-tick pieces ---------------------------------------------------

    def _tracking_due(self, k: int) -> bool:
        interval = self.scenario.rates.control_hz / self.scenario.rates.tracking_hz
        return int(k % round(interval)) == 0

    def _detection_due(self, k: int) -> bool:
        interval = self.scenario.rates.control_hz / self.scenario.rates.detection_hz
        return int(k % round(interval)) == 0

    def _update_tracking(self, t: float) -> bool:
        wrist_cmd, open_palm, home = self.leader.sample(t)
        frame = skeleton_from_wrist(
            wrist_cmd, self.scenario.leader_torso, self.scenario.leader_arm,
            t, self.tracking_intr, self.tracking_extr,
            occluded=self.leader.occluded_at(t),
        )
        tracked = self.tracker.update(frame)
        self._tracking_lost = tracked.lost
        if tracked.wrist is not None:
            self._wrist = tracked.wrist
            self._wrist_t = t
        self._flags = (open_palm, home)
        self._track_count += 1
        return True

    def _update_detection(self, t: float, T_e_b: np.ndarray) -> None:
        cloud = self._point_cloud(t, T_e_b)
        seed = int(self.rng.integers(0, 2**31 - 1))
        if len(cloud) >= 3:
            self._detections = detect_objects(cloud, self.T_c_e, T_e_b, seed=seed,
                                              ransac_iterations=40)
            self._detections_t = t
        else:
            self._detections = []
        self._det_count += 1

    def _point_cloud(self, t: float, T_e_b: np.ndarray) -> PointCloud:
        """Synthesize the eye-in-hand view of the table scene (camera frame)."""
        ee_z = T_e_b[2, 3]
        if ee_z < 0.15:
            return PointCloud(np.zeros((0, 3)), t)
        pts = [self._table_points()]
        for obj in self.objects:
            pts.append(self._object_points(obj))
        world = np.vstack(pts)
        world = world + self.rng.normal(0.0, 0.0005, world.shape)
        outliers = self.rng.uniform([-0.5, -0.5, 0.5], [0.5, 0.5, 1.5], (5, 3))
        world = np.vstack([world, outliers])
        T_b_c = np.linalg.inv(T_e_b @ self.T_c_e)
        cam = world @ T_b_c[:3, :3].T + T_b_c[:3, 3]
        cam = cam[cam[:, 2] > 0.05]
        return PointCloud(cam, t)

    def _table_points(self) -> np.ndarray:
        xs = np.arange(0.25, 0.66, 0.012)
        ys = np.arange(-0.25, 0.26, 0.012)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def _object_points(self, obj: SimObject) -> np.ndarray:
        """Surface samples of an axis-aligned box at the object pose."""
        dx, dy, dz = obj.spec.dims
        step = 0.008
        xs = np.arange(-dx / 2, dx / 2 + 1e-9, min(step, dx / 2))
        ys = np.arange(-dy / 2, dy / 2 + 1e-9, min(step, dy / 2))
        zs = np.arange(-dz / 2, dz / 2 + 1e-9, min(step, dz / 2))
        top = np.column_stack([g.ravel() for g in np.meshgrid(xs, ys)] + [np.full(len(xs) * len(ys), dz / 2)])
        side_x0 = np.column_stack([np.full(len(ys) * len(zs), -dx / 2)] + [g.ravel() for g in np.meshgrid(ys, zs)])
        side_x1 = side_x0.copy()
        side_x1[:, 0] = dx / 2
        gy, gz = np.meshgrid(xs, zs)
        side_y0 = np.column_stack([gy.ravel(), np.full(gy.size, -dy / 2), gz.ravel()])
        side_y1 = side_y0.copy()
        side_y1[:, 1] = dy / 2
        local = np.vstack([top, side_x0, side_x1, side_y0, side_y1])
        cy, sy = np.cos(obj.yaw), np.sin(obj.yaw)
        R = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        return local @ R.T + obj.position

    def _target_object(self, ee_pos: np.ndarray) -> SimObject | None:
        if not self.objects:
            return None
        return min(self.objects, key=lambda o: float(np.linalg.norm(o.position - ee_pos)))

    def _tactile_step(self, t: float, ee_pos: np.ndarray, R_ee: np.ndarray):
        """Contact model -> taxel grids -> deformation -> force -> verdict."""
        cfg = self.grasp_cfg
        obj = self._target_object(ee_pos)
        squeeze = 0.0
        imbalance = 0.0
        near = False
        if obj is not None:
            gap = cfg.gap_open - float(self.jaw.sum())
            near = float(np.linalg.norm(ee_pos - obj.position)) <= cfg.contact_range
            if near or obj.attached:
                squeeze = max(0.0, obj.width - gap)
            if squeeze > 0.0:
                jaw_axis = R_ee[:, 1]
                offset = float((obj.position - ee_pos) @ jaw_axis)
                asym = 0.5 * float(self.jaw[0] - self.jaw[1])
                imbalance = -2.0 * cfg.stiffness * (offset - asym)

        d_z = 1000.0 * 0.5 * squeeze
        d_x = 0.0
        d_y = 0.0
        if squeeze > 0.0:
            scale = 1.0
            for ev in self.scenario.tactile_events:
                if ev["t"] <= t <= ev["t"] + ev["duration"]:
                    scale = float(ev.get("tangential_scale", 1.0))
            d_x = cfg.preload_mm * scale
            if self.directive.phase is Phase.MANIPULATE and self.directive.submode == "hold":
                if self.hold_started is None:
                    self.hold_started = t
                wiggle = cfg.interaction_amp_mm * np.sin(
                    2.0 * np.pi * cfg.interaction_hz * (t - self.hold_started))
                d_x += wiggle * scale
            else:
                self.hold_started = None

        truth = DeformationVector(d_x, d_y, d_z)
        grid = taxels_from_deformation(truth)
        frames = [
            tactile.TactileFrame(t, grid, "left_jaw"),
            tactile.TactileFrame(t, grid, "right_jaw"),
        ]
        # Both jaws see the same grid in this contact model; interpolate once.
        d = interpolate_taxels(frames[0])[1]
        self._tactile_count += 2

        f_sensor = map_force(self.mapper, d) if squeeze > 0.0 else np.zeros(3)
        T_e_b = np.eye(4)
        T_e_b[:3, :3] = R_ee
        f_base = force_to_base(f_sensor, self.T_s_e, T_e_b)
        verdict = None
        if squeeze > 0.0:
            verdict = check_friction_cone(d, self.scenario.friction, self.scenario.friction_convention)
        return d, f_sensor, f_base, verdict, squeeze, imbalance, obj, near

    # -- stack assembly ----------------------------------------------------

    def _build_stack(self, directive: StackDirective) -> TaskStack:
        chain = self.chain
        solver = self.scenario.solver
        n_total = chain.n + 2
        chi_d = _manip_target(self.scenario)

        def cart_jac(state):
            J = state.extras["J_task"]
            out = np.zeros((5, n_total))
            out[:, :chain.n] = J
            return out

        tool_axis_target = directive.target.rotation()[:, 2]

        def cart_err(state, target=directive.target, z_d=tool_axis_target):
            cur = state.extras["ee_pose"]
            return _tool_axis_error(cur.position, state.extras["R_ee"][:, 2],
                                    target.position, z_d)

        def force_jac(state):
            out = np.zeros((3, n_total))
            out[:, chain.n:] = gripper_jacobian(state.extras["jaw_axis"])
            return out

        def force_err(state):
            return force_task_error(
                state.extras["imbalance_sensor"], np.zeros(3), state.extras["R_s_b"])

        def manip_jac(state):
            out = np.zeros((1, n_total))
            q = state.q
            out[0, 1:chain.n - 1] = np.cos(q[1:-1]) * np.sin(q[1:-1])
            return out

        def manip_err(state):
            from .tasks import manipulability_value
            return np.array([chi_d - manipulability_value(state.q)])

        def limits_jac(state):
            from .tasks import joint_limit_jacobian
            out = np.zeros((1, n_total))
            out[0, :chain.n] = joint_limit_jacobian(state.q, chain)[0]
            return out

        def limits_err(state):
            from .tasks import joint_limit_value
            return np.array([-joint_limit_value(state.q, chain)])

        cartesian = TaskSpec("cartesian", cart_jac, cart_err,
                             solver.gains["cartesian"] * np.ones(5),
                             solver.alphas["cartesian"], 0)
        force = TaskSpec("force", force_jac, force_err,
                         solver.gains["force"] * np.ones(3),
                         solver.alphas["force"], 0)
        softs = [
            TaskSpec("manipulability", manip_jac, manip_err,
                     np.array([solver.gains["manipulability"]]),
                     solver.alphas["manipulability"], None),
            TaskSpec("joint_limit", limits_jac, limits_err,
                     np.array([solver.gains["joint_limit"]]),
                     solver.alphas["joint_limit"], None),
        ]
        if directive.primary == "force":
            force.priority = 0
            cartesian.priority = 1
            tasks = [force, cartesian, *softs]
        else:
            cartesian.priority = 0
            if directive.phase in (Phase.GRASP, Phase.MANIPULATE):
                force.priority = 1
                tasks = [cartesian, force, *softs]
            else:
                tasks = [cartesian, *softs]
        lo = np.concatenate([np.full(chain.n, solver.qdot_bounds[0]),
                             np.full(2, -self.grasp_cfg.jaw_rate_limit)])
        hi = np.concatenate([np.full(chain.n, solver.qdot_bounds[1]),
                             np.full(2, self.grasp_cfg.jaw_rate_limit)])
        return TaskStack(tasks, (lo, hi), self.dt)

    # -- main tick ----------------------------------------------------------

    def step(self, k: int) -> dict:
        t = k * self.dt
        scenario = self.scenario
        transforms = joint_transforms(self.chain, self.q)
        T_e_b = transforms[-1]
        ee_pose = Pose.from_matrix(T_e_b)
        R_ee = T_e_b[:3, :3]
        J_geo = geometric_jacobian(self.chain, self.q, transforms)
        J_task = np.vstack([J_geo[:3], GAMMA @ J_geo[3:]])

        # Frames are timestamped on their own exact rate grids.
        tracking_fresh = False
        if self._tracking_due(k):
            tracking_fresh = self._update_tracking(self._track_count / self.scenario.rates.tracking_hz)
        if self._detection_due(k):
            self._update_detection(self._det_count / self.scenario.rates.detection_hz, T_e_b)

        d, f_sensor, f_base, verdict, squeeze, imbalance, obj, near = self._tactile_step(
            t, ee_pose.position, R_ee)

        events = Events(
            t=t,
            wrist=self._wrist,
            wrist_t=self._wrist_t,
            wrist_home=self._flags[1],
            open_palm=self._flags[0],
            tracking_fresh=tracking_fresh,
            tracking_lost=self._tracking_lost,
            detections=self._detections,
            detections_t=self._detections_t,
            contact_force=float(np.linalg.norm(f_sensor)),
            stability=verdict,
            ee_position=ee_pose.position,
        )
        directive, records = self.fsm.step(events)
        if directive.primary == "force":
            assert directive.phase in (Phase.GRASP, Phase.MANIPULATE)
        self.directive = directive

        state = ControlState(q=self.q, jaw=self.jaw, extras={
            "ee_pose": ee_pose,
            "R_ee": R_ee,
            "J_task": J_task,
            "jaw_axis": R_ee[:, 1],
            "R_s_b": R_ee @ R_SENSOR_TO_EE,
            "imbalance_sensor": np.array([0.0, 0.0, imbalance]),
        })
        # The stack only changes when the directive does (targets are fixed
        # per phase entry); reuse it between ticks.
        key = (directive.phase, directive.submode, directive.primary, id(directive.target))
        if self._stack_cache is None or self._stack_cache[0] != key:
            self._stack_cache = (key, self._build_stack(directive))
        stack = self._stack_cache[1]
        sol = solve_cascaded_qp(stack, state, config=scenario.solver,
                                with_residuals=False, verify=False)
        qdot = sol.qdot.copy()

        # Grip feedforward lives in the null direction of the balance task.
        if directive.grip == "open":
            rate = -self.grasp_cfg.jaw_rate_limit
            qdot[self.chain.n:] += rate * (self.jaw > 0.0)
        elif directive.grip == "regulate" and obj is not None:
            if near or obj.attached:
                rate = modulate_grip(f_sensor, self.grasp_cfg.force_target,
                                     self.grasp_cfg.modulate_gain,
                                     self.grasp_cfg.jaw_rate_limit)
                qdot[self.chain.n:] += rate
            else:
                # Approach: pre-close to a standoff gap, never onto the
                # object; squeezing only starts within contact range.
                gap = self.grasp_cfg.gap_open - float(self.jaw.sum())
                standoff = obj.width + 0.02
                rate = float(np.clip(0.25 * (gap - standoff),
                                     -self.grasp_cfg.jaw_rate_limit,
                                     self.grasp_cfg.jaw_rate_limit))
                qdot[self.chain.n:] += rate
        if directive.kineto_static_hold:
            f_shear = force_to_base(np.array([f_sensor[0], f_sensor[1], 0.0]),
                                    self.T_s_e, T_e_b)
            qdot[:self.chain.n] += self.grasp_cfg.kineto_scale * kineto_static_dual(J_geo[:3], f_shear)

        lo, hi = stack.velocity_bounds
        qdot = np.clip(qdot, lo, hi)

        self.q = self.chain.clamp(self.q + qdot[:self.chain.n] * self.dt)
        self.jaw = np.clip(self.jaw + qdot[self.chain.n:] * self.dt,
                           0.0, self.grasp_cfg.jaw_travel)
        self._update_attachment(obj, squeeze, ee_pose.position)

        ev_text = ";".join(f"transition:{r.src.value}->{r.dst.value}:{r.trigger}" for r in records)
        self.transitions.extend(records)
        self._log_tick(k, t, ee_pose, d, f_base, verdict, ev_text)
        return {
            "t": t, "phase": self.fsm.ctx.phase.value, "ee_pose": ee_pose,
            "records": records, "deformation": d, "force": f_base,
            "slip": verdict == "slip", "detections": self._detections,
            "wrist": self._wrist,
        }

    def _update_attachment(self, obj: SimObject | None, squeeze: float, ee_pos: np.ndarray):
        if obj is None:
            return
        if squeeze >= self.grasp_cfg.attach_squeeze:
            if not obj.attached:
                obj.attached = True
                obj.attach_offset = obj.position - ee_pos
            obj.position = ee_pos + obj.attach_offset
        elif obj.attached and squeeze <= 0.0:
            obj.attached = False
            obj.attach_offset = None
            obj.position = np.array([obj.position[0], obj.position[1], obj.spec.dims[2] / 2.0])

    def _log_tick(self, k, t, ee_pose, d, f_base, verdict, ev_text):
        self.log_t[k] = t
        self.log_phase[k] = self.fsm.ctx.phase.value
        self.log_q[k] = self.q
        self.log_ee_pos[k] = ee_pose.position
        self.log_ee_quat[k] = ee_pose.quaternion
        if self._wrist is not None:
            self.log_wrist[k] = self._wrist
        self.log_force[k] = f_base
        self.log_deform[k] = d.as_array()
        self.log_slip[k] = 1 if verdict == "slip" else 0
        self.log_events[k] = ev_text
        self.log_jaw[k] = self.jaw

    def run(self) -> TrialLog:
        for k in range(self.n_ticks):
            self.step(k)
        return self.trial_log()

    def trial_log(self) -> TrialLog:
        n = self.n_ticks
        return TrialLog(
            trial_id=self.trial_index,
            task_id=self.scenario.name,
            t=self.log_t[:n],
            phase=self.log_phase[:n],
            q=self.log_q[:n],
            ee_position=self.log_ee_pos[:n],
            ee_quaternion=self.log_ee_quat[:n],
            wrist=self.log_wrist[:n],
            force=self.log_force[:n],
            deformation=self.log_deform[:n],
            slip=self.log_slip[:n],
            events=self.log_events[:n],
            jaw=self.log_jaw[:n],
            transitions=list(self.transitions),
        )

    def counters(self) -> dict:
        return {
            "control_ticks": self.n_ticks,
            "tracking_frames": self._track_count,
            "detection_frames": self._det_count,
            "tactile_frames": self._tactile_count,
        }


def _manip_target(scenario: Scenario) -> float:
    from .tasks import manipulability_value

    return manipulability_value(scenario.home_q)


def train_scenario_mapper(scenario: Scenario) -> ForceMapper:
    """Calibration-train the deformation-to-force network for a scenario."""
    K = np.array([
        [scenario.grasp.stiffness / 2000.0, 0.0, 0.0],
        [0.0, scenario.grasp.stiffness / 2000.0, 0.0],
        [0.0, 0.0, scenario.grasp.stiffness / 500.0],
    ])
    D_tr, F_tr, D_te, F_te = synth_calibration_data(100, 20, seed=scenario.seed, K=K)
    return train_force_mapper((D_tr, F_tr), (D_te, F_te), seed=scenario.seed)


def run_simulation(scenario: Scenario, seed: int | None = None, trials: int | None = None) -> SimulationRun:
    """Run all trials of a scenario; deterministic for a fixed (scenario, seed)."""
    seed = scenario.seed if seed is None else seed
    n_trials = scenario.trials if trials is None else trials
    mapper = train_scenario_mapper(scenario)
    logs = []
    stats = {"trials": n_trials, "wall_s": 0.0}
    start = time.perf_counter()
    for trial in range(n_trials):
        sim = TrialSim(scenario, trial, mapper, seed)
        try:
            logs.append(sim.run())
        except AssertionError as exc:  # solver failure aborts the trial only
            log.error("trial %d aborted: %s", trial, exc)
            stats.setdefault("aborted", []).append({"trial": trial, "reason": str(exc)})
            continue
        for key, value in sim.counters().items():
            stats[key] = stats.get(key, 0) + value
    stats["wall_s"] = time.perf_counter() - start
    return SimulationRun(scenario.name, seed, logs, stats, scenario.workspace_diagonal)


# ---------------------------------------------------------------------------
# Log files


def _fmt_row(values) -> str:
    return ",".join(values)


def write_trial_files(trial: TrialLog, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"trial_{trial.task_id}_{trial.trial_id:02d}"
    lines = [CSV_HEADER]
    for k in range(trial.n_ticks):
        q = trial.q[k]
        ee = trial.ee_position[k]
        eq = trial.ee_quaternion[k]
        w = trial.wrist[k]
        f = trial.force[k]
        d = trial.deformation[k]
        lines.append(_fmt_row([
            repr(float(trial.t[k])), trial.phase[k],
            *(repr(float(v)) for v in q),
            *(repr(float(v)) for v in ee),
            *(repr(float(v)) for v in eq),
            *(repr(float(v)) for v in w),
            *(repr(float(v)) for v in f),
            *(repr(float(v)) for v in d),
            str(int(trial.slip[k])), trial.events[k],
        ]))
    (out_dir / f"{stem}.csv").write_text("\n".join(lines) + "\n")

    tlines = [TRANSITION_HEADER]
    tlines += [rec.as_csv_row() for rec in trial.transitions]
    (out_dir / f"{stem}.transitions.csv").write_text("\n".join(tlines) + "\n")

    meta = {
        "trial_id": trial.trial_id,
        "task_id": trial.task_id,
        "transitions": [
            {"t": rec.t, "src": rec.src.value, "dst": rec.dst.value,
             "trigger": rec.trigger, "wrist_z": rec.wrist_z,
             "setpoint_z": rec.setpoint_z, "t_event": rec.t_event}
            for rec in trial.transitions
        ],
        "jaw": [[float(a), float(b)] for a, b in trial.jaw],
    }
    (out_dir / f"{stem}.meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_trial_files(out_dir: Path) -> list:
    """Reload every trial log in a directory written by write_trial_files."""
    out_dir = Path(out_dir)
    logs = []
    for csv_path in sorted(out_dir.glob("trial_*.csv")):
        if csv_path.name.endswith(".transitions.csv"):
            continue
        meta_path = csv_path.with_suffix("").with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text())
        rows = csv_path.read_text().strip().split("\n")[1:]
        n = len(rows)
        t = np.zeros(n)
        phase = [""] * n
        q = np.zeros((n, 7))
        ee = np.zeros((n, 3))
        eq = np.zeros((n, 4))
        wrist = np.zeros((n, 3))
        force = np.zeros((n, 3))
        deform = np.zeros((n, 3))
        slip = np.zeros(n, dtype=int)
        events = [""] * n
        for k, row in enumerate(rows):
            parts = row.split(",")
            t[k] = float(parts[0])
            phase[k] = parts[1]
            q[k] = [float(v) for v in parts[2:9]]
            ee[k] = [float(v) for v in parts[9:12]]
            eq[k] = [float(v) for v in parts[12:16]]
            wrist[k] = [float(v) for v in parts[16:19]]
            force[k] = [float(v) for v in parts[19:22]]
            deform[k] = [float(v) for v in parts[22:25]]
            slip[k] = int(parts[25])
            events[k] = parts[26] if len(parts) > 26 else ""
        transitions = [
            TransitionRecord(
                t=m["t"], src=Phase(m["src"]), dst=Phase(m["dst"]), trigger=m["trigger"],
                wrist_z=m["wrist_z"], setpoint_z=m["setpoint_z"], t_event=m["t_event"],
            )
            for m in meta["transitions"]
        ]
        logs.append(TrialLog(
            trial_id=meta["trial_id"], task_id=meta["task_id"], t=t, phase=phase,
            q=q, ee_position=ee, ee_quaternion=eq, wrist=wrist, force=force,
            deformation=deform, slip=slip, events=events,
            jaw=np.array(meta["jaw"]), transitions=transitions,
        ))
    return logs


# ---------------------------------------------------------------------------
# Log validation


def validate_trial(trial: TrialLog, chain: KinematicChain, control_hz: float = 1000.0) -> list:
    """Phase-path, timestamp, and joint-limit checks; returns problem strings."""
    from .fsm import VALID_EDGES

    problems = []
    dt = 1.0 / control_hz
    expected = np.arange(trial.n_ticks) * dt
    if trial.n_ticks and np.max(np.abs(trial.t - expected)) > 1e-9:
        problems.append("timestamps do not advance at the control rate")
    path = [Phase(p) for p in trial.phase_path()]
    if path and path[0] is not Phase.HOMING:
        problems.append("trial does not start in homing")
    if path and path[-1] is not Phase.HOMING:
        problems.append("trial does not end in homing")
    for a, b in zip(path, path[1:]):
        if (a, b) not in VALID_EDGES:
            problems.append(f"illegal phase edge {a.value}->{b.value}")
    if np.any(trial.q < chain.q_lower - 1e-12) or np.any(trial.q > chain.q_upper + 1e-12):
        problems.append("joint limits violated")
    for a, b in zip(trial.transitions, trial.transitions[1:]):
        if b.t < a.t:
            problems.append("transition records out of order")
    return problems


# ---------------------------------------------------------------------------
# Reports


def emit_report(runs: list, out_dir: Path | None = None) -> tuple[dict, str, str]:
    """Compute metrics for each run; optionally write report files.

    Returns (reports by task, text table, json document).
    """
    runs = [runs] if isinstance(runs, SimulationRun) else list(runs)
    completed = [r for r in runs if r.trials]
    if not completed:
        raise ValueError("no completed trials to report on")
    reports: dict[str, MetricsReport] = {}
    for run in completed:
        if len(run.trials) < 2:
            log.warning("%s has %d trial(s); metrics need at least 2, skipping",
                        run.scenario_name, len(run.trials))
            continue
        reports[run.scenario_name] = compute_report(
            run.trials, run.workspace_diagonal, run.scenario_name)
    if not reports:
        raise ValueError("no task with enough trials to report on")
    text = render_text_table(reports)
    doc = dumps_report(reports)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text)
        (out_dir / "report.json").write_text(doc + "\n")
    return reports, text, doc
