"""Phase switching for the leader-follower loop.

The follower walks Homing -> PreGrasp -> Grasp -> Manipulate -> Release ->
Homing, with withdraw (no object), grasp-failure, and slip-recovery
detours. Perception drives every forward edge; timeouts drive the
detours. Setpoints are computed exactly once per phase entry.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .kinematics import Pose, quat_from_axis_angle


class Phase(Enum):
    HOMING = "homing"
    PREGRASP = "pregrasp"
    GRASP = "grasp"
    MANIPULATE = "manipulate"
    RELEASE = "release"


VALID_EDGES = {
    (Phase.HOMING, Phase.PREGRASP),
    (Phase.PREGRASP, Phase.HOMING),
    (Phase.PREGRASP, Phase.GRASP),
    (Phase.GRASP, Phase.PREGRASP),
    (Phase.GRASP, Phase.MANIPULATE),
    (Phase.MANIPULATE, Phase.GRASP),
    (Phase.MANIPULATE, Phase.RELEASE),
    (Phase.RELEASE, Phase.HOMING),
}

# EE tool axis points straight down at the scene in every Cartesian target
# (pi about base y, matching the default home orientation's yaw).
TOOL_DOWN_QUAT = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi)


@dataclass
class FsmConfig:
    withdraw_timeout: float = 2.0
    grasp_timeout: float = 3.0
    staleness_horizon: float = 0.6
    arrival_tol: float = 0.02
    debounce_frames: int = 2
    stability_dwell: float = 0.02
    height_mode: str = "absolute"  # or "offset": k*|Z_w| added to Z_w
    workspace_floor: float = 0.0
    # An "active posture" is a held position: the tracked wrist must move
    # slower than this across this many consecutive tracking frames.
    posture_settle_speed: float = 0.05
    posture_settle_frames: int = 2


@dataclass
class TransitionRecord:
    t: float
    src: Phase
    dst: Phase
    trigger: str
    wrist_z: float
    setpoint_z: float
    t_event: float

    def as_csv_row(self) -> str:
        return (f"{self.t!r},{self.src.value},{self.dst.value},{self.trigger},"
                f"{self.wrist_z!r},{self.setpoint_z!r}")


@dataclass
class StackDirective:
    """What the controller should run for the current phase/sub-mode."""

    phase: Phase
    primary: str              # "cartesian" or "force"
    target: Pose | None       # Cartesian target (primary or secondary hold)
    grip: str                 # "open", "regulate", or "hold"
    submode: str = "motion"   # Manipulate only: "motion" then "hold"
    kineto_static_hold: bool = False


@dataclass
class Events:
    """Perception available at one control tick; stale items stay None."""

    t: float
    wrist: np.ndarray | None = None       # base frame, freshest tracked value
    wrist_t: float = -np.inf
    wrist_home: bool = False
    open_palm: bool = False
    tracking_fresh: bool = False          # a new tracking frame landed this tick
    tracking_lost: bool = False
    detections: list = field(default_factory=list)
    detections_t: float = -np.inf
    contact_force: float = 0.0
    stability: str | None = None          # friction-cone verdict when in contact
    ee_position: np.ndarray | None = None


@dataclass
class FsmContext:
    phase: Phase = Phase.HOMING
    entered_t: float = 0.0
    submode: str = "motion"
    setpoint: Pose | None = None
    home_pose: Pose | None = None
    grasp_pose: Pose | None = None
    wrist: np.ndarray | None = None
    wrist_t: float = -np.inf
    selected_detection: object = None
    stable_since: float | None = None
    slip_since: float | None = None
    needs_leader_reset: bool = False
    open_palm_flags: deque = field(default_factory=lambda: deque(maxlen=8))
    home_flags: deque = field(default_factory=lambda: deque(maxlen=8))
    open_palm_t: float = -np.inf
    home_t: float = -np.inf
    prev_frame_wrist: np.ndarray | None = None
    prev_frame_t: float = -np.inf
    settle_count: int = 0


def pregrasp_setpoint(wrist: np.ndarray, mode: str = "absolute", floor: float = 0.0) -> Pose:
    """Safe-detection target straight above the wrist at four wrist heights."""
    wrist = np.asarray(wrist, dtype=float)
    if wrist[2] <= floor:
        raise ValueError(f"wrist height {wrist[2]:.3f} is below the workspace floor")
    z = 4.0 * abs(wrist[2])
    if mode == "offset":
        z = wrist[2] + z
    return Pose(np.array([wrist[0], wrist[1], z]), TOOL_DOWN_QUAT.copy())


def lift_setpoint(wrist: np.ndarray, grasp_pose: Pose, mode: str = "absolute") -> Pose:
    """Minimum-clearance lift: grasp x, y held, z at two wrist heights."""
    wrist = np.asarray(wrist, dtype=float)
    z = 2.0 * abs(wrist[2])
    if mode == "offset":
        z = wrist[2] + z
    return Pose(
        np.array([grasp_pose.position[0], grasp_pose.position[1], z]),
        grasp_pose.quaternion.copy(),
    )


def detect_open_palm(flags, debounce: int = 2) -> bool:
    """Debounced gesture: the last `debounce` tracking frames all flagged."""
    flags = list(flags)
    return len(flags) >= debounce and all(flags[-debounce:])


class SwitchingFsm:
    """Single-writer phase machine advanced on the simulation clock."""

    def __init__(self, home_pose: Pose, config: FsmConfig | None = None):
        self.config = config or FsmConfig()
        self.ctx = FsmContext(home_pose=home_pose, setpoint=home_pose.copy())

    def directive(self) -> StackDirective:
        ctx = self.ctx
        if ctx.phase in (Phase.HOMING, Phase.PREGRASP):
            return StackDirective(ctx.phase, "cartesian", ctx.setpoint, "open")
        if ctx.phase is Phase.GRASP:
            return StackDirective(ctx.phase, "force", ctx.setpoint, "regulate")
        if ctx.phase is Phase.MANIPULATE:
            if ctx.submode == "motion":
                return StackDirective(ctx.phase, "cartesian", ctx.setpoint, "regulate", "motion")
            return StackDirective(ctx.phase, "force", ctx.setpoint, "regulate", "hold", True)
        return StackDirective(ctx.phase, "cartesian", ctx.setpoint, "open")

    def step(self, events: Events) -> tuple[StackDirective, list[TransitionRecord]]:
        """Advance one control tick; returns the active directive and any
        transition records produced this tick."""
        ctx = self.ctx
        cfg = self.config
        t = events.t
        records: list[TransitionRecord] = []

        if events.tracking_fresh:
            ctx.open_palm_flags.append(bool(events.open_palm))
            ctx.home_flags.append(bool(events.wrist_home))
            if events.open_palm:
                ctx.open_palm_t = t
            if events.wrist_home:
                ctx.home_t = t
        if events.wrist is not None:
            ctx.wrist = np.asarray(events.wrist, dtype=float)
            ctx.wrist_t = events.wrist_t
            if events.tracking_fresh:
                if ctx.prev_frame_wrist is not None and events.wrist_t > ctx.prev_frame_t:
                    speed = float(np.linalg.norm(ctx.wrist - ctx.prev_frame_wrist)
                                  / (events.wrist_t - ctx.prev_frame_t))
                    ctx.settle_count = ctx.settle_count + 1 if speed <= cfg.posture_settle_speed else 0
                ctx.prev_frame_wrist = ctx.wrist.copy()
                ctx.prev_frame_t = events.wrist_t

        wrist_fresh = ctx.wrist is not None and (t - ctx.wrist_t) <= cfg.staleness_horizon
        detections_fresh = (
            bool(events.detections) and (t - events.detections_t) <= cfg.staleness_horizon
        )

        if ctx.needs_leader_reset and detect_open_palm(ctx.home_flags, cfg.debounce_frames):
            ctx.needs_leader_reset = False

        if ctx.phase is Phase.HOMING:
            active = (
                wrist_fresh
                and not events.wrist_home
                and events.tracking_fresh
                and not ctx.needs_leader_reset
                and ctx.settle_count >= cfg.posture_settle_frames
                and ctx.wrist[2] > cfg.workspace_floor
            )
            if active:
                self._enter(Phase.PREGRASP, "arm_active", t, ctx.wrist_t, records, events)

        elif ctx.phase is Phase.PREGRASP:
            arrived = self._arrived(events)
            if detections_fresh and arrived and wrist_fresh:
                ctx.selected_detection = self._select_detection(events.detections)
                self._enter(Phase.GRASP, "object_detected", t, events.detections_t, records, events)
            elif t - ctx.entered_t >= cfg.withdraw_timeout and not detections_fresh:
                ctx.needs_leader_reset = True
                self._enter(Phase.HOMING, "withdraw", t, ctx.entered_t + cfg.withdraw_timeout, records, events)

        elif ctx.phase is Phase.GRASP:
            contact_ok = (
                events.contact_force >= self._contact_threshold
                and events.stability == "stable"
            )
            if contact_ok:
                if ctx.stable_since is None:
                    ctx.stable_since = t
                if t - ctx.stable_since >= cfg.stability_dwell:
                    ctx.grasp_pose = Pose(events.ee_position.copy(), ctx.setpoint.quaternion.copy())
                    self._enter(Phase.MANIPULATE, "contact_stable", t, ctx.stable_since, records, events)
            else:
                ctx.stable_since = None
                if t - ctx.entered_t >= cfg.grasp_timeout:
                    self._enter(Phase.PREGRASP, "grasp_failure", t, ctx.entered_t + cfg.grasp_timeout, records, events)

        elif ctx.phase is Phase.MANIPULATE:
            slipping = events.stability == "slip" and events.contact_force > 0.0
            if slipping:
                if ctx.slip_since is None:
                    ctx.slip_since = t
            else:
                ctx.slip_since = None
            if ctx.slip_since is not None and t - ctx.slip_since >= cfg.stability_dwell:
                self._enter(Phase.GRASP, "slip_recovery", t, ctx.slip_since, records, events)
            elif detect_open_palm(ctx.open_palm_flags, cfg.debounce_frames):
                self._enter(Phase.RELEASE, "open_palm", t, ctx.open_palm_t, records, events)
            elif ctx.submode == "motion" and self._arrived(events):
                ctx.submode = "hold"

        elif ctx.phase is Phase.RELEASE:
            if detect_open_palm(ctx.home_flags, cfg.debounce_frames):
                self._enter(Phase.HOMING, "leader_home", t, ctx.home_t, records, events)

        return self.directive(), records

    # Contact threshold is owned by the tactile config; the harness injects it.
    _contact_threshold: float = 2.0

    def set_contact_threshold(self, value: float) -> None:
        self._contact_threshold = value

    def _arrived(self, events: Events) -> bool:
        if events.ee_position is None or self.ctx.setpoint is None:
            return False
        err = np.linalg.norm(events.ee_position - self.ctx.setpoint.position)
        return err <= self.config.arrival_tol

    def _select_detection(self, detections):
        """Nearest centroid to the wrist's vertical axis."""
        wrist = self.ctx.wrist
        return min(
            detections,
            key=lambda d: float(np.hypot(
                d.pose_base.position[0] - wrist[0],
                d.pose_base.position[1] - wrist[1],
            )),
        )

    def _enter(
        self, phase: Phase, trigger: str, t: float, t_event: float,
        records: list, events: Events,
    ) -> None:
        ctx = self.ctx
        src = ctx.phase
        if (src, phase) not in VALID_EDGES:
            raise AssertionError(f"illegal transition {src} -> {phase}")
        ctx.phase = phase
        ctx.entered_t = t
        ctx.submode = "motion"
        ctx.stable_since = None
        ctx.slip_since = None
        cfg = self.config

        if phase is Phase.PREGRASP:
            ctx.setpoint = pregrasp_setpoint(ctx.wrist, cfg.height_mode, cfg.workspace_floor)
        elif phase is Phase.GRASP:
            if trigger == "slip_recovery" and events.ee_position is not None:
                # The object is still between the jaws: re-squeeze in place.
                ctx.setpoint = Pose(events.ee_position.copy(), TOOL_DOWN_QUAT.copy())
            else:
                det = ctx.selected_detection
                ctx.setpoint = Pose(det.pose_base.position.copy(), TOOL_DOWN_QUAT.copy())
        elif phase is Phase.MANIPULATE:
            ctx.setpoint = lift_setpoint(ctx.wrist, ctx.grasp_pose, cfg.height_mode)
        elif phase is Phase.RELEASE:
            # Hold station while the jaws open.
            ctx.setpoint = ctx.setpoint.copy() if ctx.setpoint else ctx.home_pose.copy()
        elif phase is Phase.HOMING:
            ctx.setpoint = ctx.home_pose.copy()

        records.append(TransitionRecord(
            t=t, src=src, dst=phase, trigger=trigger,
            wrist_z=float(ctx.wrist[2]) if ctx.wrist is not None else float("nan"),
            setpoint_z=float(ctx.setpoint.position[2]) if ctx.setpoint else float("nan"),
            t_event=t_event,
        ))
