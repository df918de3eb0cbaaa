"""Live interactive sessions: the simulation driven over a WebSocket.

One session at a time. A background thread advances the simulated clock
toward scaled wall time (best effort when CPU-bound); the network side
streams state snapshots at the configured wall-clock rate and applies
client commands between control ticks. Malformed or phase-incompatible
commands come back as error frames and never kill the session.
"""
from __future__ import annotations

import asyncio
import json
import logging
import threading
import time

import numpy as np
import websockets

from .fsm import Phase
from .harness import InteractiveLeader, SimObject, TrialSim, train_scenario_mapper
from .scenario import ObjectSpec, Scenario

log = logging.getLogger(__name__)

STEP_CHUNK = 20  # control ticks per lock acquisition in the stepper thread


class CommandError(ValueError):
    def __init__(self, code: str, reason: str):
        super().__init__(reason)
        self.code = code


class LiveSession:
    """Simulation plus an interactive leader, paced by a stepper thread."""

    def __init__(self, scenario: Scenario, speed: float = 1.0):
        self.scenario = scenario
        self.speed = speed
        self.mapper = train_scenario_mapper(scenario)
        self.lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._start()

    def _start(self) -> None:
        self.leader = InteractiveLeader(self.scenario.leader_home_wrist)
        self.sim = TrialSim(self.scenario, 0, self.mapper, self.scenario.seed, leader=self.leader)
        self.tick = 0
        self.last = None
        self._wall_base = time.monotonic()

    def reset(self) -> None:
        self._start()

    @property
    def sim_time(self) -> float:
        return self.tick * self.scenario.rates.dt

    # -- stepper thread ------------------------------------------------------

    def start(self) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._run, name="sim-stepper", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def _run(self) -> None:
        dt = self.scenario.rates.dt
        while not self._stop.is_set():
            with self.lock:
                target = self.speed * (time.monotonic() - self._wall_base)
                behind = target - self.sim_time
                if behind > 0.0 and self.tick < self.sim.n_ticks - 1:
                    goal = min(self.tick + STEP_CHUNK, self.sim.n_ticks - 1,
                               int(target / dt))
                    while self.tick < goal:
                        self.last = self.sim.step(self.tick)
                        self.tick += 1
            # Always release-and-sleep so lock waiters (snapshot/commands)
            # actually get scheduled; a bare release starves them.
            time.sleep(0.002 if behind <= 0.0 else 0.0005)

    # -- frames ---------------------------------------------------------------

    def hello_frame(self) -> dict:
        chain = self.scenario.chain
        with self.lock:
            objects = [self._object_dict(o) for o in self.sim.objects]
        return {
            "type": "hello",
            "scenario": self.scenario.name,
            "stream_hz": self.scenario.rates.stream_hz,
            "chain": {
                "name": chain.name,
                "dh": [[float(v) for v in row] for row in chain.dh],
                "q_lower": [float(v) for v in chain.q_lower],
                "q_upper": [float(v) for v in chain.q_upper],
                "reach": chain.reach,
            },
            "workspace": {
                "min": [float(v) for v in self.scenario.workspace_min],
                "max": [float(v) for v in self.scenario.workspace_max],
            },
            "home_wrist": [float(v) for v in self.scenario.leader_home_wrist],
            "objects": objects,
        }

    @staticmethod
    def _object_dict(obj) -> dict:
        return {
            "shape": obj.spec.shape,
            "dims": [float(v) for v in obj.spec.dims],
            "pose": [float(v) for v in obj.position],
        }

    def state_frame(self) -> dict:
        with self.lock:
            sim = self.sim
            last = self.last or {}
            ee = last.get("ee_pose")
            d = last.get("deformation")
            f = last.get("force")
            detections = last.get("detections") or []
            wrist = last.get("wrist")
            return {
                "type": "state",
                "t": self.sim_time,
                "phase": sim.fsm.ctx.phase.value,
                "q": [float(v) for v in sim.q],
                "ee_pose": ([*map(float, ee.position), *map(float, ee.quaternion)]
                            if ee is not None else [0.0] * 7),
                "wrist": [float(v) for v in (wrist if wrist is not None else self.leader.wrist)],
                "tactile": {
                    "D": [float(v) for v in (d.as_array() if d is not None else np.zeros(3))],
                    "f": [float(v) for v in (f if f is not None else np.zeros(3))],
                    "slip": bool(last.get("slip", False)),
                },
                "detections": [
                    {"shape": det.shape,
                     "pose": [float(v) for v in det.pose_base.position],
                     "dims": [float(v) for v in det.dims]}
                    for det in detections
                ],
                "objects": [self._object_dict(o) for o in sim.objects],
            }

    # -- commands ----------------------------------------------------------

    def handle(self, frame: dict) -> dict:
        with self.lock:
            kind = frame.get("type")
            if kind == "wrist_pose":
                return self._cmd_wrist(frame)
            if kind == "gesture":
                return self._cmd_gesture(frame)
            if kind == "place_object":
                return self._cmd_place(frame)
            if kind == "reset":
                self.reset()
                return {"type": "ack", "command": "reset"}
            raise CommandError("bad_frame", f"unknown frame type {kind!r}")

    def _cmd_wrist(self, frame: dict) -> dict:
        xyz = frame.get("xyz")
        if (not isinstance(xyz, (list, tuple)) or len(xyz) != 3
                or not all(isinstance(v, (int, float)) and np.isfinite(v) for v in xyz)):
            raise CommandError("bad_frame", "wrist_pose needs finite xyz[3]")
        p = np.asarray(xyz, dtype=float)
        lo, hi = self.scenario.workspace_min, self.scenario.workspace_max
        if np.any(p < lo) or np.any(p > hi):
            raise CommandError("out_of_workspace", "wrist outside the workspace box")
        self.leader.set_wrist(p)
        return {"type": "ack", "command": "wrist_pose"}

    def _cmd_gesture(self, frame: dict) -> dict:
        name = frame.get("name")
        phase = self.sim.fsm.ctx.phase
        if name == "open_palm":
            if phase is not Phase.MANIPULATE:
                raise CommandError("bad_phase", f"open_palm only applies in manipulate, not {phase.value}")
        elif name == "home":
            if phase is not Phase.RELEASE:
                raise CommandError("bad_phase", f"home only applies in release, not {phase.value}")
        else:
            raise CommandError("bad_frame", f"unknown gesture {name!r}")
        self.leader.gesture(name, self.sim_time)
        return {"type": "ack", "command": f"gesture:{name}"}

    def _cmd_place(self, frame: dict) -> dict:
        if self.sim.fsm.ctx.phase is not Phase.HOMING:
            raise CommandError("bad_phase", "objects can only be placed while homing")
        try:
            spec = ObjectSpec(
                shape=str(frame["shape"]),
                dims=np.asarray(frame["dims"], dtype=float),
                xyz=np.asarray(frame["pose"], dtype=float),
                yaw=float(frame.get("yaw", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CommandError("bad_frame", f"invalid place_object: {exc}") from exc
        self.sim.objects.append(SimObject(spec, spec.xyz.copy(), spec.yaw))
        return {"type": "ack", "command": "place_object"}


async def _client_loop(ws, session: LiveSession, stream_hz: float):
    await ws.send(json.dumps(session.hello_frame()))
    interval = 1.0 / stream_hz
    loop = asyncio.get_running_loop()

    async def sender():
        next_send = loop.time()
        while True:
            # Snapshot off-thread so a long lock hold never skews cadence.
            frame = await loop.run_in_executor(None, session.state_frame)
            await ws.send(json.dumps(frame))
            next_send += interval
            await asyncio.sleep(max(0.0, next_send - loop.time()))

    send_task = asyncio.create_task(sender())
    try:
        async for raw in ws:
            try:
                frame = json.loads(raw)
                if not isinstance(frame, dict):
                    raise ValueError("frame must be an object")
            except ValueError as exc:
                await ws.send(json.dumps({"type": "error", "code": "bad_frame",
                                          "reason": f"malformed JSON: {exc}"}))
                continue
            try:
                reply = await loop.run_in_executor(None, session.handle, frame)
            except CommandError as exc:
                reply = {"type": "error", "code": exc.code, "reason": str(exc)}
            await ws.send(json.dumps(reply))
    finally:
        send_task.cancel()


async def serve_async(scenario: Scenario, host: str = "127.0.0.1", port: int = 8765,
                      speed: float = 1.0, ready: asyncio.Event | None = None):
    session = LiveSession(scenario, speed)
    session.start()
    busy = asyncio.Lock()

    async def handler(ws):
        if busy.locked():
            await ws.send(json.dumps({"type": "error", "code": "busy",
                                      "reason": "another session is active"}))
            await ws.close()
            return
        async with busy:
            log.info("session started")
            try:
                await _client_loop(ws, session, scenario.rates.stream_hz)
            except websockets.ConnectionClosed:
                pass
            log.info("session ended")

    try:
        async with websockets.serve(handler, host, port):
            log.info("serving %s on ws://%s:%d (speed x%g)", scenario.name, host, port, speed)
            if ready is not None:
                ready.set()
            await asyncio.Future()
    finally:
        session.stop()


def serve_forever(scenario: Scenario, host: str = "127.0.0.1", port: int = 8765,
                  speed: float = 1.0) -> None:
    try:
        asyncio.run(serve_async(scenario, host, port, speed))
    except KeyboardInterrupt:
        log.info("server stopped")
