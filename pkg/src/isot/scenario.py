"""Scenario files: everything one deterministic simulation run needs.

A scenario bundles the arm model reference, solver settings, behavior
thresholds, scene objects, and the scripted leader keyframes. Files are
YAML validated against a JSON schema so load errors point at the exact
offending field.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .fsm import FsmConfig
from .kinematics import KinematicChain
from .tactile import FrictionParams
from .tasks import SolverConfig

SCENARIO_SCHEMA_VERSION = "scenario.v1"


class ScenarioError(ValueError):
    pass


_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENARIO_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "name", "chain", "leader"],
    "properties": {
        "schema": {"const": SCENARIO_SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "chain": {"type": "string", "minLength": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "rates": {
            "type": "object",
            "properties": {
                "control_hz": {"type": "number", "exclusiveMinimum": 0},
                "tracking_hz": {"type": "number", "exclusiveMinimum": 0},
                "detection_hz": {"type": "number", "exclusiveMinimum": 0},
                "stream_hz": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {"type": "object"},
        "friction": {
            "type": "object",
            "properties": {
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "contact_force_threshold": {"type": "number", "minimum": 0},
                "convention": {"enum": ["as_written", "standard"]},
            },
        },
        "fsm": {"type": "object"},
        "home_q": {"type": "array", "items": {"type": "number"}},
        "workspace": {
            "type": "object",
            "required": ["min", "max"],
            "properties": {"min": _VEC3, "max": _VEC3},
        },
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["shape", "dims", "xyz"],
                "properties": {
                    "shape": {"type": "string"},
                    "dims": _VEC3,
                    "xyz": _VEC3,
                    "yaw": {"type": "number"},
                },
            },
        },
        "object_jitter": {"type": "number", "minimum": 0},
        "grasp": {"type": "object"},
        "tactile_events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t", "duration"],
                "properties": {
                    "t": {"type": "number", "minimum": 0},
                    "duration": {"type": "number", "exclusiveMinimum": 0},
                    "tangential_scale": {"type": "number", "minimum": 0},
                },
            },
        },
        "leader": {
            "type": "object",
            "required": ["home_wrist", "keyframes"],
            "properties": {
                "arm": {"enum": ["left", "right"]},
                "torso": _VEC3,
                "home_wrist": _VEC3,
                "keyframes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["t", "wrist"],
                        "properties": {
                            "t": {"type": "number", "minimum": 0},
                            "wrist": _VEC3,
                            "home": {"type": "boolean"},
                            "open_palm": {"type": "boolean"},
                            "at_object": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "cameras": {"type": "object"},
    },
}


@dataclass
class ObjectSpec:
    shape: str
    dims: np.ndarray
    xyz: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.dims = np.asarray(self.dims, dtype=float)
        self.xyz = np.asarray(self.xyz, dtype=float)
        if np.any(self.dims <= 0):
            raise ScenarioError("object dims must be positive")


@dataclass
class GraspConfig:
    force_target: float = 4.0
    modulate_gain: float = 0.005
    jaw_rate_limit: float = 0.05
    jaw_travel: float = 0.05
    gap_open: float = 0.10
    contact_range: float = 0.025
    stiffness: float = 1000.0
    attach_squeeze: float = 0.0005
    preload_mm: float = 4.0
    interaction_amp_mm: float = 0.8
    interaction_hz: float = 2.0
    kineto_scale: float = 0.002


@dataclass
class Rates:
    control_hz: float = 1000.0
    tracking_hz: float = 5.0
    detection_hz: float = 25.0
    stream_hz: float = 30.0

    @property
    def dt(self) -> float:
        return 1.0 / self.control_hz


@dataclass
class Scenario:
    name: str
    chain: KinematicChain
    chain_ref: str
    solver: SolverConfig = field(default_factory=SolverConfig)
    rates: Rates = field(default_factory=Rates)
    seed: int = 0
    trials: int = 5
    duration: float = 14.0
    friction: FrictionParams = field(default_factory=FrictionParams)
    friction_convention: str = "as_written"
    fsm: FsmConfig = field(default_factory=FsmConfig)
    home_q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.618, 0.0, -0.9, 0.0, 1.6212, 0.0]))
    workspace_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.6, 0.0]))
    workspace_max: np.ndarray = field(default_factory=lambda: np.array([0.9, 0.6, 1.0]))
    objects: list = field(default_factory=list)
    object_jitter: float = 0.0
    grasp: GraspConfig = field(default_factory=GraspConfig)
    tactile_events: list = field(default_factory=list)
    leader_arm: str = "right"
    leader_torso: np.ndarray = field(default_factory=lambda: np.array([0.95, 0.0, 0.55]))
    leader_home_wrist: np.ndarray = field(default_factory=lambda: np.array([0.62, -0.25, 0.10]))
    keyframes: list = field(default_factory=list)
    tracking_eye: np.ndarray = field(default_factory=lambda: np.array([1.9, 0.0, 1.4]))
    tracking_look_at: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.0, 0.3]))
    detection_offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.05]))
    raw: dict = field(default_factory=dict)

    @property
    def workspace_diagonal(self) -> float:
        return float(np.linalg.norm(self.workspace_max - self.workspace_min))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.rates.control_hz))


def _schema_error(err: jsonschema.ValidationError) -> ScenarioError:
    where = "$" + "".join(
        f"[{p!r}]" if isinstance(p, str) else f"[{p}]" for p in err.absolute_path
    )
    return ScenarioError(f"scenario invalid at {where}: {err.message}")


def scenario_from_dict(cfg: dict, base_dir: Path | None = None) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_JSON_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0])

    chain_ref = cfg["chain"]
    if chain_ref == "default":
        chain = KinematicChain.default()
    else:
        path = Path(chain_ref)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ScenarioError(f"chain file not found: {path}")
        chain = KinematicChain.from_config(path)

    leader = cfg["leader"]
    keyframes = copy.deepcopy(leader["keyframes"])
    times = [k["t"] for k in keyframes]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScenarioError("leader keyframe times must be strictly increasing")

    friction_cfg = cfg.get("friction", {})
    fsm_cfg = cfg.get("fsm", {})
    known_fsm = set(FsmConfig.__dataclass_fields__)
    unknown = set(fsm_cfg) - known_fsm
    if unknown:
        raise ScenarioError(f"unknown fsm fields: {sorted(unknown)}")

    grasp_cfg = cfg.get("grasp", {})
    known_grasp = set(GraspConfig.__dataclass_fields__)
    unknown = set(grasp_cfg) - known_grasp
    if unknown:
        raise ScenarioError(f"unknown grasp fields: {sorted(unknown)}")

    rates = cfg.get("rates", {})
    cameras = cfg.get("cameras", {})
    workspace = cfg.get("workspace", {})
    scenario = Scenario(
        name=cfg["name"],
        chain=chain,
        chain_ref=chain_ref,
        solver=SolverConfig.from_dict(cfg.get("solver", {})),
        rates=Rates(**rates),
        seed=int(cfg.get("seed", 0)),
        trials=int(cfg.get("trials", 5)),
        duration=float(cfg.get("duration", 14.0)),
        friction=FrictionParams(
            mu=float(friction_cfg.get("mu", 0.75)),
            contact_force_threshold=float(friction_cfg.get("contact_force_threshold", 2.0)),
        ),
        friction_convention=friction_cfg.get("convention", "as_written"),
        fsm=FsmConfig(**fsm_cfg),
        home_q=np.asarray(cfg.get("home_q", [0.0, 0.618, 0.0, -0.9, 0.0, 1.6212, 0.0]), dtype=float),
        workspace_min=np.asarray(workspace.get("min", [0.0, -0.6, 0.0]), dtype=float),
        workspace_max=np.asarray(workspace.get("max", [0.9, 0.6, 1.0]), dtype=float),
        objects=[ObjectSpec(o["shape"], o["dims"], o["xyz"], float(o.get("yaw", 0.0)))
                 for o in cfg.get("objects", [])],
        object_jitter=float(cfg.get("object_jitter", 0.0)),
        grasp=GraspConfig(**grasp_cfg),
        tactile_events=copy.deepcopy(cfg.get("tactile_events", [])),
        leader_arm=leader.get("arm", "right"),
        leader_torso=np.asarray(leader.get("torso", [0.95, 0.0, 0.55]), dtype=float),
        leader_home_wrist=np.asarray(leader["home_wrist"], dtype=float),
        keyframes=keyframes,
        tracking_eye=np.asarray(cameras.get("tracking", {}).get("eye", [1.9, 0.0, 1.4]), dtype=float),
        tracking_look_at=np.asarray(cameras.get("tracking", {}).get("look_at", [0.5, 0.0, 0.3]), dtype=float),
        detection_offset=np.asarray(cameras.get("detection_offset", [0.0, 0.0, 0.05]), dtype=float),
        raw=copy.deepcopy(cfg),
    )
    if scenario.home_q.shape != (chain.n,):
        raise ScenarioError(f"home_q must have {chain.n} entries")
    if np.any(scenario.workspace_min >= scenario.workspace_max):
        raise ScenarioError("workspace min must be below max elementwise")
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path) as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ScenarioError("scenario file must contain a mapping")
    return scenario_from_dict(cfg, base_dir=path.parent)


def save_scenario(scenario: Scenario, path) -> None:
    """Write the scenario back out; load(save(s)) reproduces s."""
    with open(path, "w") as f:
        yaml.safe_dump(scenario.raw, f, sort_keys=False)


def packaged_scenario_path(name: str) -> Path:
    from importlib import resources

    candidate = resources.files("isot.data.scenarios").joinpath(f"{name}.yaml")
    return Path(str(candidate))
