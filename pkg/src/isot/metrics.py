"""Five trial-log evaluation metrics and the comparison report.

All metrics run on the follower's wrist (end-effector) trajectory plus the
phase-transition records of each trial. Definitions are spelled out in the
report header because the metric names alone leave room for interpretation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .fsm import Phase, TransitionRecord

log = logging.getLogger(__name__)

RESAMPLE_POINTS = 200
VELOCITY_ONSET = 1e-3  # m/s, first-motion threshold for latency
REPORT_SCHEMA_VERSION = "report.v1"

METRIC_ROWS = (
    "Approach Adaptation (m & rad)",
    "Task Coordination Latency (sec)",
    "Grasp Correction (mm)",
    "Cumulative Posture Deviation (%)",
    "Task Repeatability (C)",
)

# Published reference values from prior human/hardware trials, shown beside
# computed numbers for context only; they are not simulation targets.
REFERENCE_BASELINES = {
    "HHC Task 1": {
        "dr": (0.5961, 0.0052), "dtheta": (0.1414, 0.0025),
        "latency": 3.8, "grasp_correction": 18.9048,
        "deviation": 5.0929, "repeatability": 0.6102,
    },
    "HHC Task 2": {
        "dr": (0.6388, 0.0034), "dtheta": (0.1992, 0.0036),
        "latency": 2.7, "grasp_correction": 16.1376,
        "deviation": 3.8655, "repeatability": 0.6612,
    },
    "HRC Task 1": {
        "dr": (0.6112, 0.0021), "dtheta": (0.1396, 0.0014),
        "latency": 27.8, "grasp_correction": 1.955,
        "deviation": 0.1169, "repeatability": 0.9142,
    },
    "HRC Task 2": {
        "dr": (0.6525, 0.0071), "dtheta": (0.1921, 0.0033),
        "latency": 23.0, "grasp_correction": 1.181,
        "deviation": 0.0993, "repeatability": 0.9607,
    },
}

DEFINITIONS_HEADER = """\
Metric definitions:
  Approach Adaptation: per trial, polar-coordinate change (dr, dtheta about
    the base origin) of the follower wrist between leaving Homing and
    leaving PreGrasp; mean and population std over trials.
  Task Coordination Latency: per trial, sum over phase transitions of the
    time from trigger availability to the first follower wrist motion
    above 1e-3 m/s; mean over trials.
  Grasp Correction: per trial, cumulative jaw contact-point adjustment (mm)
    from grasp establishment to manipulation end; mean over trials that
    reach Manipulate.
  Cumulative Posture Deviation: trajectories time-normalized and resampled
    to 200 points; RMS pointwise deviation of consecutive trial pairs over
    mean path length, averaged, in percent.
  Task Repeatability: C = 1 - mean pairwise RMS distance of resampled
    trajectories normalized by the workspace diagonal, clamped to [0, 1].
"""


@dataclass(eq=False)
class TrialLog:
    """Per-tick simulation record of one trial."""

    trial_id: int
    task_id: str
    t: np.ndarray
    phase: list
    q: np.ndarray
    ee_position: np.ndarray
    ee_quaternion: np.ndarray
    wrist: np.ndarray
    force: np.ndarray
    deformation: np.ndarray
    slip: np.ndarray
    events: list
    jaw: np.ndarray
    transitions: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        dt = np.diff(self.t)
        if dt.size and np.any(dt <= 0.0):
            raise ValueError("trial timestamps must be strictly increasing")

    @property
    def n_ticks(self) -> int:
        return self.t.size

    def phase_path(self) -> list:
        """Collapsed phase sequence of the trial."""
        out = []
        for p in self.phase:
            if not out or out[-1] != p:
                out.append(p)
        return out

    def index_at(self, time: float) -> int:
        return int(np.searchsorted(self.t, time - 1e-12))


@dataclass
class MetricsReport:
    task_id: str
    trial_count: int
    approach_dr: tuple
    approach_dtheta: tuple
    coordination_latency_s: float
    grasp_correction_mm: float | None
    cumulative_posture_deviation_pct: float
    task_repeatability: float

    def __post_init__(self):
        if self.approach_dr[1] < 0.0 or self.approach_dtheta[1] < 0.0:
            raise ValueError("standard deviations must be non-negative")
        if not 0.0 <= self.task_repeatability <= 1.0:
            raise ValueError("consistency degree must lie in [0, 1]")
        values = [*self.approach_dr, *self.approach_dtheta,
                  self.coordination_latency_s, self.cumulative_posture_deviation_pct,
                  self.task_repeatability]
        if self.grasp_correction_mm is not None:
            values.append(self.grasp_correction_mm)
        if not np.all(np.isfinite(values)):
            raise ValueError("metric values must be finite")


def _polar(p: np.ndarray) -> tuple:
    return float(np.hypot(p[0], p[1])), float(np.arctan2(p[1], p[0]))


def _find_transition(trial: TrialLog, src: Phase, dst: Phase) -> TransitionRecord | None:
    for rec in trial.transitions:
        if rec.src is src and rec.dst is dst:
            return rec
    return None


def approach_adaptation(trials: list) -> tuple[tuple, tuple]:
    """((mu, sigma) for dr, (mu, sigma) for dtheta) over trials.

    Uses the follower wrist at the Homing->PreGrasp transition and at the
    PreGrasp exit; trials missing either phase are excluded with a warning.
    """
    if len(trials) < 2:
        raise ValueError("approach adaptation needs at least 2 trials")
    drs, dthetas = [], []
    for trial in trials:
        leave_home = _find_transition(trial, Phase.HOMING, Phase.PREGRASP)
        leave_pre = _find_transition(trial, Phase.PREGRASP, Phase.GRASP)
        if leave_home is None or leave_pre is None:
            log.warning("trial %s lacks homing/pre-grasp phases; excluded", trial.trial_id)
            continue
        p0 = trial.ee_position[trial.index_at(leave_home.t)]
        p1 = trial.ee_position[trial.index_at(leave_pre.t)]
        r0, th0 = _polar(p0)
        r1, th1 = _polar(p1)
        drs.append(abs(r1 - r0))
        dthetas.append(abs(th1 - th0))
    if not drs:
        raise ValueError("no trial contains both homing and pre-grasp configurations")
    return (
        (float(np.mean(drs)), float(np.std(drs))),
        (float(np.mean(dthetas)), float(np.std(dthetas))),
    )


def coordination_latency(trial: TrialLog) -> float:
    """Total follower response lag (s) accumulated over phase transitions."""
    if not trial.transitions:
        raise ValueError("trial has no phase transitions")
    speeds = _wrist_speeds(trial)
    total = 0.0
    for rec in trial.transitions:
        start = trial.index_at(rec.t_event)
        moving = np.where(speeds[start:] > VELOCITY_ONSET)[0]
        if moving.size:
            total += trial.t[start + moving[0]] - rec.t_event
        else:
            total += trial.t[-1] - rec.t_event
    return float(total)


def _wrist_speeds(trial: TrialLog) -> np.ndarray:
    d = np.diff(trial.ee_position, axis=0)
    dt = np.diff(trial.t)[:, None]
    speeds = np.linalg.norm(d / dt, axis=1)
    return np.concatenate([speeds, speeds[-1:]]) if speeds.size else np.zeros(trial.n_ticks)


def grasp_correction(trial: TrialLog) -> float | None:
    """Cumulative jaw contact adjustment (mm) from grasp to manipulation end."""
    established = _find_transition(trial, Phase.GRASP, Phase.MANIPULATE)
    if established is None:
        return None
    end_rec = _find_transition(trial, Phase.MANIPULATE, Phase.RELEASE)
    i0 = trial.index_at(established.t)
    i1 = trial.index_at(end_rec.t) if end_rec is not None else trial.n_ticks - 1
    if i1 <= i0:
        return 0.0
    deltas = np.abs(np.diff(trial.jaw[i0:i1 + 1], axis=0))
    return float(np.sum(deltas) * 1000.0)


def _resample(trial: TrialLog, n: int = RESAMPLE_POINTS) -> np.ndarray:
    """Time-normalized wrist path resampled to n points."""
    t = trial.t
    u = (t - t[0]) / max(t[-1] - t[0], 1e-12)
    grid = np.linspace(0.0, 1.0, n)
    return np.column_stack([np.interp(grid, u, trial.ee_position[:, k]) for k in range(3)])


def _path_length(path: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def cumulative_posture_deviation(trials: list) -> float:
    """Mean over consecutive trial pairs of RMS deviation / mean path length, %."""
    if len(trials) < 2:
        raise ValueError("posture deviation needs at least 2 trials")
    paths = [_resample(trial) for trial in trials]
    ratios = []
    for a, b in zip(paths, paths[1:]):
        mean_len = 0.5 * (_path_length(a) + _path_length(b))
        if mean_len <= 0.0:
            log.warning("degenerate zero-length path pair excluded")
            continue
        rms = float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))
        ratios.append(rms / mean_len)
    if not ratios:
        raise ValueError("all trial pairs degenerate")
    return float(np.mean(ratios) * 100.0)


def task_repeatability(trials: list, workspace_diagonal: float) -> float:
    """Consistency degree C in [0, 1]; 1 means identical repetitions."""
    if len(trials) < 2:
        raise ValueError("repeatability needs at least 2 trials")
    if workspace_diagonal <= 0.0:
        raise ValueError("workspace diagonal must be positive")
    paths = [_resample(trial) for trial in trials]
    dists = []
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            rms = np.sqrt(np.mean(np.sum((paths[i] - paths[j]) ** 2, axis=1)))
            dists.append(rms / workspace_diagonal)
    c = 1.0 - float(np.mean(dists))
    return float(np.clip(c, 0.0, 1.0))


def compute_report(trials: list, workspace_diagonal: float, task_id: str = "task") -> MetricsReport:
    """All five metrics for one task's trials."""
    dr, dtheta = approach_adaptation(trials)
    latencies = [coordination_latency(trial) for trial in trials]
    corrections = [c for c in (grasp_correction(trial) for trial in trials) if c is not None]
    return MetricsReport(
        task_id=task_id,
        trial_count=len(trials),
        approach_dr=dr,
        approach_dtheta=dtheta,
        coordination_latency_s=float(np.mean(latencies)),
        grasp_correction_mm=float(np.mean(corrections)) if corrections else None,
        cumulative_posture_deviation_pct=cumulative_posture_deviation(trials),
        task_repeatability=task_repeatability(trials, workspace_diagonal),
    )


# ---------------------------------------------------------------------------
# Report rendering


def _fmt(v, digits=4) -> str:
    return "absent" if v is None else f"{v:.{digits}f}"


def render_text_table(reports: dict, include_reference: bool = True) -> str:
    """Aligned text table with one column per task plus reference columns."""
    columns = {rid: _report_cells(rep) for rid, rep in reports.items()}
    if include_reference:
        for name, ref in REFERENCE_BASELINES.items():
            columns[f"{name} (ref)"] = _reference_cells(ref)
    names = list(columns)
    width = max(len(r) for r in METRIC_ROWS) + 2
    col_w = {n: max(len(n), max(len(columns[n][i]) for i in range(5))) + 2 for n in names}
    lines = [DEFINITIONS_HEADER]
    header = "Evaluation Metric".ljust(width) + "".join(n.ljust(col_w[n]) for n in names)
    lines.append(header)
    lines.append("-" * len(header))
    for i, row in enumerate(METRIC_ROWS):
        lines.append(row.ljust(width) + "".join(columns[n][i].ljust(col_w[n]) for n in names))
    return "\n".join(lines) + "\n"


def _report_cells(rep: MetricsReport) -> list:
    return [
        (f"dr: (u={rep.approach_dr[0]:.4f}, s={rep.approach_dr[1]:.4f}) "
         f"dtheta: (u={rep.approach_dtheta[0]:.4f}, s={rep.approach_dtheta[1]:.4f})"),
        _fmt(rep.coordination_latency_s, 2),
        _fmt(rep.grasp_correction_mm),
        _fmt(rep.cumulative_posture_deviation_pct),
        _fmt(rep.task_repeatability),
    ]


def _reference_cells(ref: dict) -> list:
    return [
        (f"dr: (u={ref['dr'][0]:.4f}, s={ref['dr'][1]:.4f}) "
         f"dtheta: (u={ref['dtheta'][0]:.4f}, s={ref['dtheta'][1]:.4f})"),
        f"{ref['latency']:.1f}",
        f"{ref['grasp_correction']:.4f}",
        f"{ref['deviation']:.4f}",
        f"{ref['repeatability']:.4f}",
    ]


REPORT_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "tasks"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_VERSION},
        "tasks": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": [
                    "trial_count", "approach_adaptation", "coordination_latency_s",
                    "grasp_correction_mm", "cumulative_posture_deviation_pct",
                    "task_repeatability",
                ],
                "properties": {
                    "trial_count": {"type": "integer", "minimum": 1},
                    "approach_adaptation": {
                        "type": "object",
                        "required": ["dr", "dtheta"],
                        "properties": {
                            "dr": {"$ref": "#/$defs/stat"},
                            "dtheta": {"$ref": "#/$defs/stat"},
                        },
                    },
                    "coordination_latency_s": {"type": "number", "minimum": 0},
                    "grasp_correction_mm": {"type": ["number", "null"], "minimum": 0},
                    "cumulative_posture_deviation_pct": {"type": "number", "minimum": 0},
                    "task_repeatability": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
    },
    "$defs": {
        "stat": {
            "type": "object",
            "required": ["mean", "std"],
            "properties": {
                "mean": {"type": "number"},
                "std": {"type": "number", "minimum": 0},
            },
        },
    },
}


def report_json(reports: dict) -> dict:
    tasks = {}
    for rid, rep in reports.items():
        tasks[rid] = {
            "trial_count": rep.trial_count,
            "approach_adaptation": {
                "dr": {"mean": rep.approach_dr[0], "std": rep.approach_dr[1]},
                "dtheta": {"mean": rep.approach_dtheta[0], "std": rep.approach_dtheta[1]},
            },
            "coordination_latency_s": rep.coordination_latency_s,
            "grasp_correction_mm": rep.grasp_correction_mm,
            "cumulative_posture_deviation_pct": rep.cumulative_posture_deviation_pct,
            "task_repeatability": rep.task_repeatability,
        }
    return {"schema": REPORT_SCHEMA_VERSION, "tasks": tasks}


def dumps_report(reports: dict) -> str:
    return json.dumps(report_json(reports), indent=2, sort_keys=True)
