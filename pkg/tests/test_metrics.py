import json

import jsonschema
import numpy as np
import pytest

from isot.fsm import Phase, TransitionRecord
from isot.metrics import (
    METRIC_ROWS,
    REPORT_JSON_SCHEMA,
    TrialLog,
    approach_adaptation,
    compute_report,
    coordination_latency,
    cumulative_posture_deviation,
    dumps_report,
    grasp_correction,
    render_text_table,
    task_repeatability,
)


def _rec(t, src, dst, trigger="x", wrist_z=0.1, setpoint_z=0.4, t_event=None):
    return TransitionRecord(t, src, dst, trigger, wrist_z, setpoint_z,
                            t_event if t_event is not None else t)


def _make_trial(trial_id, positions, phases, transitions, jaw=None, dt=0.001):
    n = len(positions)
    positions = np.asarray(positions, dtype=float)
    jaw = np.zeros((n, 2)) if jaw is None else np.asarray(jaw, dtype=float)
    return TrialLog(
        trial_id=trial_id,
        task_id="toy",
        t=np.arange(n) * dt,
        phase=list(phases),
        q=np.zeros((n, 7)),
        ee_position=positions,
        ee_quaternion=np.tile([1.0, 0, 0, 0], (n, 1)),
        wrist=positions.copy(),
        force=np.zeros((n, 3)),
        deformation=np.zeros((n, 3)),
        slip=np.zeros(n, dtype=int),
        events=[""] * n,
        jaw=jaw,
        transitions=transitions,
    )


def _approach_trial(trial_id, p_home, p_pre):
    """Homing hold, jump to pre-grasp hold, then grasp."""
    n1, n2 = 100, 100
    positions = [p_home] * n1 + [p_pre] * n2
    phases = ["homing"] * n1 + ["pregrasp"] * n2
    transitions = [
        _rec(n1 * 0.001, Phase.HOMING, Phase.PREGRASP),
        _rec((n1 + n2 - 1) * 0.001, Phase.PREGRASP, Phase.GRASP),
    ]
    return _make_trial(trial_id, positions, phases, transitions)


def test_approach_identical_trials_zero_sigma():
    trials = [_approach_trial(i, [0.3, 0.0, 0.2], [0.3, 0.0, 0.8]) for i in range(4)]
    (dr_mu, dr_sig), (dth_mu, dth_sig) = approach_adaptation(trials)
    assert dr_sig == 0.0 and dth_sig == 0.0


def test_approach_hand_constructed_polar_oracle():
    a = _approach_trial(0, [0.3, 0.0, 0.2], [0.3, 0.0, 0.8])
    b = _approach_trial(1, [0.32, 0.0, 0.2], [0.32, 0.0, 0.8])
    (dr_mu, dr_sig), (dth_mu, dth_sig) = approach_adaptation([a, b])

    # Independent polar-conversion oracle.
    def polar(p):
        return np.hypot(p[0], p[1]), np.arctan2(p[1], p[0])

    drs, dths = [], []
    for p0, p1 in [([0.3, 0.0], [0.3, 0.0]), ([0.32, 0.0], [0.32, 0.0])]:
        r0, th0 = polar(p0)
        r1, th1 = polar(p1)
        drs.append(abs(r1 - r0))
        dths.append(abs(th1 - th0))
    assert abs(dr_mu - np.mean(drs)) < 1e-12
    assert abs(dr_sig - np.std(drs)) < 1e-12
    assert abs(dth_mu - np.mean(dths)) < 1e-12


def test_approach_requires_phases():
    incomplete = _make_trial(0, [[0.3, 0, 0.2]] * 10, ["homing"] * 10, [])
    complete = [_approach_trial(i, [0.3, 0.0, 0.2], [0.3, 0.0, 0.8]) for i in range(2)]
    (dr_mu, _), _ = approach_adaptation(complete + [incomplete])
    assert np.isfinite(dr_mu)
    with pytest.raises(ValueError):
        approach_adaptation([complete[0]])


def test_latency_zero_when_motion_starts_with_trigger():
    n = 200
    positions = [[0.3 + 0.002 * k, 0.0, 0.2] for k in range(n)]  # always moving at 2 m/s
    transitions = [_rec(0.05, Phase.HOMING, Phase.PREGRASP)]
    trial = _make_trial(0, positions, ["homing"] * n, transitions)
    assert coordination_latency(trial) == 0.0


def test_latency_injected_delays_sum():
    dt = 0.001
    n = 4000
    positions = np.zeros((n, 3))
    positions[:, 0] = 0.3
    transitions = []
    # four triggers; motion starts 0.5 s after each
    for i, t_ev in enumerate([0.2, 1.2, 2.2, 3.2]):
        transitions.append(_rec(t_ev + 0.5, Phase.HOMING, Phase.PREGRASP, t_event=t_ev))
        k0 = int((t_ev + 0.5) / dt)
        for k in range(k0, min(k0 + 100, n)):
            positions[k, 0] = 0.3 + 0.01 * (k - k0 + 1)
    trial = _make_trial(0, positions, ["homing"] * n, transitions)
    lat = coordination_latency(trial)
    assert abs(lat - 2.0) < 0.02


def test_grasp_correction_cases():
    n = 1000
    positions = [[0.3, 0.0, 0.2]] * n
    phases = ["manipulate"] * n
    transitions = [
        _rec(0.1, Phase.GRASP, Phase.MANIPULATE),
        _rec(0.9, Phase.MANIPULATE, Phase.RELEASE),
    ]
    jaw = np.zeros((n, 2))
    trial = _make_trial(0, positions, phases, transitions, jaw=jaw)
    assert grasp_correction(trial) == 0.0

    # two regrips of 0.5 mm each on one jaw
    jaw2 = jaw.copy()
    jaw2[300:, 0] += 0.0005
    jaw2[600:, 0] -= 0.0005
    trial2 = _make_trial(1, positions, phases, transitions, jaw=jaw2)
    assert abs(grasp_correction(trial2) - 1.0) < 1e-9

    no_grasp = _make_trial(2, positions, ["pregrasp"] * n, [_rec(0.1, Phase.HOMING, Phase.PREGRASP)])
    assert grasp_correction(no_grasp) is None


def _line_trial(trial_id, offset=0.0, n=500):
    """Straight path of length exactly 1 m along x, offset along y."""
    xs = np.linspace(0.0, 1.0, n)
    positions = np.column_stack([xs, np.full(n, offset), np.zeros(n)])
    transitions = [_rec(0.0, Phase.HOMING, Phase.PREGRASP)]
    return _make_trial(trial_id, positions, ["homing"] * n, transitions)


def test_posture_deviation_identical_trials_zero():
    trials = [_line_trial(i) for i in range(3)]
    assert cumulative_posture_deviation(trials) == 0.0


def test_posture_deviation_one_cm_offset_on_one_meter_path():
    trials = [_line_trial(0, 0.0), _line_trial(1, 0.01)]
    # hand-resampled oracle: constant pointwise deviation 0.01, path length 1
    assert abs(cumulative_posture_deviation(trials) - 1.0) < 1e-9


def test_repeatability_identical_trials():
    trials = [_line_trial(i) for i in range(5)]
    assert task_repeatability(trials, workspace_diagonal=1.7) == 1.0


def test_repeatability_maximally_separated():
    diag = np.linalg.norm([0.9, 1.2, 1.0])
    a = _make_trial(0, [[0.0, 0.0, 0.0]] * 100, ["homing"] * 100,
                    [_rec(0.0, Phase.HOMING, Phase.PREGRASP)])
    b = _make_trial(1, [[0.9, 1.2, 1.0]] * 100, ["homing"] * 100,
                    [_rec(0.0, Phase.HOMING, Phase.PREGRASP)])
    c = task_repeatability([a, b], workspace_diagonal=float(diag))
    assert c < 1e-9


def test_repeatability_translation_invariant():
    trials = [_line_trial(0, 0.0), _line_trial(1, 0.02)]
    shifted = []
    for i, t in enumerate(trials):
        shifted.append(_make_trial(i, t.ee_position + np.array([0.1, -0.2, 0.3]),
                                   t.phase, t.transitions))
    assert abs(task_repeatability(trials, 1.7) - task_repeatability(shifted, 1.7)) < 1e-12


def test_metric_permutation_invariance():
    trials = [_approach_trial(i, [0.3 + 0.01 * i, 0.0, 0.2], [0.3 + 0.01 * i, 0.0, 0.8])
              for i in range(4)]
    fwd = approach_adaptation(trials)
    rev = approach_adaptation(trials[::-1])
    assert np.allclose(fwd, rev)
    assert abs(task_repeatability(trials, 1.7) - task_repeatability(trials[::-1], 1.7)) < 1e-12


def test_full_report_and_layout():
    trials = [_full_trial(i, offset=0.002 * i) for i in range(3)]
    report = compute_report(trials, workspace_diagonal=1.7, task_id="toy")
    text = render_text_table({"toy": report})
    for row in METRIC_ROWS:
        assert row in text
    assert "HRC Task 1 (ref)" in text
    doc = json.loads(dumps_report({"toy": report}))
    jsonschema.validate(doc, REPORT_JSON_SCHEMA)
    assert doc["schema"] == "report.v1"


def _full_trial(trial_id, offset=0.0):
    n = 1200
    dt = 0.001
    positions = np.zeros((n, 3))
    phases = []
    for k in range(n):
        t = k * dt
        if t < 0.2:
            positions[k] = [0.3, offset, 0.2]
            phases.append("homing")
        elif t < 0.5:
            positions[k] = [0.3, offset, 0.2 + (t - 0.2) * 2.0]
            phases.append("pregrasp")
        elif t < 0.8:
            positions[k] = [0.3, offset, 0.8]
            phases.append("grasp")
        else:
            positions[k] = [0.3, offset, 0.8]
            phases.append("manipulate")
    transitions = [
        _rec(0.2, Phase.HOMING, Phase.PREGRASP),
        _rec(0.5, Phase.PREGRASP, Phase.GRASP),
        _rec(0.8, Phase.GRASP, Phase.MANIPULATE),
        _rec(1.1, Phase.MANIPULATE, Phase.RELEASE),
    ]
    jaw = np.zeros((n, 2))
    jaw[900:, 0] = 0.0003
    return _make_trial(trial_id, positions, phases, transitions, jaw=jaw)


def test_hand_computed_two_trial_metrics():
    """All five metrics against hand-computed values on toy two-trial logs."""
    a = _full_trial(0, offset=0.0)
    b = _full_trial(1, offset=0.01)
    report = compute_report([a, b], workspace_diagonal=2.0, task_id="toy")

    # approach adaptation: wrist at (0.3, off) both at homing exit and pregrasp
    # exit -> dr = 0, dtheta = 0 for each trial
    assert abs(report.approach_dr[0]) < 1e-12
    assert abs(report.approach_dtheta[0]) < 1e-12

    # latency: each transition's motion onset, with speeds as forward
    # differences. Motion runs only during (0.2, 0.5). Hand computation:
    #   t=0.2 trigger -> forward-difference speed at that very tick -> 0.0
    #   t=0.5 trigger -> no further motion until the log ends at 1.199
    #   t=0.8 and t=1.1 likewise; mean over trials identical.
    expected_latency = 0.0 + (1.199 - 0.5) + (1.199 - 0.8) + (1.199 - 1.1)
    assert abs(report.coordination_latency_s - expected_latency) < 1e-9

    # grasp correction: one 0.3 mm jaw move between grasp и manipulate end
    assert abs(report.grasp_correction_mm - 0.3) < 1e-9

    # posture deviation: constant 1 cm offset between the two paths.
    path_len = 1.2  # 0.6 m climb... computed below from the resampled oracle
    pa = a.ee_position
    # oracle: resample both to 200 points over normalized time and measure
    grid = np.linspace(0, 1, 200)
    u = (a.t - a.t[0]) / (a.t[-1] - a.t[0])
    ra = np.column_stack([np.interp(grid, u, a.ee_position[:, i]) for i in range(3)])
    rb = np.column_stack([np.interp(grid, u, b.ee_position[:, i]) for i in range(3)])
    rms = np.sqrt(np.mean(np.sum((ra - rb) ** 2, axis=1)))
    mean_len = 0.5 * (np.sum(np.linalg.norm(np.diff(ra, axis=0), axis=1))
                      + np.sum(np.linalg.norm(np.diff(rb, axis=0), axis=1)))
    assert abs(report.cumulative_posture_deviation_pct - 100.0 * rms / mean_len) < 1e-9

    # repeatability: C = 1 - rms / diagonal
    assert abs(report.task_repeatability - (1.0 - rms / 2.0)) < 1e-9


def test_trial_log_validation():
    with pytest.raises(ValueError):
        _make_trial(0, [[0, 0, 0]] * 3, ["homing"] * 3, [], dt=-1.0)
