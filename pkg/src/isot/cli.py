"""Command-line entry points: run, metrics, serve, validate."""
from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click

from .harness import (
    emit_report,
    load_trial_files,
    run_simulation,
    validate_trial,
    write_trial_files,
)
from .metrics import compute_report, dumps_report, render_text_table
from .scenario import load_scenario, packaged_scenario_path


def _setup_logging() -> None:
    level = os.environ.get("ISOT_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _resolve_scenario(ref: str) -> Path:
    path = Path(ref)
    if path.exists():
        return path
    packaged = packaged_scenario_path(ref)
    if packaged.exists():
        return packaged
    raise click.ClickException(f"scenario not found: {ref}")


@click.group()
def main() -> None:
    """Leader-follower co-manipulation simulator."""
    _setup_logging()


@main.command()
@click.option("--scenario", "scenario_ref", required=True, help="Scenario file or packaged name.")
@click.option("--trials", type=int, default=None, help="Override the scenario trial count.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Directory for logs and reports.")
@click.option("--report", "report_fmt", type=click.Choice(["table", "json"]), default="table")
def run(scenario_ref, trials, seed, out_dir, report_fmt):
    """Run a scenario in batch mode and emit its report."""
    scenario = load_scenario(_resolve_scenario(scenario_ref))
    sim_run = run_simulation(scenario, seed=seed, trials=trials)
    if not sim_run.trials:
        raise click.ClickException("no trial completed")
    out = Path(out_dir) if out_dir else None
    if out is not None:
        for trial in sim_run.trials:
            write_trial_files(trial, out)
    problems = []
    for trial in sim_run.trials:
        problems += [f"trial {trial.trial_id}: {p}"
                     for p in validate_trial(trial, scenario.chain, scenario.rates.control_hz)]
    if problems:
        raise click.ClickException("log validation failed:\n" + "\n".join(problems))
    try:
        _, text, doc = emit_report(sim_run, out)
    except ValueError as exc:
        click.echo(f"report skipped: {exc}", err=True)
        click.echo(f"completed {len(sim_run.trials)} trial(s) of {scenario.name}")
        return
    click.echo(text if report_fmt == "table" else doc)
    click.echo(f"completed {len(sim_run.trials)} trial(s) of {scenario.name}", err=True)


@main.command()
@click.option("--logs", "logs_dir", required=True, type=click.Path(exists=True))
@click.option("--workspace-diagonal", type=float, default=1.7,
              help="Workspace box diagonal (m) used by the repeatability metric.")
@click.option("--report", "report_fmt", type=click.Choice(["table", "json"]), default="table")
def metrics(logs_dir, workspace_diagonal, report_fmt):
    """Recompute the five evaluation metrics from saved trial logs."""
    trials = load_trial_files(Path(logs_dir))
    if not trials:
        raise click.ClickException(f"no trial logs found in {logs_dir}")
    by_task: dict = {}
    for t in trials:
        by_task.setdefault(t.task_id, []).append(t)
    reports = {}
    for task_id, task_trials in sorted(by_task.items()):
        if len(task_trials) < 2:
            click.echo(f"skipping {task_id}: needs at least 2 trials", err=True)
            continue
        reports[task_id] = compute_report(task_trials, workspace_diagonal, task_id)
    if not reports:
        raise click.ClickException("no task with enough trials")
    click.echo(render_text_table(reports) if report_fmt == "table" else dumps_report(reports))


@main.command()
@click.option("--scenario", "scenario_ref", required=True)
@click.option("--port", type=int, default=8765)
@click.option("--host", default="127.0.0.1")
@click.option("--speed", type=float, default=1.0, help="Simulated seconds per wall second.")
def serve(scenario_ref, port, host, speed):
    """Serve a live interactive session over the JSON wire protocol."""
    from .server import serve_forever

    scenario = load_scenario(_resolve_scenario(scenario_ref))
    serve_forever(scenario, host=host, port=port, speed=speed)


@main.command()
@click.option("--scenario", "scenario_ref", required=True)
def validate(scenario_ref):
    """Validate a scenario file against its schema."""
    scenario = load_scenario(_resolve_scenario(scenario_ref))
    click.echo(f"{scenario.name}: OK ({scenario.trials} trials, "
               f"{scenario.duration:.1f} s, {len(scenario.objects)} object(s))")


if __name__ == "__main__":
    sys.exit(main())
