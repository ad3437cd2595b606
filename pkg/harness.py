#!/usr/bin/env python3
"""
Design Loop Bench

A command-line harness for running sequential-design optimizers against
per-task surrogate oracles and analysing the resulting trajectories.
"""

import logging
import sys
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

import config
from src.analysis import cell_summaries
from src.audit import AuditThresholds, audit_task
from src.dataset import load_dataset
from src.errors import ConfigError, DataError, HarnessError
from src.metrics import MetricConfig, TaskContext, metric_table, write_table
from src.optim import GpUcbConfig
from src.oracle import fit_oracle, save_oracle
from src.reports import analyze_corpus, cells_table, write_analysis, write_audit, write_figure_data
from src.runner import OptimizerSpec, RunPlan, TrajectoryStore, execute_plan, load_corpus, subset_runs
from src.tasks import Task, discover_tasks, load_manifest, load_task, refresh_task_range, task_range
from src.utils import format_float

console = Console()
error_console = Console(stderr=True)

logger = logging.getLogger("harness")


def setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    root.addHandler(RichHandler(console=error_console, show_path=False, rich_tracebacks=False))
    root.setLevel(level)


def parse_list(value: str | None) -> list[str] | None:
    """Parse a comma-separated option into a list."""
    if not value:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def load_tasks(root: Path, refresh_cache: bool = False) -> list[Task]:
    paths = discover_tasks(root)
    if not paths:
        raise ConfigError(f"No task manifests found under {root}")
    return [load_task(p, refresh_cache=refresh_cache) for p in paths]


def settings_for(ctx: click.Context, **overrides: Any) -> dict[str, Any]:
    return config.load_settings(ctx.obj["config_path"], overrides)


def store_for(settings: dict[str, Any], store: Path | None) -> TrajectoryStore:
    return TrajectoryStore(store or Path(settings["store_dir"]))


def report_dir_for(settings: dict[str, Any], report_dir: Path | None) -> Path:
    return report_dir or Path(settings["report_dir"])


def summary_panel(title: str, rows: dict[str, Any]) -> Panel:
    body = "\n".join(f"[bold]{k}:[/bold] {v}" for k, v in rows.items())
    return Panel(body, title=title, border_style="green")


@click.group()
@click.version_option(version="1.0.0")
@click.option("--config", "config_path", type=click.Path(path_type=Path), help="Settings file (default harness.yaml)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Warnings and errors only")
@click.pass_context
def cli(ctx: click.Context, config_path: Path | None, verbose: bool, quiet: bool):
    """Design Loop Bench

    Run GP-UCB, random-search, replay and agent optimizers against per-task
    oracles, then compute metrics, leaderboards and published-best audits.
    """
    setup_logging(verbose, quiet)
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


# =============================================================================
# TASK CORPUS
# =============================================================================

@cli.command("train-oracle")
@click.option("--task", "task_root", required=True, type=click.Path(path_type=Path, exists=True),
              help="Task directory or corpus root")
@click.option("--seed", type=int, help="Training seed (default: global_seed)")
@click.option("--families", help="Comma-separated oracle families to consider")
@click.option("--refresh-cache", is_flag=True, help="Recompute the cached task optimum/worst")
@click.pass_context
def train_oracle(ctx, task_root: Path, seed: int | None, families: str | None, refresh_cache: bool):
    """Fit each task's oracle and report its leave-one-out R².

    Examples:
        python harness.py train-oracle --task fixtures/linear
        python harness.py train-oracle --task fixtures --refresh-cache
    """
    settings = settings_for(ctx)
    train_seed = settings["global_seed"] if seed is None else seed

    table = Table(title="Oracles")
    table.add_column("Task", style="cyan")
    table.add_column("Family")
    table.add_column("LOO R²", justify="right")
    table.add_column("Rows", justify="right")

    paths = discover_tasks(task_root)
    if not paths:
        raise ConfigError(f"No task manifests found under {task_root}")
    for path in paths:
        manifest = load_manifest(path, require_oracle=False)
        data = load_dataset(manifest.dataset_path, manifest.space, manifest.target, manifest.objective)
        model = fit_oracle(data, seed=train_seed, families=parse_list(families))
        save_oracle(model, manifest.oracle_path)
        if refresh_cache:
            refresh_task_range(Task.from_manifest(manifest))
        table.add_row(manifest.name, model.family, format_float(model.loo_r2), str(len(data)))

    console.print(table)


@cli.command("tasks")
@click.option("--tasks", "task_root", default=str(config.FIXTURES_DIR), type=click.Path(path_type=Path, exists=True),
              help="Corpus root")
def list_tasks(task_root: Path):
    """List the task corpus with oracle fit and cached optimum."""
    table = Table(title="Tasks")
    table.add_column("Task", style="cyan")
    table.add_column("Objective")
    table.add_column("Parameters", justify="right")
    table.add_column("Oracle")
    table.add_column("LOO R²", justify="right")
    table.add_column("Optimum", justify="right")

    for path in discover_tasks(task_root):
        manifest = load_manifest(path, require_oracle=False)
        family = r2 = ""
        if manifest.oracle_path.exists():
            task = Task.from_manifest(manifest)
            family, r2 = task.oracle.family, format_float(task.oracle.loo_r2)
        table.add_row(
            manifest.name,
            manifest.objective,
            str(len(manifest.space)),
            family or "[dim]untrained[/dim]",
            r2,
            format_float(manifest.cached_optimum),
        )
    console.print(table)


# =============================================================================
# RUNS
# =============================================================================

def run_options(fn):
    for option in reversed([
        click.option("--tasks", "task_root", default=str(config.FIXTURES_DIR),
                     type=click.Path(path_type=Path, exists=True), help="Corpus root"),
        click.option("--store", type=click.Path(path_type=Path), help="Trajectory store directory"),
        click.option("--iters", type=int, help="Iterations per run"),
        click.option("--runs", "runs_per_cell", type=int, help="Runs per (task, optimizer, condition) cell"),
        click.option("--workers", type=int, help="Parallel cells"),
        click.option("--seed", "global_seed", type=int, help="Global seed"),
    ]):
        fn = option(fn)
    return fn


def print_summary(summary) -> None:
    console.print(summary_panel("Corpus", {
        "Cells": f"{summary.cells} ({summary.cells_skipped} already complete)",
        "New runs": summary.runs_new,
        "Runs in plan": summary.runs_total,
        "Steps": summary.steps,
        "Fallback steps": summary.fallback_steps,
    }))


@cli.command()
@run_options
@click.option("--baseline-runs", type=int, help="GP-UCB runs per task")
@click.option("--random/--no-random", "with_random", default=True, help="Also run uniform random search")
@click.pass_context
def baseline(ctx, task_root, store, iters, runs_per_cell, workers, global_seed, baseline_runs, with_random):
    """Run the GP-UCB (and random-search) baseline matrix.

    Examples:
        python harness.py baseline --tasks fixtures --baseline-runs 20
    """
    settings = settings_for(
        ctx, iters=iters, runs_per_cell=runs_per_cell, workers=workers,
        global_seed=global_seed, baseline_runs=baseline_runs,
    )
    optimizers = [OptimizerSpec("gp_ucb", "gp_ucb")]
    if with_random:
        optimizers.append(OptimizerSpec("random", "random"))
    plan = RunPlan(
        tasks=load_tasks(task_root),
        optimizers=optimizers,
        runs_per_cell=settings["runs_per_cell"],
        iters=settings["iters"],
        baseline_runs=settings["baseline_runs"],
        global_seed=settings["global_seed"],
        workers=settings["workers"],
        gp_config=GpUcbConfig.from_settings(settings["gp_ucb"]),
    )
    print_summary(execute_plan(plan, store_for(settings, store)))


@cli.command()
@run_options
@click.option("--conditions", help="Comma-separated prompt conditions (default: both)")
@click.option("--agent-name", help="Label for the agent's trajectories")
@click.option("--transport", type=click.Choice(["subprocess", "http", "messages"]), help="Agent transport")
@click.option("--command", "agent_command", help="Agent command line (subprocess transport)")
@click.option("--url", help="Agent endpoint (http transport)")
@click.option("--model", help="Model name (messages transport)")
@click.option("--replay-from", type=click.Path(path_type=Path, exists=True),
              help="Replay designs from this trajectory store instead of calling an agent")
@click.option("--replay-optimizer", help="Optimizer name to replay from the source store")
@click.pass_context
def run(ctx, task_root, store, iters, runs_per_cell, workers, global_seed, conditions,
        agent_name, transport, agent_command, url, model, replay_from, replay_optimizer):
    """Run the agent (or replay) matrix over both prompt conditions.

    Examples:
        python harness.py run --command "python my_agent.py" --agent-name my-agent
        python harness.py run --replay-from runs-old --replay-optimizer my-agent
    """
    agent_overrides = {"transport": transport, "command": agent_command, "url": url,
                       "model": model, "name": agent_name}
    settings = settings_for(
        ctx, iters=iters, runs_per_cell=runs_per_cell, workers=workers, global_seed=global_seed,
        agent={k: v for k, v in agent_overrides.items() if v is not None},
    )

    if replay_from:
        if not replay_optimizer:
            raise ConfigError("--replay-from needs --replay-optimizer")
        spec = OptimizerSpec(
            name=agent_name or f"replay-{replay_optimizer}",
            kind="replay",
            source_store=TrajectoryStore(replay_from),
            source_optimizer=replay_optimizer,
        )
    else:
        spec = OptimizerSpec(name=settings["agent"]["name"], kind="agent", agent_settings=settings["agent"])

    plan = RunPlan(
        tasks=load_tasks(task_root),
        optimizers=[spec],
        conditions=parse_list(conditions) or list(config.CONDITIONS),
        runs_per_cell=settings["runs_per_cell"],
        iters=settings["iters"],
        global_seed=settings["global_seed"],
        workers=settings["workers"],
    )
    print_summary(execute_plan(plan, store_for(settings, store)))


# =============================================================================
# METRICS AND ANALYSIS
# =============================================================================

def task_ranges(tasks: list[Task]) -> dict[str, tuple[float, float]]:
    return {task.name: task_range(task) for task in tasks}


def build_table(tasks: list[Task], trajectories, metric_config: MetricConfig, ranges=None):
    ranges = ranges or task_ranges(tasks)
    contexts = {}
    for task in tasks:
        optimum, worst = ranges[task.name]
        contexts[task.name] = TaskContext(space=task.space, dataset=task.dataset, optimum=optimum, worst=worst)
    return metric_table(trajectories, metric_config, contexts)


def load_trajectories(store: TrajectoryStore, settings: dict[str, Any], lenient: bool):
    trajectories = load_corpus(store, lenient=lenient)
    if not trajectories:
        logger.warning("Trajectory store %s is empty", store.root)
    return subset_runs(trajectories, "gp_ucb", settings["baseline_runs_used"])


@cli.command()
@click.option("--tasks", "task_root", default=str(config.FIXTURES_DIR), type=click.Path(path_type=Path, exists=True))
@click.option("--store", type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), help="Metric table CSV (default <report_dir>/metrics.csv)")
@click.option("--baseline-runs-used", type=int, help="Use only the first N GP-UCB runs per task")
@click.option("--lenient", is_flag=True, help="Skip corrupt store records instead of failing")
@click.pass_context
def metrics(ctx, task_root, store, out, baseline_runs_used, lenient):
    """Emit the long-form metric table."""
    settings = settings_for(ctx, baseline_runs_used=baseline_runs_used)
    metric_config = MetricConfig.from_settings(settings)
    trajectories = load_trajectories(store_for(settings, store), settings, lenient)
    table = build_table(load_tasks(task_root), trajectories, metric_config)
    path = out or report_dir_for(settings, None) / "metrics.csv"
    write_table(table, path)
    console.print(f"[green]Wrote {len(table)} metric rows to {path}[/green]")


@cli.command()
@click.option("--tasks", "task_root", default=str(config.FIXTURES_DIR), type=click.Path(path_type=Path, exists=True))
@click.option("--store", type=click.Path(path_type=Path))
@click.option("--report-dir", type=click.Path(path_type=Path))
@click.option("--baseline-runs-used", type=int, help="Use only the first N GP-UCB runs per task")
@click.option("--permissive", is_flag=True, help="Permissive (non-canonical) disagreement rule")
@click.pass_context
def analyze(ctx, task_root, store, report_dir, baseline_runs_used, permissive):
    """Metric disagreement, pass rates, win rates and convergent gaps."""
    settings = settings_for(ctx, baseline_runs_used=baseline_runs_used)
    metric_config = MetricConfig.from_settings(settings)
    tasks = load_tasks(task_root)
    trajectories = load_trajectories(store_for(settings, store), settings, lenient=False)
    ranges = task_ranges(tasks)
    table = build_table(tasks, trajectories, metric_config, ranges)
    objectives = {t.name: t.objective for t in tasks}

    report = analyze_corpus(
        table,
        trajectories,
        metric_config,
        objectives=objectives,
        tie_tolerance=settings["tie_tolerance"],
        bootstrap_B=settings["bootstrap"]["B"],
        bootstrap_seed=settings["bootstrap"]["seed"],
        permissive=permissive,
        worsts={name: worst for name, (_, worst) in ranges.items()},
    )
    directory = report_dir_for(settings, report_dir)
    report.tables["cells"] = cells_table(cell_summaries(table, objectives))
    written = write_analysis(report, directory)

    headline = Table(title="Headline")
    headline.add_column("Quantity", style="cyan")
    headline.add_column("Value", justify="right")
    for key in sorted(report.headline):
        value = report.headline[key]
        headline.add_row(key, format_float(value) if isinstance(value, float) else str(value))
    console.print(headline)
    console.print(f"[dim]{len(written)} files written to {directory}[/dim]")


@cli.command()
@click.option("--tasks", "task_root", default=str(config.FIXTURES_DIR), type=click.Path(path_type=Path, exists=True))
@click.option("--store", type=click.Path(path_type=Path))
@click.option("--report-dir", type=click.Path(path_type=Path))
@click.option("--refresh-cache", is_flag=True, help="Recompute the cached task optimum/worst")
@click.option("--grouping", type=click.Choice(["best", "mean"]), help="Per-value statistic for the range criterion")
@click.pass_context
def audit(ctx, task_root, store, report_dir, refresh_cache, grouping):
    """Published-best audit per task plus the cross-task summary."""
    settings = settings_for(ctx, audit={"grouping": grouping} if grouping else None)
    audit_settings = settings["audit"]
    thresholds = AuditThresholds.from_settings(audit_settings)
    horizon = settings["iters"]
    trajectories = load_corpus(store_for(settings, store))

    reports = []
    for task in load_tasks(task_root, refresh_cache=refresh_cache):
        runs = [t for t in trajectories if t.task == task.name]
        reports.append(audit_task(
            task.name,
            task.score,
            task.dataset,
            task.space,
            runs,
            thresholds,
            key_column=task.manifest.key_column if task.manifest else None,
            horizon=horizon,
            grouping=audit_settings["grouping"],
        ))

    directory = report_dir_for(settings, report_dir)
    write_audit(reports, directory, audit_settings["alignment_sweep"],
                settings["bootstrap"]["B"], settings["bootstrap"]["seed"])

    table = Table(title="Audit")
    table.add_column("Task", style="cyan")
    table.add_column("Key column")
    table.add_column("Alignment", justify="right")
    table.add_column("Divergent")
    for r in sorted(reports, key=lambda r: r.task):
        table.add_row(r.task, r.key_categorical, format_float(r.alignment_ratio),
                      "+".join(r.criteria) if r.divergent else "no")
    console.print(table)


@cli.command()
@click.option("--tasks", "task_root", default=str(config.FIXTURES_DIR), type=click.Path(path_type=Path, exists=True))
@click.option("--store", type=click.Path(path_type=Path))
@click.option("--report-dir", type=click.Path(path_type=Path))
@click.pass_context
def report(ctx, task_root, store, report_dir):
    """Write plot-ready figure data (median curves, fraction of optimum)."""
    settings = settings_for(ctx)
    trajectories = load_trajectories(store_for(settings, store), settings, lenient=False)
    ranges = task_ranges(load_tasks(task_root))
    directory = report_dir_for(settings, report_dir)
    written = write_figure_data(trajectories, ranges, directory)
    console.print(f"[dim]{len(written)} files written to {directory}[/dim]")


# =============================================================================
# ENTRY POINT
# =============================================================================

def execute_command(argv: list[str] | None = None) -> int:
    """Run one command; 0 on success, 1 on usage/configuration errors, 2 on data errors."""
    try:
        code = cli.main(args=argv, prog_name="harness", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        error_console.print("error: Aborted")
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except ConfigError as e:
        error_console.print(f"error: {type(e).__name__}: {e}", markup=False, highlight=False)
        return 1
    except DataError as e:
        error_console.print(f"error: {type(e).__name__}: {e}", markup=False, highlight=False)
        return 2
    except HarnessError as e:
        error_console.print(f"error: {type(e).__name__}: {e}", markup=False, highlight=False)
        return 2
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(execute_command())
