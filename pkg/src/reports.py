"""
Report Generation Module for Design Loop Bench

Writes the plot-ready data files and markdown summaries for:
- Metric tables
- Leaderboard analyses (disagreement, pass rates, win rates, convergent gaps)
- Per-iteration fraction-of-optimum curves
- Published-best audits

Every file is a deterministic function of its inputs: rows are sorted and
floats carry 6 significant digits, so re-running a command reproduces the
report byte for byte.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
import yaml

from src.analysis import (
    AUC,
    OUTCOME,
    CellSummary,
    baseline_cells,
    cell_summaries,
    convergent_gap_table,
    disagreement_by_horizon,
    gp_normalized_table,
    leave_one_out_rate,
    median_curves,
    metric_disagreement,
    paired_condition_win_rate,
    per_iteration_pass_rate,
    run_bootstrap_win_rate,
    select_cells,
    three_way_agreement,
)
from src.audit import AuditReport, alignment_subsets, audit_summary, nested_subsets, save_report, threshold_sweep
from src.metrics import MetricConfig, median_fraction_curves, write_table
from src.trajectory import Trajectory
from src.utils import format_float, save_file

logger = logging.getLogger(__name__)


def _save_report(directory: Path, name: str, content: str) -> Path:
    """Save a markdown report to file."""
    path = Path(directory) / f"{name}.md"
    save_file(path, content)
    logger.info("Wrote %s", path)
    return path


def _save_table(directory: Path, name: str, table: pd.DataFrame) -> Path:
    path = Path(directory) / f"{name}.csv"
    write_table(table, path)
    logger.info("Wrote %s", path)
    return path


def _markdown_table(table: pd.DataFrame) -> list[str]:
    if table.empty:
        return ["_(no rows)_"]
    header = "| " + " | ".join(str(c) for c in table.columns) + " |"
    rule = "|" + "|".join("---" for _ in table.columns) + "|"
    lines = [header, rule]
    for row in table.itertuples(index=False):
        cells = [format_float(v) if isinstance(v, float) else str(v) for v in row]
        lines.append("| " + " | ".join(cells) + " |")
    return lines


# =============================================================================
# ANALYSIS
# =============================================================================

@dataclass
class AnalysisReport:
    """Every leaderboard table for one corpus."""

    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    headline: dict[str, Any] = field(default_factory=dict)


def analyze_corpus(
    table: pd.DataFrame,
    trajectories: Sequence[Trajectory],
    metric_config: MetricConfig,
    objectives: dict[str, str] | None = None,
    baseline_optimizer: str = "gp_ucb",
    tie_tolerance: float = 1e-9,
    bootstrap_B: int = 1000,
    bootstrap_seed: int = 0,
    permissive: bool = False,
    worsts: dict[str, float] | None = None,
) -> AnalysisReport:
    """Run the leaderboard analyses over a metric table.

    Leaderboards compare every optimizer except the baseline within each
    condition; the baseline is the reference for pass rates and GP normalization.
    """
    report = AnalysisReport()
    cells = cell_summaries(table, objectives)
    if not cells:
        logger.warning("Metric table is empty; nothing to analyze")
        return report

    k = max(metric_config.horizons)
    baseline = baseline_cells(cells, baseline_optimizer)
    contenders = select_cells(cells, exclude_optimizers=[baseline_optimizer])
    conditions = sorted({c.condition for c in contenders})

    disagreement_rows, confusion_rows, horizon_rows, loo_rows, gap_tables = [], [], [], [], []
    curves = median_curves(trajectories)
    for condition in conditions:
        group = select_cells(contenders, condition=condition)
        result = metric_disagreement(group, k, tie_tolerance, permissive=permissive)
        for r in result.records:
            disagreement_rows.append({
                "condition": condition,
                "task": r.task,
                "winner_auc": r.winner_auc,
                "winner_outcome": r.winner_outcome,
                "outcome_ties": ";".join(r.outcome_ties),
                "agree": r.agree,
                "auc_winner_outcome_rank": r.rank_of_auc_winner_under_outcome,
            })
        confusion = result.confusion.stack().rename("tasks").reset_index()
        confusion.insert(0, "condition", condition)
        confusion_rows.append(confusion)

        by_horizon = disagreement_by_horizon(group, metric_config.horizons, tie_tolerance)
        by_horizon.insert(0, "condition", condition)
        horizon_rows.append(by_horizon)

        report.headline[f"disagreement_rate[{condition}]"] = result.rate
        report.headline[f"three_way_agreement[{condition}]"] = three_way_agreement(group, k, tie_tolerance)
        if len({c.optimizer for c in group}) >= 2:
            for unit, rate in leave_one_out_rate(
                group, "optimizer", lambda cs: metric_disagreement(cs, k, tie_tolerance).rate
            ):
                loo_rows.append({"condition": condition, "excluded": unit, "disagreement_rate": rate})

        gaps = convergent_gap_table(
            result, group, curves, k,
            metric_config.convergence_tolerance, metric_config.optimum_fraction, worsts,
        )
        gaps.table.insert(0, "condition", condition)
        gap_tables.append(gaps.table)

    report.tables["disagreement"] = pd.DataFrame(disagreement_rows)
    report.tables["confusion"] = pd.concat(confusion_rows, ignore_index=True) if confusion_rows else pd.DataFrame()
    report.tables["disagreement_by_horizon"] = (
        pd.concat(horizon_rows, ignore_index=True) if horizon_rows else pd.DataFrame()
    )
    report.tables["leave_one_out"] = pd.DataFrame(loo_rows)
    report.tables["convergent_gaps"] = pd.concat(gap_tables, ignore_index=True) if gap_tables else pd.DataFrame()

    if baseline:
        report.tables["pass_rate"] = per_iteration_pass_rate(contenders, baseline, metric_config.horizons, AUC)
        report.tables["pass_rate_outcome"] = per_iteration_pass_rate(
            contenders, baseline, metric_config.horizons, OUTCOME
        )
        report.tables["gp_normalized"] = gp_normalized_table(
            contenders, baseline, metric_config.horizons, metric_config.epsilon
        )
    else:
        logger.warning("No %s baseline cells; skipping pass rates and GP normalization", baseline_optimizer)

    win = paired_condition_win_rate(contenders, AUC, k)
    report.tables["win_rate"] = pd.DataFrame(win.pairs, columns=["task", "optimizer", "aware", "agnostic", "win"])
    if win.pairs:
        report.headline["win_rate"] = win.rate
        report.headline["win_rate_pairs"] = len(win.pairs)
        boot = run_bootstrap_win_rate(table, k, bootstrap_B, bootstrap_seed)
        report.headline["win_rate_run_bootstrap_ci"] = [boot.ci_low, boot.ci_high]
        report.headline["win_rate_bootstrap_p"] = boot.p_value
    if permissive:
        report.headline["variant"] = "permissive (non-canonical)"
    return report


def write_analysis(report: AnalysisReport, directory: Path) -> list[Path]:
    written = [_save_table(directory, name, report.tables[name]) for name in sorted(report.tables)]

    lines = ["# Leaderboard Analysis", "", "## Headline", "", "| Quantity | Value |", "|---|---|"]
    for key in sorted(report.headline):
        value = report.headline[key]
        if isinstance(value, list):
            shown = "[" + ", ".join(format_float(v) for v in value) + "]"
        elif isinstance(value, float):
            shown = format_float(value)
        else:
            shown = str(value)
        lines.append(f"| {key} | {shown} |")
    lines.append("")
    for name in ("disagreement_by_horizon", "pass_rate", "convergent_gaps"):
        if name in report.tables:
            lines.extend([f"## {name.replace('_', ' ').title()}", ""])
            lines.extend(_markdown_table(report.tables[name]))
            lines.append("")
    written.append(_save_report(directory, "analysis", "\n".join(lines)))
    return written


# =============================================================================
# FIGURE DATA
# =============================================================================

def bsf_curve_table(trajectories: Sequence[Trajectory]) -> pd.DataFrame:
    """Median oriented best-so-far value per cell and iteration."""
    rows = []
    for (task, optimizer, condition), curve in sorted(median_curves(trajectories).items()):
        for i, value in enumerate(curve, start=1):
            rows.append({
                "task": task,
                "optimizer": optimizer,
                "condition": condition,
                "iteration": i,
                "median_bsf": float(value),
            })
    return pd.DataFrame(rows, columns=["task", "optimizer", "condition", "iteration", "median_bsf"])


def write_figure_data(
    trajectories: Sequence[Trajectory],
    ranges: dict[str, tuple[float, float]],
    directory: Path,
) -> list[Path]:
    return [
        _save_table(directory, "bsf_curves", bsf_curve_table(trajectories)),
        _save_table(directory, "fraction_of_optimum", median_fraction_curves(list(trajectories), ranges)),
    ]


# =============================================================================
# AUDIT
# =============================================================================

def write_audit(
    reports: Sequence[AuditReport],
    directory: Path,
    sweep: Sequence[float] = (0.90, 0.95, 0.99),
    B: int = 1000,
    seed: int = 0,
) -> list[Path]:
    ordered = sorted(reports, key=lambda r: r.task)
    written = [save_report(r, directory) for r in ordered]
    summary = audit_summary(ordered)
    written.append(_save_table(directory, "audit_summary", summary))
    written.append(_save_table(directory, "threshold_sweep", threshold_sweep(ordered)))
    nested = nested_subsets(ordered, B=B, seed=seed)
    written.append(_save_table(directory, "nested_subsets", nested))

    subsets = {f"{t:g}": tasks for t, tasks in alignment_subsets(ordered, sweep).items()}
    path = Path(directory) / "alignment_subsets.yaml"
    save_file(path, yaml.safe_dump(subsets, sort_keys=True))
    written.append(path)

    lines = [
        "# Published-Best Audit",
        "",
        f"**Tasks audited:** {len(ordered)}",
        f"**Literature-divergent:** {sum(r.divergent for r in ordered)}",
        "",
        "## Tasks",
        "",
    ]
    lines.extend(_markdown_table(summary))
    lines.extend(["", "## Nested Subsets", ""])
    lines.extend(_markdown_table(nested))
    lines.append("")
    written.append(_save_report(directory, "audit", "\n".join(lines)))
    return written


def cells_table(cells: Sequence[CellSummary]) -> pd.DataFrame:
    """Wide view of cell medians, one row per cell and (metric, horizon)."""
    rows = []
    for cell in sorted(cells, key=lambda c: c.key):
        for (metric, horizon), value in sorted(cell.values.items()):
            rows.append({
                "task": cell.task,
                "optimizer": cell.optimizer,
                "condition": cell.condition,
                "metric": metric,
                "horizon": horizon,
                "median": value,
                "runs": cell.runs,
            })
    return pd.DataFrame(rows, columns=["task", "optimizer", "condition", "metric", "horizon", "median", "runs"])
