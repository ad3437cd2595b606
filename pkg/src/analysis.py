"""Leaderboard analyses over the long-form metric table.

Cells are (task, optimizer, condition) groups of runs summarized by their
median per (metric, horizon). Every comparison is on the oriented value, so
larger is always better regardless of the task objective.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

import config
from src.errors import MissingBaseline
from src.metrics import BsfCurve, best_so_far, gp_normalize, iter_to_fraction
from src.stats import StatResult, bootstrap_pvalue, wilson_interval
from src.trajectory import Trajectory

logger = logging.getLogger(__name__)

AUC = "bsf_auc"
OUTCOME = "bsf_outcome"
NIS = "nis"

# Metrics reported in original target units (negated for minimize tasks)
UNIT_METRICS = {OUTCOME}


@dataclass
class CellSummary:
    task: str
    optimizer: str
    condition: str
    values: dict[tuple[str, int], float] = field(default_factory=dict)
    runs: int = 0
    maximize: bool = True

    @property
    def key(self) -> tuple[str, str, str]:
        return self.task, self.optimizer, self.condition

    def value(self, metric: str, k: int) -> float:
        return self.values[(metric, k)]

    def oriented(self, metric: str, k: int) -> float:
        v = self.values[(metric, k)]
        return -v if metric in UNIT_METRICS and not self.maximize else v

    def has(self, metric: str, k: int) -> bool:
        return (metric, k) in self.values


def cell_summaries(table: pd.DataFrame, objectives: dict[str, str] | None = None) -> list[CellSummary]:
    """Median of runs per (task, optimizer, condition, metric, horizon)."""
    objectives = objectives or {}
    if table.empty:
        return []
    frame = table.assign(value=pd.to_numeric(table["value"], errors="coerce")).dropna(subset=["value"])
    medians = frame.groupby(["task", "optimizer", "condition", "metric", "horizon"], sort=True)["value"].median()
    runs = table.groupby(["task", "optimizer", "condition"], sort=True)["run_index"].nunique()

    cells: dict[tuple[str, str, str], CellSummary] = {}
    for (task, optimizer, condition), n in runs.items():
        cells[(task, optimizer, condition)] = CellSummary(
            task, optimizer, condition,
            runs=int(n),
            maximize=objectives.get(task, "maximize") == "maximize",
        )
    for (task, optimizer, condition, metric, horizon), value in medians.items():
        cells[(task, optimizer, condition)].values[(metric, int(horizon))] = float(value)
    return list(cells.values())


def select_cells(
    cells: Sequence[CellSummary],
    optimizer: str | None = None,
    condition: str | None = None,
    exclude_optimizers: Sequence[str] = (),
) -> list[CellSummary]:
    return [
        c for c in cells
        if (optimizer is None or c.optimizer == optimizer)
        and (condition is None or c.condition == condition)
        and c.optimizer not in exclude_optimizers
    ]


def _by_task(cells: Sequence[CellSummary]) -> dict[str, list[CellSummary]]:
    grouped: dict[str, list[CellSummary]] = defaultdict(list)
    for cell in sorted(cells, key=lambda c: c.key):
        grouped[cell.task].append(cell)
    return dict(grouped)


# =============================================================================
# BEST MODEL AND METRIC DISAGREEMENT
# =============================================================================

def _within(v: float, top: float, tol: float) -> bool:
    return abs(top - v) <= tol * abs(top)


def best_model_tie_set(
    cells: Sequence[CellSummary],
    metric: str,
    k: int,
    tol: float = 1e-9,
) -> tuple[str, tuple[str, ...]]:
    """(argmax optimizer, optimizers within relative tolerance of the max) for one task.

    Argmax ties go to the first optimizer in name order.
    """
    ranked = sorted(cells, key=lambda c: c.optimizer)
    values = [c.oriented(metric, k) for c in ranked]
    top = max(values)
    winner = ranked[values.index(top)].optimizer
    ties = tuple(c.optimizer for c, v in zip(ranked, values) if _within(v, top, tol))
    return winner, ties


@dataclass(frozen=True)
class DisagreementRecord:
    task: str
    winner_auc: str
    winner_outcome: str
    outcome_ties: tuple[str, ...]
    agree: bool
    rank_of_auc_winner_under_outcome: int


@dataclass
class DisagreementResult:
    rate: float
    records: list[DisagreementRecord]
    confusion: pd.DataFrame
    canonical: bool = True

    @property
    def disagreeing(self) -> list[str]:
        return [r.task for r in self.records if not r.agree]


def _outcome_rank(cells: Sequence[CellSummary], optimizer: str, k: int, tol: float) -> int:
    target = next(c for c in cells if c.optimizer == optimizer).oriented(OUTCOME, k)
    return 1 + sum(
        1 for c in cells
        if c.oriented(OUTCOME, k) > target and not _within(target, c.oriented(OUTCOME, k), tol)
    )


def metric_disagreement(
    cells: Sequence[CellSummary],
    k: int,
    tol: float = 1e-9,
    permissive: bool = False,
) -> DisagreementResult:
    """Share of tasks where the bsf-AUC@k winner is not in the bsf-Outcome@k tie set.

    With `permissive` a task agrees when the two tie sets intersect; that
    variant is labelled non-canonical.
    """
    records = []
    for task, task_cells in _by_task(cells).items():
        usable = [c for c in task_cells if c.has(AUC, k) and c.has(OUTCOME, k)]
        if len(usable) < 2:
            logger.warning("Task %s has %d optimizers with bsf metrics at %d; skipped", task, len(usable), k)
            continue
        winner_auc, auc_ties = best_model_tie_set(usable, AUC, k, tol)
        winner_outcome, outcome_ties = best_model_tie_set(usable, OUTCOME, k, tol)
        agree = bool(set(auc_ties) & set(outcome_ties)) if permissive else winner_auc in outcome_ties
        records.append(DisagreementRecord(
            task=task,
            winner_auc=winner_auc,
            winner_outcome=winner_outcome,
            outcome_ties=outcome_ties,
            agree=agree,
            rank_of_auc_winner_under_outcome=_outcome_rank(usable, winner_auc, k, tol),
        ))

    rate = sum(not r.agree for r in records) / len(records) if records else 0.0
    optimizers = sorted({c.optimizer for c in cells})
    confusion = pd.DataFrame(0, index=pd.Index(optimizers, name="winner_auc"),
                             columns=pd.Index(optimizers, name="winner_outcome"))
    for r in records:
        confusion.loc[r.winner_auc, r.winner_outcome] += 1
    return DisagreementResult(rate=rate, records=records, confusion=confusion, canonical=not permissive)


def disagreement_by_horizon(
    cells: Sequence[CellSummary],
    horizons: Sequence[int],
    tol: float = 1e-9,
) -> pd.DataFrame:
    rows = []
    for k in horizons:
        result = metric_disagreement(cells, k, tol)
        rows.append({
            "horizon": k,
            "tasks": len(result.records),
            "disagreeing": len(result.disagreeing),
            "rate": result.rate,
        })
    return pd.DataFrame(rows, columns=["horizon", "tasks", "disagreeing", "rate"])


def three_way_agreement(cells: Sequence[CellSummary], k: int, tol: float = 1e-9) -> float:
    """Share of tasks where the bsf-AUC@k winner is tied-best under bsf-Outcome@k and NIS."""
    agreeing = total = 0
    for task_cells in _by_task(cells).values():
        usable = [
            c for c in task_cells
            if c.has(AUC, k) and c.has(OUTCOME, k) and any(m == NIS for m, _ in c.values)
        ]
        if len(usable) < 2:
            continue
        nis_horizon = max(h for m, h in usable[0].values if m == NIS)
        winner, _ = best_model_tie_set(usable, AUC, k, tol)
        _, outcome_ties = best_model_tie_set(usable, OUTCOME, k, tol)
        _, nis_ties = best_model_tie_set(usable, NIS, nis_horizon, tol)
        total += 1
        agreeing += winner in outcome_ties and winner in nis_ties
    return agreeing / total if total else 0.0


# =============================================================================
# BASELINE COMPARISONS
# =============================================================================

def _baseline_index(baseline_cells: Sequence[CellSummary]) -> dict[str, CellSummary]:
    return {c.task: c for c in baseline_cells}


def pass_rate_vs_baseline(
    cells: Sequence[CellSummary],
    baseline_cells: Sequence[CellSummary],
    metric: str = AUC,
    k: int = 30,
) -> tuple[float, dict[str, bool]]:
    """Share of tasks where the cell median strictly beats the baseline median.

    `cells` holds one cell per task for a single (optimizer, condition).
    """
    baseline = _baseline_index(baseline_cells)
    wins = {}
    for cell in sorted(cells, key=lambda c: c.task):
        if cell.task not in baseline:
            raise MissingBaseline(f"No baseline cell for task {cell.task}")
        wins[cell.task] = cell.oriented(metric, k) > baseline[cell.task].oriented(metric, k)
    rate = sum(wins.values()) / len(wins) if wins else 0.0
    return rate, wins


def per_iteration_pass_rate(
    cells: Sequence[CellSummary],
    baseline_cells: Sequence[CellSummary],
    horizons: Sequence[int],
    metric: str = AUC,
    level: float = 0.95,
) -> pd.DataFrame:
    """Pass rate vs baseline per (optimizer, condition) at every horizon, with Wilson intervals."""
    groups: dict[tuple[str, str], list[CellSummary]] = defaultdict(list)
    for cell in cells:
        groups[(cell.optimizer, cell.condition)].append(cell)

    rows = []
    for (optimizer, condition) in sorted(groups):
        for k in horizons:
            usable = [c for c in groups[(optimizer, condition)] if c.has(metric, k)]
            if not usable:
                continue
            rate, wins = pass_rate_vs_baseline(usable, baseline_cells, metric, k)
            low, high = wilson_interval(sum(wins.values()), len(wins), level)
            rows.append({
                "optimizer": optimizer,
                "condition": condition,
                "horizon": k,
                "wins": sum(wins.values()),
                "tasks": len(wins),
                "pass_rate": rate,
                "ci_low": low,
                "ci_high": high,
            })
    return pd.DataFrame(
        rows, columns=["optimizer", "condition", "horizon", "wins", "tasks", "pass_rate", "ci_low", "ci_high"]
    )


def gp_normalized_table(
    cells: Sequence[CellSummary],
    gp_cells: Sequence[CellSummary],
    horizons: Sequence[int],
    epsilon: float = 0.01,
) -> pd.DataFrame:
    """GP-normalized median bsf-AUC per cell and horizon."""
    baseline = _baseline_index(gp_cells)
    rows = []
    for cell in sorted(cells, key=lambda c: c.key):
        if cell.task not in baseline:
            raise MissingBaseline(f"No GP-UCB cell for task {cell.task}")
        for k in horizons:
            if not (cell.has(AUC, k) and baseline[cell.task].has(AUC, k)):
                continue
            rows.append({
                "task": cell.task,
                "optimizer": cell.optimizer,
                "condition": cell.condition,
                "horizon": k,
                "gp_normalized_auc": gp_normalize(cell.value(AUC, k), baseline[cell.task].value(AUC, k), epsilon),
            })
    return pd.DataFrame(rows, columns=["task", "optimizer", "condition", "horizon", "gp_normalized_auc"])


# =============================================================================
# CONDITION WIN RATE
# =============================================================================

@dataclass
class WinRate:
    rate: float
    pairs: list[dict[str, Any]]
    excluded: int = 0


def paired_condition_win_rate(
    cells: Sequence[CellSummary],
    metric: str = AUC,
    k: int = 30,
    aware: str = "domain_aware",
    agnostic: str = "domain_agnostic",
) -> WinRate:
    """Share of (task, optimizer) pairs where the aware median strictly beats the agnostic one."""
    index = {c.key: c for c in cells}
    pairs = []
    excluded = 0
    for task, optimizer in sorted({(c.task, c.optimizer) for c in cells if c.condition in (aware, agnostic)}):
        a = index.get((task, optimizer, aware))
        b = index.get((task, optimizer, agnostic))
        if a is None or b is None or not (a.has(metric, k) and b.has(metric, k)):
            excluded += 1
            continue
        pairs.append({
            "task": task,
            "optimizer": optimizer,
            "aware": a.oriented(metric, k),
            "agnostic": b.oriented(metric, k),
            "win": a.oriented(metric, k) > b.oriented(metric, k),
        })
    if excluded:
        logger.warning("%d (task, optimizer) pairs lack one condition; excluded from the win rate", excluded)
    rate = sum(p["win"] for p in pairs) / len(pairs) if pairs else 0.0
    return WinRate(rate=rate, pairs=pairs, excluded=excluded)


def run_bootstrap_win_rate(
    table: pd.DataFrame,
    k: int = 30,
    B: int = 1000,
    seed: int = 0,
    aware: str = "domain_aware",
    agnostic: str = "domain_agnostic",
) -> StatResult:
    """Paired win rate with runs resampled within each cell.

    The p-value is the bootstrap p-value of (win rate - 0.5) against 0.
    """
    frame = table[(table["metric"] == AUC) & (table["horizon"] == k)]
    runs: dict[tuple[str, str, str], np.ndarray] = {
        key: group["value"].to_numpy(dtype=float)
        for key, group in frame.groupby(["task", "optimizer", "condition"], sort=True)
    }
    pairs = sorted({(t, o) for t, o, c in runs if (t, o, aware) in runs and (t, o, agnostic) in runs})
    if not pairs:
        raise ValueError("No (task, optimizer) pair has both conditions")

    rng = np.random.default_rng(seed)
    point = float(np.mean([np.median(runs[(t, o, aware)]) > np.median(runs[(t, o, agnostic)]) for t, o in pairs]))
    wins = np.zeros((B, len(pairs)))
    for j, (t, o) in enumerate(pairs):
        a = runs[(t, o, aware)]
        b = runs[(t, o, agnostic)]
        a_med = np.median(a[rng.integers(len(a), size=(B, len(a)))], axis=1)
        b_med = np.median(b[rng.integers(len(b), size=(B, len(b)))], axis=1)
        wins[:, j] = a_med > b_med
    replicates = wins.mean(axis=1)
    low, high = np.percentile(replicates, [2.5, 97.5])
    return StatResult(
        statistic=point,
        p_value=bootstrap_pvalue(replicates - 0.5),
        method="run_bootstrap",
        n=len(pairs),
        ci_low=float(low),
        ci_high=float(high),
    )


# =============================================================================
# CONVERGENT GAPS
# =============================================================================

def median_curves(trajectories: Sequence[Trajectory]) -> dict[tuple[str, str, str], np.ndarray]:
    """Per-iteration median of oriented best-so-far curves per cell."""
    grouped: dict[tuple[str, str, str], list[np.ndarray]] = defaultdict(list)
    for traj in trajectories:
        grouped[(traj.task, traj.optimizer, traj.condition)].append(best_so_far(traj).oriented)
    curves = {}
    for key, runs in grouped.items():
        length = min(len(r) for r in runs)
        curves[key] = np.median(np.vstack([r[:length] for r in runs]), axis=0)
    return curves


def _iter_to_shared_optimum(curve: np.ndarray, optimum: float, fraction: float, worst: float | None) -> int | None:
    if worst is not None and worst == optimum:
        return 1
    return iter_to_fraction(BsfCurve(curve), optimum, fraction, worst)


@dataclass
class ConvergentGaps:
    table: pd.DataFrame
    median_iter_auc_winner: float | None
    median_iter_outcome_winner: float | None


def convergent_gap_table(
    result: DisagreementResult,
    cells: Sequence[CellSummary],
    curves: dict[tuple[str, str, str], np.ndarray],
    k: int = 30,
    tolerance: float = 0.01,
    fraction: float = 0.99,
    worsts: dict[str, float] | None = None,
) -> ConvergentGaps:
    """Disagreement tasks whose two winners end within `tolerance` of each other.

    For each, the iteration at which each winner's median curve first reaches
    `fraction` of the shared optimum (the better of the two endpoints).
    Minimize tasks go through the fraction-of-optimum transform against the
    task worst from `worsts`, falling back to the worst value either median
    curve shows.
    """
    worsts = worsts or {}
    index = {(c.task, c.optimizer): c for c in cells}
    rows = []
    for record in result.records:
        if record.agree:
            continue
        a = index[(record.task, record.winner_auc)]
        b = index[(record.task, record.winner_outcome)]
        end_a, end_b = a.oriented(OUTCOME, k), b.oriented(OUTCOME, k)
        scale = max(abs(end_a), abs(end_b))
        gap = abs(end_a - end_b) / scale if scale > 0 else 0.0
        if gap > tolerance:
            continue
        optimum = max(end_a, end_b)
        curve_a = curves[a.key][:k]
        curve_b = curves[b.key][:k]
        worst = None
        if not a.maximize:
            # Curves, optimum and worst are all negated for minimize tasks
            worst = -worsts[record.task] if record.task in worsts else float(min(curve_a.min(), curve_b.min()))
        rows.append({
            "task": record.task,
            "auc_winner": record.winner_auc,
            "outcome_winner": record.winner_outcome,
            "endpoint_gap": gap,
            "iter_auc_winner": _iter_to_shared_optimum(curve_a, optimum, fraction, worst),
            "iter_outcome_winner": _iter_to_shared_optimum(curve_b, optimum, fraction, worst),
        })
    table = pd.DataFrame(
        rows, columns=["task", "auc_winner", "outcome_winner", "endpoint_gap", "iter_auc_winner", "iter_outcome_winner"]
    )

    def median_of(column: str) -> float | None:
        values = table[column].dropna()
        return float(values.median()) if len(values) else None

    return ConvergentGaps(table, median_of("iter_auc_winner"), median_of("iter_outcome_winner"))


# =============================================================================
# ROBUSTNESS
# =============================================================================

def leave_one_out_rate(
    cells: Sequence[CellSummary],
    unit: str,
    rate_fn: Callable[[list[CellSummary]], float],
) -> list[tuple[str, float]]:
    """Recompute `rate_fn` once per excluded optimizer or task."""
    if unit not in ("optimizer", "task"):
        raise ValueError(f"unit must be 'optimizer' or 'task', got {unit!r}")
    units = sorted({getattr(c, unit) for c in cells})
    if len(units) < 2:
        raise ValueError(f"Leave-one-out needs at least 2 {unit}s")
    return [(u, rate_fn([c for c in cells if getattr(c, unit) != u])) for u in units]


def baseline_cells(cells: Sequence[CellSummary], optimizer: str = "gp_ucb") -> list[CellSummary]:
    return select_cells(cells, optimizer=optimizer, condition=config.BASELINE_CONDITION)
