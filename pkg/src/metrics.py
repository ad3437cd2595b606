"""Trajectory-level metrics and the long-form metric table."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

import config
from src.dataset import Dataset
from src.errors import (
    ConfigError,
    DegenerateRange,
    EmptyTrajectory,
    GroupSizeMismatch,
    NoNumericParameters,
)
from src.space import Design, ParameterSpace, encode_designs, is_missing
from src.stats import rank_correlation
from src.trajectory import Step, Trajectory

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["task", "optimizer", "condition", "run_index", "metric", "horizon", "value"]


@dataclass(frozen=True)
class BsfCurve:
    """Running best score per iteration, in original target units."""

    values: np.ndarray
    maximize: bool = True

    def __len__(self) -> int:
        return len(self.values)

    @property
    def oriented(self) -> np.ndarray:
        """Values with larger always better."""
        return self.values if self.maximize else -self.values


@dataclass(frozen=True)
class MetricConfig:
    horizons: tuple[int, ...] = (5, 10, 15, 20, 25, 30)
    epsilon: float = 0.01
    optimum_fraction: float = 0.99
    convergence_tolerance: float = 0.01

    def __post_init__(self) -> None:
        if not self.horizons or any(k < 1 for k in self.horizons):
            raise ConfigError("horizons must be positive integers")
        if self.epsilon <= 0 or self.convergence_tolerance <= 0:
            raise ConfigError("epsilon and convergence_tolerance must be > 0")
        if not 0 < self.optimum_fraction <= 1:
            raise ConfigError("optimum_fraction must be in (0, 1]")

    def check_iters(self, iters: int) -> None:
        if max(self.horizons) > iters:
            raise ConfigError(f"horizon {max(self.horizons)} exceeds {iters} iterations")

    @classmethod
    def from_settings(cls, settings: dict[str, Any]) -> "MetricConfig":
        return cls(
            horizons=tuple(int(k) for k in settings["horizons"]),
            epsilon=float(settings["epsilon"]),
            optimum_fraction=float(settings["optimum_fraction"]),
            convergence_tolerance=float(settings["convergence_tolerance"]),
        )


# =============================================================================
# BEST-SO-FAR METRICS
# =============================================================================

def best_so_far(traj: Trajectory) -> BsfCurve:
    """Running max (maximize) or running min (minimize) of the scores."""
    if not traj.steps:
        raise EmptyTrajectory(f"Trajectory {traj.key} has no steps")
    return curve_from_scores(traj.scores, traj.maximize)


def curve_from_scores(scores, maximize: bool = True) -> BsfCurve:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise EmptyTrajectory("No scores")
    running = np.maximum.accumulate(scores) if maximize else np.minimum.accumulate(scores)
    return BsfCurve(values=running, maximize=maximize)


def _check_horizon(curve: BsfCurve, k: int) -> None:
    if not 1 <= k <= len(curve):
        raise ValueError(f"horizon {k} outside 1..{len(curve)}")


def bsf_auc_at(curve: BsfCurve, k: int) -> float:
    """Mean of the first k best-so-far values; negated for minimize so larger is better."""
    _check_horizon(curve, k)
    return float(np.mean(curve.oriented[:k]))


def bsf_outcome_at(curve: BsfCurve, k: int) -> float:
    _check_horizon(curve, k)
    return float(curve.values[k - 1])


def nis(curve: BsfCurve) -> int:
    """Number of iterations after the first where the best-so-far strictly improves."""
    oriented = curve.oriented
    return int(np.sum(oriented[1:] > oriented[:-1]))


def gp_normalize(auc_llm: float, auc_gp: float, epsilon: float = 0.01) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    return (auc_llm - auc_gp) / max(abs(auc_gp), epsilon)


def fraction_of_optimum_curve(curve: BsfCurve, task_optimum: float, task_worst: float) -> np.ndarray:
    """(bsf - worst) / (optimum - worst); 1.0 is the optimum in either direction."""
    if task_optimum == task_worst:
        raise DegenerateRange(f"Task optimum equals task worst ({task_optimum})")
    return (curve.values - task_worst) / (task_optimum - task_worst)


def iter_to_fraction(
    curve: BsfCurve,
    target: float,
    fraction: float,
    worst: float | None = None,
) -> int | None:
    """First iteration (1-based) at which the curve reaches `fraction` of `target`.

    Maximize curves without a worst value use curve_k >= fraction * target.
    Otherwise the curve is mapped to fraction-of-optimum against (target, worst)
    and thresholded at `fraction`; minimize curves require `worst`.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if worst is None:
        if not curve.maximize:
            raise ValueError("minimize curves need the task worst value")
        reached = curve.values >= fraction * target
    else:
        reached = fraction_of_optimum_curve(curve, target, worst) >= fraction
    hits = np.flatnonzero(reached)
    return int(hits[0]) + 1 if hits.size else None


# =============================================================================
# DESIGN-SPACE DIAGNOSTICS
# =============================================================================

def unclipped_design(step: Step, space: ParameterSpace) -> Design:
    """Validated design with numeric fields restored to the value as proposed.

    Non-numeric raw values keep the validated field.
    """
    design = dict(step.design)
    for spec in space.numeric:
        value = step.raw.get(spec.name)
        if isinstance(value, bool):
            continue
        try:
            number = float(value)
        except (TypeError, ValueError):
            continue
        if math.isfinite(number):
            design[spec.name] = number
    return design


def diversity(designs: list[Design], space: ParameterSpace) -> float:
    """Mean pairwise Euclidean distance between encoded designs (0 for one design)."""
    if len(designs) < 2:
        return 0.0
    return float(np.mean(pdist(encode_designs(space, designs))))


def proximity_d1(d: Design, data: Dataset, space: ParameterSpace) -> float:
    """z-scored distance from a design to its nearest dataset row.

    Categoricals are dropped; missing numerics sit at z = 0 (the column mean).
    """
    names = [spec.name for spec in space.numeric if data.observed(spec.name)]
    if not names:
        raise NoNumericParameters("Proximity needs at least one observed numeric parameter")

    rows = data.frame[names].to_numpy(dtype=float)
    mean = np.nanmean(rows, axis=0)
    std = np.nanstd(rows, axis=0)
    std = np.where(std > 0, std, 1.0)
    z_rows = np.nan_to_num((rows - mean) / std, nan=0.0)

    point = np.asarray(
        [math.nan if is_missing(d.get(n)) else float(d[n]) for n in names],
        dtype=float,
    )
    z_point = np.nan_to_num((point - mean) / std, nan=0.0)
    return float(np.min(np.linalg.norm(z_rows - z_point, axis=1)))


def proximity_spearman(designs: list[Design], scores: list[float], data: Dataset, space: ParameterSpace) -> float:
    """Spearman correlation between d1 and oracle score over a set of proposals."""
    distances = [proximity_d1(d, data, space) for d in designs]
    spearman, _ = rank_correlation(distances, list(scores))
    return spearman


# =============================================================================
# GRPO REWARD
# =============================================================================

def grpo_group_rewards(
    group: list[Trajectory],
    group_size: int | None = config.GRPO_GROUP_SIZE,
) -> list[float]:
    """Within-group normalized rewards from the mean of each best-so-far curve.

    Uses the population standard deviation; a zero-spread group gets all zeros.
    Pass group_size=None to accept any group size.
    """
    if group_size is not None and len(group) != group_size:
        raise GroupSizeMismatch(f"Expected {group_size} trajectories, got {len(group)}")
    if not group:
        raise GroupSizeMismatch("Empty group")
    if len({t.task for t in group}) > 1:
        raise GroupSizeMismatch("Group mixes tasks")
    if len({len(t) for t in group}) > 1:
        raise GroupSizeMismatch("Group mixes trajectory lengths")

    raw = np.asarray([bsf_auc_at(best_so_far(t), len(t)) for t in group])
    centered = raw - raw.mean()
    std = raw.std()
    if std == 0:
        return [0.0] * len(group)
    return list(centered / std)


# =============================================================================
# METRIC TABLE
# =============================================================================

@dataclass
class TaskContext:
    """Optional per-task inputs for the metrics that need them."""

    space: ParameterSpace | None = None
    dataset: Dataset | None = None
    optimum: float | None = None
    worst: float | None = None


def trajectory_metrics(
    traj: Trajectory,
    metric_config: MetricConfig,
    context: TaskContext | None = None,
) -> list[dict[str, Any]]:
    curve = best_so_far(traj)
    n = len(curve)
    base = {
        "task": traj.task,
        "optimizer": traj.optimizer,
        "condition": traj.condition,
        "run_index": traj.run_index,
    }
    rows = []

    def add(metric: str, horizon: int, value: float | None) -> None:
        rows.append({**base, "metric": metric, "horizon": horizon, "value": value})

    for k in metric_config.horizons:
        if k <= n:
            add("bsf_auc", k, bsf_auc_at(curve, k))
            add("bsf_outcome", k, bsf_outcome_at(curve, k))
    add("nis", n, nis(curve))
    add("fallback_steps", n, traj.fallback_steps)

    context = context or TaskContext()
    if context.space is not None:
        present = [unclipped_design(s, context.space) for s in traj.steps if not s.fallback]
        add("diversity", n, diversity(present, context.space))
        if context.dataset is not None and context.space.numeric and present:
            d1 = [proximity_d1(d, context.dataset, context.space) for d in present]
            add("proximity_d1_median", n, float(np.median(d1)))
    if context.optimum is not None and context.worst is not None and context.optimum != context.worst:
        reached = iter_to_fraction(curve, context.optimum, metric_config.optimum_fraction, worst=context.worst)
        add("iter_to_optimum", n, reached)
    return rows


def metric_table(
    trajectories: list[Trajectory],
    metric_config: MetricConfig,
    contexts: dict[str, TaskContext] | None = None,
) -> pd.DataFrame:
    """Long-form table: one row per task/optimizer/condition/run/metric/horizon."""
    contexts = contexts or {}
    rows = []
    for traj in trajectories:
        rows.extend(trajectory_metrics(traj, metric_config, contexts.get(traj.task)))
    table = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    if table.empty:
        return table
    return table.sort_values(["task", "optimizer", "condition", "run_index", "metric", "horizon"]).reset_index(drop=True)


def write_table(table: pd.DataFrame, path: Path) -> None:
    """CSV with 6 significant digits; missing values as empty cells."""
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=config.FLOAT_FORMAT, lineterminator="\n")


def median_fraction_curves(
    trajectories: list[Trajectory],
    ranges: dict[str, tuple[float, float]],
) -> pd.DataFrame:
    """Per-iteration median fraction-of-optimum per (optimizer, condition)."""
    rows = []
    for traj in trajectories:
        if traj.task not in ranges:
            continue
        optimum, worst = ranges[traj.task]
        fractions = fraction_of_optimum_curve(best_so_far(traj), optimum, worst)
        for i, value in enumerate(fractions, start=1):
            rows.append({
                "optimizer": traj.optimizer,
                "condition": traj.condition,
                "iteration": i,
                "fraction": float(value),
            })
    frame = pd.DataFrame(rows, columns=["optimizer", "condition", "iteration", "fraction"])
    if frame.empty:
        return pd.DataFrame(columns=["optimizer", "condition", "iteration", "median_fraction", "runs"])
    grouped = frame.groupby(["optimizer", "condition", "iteration"], sort=True)["fraction"]
    return grouped.agg(median_fraction="median", runs="count").reset_index()
