"""Published-best audit of agent trajectories.

Each task's dataset names a published-best row. The audit picks the task's
key categorical column, checks that the oracle ranks the published best near
the top of the dataset, decides whether the literature-typical value of the
column diverges from the published best, and measures how often each
condition proposes the published-best value.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd
import yaml

from src.dataset import Dataset
from src.errors import (
    ConfigError,
    DegenerateScores,
    NoCategoricalColumns,
    NoObservedValues,
    NoUsableColumn,
    SingleValueColumn,
)
from src.oracle import modal_value
from src.space import Design, ParameterSpace, is_missing
from src.stats import BootstrapSpec, bootstrap_ci, wilcoxon_signed_rank
from src.trajectory import Trajectory
from src.utils import save_file

logger = logging.getLogger(__name__)

Scorer = Callable[[Design], float]

RANGE = "R"
SIGMA = "S"
GROUPINGS = ("best", "mean")

AWARE = "domain_aware"
AGNOSTIC = "domain_agnostic"

# Rows considered when asking whether the literature value dominates the top of the dataset
TOP_ROWS = 10


@dataclass(frozen=True)
class AuditThresholds:
    alignment_min: float = 0.95
    range_gap_min: float = 0.10
    sigma_gap_min: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.alignment_min <= 1:
            raise ConfigError("audit.alignment_min must be in (0, 1]")
        if self.range_gap_min <= 0 or self.sigma_gap_min <= 0:
            raise ConfigError("audit.range_gap_min and audit.sigma_gap_min must be > 0")

    @classmethod
    def from_settings(cls, settings: dict[str, Any]) -> "AuditThresholds":
        return cls(
            alignment_min=float(settings["alignment_min"]),
            range_gap_min=float(settings["range_gap_min"]),
            sigma_gap_min=float(settings["sigma_gap_min"]),
        )


# =============================================================================
# DATASET ANCHORS
# =============================================================================

def published_best_row(data: Dataset) -> int:
    """Index of the best measured row; ties go to the lowest index."""
    targets = data.targets
    return int(np.argmax(targets) if data.maximize else np.argmin(targets))


def literature_typical_value(data: Dataset, column: str) -> str:
    """Most frequent observed value of a column (ties: lexicographically smallest)."""
    observed = data.observed(column)
    if not observed:
        raise NoObservedValues(f"Column {column!r} has no observed values")
    return modal_value(observed)


def frequency_ranks(data: Dataset, column: str) -> dict[str, int]:
    """Dataset frequency rank per observed value; equal counts share the smaller rank."""
    counts = Counter(data.observed(column))
    return {v: 1 + sum(1 for c in counts.values() if c > n) for v, n in counts.items()}


def reference_design(data: Dataset, space: ParameterSpace) -> Design:
    """Per-column median for numerics and modal value for categoricals."""
    design: Design = {}
    for spec in space:
        observed = data.observed(spec.name)
        if not observed:
            continue
        if spec.is_numeric:
            design[spec.name] = float(np.median(np.asarray(observed, dtype=float)))
        else:
            design[spec.name] = modal_value(observed)
    return design


def oracle_reward_profile(
    scorer: Scorer,
    data: Dataset,
    space: ParameterSpace,
    column: str,
) -> list[tuple[str, float]]:
    """Oracle reward for each observed value of a column, other parameters at the reference design.

    Ordered by dataset frequency rank, then by value.
    """
    ranks = frequency_ranks(data, column)
    base = reference_design(data, space)
    profile = []
    for value in sorted(ranks, key=lambda v: (ranks[v], v)):
        profile.append((value, float(scorer({**base, column: value}))))
    return profile


def column_spread(scorer: Scorer, data: Dataset, space: ParameterSpace, column: str) -> float:
    rewards = [r for _, r in oracle_reward_profile(scorer, data, space, column)]
    return max(rewards) - min(rewards) if rewards else 0.0


def key_categorical(scorer: Scorer, data: Dataset, space: ParameterSpace) -> str:
    """Categorical column with the largest oracle spread across its observed values.

    Columns where the published-best row is missing are passed over in spread order.
    """
    columns = [spec.name for spec in space.categorical if data.observed(spec.name)]
    if not columns:
        raise NoCategoricalColumns(f"Space {space.name!r} has no observed categorical columns")

    spreads = {c: column_spread(scorer, data, space, c) for c in columns}
    ranked = sorted(columns, key=lambda c: -spreads[c])
    best = data.row_design(published_best_row(data))
    for column in ranked:
        if not is_missing(best.get(column)):
            logger.debug("Key categorical %s (spread %.6g)", column, spreads[column])
            return column
    raise NoUsableColumn("Published-best row is missing every categorical value")


def alignment_ratio(scorer: Scorer, data: Dataset) -> float:
    """Position of the published-best row's oracle score within the dataset's oracle-score range."""
    scores = np.asarray([scorer(d) for d in data.designs()], dtype=float)
    low, high = float(scores.min()), float(scores.max())
    if high == low:
        raise DegenerateScores("Oracle scores every dataset row equally")
    s_best = float(scores[published_best_row(data)])
    ratio = (s_best - low) / (high - low) if data.maximize else (high - s_best) / (high - low)
    return float(min(1.0, max(0.0, ratio)))


# =============================================================================
# LITERATURE DIVERGENCE
# =============================================================================

@dataclass(frozen=True)
class DivergenceGaps:
    """Raw gaps behind the divergence criteria.

    `range_gap` is the best value's lead over the runner-up value as a share of
    the target range; `sigma_gap` is its lead over the literature-typical value
    (same per-value statistic) in units of the target standard deviation.
    Both are None when the literature-typical value is the published best.
    """

    typical: str
    best_value: str
    range_gap: float | None
    sigma_gap: float | None

    @property
    def coincides(self) -> bool:
        return self.typical == self.best_value

    def criteria(self, range_gap_min: float | None, sigma_gap_min: float | None) -> tuple[str, ...]:
        if self.coincides:
            return ()
        met = []
        if range_gap_min is not None and self.range_gap is not None and self.range_gap >= range_gap_min:
            met.append(RANGE)
        if sigma_gap_min is not None and self.sigma_gap is not None and self.sigma_gap >= sigma_gap_min:
            met.append(SIGMA)
        return tuple(met)


def divergence_gaps(data: Dataset, column: str, grouping: str = "best") -> DivergenceGaps:
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")
    typical = literature_typical_value(data, column)
    best_value = data.row_design(published_best_row(data)).get(column)
    if is_missing(best_value):
        raise NoUsableColumn(f"Published-best row has no value for {column!r}")

    frame = pd.DataFrame({"value": data.column(column), "target": data.targets}).dropna(subset=["value"])
    # Orient so larger is better in both directions
    frame["target"] = frame["target"] if data.maximize else -frame["target"]
    if frame["value"].nunique() < 2:
        raise SingleValueColumn(f"Column {column!r} has a single observed value")
    if typical == best_value:
        return DivergenceGaps(typical, best_value, None, None)

    per_value = frame.groupby("value")["target"].agg("max" if grouping == "best" else "mean")
    lead = float(per_value[best_value])
    runner_up = float(per_value.drop(best_value).max())
    typical_level = float(per_value[typical])

    targets = data.targets
    spread = float(targets.max() - targets.min())
    sigma = float(np.std(targets))
    range_gap = (lead - runner_up) / spread if spread > 0 else 0.0
    sigma_gap = (lead - typical_level) / sigma if sigma > 0 else 0.0
    return DivergenceGaps(typical, best_value, range_gap, sigma_gap)


def classify_divergence(
    data: Dataset,
    column: str,
    thresholds: AuditThresholds = AuditThresholds(),
    grouping: str = "best",
) -> tuple[bool, tuple[str, ...]]:
    """(divergent, criteria met) for the literature-typical value of a column.

    Divergent iff the literature-typical value is not the published best and
    either the range criterion (R) or the sigma criterion (S) holds.
    """
    gaps = divergence_gaps(data, column, grouping)
    criteria = gaps.criteria(thresholds.range_gap_min, thresholds.sigma_gap_min)
    return bool(criteria), criteria


# =============================================================================
# MATCH RATES
# =============================================================================

def _matches(step_design: Design, column: str, best_value: str) -> bool:
    value = step_design.get(column)
    return isinstance(value, str) and value.strip() == best_value


def best_match_rate(
    trajectories: Sequence[Trajectory],
    column: str,
    best_value: str,
    at: int | None = None,
) -> float:
    """Share of proposals whose value in `column` is the published best.

    `at=k` counts iteration k of every trajectory; `at=None` counts every iteration.
    Fallback steps and missing values count as misses, as do trajectories shorter than k.
    """
    if at is not None and at < 1:
        raise ConfigError(f"iteration must be >= 1, got {at}")
    hits = total = 0
    for traj in trajectories:
        if at is not None and at > len(traj):
            total += 1
            continue
        steps = traj.steps if at is None else traj.steps[at - 1:at]
        for step in steps:
            total += 1
            hits += _matches(step.design, column, best_value)
    return hits / total if total else 0.0


def match_rate_climb(trajectories: Sequence[Trajectory], column: str, best_value: str, k: int) -> float:
    """Match rate at iteration k minus the rate at iteration 1."""
    return best_match_rate(trajectories, column, best_value, at=k) - best_match_rate(
        trajectories, column, best_value, at=1
    )


def trajectory_modal_rank(traj: Trajectory, data: Dataset, column: str) -> tuple[str | None, int | None]:
    """Most-proposed value of a column (ties: earliest proposed) and its dataset frequency rank.

    Values unseen in the dataset get rank (number of distinct values) + 1.
    """
    proposed = [
        s.design[column] for s in traj.steps
        if not s.fallback and not is_missing(s.design.get(column))
    ]
    if not proposed:
        return None, None
    counts = Counter(proposed)
    top = max(counts.values())
    modal = next(v for v in proposed if counts[v] == top)
    ranks = frequency_ranks(data, column)
    return modal, ranks.get(modal, len(ranks) + 1)


def miss_rank_distribution(
    trajectories: Sequence[Trajectory],
    data: Dataset,
    column: str,
    best_value: str,
) -> dict[str, float | int | None]:
    """Modal-rank tallies over trajectories that never propose the best value."""
    ranks = []
    for traj in trajectories:
        if any(_matches(s.design, column, best_value) for s in traj.steps):
            continue
        _, rank = trajectory_modal_rank(traj, data, column)
        if rank is not None:
            ranks.append(rank)
    if not ranks:
        return {"misses": 0, "mean_rank": None, "rank_1": None, "rank_2_3": None, "rank_4_plus": None}
    ranks_arr = np.asarray(ranks)
    return {
        "misses": len(ranks),
        "mean_rank": float(ranks_arr.mean()),
        "rank_1": float(np.mean(ranks_arr == 1)),
        "rank_2_3": float(np.mean((ranks_arr >= 2) & (ranks_arr <= 3))),
        "rank_4_plus": float(np.mean(ranks_arr >= 4)),
    }


# =============================================================================
# PER-TASK REPORT
# =============================================================================

@dataclass
class AuditReport:
    task: str
    target: str
    published_best_row: int
    published_best: dict[str, Any]
    key_categorical: str
    best_value: str
    literature_typical: str
    alignment_ratio: float
    feedback_actionable: bool
    divergent: bool
    criteria: list[str]
    range_gap: float | None
    sigma_gap: float | None
    literature_share: float
    literature_top_majority: bool
    reward_profile: list[dict[str, Any]]
    # condition -> {"pooled": {...}, "cell_mean": {...}}
    match_rates: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    modal_ranks: dict[str, dict[str, Any]] = field(default_factory=dict)

    def match_gap(self, basis: str = "pooled", at: str = "all") -> float | None:
        """Aware minus agnostic match rate, or None if either condition is absent."""
        if AWARE not in self.match_rates or AGNOSTIC not in self.match_rates:
            return None
        return self.match_rates[AWARE][basis][at] - self.match_rates[AGNOSTIC][basis][at]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)


def _rate_block(trajectories: Sequence[Trajectory], column: str, best_value: str, horizon: int) -> dict[str, float]:
    return {
        "iter_1": best_match_rate(trajectories, column, best_value, at=1),
        f"iter_{horizon}": best_match_rate(trajectories, column, best_value, at=horizon),
        "all": best_match_rate(trajectories, column, best_value),
        "climb": match_rate_climb(trajectories, column, best_value, horizon),
    }


def condition_match_rates(
    trajectories: Sequence[Trajectory],
    column: str,
    best_value: str,
    horizon: int,
) -> dict[str, dict[str, dict[str, float]]]:
    """Per-condition match rates, pooled over runs and as the mean of per-optimizer cells."""
    by_condition: dict[str, list[Trajectory]] = defaultdict(list)
    for traj in trajectories:
        by_condition[traj.condition].append(traj)

    rates = {}
    for condition in sorted(by_condition):
        runs = by_condition[condition]
        cells: dict[str, list[Trajectory]] = defaultdict(list)
        for traj in runs:
            cells[traj.optimizer].append(traj)
        cell_blocks = [_rate_block(cells[o], column, best_value, horizon) for o in sorted(cells)]
        rates[condition] = {
            "pooled": _rate_block(runs, column, best_value, horizon),
            "cell_mean": {k: float(np.mean([b[k] for b in cell_blocks])) for k in cell_blocks[0]},
        }
    return rates


def audit_task(
    name: str,
    scorer: Scorer,
    data: Dataset,
    space: ParameterSpace,
    trajectories: Sequence[Trajectory] = (),
    thresholds: AuditThresholds = AuditThresholds(),
    key_column: str | None = None,
    horizon: int = 30,
    grouping: str = "best",
) -> AuditReport:
    column = key_column or key_categorical(scorer, data, space)
    best_index = published_best_row(data)
    best_design = data.row_design(best_index)
    gaps = divergence_gaps(data, column, grouping)
    criteria = gaps.criteria(thresholds.range_gap_min, thresholds.sigma_gap_min)
    ratio = alignment_ratio(scorer, data)

    observed = data.observed(column)
    share = observed.count(gaps.typical) / len(observed)
    top = np.argsort(-data.targets if data.maximize else data.targets, kind="stable")[:TOP_ROWS]
    top_values = [data.row_design(int(i)).get(column) for i in top]
    top_majority = top_values.count(gaps.typical) > len(top_values) / 2

    usable = [t for t in trajectories if len(t) >= horizon]
    if len(usable) < len(trajectories):
        logger.warning("%s: %d trajectories shorter than %d iterations left out of the audit",
                       name, len(trajectories) - len(usable), horizon)

    modal_ranks = {}
    for condition in sorted({t.condition for t in usable}):
        runs = [t for t in usable if t.condition == condition]
        modal_ranks[condition] = miss_rank_distribution(runs, data, column, gaps.best_value)

    report = AuditReport(
        task=name,
        target=data.target_name,
        published_best_row=best_index,
        published_best={**best_design, data.target_name: float(data.targets[best_index])},
        key_categorical=column,
        best_value=gaps.best_value,
        literature_typical=gaps.typical,
        alignment_ratio=ratio,
        feedback_actionable=ratio >= thresholds.alignment_min,
        divergent=bool(criteria),
        criteria=list(criteria),
        range_gap=gaps.range_gap,
        sigma_gap=gaps.sigma_gap,
        literature_share=share,
        literature_top_majority=top_majority,
        reward_profile=[
            {"value": v, "reward": r} for v, r in oracle_reward_profile(scorer, data, space, column)
        ],
        match_rates=condition_match_rates(usable, column, gaps.best_value, horizon) if usable else {},
        modal_ranks=modal_ranks,
    )
    logger.info(
        "Audited %s: key %s, alignment %.3f, %s",
        name, column, ratio, "divergent (" + "+".join(criteria) + ")" if criteria else "not divergent",
    )
    return report


def save_report(report: AuditReport, directory: Path) -> Path:
    path = Path(directory) / f"audit_{report.task}.yaml"
    save_file(path, report.to_yaml())
    return path


# =============================================================================
# CROSS-TASK SUMMARIES
# =============================================================================

def alignment_subsets(reports: Sequence[AuditReport], sweep: Sequence[float] = (0.90, 0.95, 0.99)) -> dict[float, list[str]]:
    """Feedback-actionable tasks at each alignment threshold."""
    return {t: sorted(r.task for r in reports if r.alignment_ratio >= t) for t in sweep}


def _paired_gaps(reports: Sequence[AuditReport]) -> list[tuple[str, float, float]]:
    pairs = []
    for r in reports:
        if AWARE in r.match_rates and AGNOSTIC in r.match_rates:
            pairs.append((r.task, r.match_rates[AWARE]["pooled"]["all"], r.match_rates[AGNOSTIC]["pooled"]["all"]))
    return pairs


def _sweep_row(label: str, range_min: float | None, sigma_min: float | None,
               reports: Sequence[AuditReport]) -> dict[str, Any]:
    selected = [
        r for r in reports
        if DivergenceGaps(r.literature_typical, r.best_value, r.range_gap, r.sigma_gap).criteria(range_min, sigma_min)
    ]
    pairs = _paired_gaps(selected)
    row: dict[str, Any] = {
        "cut": label,
        "range_gap_min": range_min,
        "sigma_gap_min": sigma_min,
        "n_tasks": len(selected),
        "n_pairs": len(pairs),
        "reversals": sum(1 for _, aware, agnostic in pairs if agnostic > aware),
        "wilcoxon_p": None,
        "aware_mean": None,
        "agnostic_mean": None,
    }
    if pairs:
        aware = np.asarray([p[1] for p in pairs])
        agnostic = np.asarray([p[2] for p in pairs])
        row["wilcoxon_p"] = wilcoxon_signed_rank(aware - agnostic).p_value
        row["aware_mean"] = float(aware.mean())
        row["agnostic_mean"] = float(agnostic.mean())
    return row


def threshold_sweep(
    reports: Sequence[AuditReport],
    range_grid: Sequence[float] = (0.05, 0.10, 0.15, 0.20, 0.25),
    sigma_grid: Sequence[float] = (0.25, 0.50, 0.75, 1.00),
) -> pd.DataFrame:
    """Divergent-set size and aware-vs-agnostic reversal over range-only, sigma-only and paired cuts."""
    rows = [_sweep_row(f"R>={r:g}", r, None, reports) for r in range_grid]
    rows += [_sweep_row(f"S>={s:g}", None, s, reports) for s in sigma_grid]
    rows += [
        _sweep_row(f"R>={r:g} or S>={s:g}", r, s, reports)
        for r, s in zip(range_grid, sigma_grid)
    ]
    return pd.DataFrame(rows)


def nested_subsets(reports: Sequence[AuditReport], B: int = 1000, seed: int = 0) -> pd.DataFrame:
    """Mean aware-minus-agnostic match-rate gap with a task-bootstrap CI over four task subsets."""
    subsets = [
        ("literature_share_majority", lambda r: r.literature_share >= 0.5),
        ("literature_top_majority", lambda r: r.literature_top_majority),
        ("literature_is_best", lambda r: r.literature_typical == r.best_value),
        ("literature_divergent", lambda r: r.divergent),
    ]
    rows = []
    for name, keep in subsets:
        gaps = [g for r in reports if keep(r) and (g := r.match_gap()) is not None]
        row: dict[str, Any] = {
            "subset": name,
            "n_tasks": len(gaps),
            "mean_gap": float(np.mean(gaps)) if gaps else None,
            "ci_low": None,
            "ci_high": None,
        }
        if len(gaps) >= 2:
            result = bootstrap_ci([[g] for g in gaps], spec=BootstrapSpec(B=B, seed=seed))
            row["ci_low"], row["ci_high"] = result.ci_low, result.ci_high
        rows.append(row)
    return pd.DataFrame(rows)


def audit_summary(reports: Sequence[AuditReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        rows.append({
            "task": r.task,
            "key_categorical": r.key_categorical,
            "best_value": r.best_value,
            "literature_typical": r.literature_typical,
            "alignment_ratio": r.alignment_ratio,
            "feedback_actionable": r.feedback_actionable,
            "divergent": r.divergent,
            "criteria": "+".join(r.criteria),
            "aware_match": r.match_rates.get(AWARE, {}).get("pooled", {}).get("all"),
            "agnostic_match": r.match_rates.get(AGNOSTIC, {}).get("pooled", {}).get("all"),
        })
    return pd.DataFrame(rows)
