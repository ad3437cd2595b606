"""Statistical inference kit: bootstraps, rank tests, exact tests, correlations,
sign-permutation tests and binomial intervals.

One-sided alternatives are named "greater" and "less" and refer to the first
sample (or to the diffs) being larger or smaller; "two" is two-sided.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from src.errors import AllZeroDiffs, DegenerateTable, ZeroVariance

logger = logging.getLogger(__name__)

TWO = "two"
GREATER = "greater"
LESS = "less"
ALTERNATIVES = (TWO, GREATER, LESS)

# Enumerate exactly up to this many nonzero diffs
EXACT_SIGN_MAX_N = 20
# Mann-Whitney exact distribution up to this many splits
EXACT_SPLITS_MAX = 10**6
# Relative slack when comparing permuted statistics to the observed one
PERMUTATION_RTOL = 1e-12


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p_value: float
    method: str
    n: int
    sidedness: str = TWO
    ci_low: float | None = None
    ci_high: float | None = None
    flag: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")
        if self.ci_low is not None and self.ci_high is not None and self.ci_low > self.ci_high:
            raise ValueError("ci_low > ci_high")

    @property
    def sides(self) -> str:
        """"one" or "two"."""
        return TWO if self.sidedness == TWO else "one"


def _check_alternative(sidedness: str) -> None:
    if sidedness not in ALTERNATIVES:
        raise ValueError(f"sidedness must be one of {ALTERNATIVES}, got {sidedness!r}")


def _combine_tails(p_greater: float, p_less: float, sidedness: str) -> float:
    if sidedness == GREATER:
        return min(1.0, p_greater)
    if sidedness == LESS:
        return min(1.0, p_less)
    return min(1.0, 2.0 * min(p_greater, p_less))


# =============================================================================
# BOOTSTRAP
# =============================================================================

@dataclass(frozen=True)
class BootstrapSpec:
    mode: str = "task_level"
    B: int = 1000
    seed: int = 0
    ci: tuple[float, float] = (2.5, 97.5)

    def __post_init__(self) -> None:
        if self.mode not in ("task_level", "two_level"):
            raise ValueError(f"Unknown bootstrap mode {self.mode!r}")
        if self.B < 100:
            raise ValueError("Bootstrap needs B >= 100")
        if not 0 <= self.ci[0] < self.ci[1] <= 100:
            raise ValueError("CI percentiles must satisfy 0 <= low < high <= 100")


def mean_of_group_means(groups: Sequence[np.ndarray]) -> float:
    return float(np.mean([np.mean(g) for g in groups]))


def bootstrap_pvalue(replicates: np.ndarray, null: float = 0.0, sidedness: str = TWO) -> float:
    """Share of bootstrap replicates on the far side of a null value (two-sided doubled)."""
    _check_alternative(sidedness)
    replicates = np.asarray(replicates, dtype=float)
    p_greater = float(np.mean(replicates <= null))
    p_less = float(np.mean(replicates >= null))
    return _combine_tails(p_greater, p_less, sidedness)


def _replicates_equal_groups(data: np.ndarray, spec: BootstrapSpec, rng: np.random.Generator) -> np.ndarray:
    """Vectorized replicates of the mean of group means for a (groups x runs) array."""
    n_groups, n_runs = data.shape
    picks = rng.integers(n_groups, size=(spec.B, n_groups))
    if spec.mode == "task_level":
        return data.mean(axis=1)[picks].mean(axis=1)
    runs = rng.integers(n_runs, size=(spec.B, n_groups, n_runs))
    return data[picks[:, :, None], runs].mean(axis=2).mean(axis=1)


def bootstrap_ci(
    data: Sequence[Sequence[float]],
    stat_fn: Callable[[list[np.ndarray]], float] | None = None,
    spec: BootstrapSpec = BootstrapSpec(),
) -> StatResult:
    """Percentile bootstrap over groups (tasks), optionally resampling runs within groups.

    `stat_fn` maps a list of per-group arrays to a number; the default is the
    mean of group means. The p-value is the bootstrap p-value against 0.
    """
    groups = [np.asarray(g, dtype=float) for g in data]
    if len(groups) < 2:
        raise ValueError("Bootstrap needs at least 2 groups")
    stat = stat_fn or mean_of_group_means
    point = float(stat(groups))
    rng = np.random.default_rng(spec.seed)

    sizes = {len(g) for g in groups}
    if stat_fn is None and len(sizes) == 1:
        replicates = _replicates_equal_groups(np.vstack(groups), spec, rng)
    else:
        replicates = np.empty(spec.B)
        for b in range(spec.B):
            picks = rng.integers(len(groups), size=len(groups))
            sample = [groups[i] for i in picks]
            if spec.mode == "two_level":
                sample = [g[rng.integers(len(g), size=len(g))] for g in sample]
            replicates[b] = stat(sample)

    low, high = np.percentile(replicates, spec.ci)
    return StatResult(
        statistic=point,
        p_value=bootstrap_pvalue(replicates),
        method=f"bootstrap_{spec.mode}",
        n=len(groups),
        ci_low=float(low),
        ci_high=float(high),
    )


def bootstrap_mean_ci(values: Sequence[float], B: int = 1000, seed: int = 0) -> StatResult:
    """Task-level bootstrap of a mean over per-task values."""
    return bootstrap_ci([[v] for v in values], None, BootstrapSpec(mode="task_level", B=B, seed=seed))


# =============================================================================
# RANK TESTS
# =============================================================================

def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Null counts of 2*W+ over all 2^n sign patterns (index = doubled rank sum)."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(diffs: Sequence[float], sidedness: str = TWO, strict: bool = False) -> StatResult:
    """Wilcoxon signed-rank test on paired differences.

    Zero diffs are dropped and tied magnitudes get mid-ranks. Exact for up to
    20 nonzero diffs; normal approximation with continuity correction above.
    With every diff zero the result is p = 1 flagged AllZeroDiffs (raised when strict).
    """
    _check_alternative(sidedness)
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        if strict:
            raise AllZeroDiffs("All paired differences are zero")
        return StatResult(0.0, 1.0, "wilcoxon_signed_rank", 0, sidedness, flag="AllZeroDiffs")

    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_SIGN_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_counts(doubled)
        total = float(2**n)
        observed = int(round(2 * w_plus))
        p_greater = counts[observed:].sum() / total
        p_less = counts[:observed + 1].sum() / total
        method = "wilcoxon_exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        sd = math.sqrt(var)
        p_greater = float(sps.norm.sf((w_plus - mean - 0.5) / sd))
        p_less = float(sps.norm.cdf((w_plus - mean + 0.5) / sd))
        method = "wilcoxon_normal"

    return StatResult(w_plus, _combine_tails(p_greater, p_less, sidedness), method, n, sidedness)


def mann_whitney_u(a: Sequence[float], b: Sequence[float], sidedness: str = TWO) -> StatResult:
    """Mann-Whitney U for sample a against sample b (statistic = U of a).

    Exact when there are no ties and C(n+m, n) <= 10^6; otherwise normal with
    tie correction and continuity correction.
    """
    _check_alternative(sidedness)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Mann-Whitney needs two non-empty samples")

    pooled = np.concatenate([a, b])
    has_ties = len(np.unique(pooled)) < len(pooled)
    exact = not has_ties and math.comb(len(pooled), len(a)) <= EXACT_SPLITS_MAX
    method = "exact" if exact else "asymptotic"

    result = sps.mannwhitneyu(
        a,
        b,
        alternative="two-sided" if sidedness == TWO else sidedness,
        method=method,
        use_continuity=True,
    )
    p = min(1.0, float(result.pvalue))
    return StatResult(float(result.statistic), p, f"mann_whitney_{method}", len(a) + len(b), sidedness)


# =============================================================================
# EXACT TESTS
# =============================================================================

def binomial_sign_test(successes: int, n: int, p0: float = 0.5, sidedness: str = GREATER) -> StatResult:
    """Exact binomial tail probability of `successes` out of `n`."""
    _check_alternative(sidedness)
    if not 0 <= successes <= n:
        raise ValueError("Need 0 <= successes <= n")
    result = sps.binomtest(successes, n, p0, alternative="two-sided" if sidedness == TWO else sidedness)
    return StatResult(successes / n if n else 0.0, float(result.pvalue), "binomial_exact", n, sidedness)


def fisher_exact_2x2(table: Sequence[Sequence[int]], sidedness: str = TWO, strict: bool = False) -> StatResult:
    """Fisher's exact test on a 2x2 table; one-sided "greater" tests table[0][0] large.

    A zero row or column margin gives p = 1 flagged DegenerateTable (raised when strict).
    """
    _check_alternative(sidedness)
    counts = np.asarray(table, dtype=np.int64)
    if counts.shape != (2, 2) or np.any(counts < 0):
        raise ValueError("Need a 2x2 table of non-negative counts")
    n = int(counts.sum())
    if np.any(counts.sum(axis=0) == 0) or np.any(counts.sum(axis=1) == 0):
        if strict:
            raise DegenerateTable("Contingency table has a zero margin")
        return StatResult(math.nan, 1.0, "fisher_exact", n, sidedness, flag="DegenerateTable")
    odds, p = sps.fisher_exact(counts, alternative="two-sided" if sidedness == TWO else sidedness)
    return StatResult(float(odds), min(1.0, float(p)), "fisher_exact", n, sidedness)


def rank_correlation(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """(Spearman rho, Kendall tau-b).

    Raises:
        ZeroVariance: x or y is constant
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("Need two sequences of equal length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ZeroVariance("Correlation undefined for a constant input")
    spearman = sps.spearmanr(x, y)[0]
    kendall = sps.kendalltau(x, y, variant="b")[0]
    return float(spearman), float(kendall)


# =============================================================================
# SIGN PERMUTATION
# =============================================================================

def _sign_tail_counts(permuted: np.ndarray, observed: float, sidedness: str) -> int:
    slack = PERMUTATION_RTOL * max(1.0, abs(observed))
    if sidedness == GREATER:
        return int(np.sum(permuted >= observed - slack))
    if sidedness == LESS:
        return int(np.sum(permuted <= observed + slack))
    return int(np.sum(np.abs(permuted) >= abs(observed) - slack))


def exact_sign_permutation(cell_diffs: Sequence[float], sidedness: str = TWO) -> StatResult:
    """Sign-flip test by full enumeration of the 2^n patterns (n <= 20)."""
    _check_alternative(sidedness)
    d = np.asarray(cell_diffs, dtype=float)
    n = len(d)
    if n == 0:
        raise ValueError("Need at least one diff")
    if n > EXACT_SIGN_MAX_N:
        raise ValueError(f"Exact enumeration limited to n <= {EXACT_SIGN_MAX_N}")
    observed = float(d.mean())
    if np.all(d == 0):
        return StatResult(0.0, 1.0, "sign_permutation_exact", n, sidedness, flag="AllZeroDiffs")
    patterns = np.arange(2**n)[:, None]
    signs = ((patterns >> np.arange(n)) & 1) * 2 - 1
    permuted = signs @ d / n
    count = _sign_tail_counts(permuted, observed, sidedness)
    return StatResult(observed, count / 2**n, "sign_permutation_exact", n, sidedness)


def paired_sign_permutation(
    cell_diffs: Sequence[float],
    B: int = 1000,
    seed: int = 0,
    sidedness: str = TWO,
    allow_exact: bool = True,
) -> StatResult:
    """Rademacher sign-flip test on the mean diff.

    p = (count + 1) / (B + 1) over B random flips; full enumeration is used
    instead when 2^n <= B and allow_exact is set.
    """
    _check_alternative(sidedness)
    d = np.asarray(cell_diffs, dtype=float)
    n = len(d)
    if n == 0:
        raise ValueError("Need at least one diff")
    if np.all(d == 0):
        return StatResult(0.0, 1.0, "sign_permutation", n, sidedness, flag="AllZeroDiffs")
    if allow_exact and n <= EXACT_SIGN_MAX_N and 2**n <= B:
        return exact_sign_permutation(d, sidedness)

    observed = float(d.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(B, n))
    permuted = signs @ d / n
    count = _sign_tail_counts(permuted, observed, sidedness)
    return StatResult(observed, (count + 1) / (B + 1), "sign_permutation", n, sidedness)


# =============================================================================
# INTERVALS
# =============================================================================

def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= successes <= n:
        raise ValueError("Need n >= 1 and 0 <= successes <= n")
    z = float(sps.norm.ppf(1 - (1 - level) / 2))
    p = successes / n
    denom = 1 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == n else min(1.0, center + half)
    return low, high
