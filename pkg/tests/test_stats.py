"""Tests for the inference kit."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats as sps

from src.errors import AllZeroDiffs, DegenerateTable, ZeroVariance
from src.stats import (
    BootstrapSpec,
    StatResult,
    binomial_sign_test,
    bootstrap_ci,
    bootstrap_mean_ci,
    bootstrap_pvalue,
    exact_sign_permutation,
    fisher_exact_2x2,
    mann_whitney_u,
    paired_sign_permutation,
    rank_correlation,
    wilcoxon_signed_rank,
    wilson_interval,
)


def enumerate_signed_rank(diffs):
    """Two one-sided tails of W+ by listing every sign pattern."""
    d = np.asarray(diffs, dtype=float)
    ranks = sps.rankdata(np.abs(d))
    observed = ranks[d > 0].sum()
    totals = [
        sum(r for r, s in zip(ranks, signs) if s)
        for signs in itertools.product([False, True], repeat=len(d))
    ]
    totals = np.asarray(totals)
    return np.mean(totals >= observed - 1e-9), np.mean(totals <= observed + 1e-9)


class TestWilcoxon:
    def test_six_of_six_positive(self):
        result = wilcoxon_signed_rank([0.4, 1.2, 0.1, 2.0, 0.7, 0.3])
        assert result.p_value == pytest.approx(0.03125, abs=1e-12)
        assert result.statistic == 21.0
        assert result.method == "wilcoxon_exact"

    def test_five_of_five_positive(self):
        assert wilcoxon_signed_rank([1, 2, 3, 4, 5]).p_value == pytest.approx(0.0625, abs=1e-12)

    def test_one_sided(self):
        assert wilcoxon_signed_rank([1, 2, 3, 4, 5], sidedness="greater").p_value == pytest.approx(1 / 32)
        assert wilcoxon_signed_rank([1, 2, 3, 4, 5], sidedness="less").p_value == pytest.approx(1.0)

    def test_zero_diffs_are_dropped(self):
        result = wilcoxon_signed_rank([0, 0, 1, 2, 3, 4, 5])
        assert result.n == 5
        assert result.p_value == pytest.approx(0.0625)

    def test_all_zero(self):
        result = wilcoxon_signed_rank([0.0, 0.0])
        assert result.p_value == 1.0
        assert result.flag == "AllZeroDiffs"
        with pytest.raises(AllZeroDiffs):
            wilcoxon_signed_rank([0.0], strict=True)

    def test_matches_enumeration_with_ties(self):
        diffs = [1.5, -0.5, 1.5, 2.0, -2.0, 0.5, 3.0, 1.0]
        p_greater, p_less = enumerate_signed_rank(diffs)
        assert wilcoxon_signed_rank(diffs, "greater").p_value == pytest.approx(p_greater, abs=1e-12)
        assert wilcoxon_signed_rank(diffs, "less").p_value == pytest.approx(p_less, abs=1e-12)
        assert wilcoxon_signed_rank(diffs).p_value == pytest.approx(min(1.0, 2 * min(p_greater, p_less)), abs=1e-12)

    def test_large_sample_uses_normal_approximation(self, rng):
        diffs = rng.normal(0.3, 1.0, size=40)
        result = wilcoxon_signed_rank(diffs)
        reference = sps.wilcoxon(diffs, correction=True, method="approx")
        assert result.method == "wilcoxon_normal"
        assert result.p_value == pytest.approx(reference.pvalue, rel=1e-6)


class TestMannWhitney:
    def test_complete_separation(self):
        result = mann_whitney_u([1, 2, 3], [4, 5, 6], sidedness="less")
        assert result.p_value == pytest.approx(0.05, abs=1e-12)
        assert result.statistic == 0.0

    def test_identical_samples(self):
        assert mann_whitney_u([1, 2, 3, 4], [1, 2, 3, 4]).p_value == pytest.approx(1.0)

    def test_expert_ratings_with_ties(self):
        anchored = [3, 3, 4, 3, 2, 4]
        responsive = [5, 4, 4, 5, 4, 3]
        result = mann_whitney_u(anchored, responsive, sidedness="less")
        assert result.statistic == 6.5
        assert result.method == "mann_whitney_asymptotic"
        assert result.p_value == pytest.approx(0.031, abs=0.001)

    def test_exact_matches_enumeration(self):
        a, b = [0.3, 1.7, 2.2, 4.1], [1.1, 2.9, 3.5, 5.0, 6.2]
        pooled = np.asarray(a + b)
        observed = sum(x > y for x in a for y in b)
        us = []
        for picks in itertools.combinations(range(len(pooled)), len(a)):
            left = pooled[list(picks)]
            right = np.delete(pooled, list(picks))
            us.append(sum(x > y for x in left for y in right))
        expected = np.mean(np.asarray(us) <= observed)
        assert mann_whitney_u(a, b, sidedness="less").p_value == pytest.approx(expected, abs=1e-12)

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            mann_whitney_u([], [1.0])


class TestBinomial:
    def test_thirteen_of_eighteen(self):
        assert binomial_sign_test(13, 18).p_value == pytest.approx(0.048, abs=0.001)

    def test_all_successes(self):
        assert binomial_sign_test(7, 7).p_value == pytest.approx(0.5**7)

    def test_tail_includes_the_mode(self):
        assert binomial_sign_test(5, 10).p_value > 0.5

    def test_bounds(self):
        with pytest.raises(ValueError):
            binomial_sign_test(4, 3)


class TestFisher:
    def test_perfect_association(self):
        assert fisher_exact_2x2([[2, 0], [0, 2]], sidedness="greater").p_value == pytest.approx(1 / 6)

    def test_balanced_table(self):
        assert fisher_exact_2x2([[1, 1], [1, 1]], sidedness="greater").p_value == pytest.approx(5 / 6)

    def test_zero_margin(self):
        result = fisher_exact_2x2([[0, 0], [1, 3]])
        assert result.flag == "DegenerateTable"
        assert result.p_value == 1.0
        with pytest.raises(DegenerateTable):
            fisher_exact_2x2([[0, 0], [1, 3]], strict=True)


class TestRankCorrelation:
    def test_monotone(self):
        assert rank_correlation([1, 2, 3], [10, 20, 40]) == pytest.approx((1.0, 1.0))
        assert rank_correlation([1, 2, 3], [3, 2, 1]) == pytest.approx((-1.0, -1.0))

    def test_one_swap(self):
        spearman, kendall = rank_correlation([1, 2, 3, 4], [1, 3, 2, 4])
        assert kendall == pytest.approx(2 / 3)
        assert spearman == pytest.approx(0.8)

    def test_constant_input(self):
        with pytest.raises(ZeroVariance):
            rank_correlation([1, 1, 1], [1, 2, 3])


class TestSignPermutation:
    def test_all_zero(self):
        assert paired_sign_permutation([0.0, 0.0, 0.0]).p_value == 1.0

    def test_single_diff(self):
        assert paired_sign_permutation([0.8], sidedness="greater").p_value == pytest.approx(0.5)

    def test_exact_when_patterns_fit_in_budget(self):
        result = paired_sign_permutation([1.0, 2.0, 3.0], B=1000)
        assert result.method == "sign_permutation_exact"
        assert result.p_value == pytest.approx(2 / 8)

    def test_monte_carlo_agrees_with_enumeration(self):
        diffs = [0.5, 1.2, -0.3, 0.8, 1.5, -0.2, 0.9, 0.4, -0.6, 1.1, -0.7, 0.3]
        exact = exact_sign_permutation(diffs, sidedness="greater").p_value
        sampled = paired_sign_permutation(diffs, B=20000, seed=3, sidedness="greater", allow_exact=False)
        assert sampled.method == "sign_permutation"
        assert sampled.p_value == pytest.approx(exact, abs=0.01)

    def test_monte_carlo_p_is_never_zero(self):
        result = paired_sign_permutation([5.0] * 15, B=200, seed=0, sidedness="greater")
        assert result.p_value >= 1 / 201


class TestWilson:
    def test_zero_successes(self):
        low, high = wilson_interval(0, 10)
        assert low == 0.0
        assert 0.0 < high < 0.35

    def test_all_successes(self):
        low, high = wilson_interval(10, 10)
        assert high == 1.0
        assert low > 0.65

    def test_half(self):
        low, high = wilson_interval(5, 10)
        assert low == pytest.approx(0.236591, abs=1e-5)
        assert high == pytest.approx(0.763409, abs=1e-5)


class TestBootstrap:
    def test_constant_groups(self):
        result = bootstrap_ci([[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]])
        assert (result.ci_low, result.ci_high) == (2.0, 2.0)
        assert result.statistic == 2.0

    def test_seeded_determinism(self, rng):
        data = rng.normal(size=(10, 4))
        spec = BootstrapSpec(mode="two_level", B=500, seed=9)
        assert bootstrap_ci(data, spec=spec) == bootstrap_ci(data, spec=spec)

    def test_unequal_groups_and_custom_statistic(self):
        data = [[1.0, 2.0, 3.0], [4.0], [2.0, 2.0]]
        result = bootstrap_ci(data, stat_fn=lambda groups: float(np.median([g.max() for g in groups])))
        assert result.statistic == 3.0
        assert result.ci_low <= result.statistic <= result.ci_high

    def test_small_budget_rejected(self):
        with pytest.raises(ValueError):
            BootstrapSpec(B=50)

    def test_pvalue_sidedness(self):
        replicates = np.array([0.1, 0.2, 0.3, -0.1])
        assert bootstrap_pvalue(replicates, sidedness="greater") == pytest.approx(0.25)
        assert bootstrap_pvalue(replicates, sidedness="less") == pytest.approx(0.75)
        assert bootstrap_pvalue(replicates) == pytest.approx(0.5)

    def test_mean_ci(self):
        result = bootstrap_mean_ci([1.0, 2.0, 3.0, 4.0], B=400, seed=1)
        assert result.statistic == 2.5
        assert 1.0 <= result.ci_low < 2.5 < result.ci_high <= 4.0

    @pytest.mark.slow
    def test_task_level_coverage(self):
        rng = np.random.default_rng(2024)
        covered = 0
        replications = 1000
        for r in range(replications):
            group_means = rng.normal(0.0, 1.0, size=50)
            data = group_means[:, None] + rng.normal(0.0, 0.1, size=(50, 4))
            result = bootstrap_ci(data, spec=BootstrapSpec(mode="task_level", B=1000, seed=r))
            covered += result.ci_low <= 0.0 <= result.ci_high
        assert 0.92 <= covered / replications <= 0.98


def test_stat_result_rejects_bad_p():
    with pytest.raises(ValueError):
        StatResult(statistic=0.0, p_value=1.5, method="x", n=1)
    assert math.isclose(StatResult(0.0, 0.2, "x", 1, sidedness="less").p_value, 0.2)
    assert StatResult(0.0, 0.2, "x", 1, sidedness="less").sides == "one"
