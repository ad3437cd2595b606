"""Tests for the GP, the optimizers and the run loop."""

import numpy as np
import pytest
from sklearn.gaussian_process.kernels import Matern

from src.errors import ConfigError, ParseFailure, ReplayExhausted
from src.optim import GaussianProcess, GpUcb, GpUcbConfig, Proposal, matern52, run_optimizer, select_ucb
from src.space import ParameterSpace, ParameterSpec
from src.tasks import Task
from src.trajectory import Step


def test_matern_matches_sklearn():
    r = np.linspace(0.0, 3.0, 13)
    points = r[:, None]
    expected = Matern(length_scale=0.7, nu=2.5)(np.zeros((1, 1)), points)[0]
    np.testing.assert_allclose(matern52(r, lengthscale=0.7), expected, rtol=1e-12)
    assert matern52(0.0) == 1.0


def test_gp_interpolates_training_points():
    X = np.array([[0.0], [0.4], [1.0]])
    y = np.array([3.0, 5.0, 4.0])
    gp = GaussianProcess(jitter=1e-8).fit(X, y)
    mu, sigma = gp.posterior(X)
    np.testing.assert_allclose(mu, y, atol=1e-4)
    assert np.all(sigma < 1e-2)


def test_gp_uncertainty_grows_away_from_data():
    gp = GaussianProcess().fit(np.array([[0.0]]), np.array([1.0]))
    _, sigma = gp.posterior(np.array([[0.1], [0.9]]))
    assert sigma[1] > sigma[0]


def test_gp_tolerates_duplicate_points():
    X = np.array([[0.2], [0.2], [0.8]])
    gp = GaussianProcess().fit(X, np.array([1.0, 1.0, 2.0]))
    mu, _ = gp.posterior(np.array([[0.2]]))
    assert mu[0] == pytest.approx(1.0, abs=1e-3)


def test_select_ucb_first_index_wins_ties():
    mu = np.array([1.0, 2.0, 2.0])
    sigma = np.zeros(3)
    assert select_ucb(mu, sigma, beta=2.0) == 1
    assert select_ucb(np.zeros(3), np.array([0.1, 0.5, 0.2]), beta=1.0) == 1


@pytest.mark.parametrize("overrides", [{"beta": 0.0}, {"kernel": "rbf"}, {"candidates_per_step": 0}])
def test_gp_config_validation(overrides):
    with pytest.raises(ConfigError):
        GpUcbConfig(**overrides)


def test_gp_config_from_settings_ignores_unknown_keys():
    cfg = GpUcbConfig.from_settings({"beta": 3.0, "something_else": 1})
    assert cfg.beta == 3.0


def test_low_beta_exploits_the_posterior_peak():
    space = ParameterSpace(params=(ParameterSpec(name="x", kind="numeric", lower=0.0, upper=1.0),))
    history = [
        Step(raw={"x": 0.0}, design={"x": 0.0}, score=0.0),
        Step(raw={"x": 0.5}, design={"x": 0.5}, score=1.0),
        Step(raw={"x": 1.0}, design={"x": 1.0}, score=0.0),
    ]
    optimizer = GpUcb(space, np.random.default_rng(0), GpUcbConfig(beta=1e-9, candidates_per_step=500))
    proposal = optimizer.propose(history)
    assert abs(proposal.raw["x"] - 0.5) < 0.1


class TestRunOptimizer:
    def test_gp_ucb_is_reproducible(self, quadratic_task):
        first = run_optimizer("gp_ucb", quadratic_task, iters=8, seed=42)
        second = run_optimizer("gp_ucb", quadratic_task, iters=8, seed=42)
        assert len(first) == 8
        np.testing.assert_array_equal(first.scores, second.scores)
        assert first.designs == second.designs

    def test_random_designs_are_valid(self, quadratic_task):
        traj = run_optimizer("random", quadratic_task, iters=20, seed=1)
        for design in traj.designs:
            assert 20.0 <= design["temperature"] <= 80.0
            assert design["solvent"] in ("water", "ethanol", "dmso")
        assert traj.fallback_steps == 0
        assert traj.condition == "none"

    def test_different_seeds_differ(self, quadratic_task):
        a = run_optimizer("random", quadratic_task, iters=5, seed=1)
        b = run_optimizer("random", quadratic_task, iters=5, seed=2)
        assert a.designs != b.designs

    def test_replay_reproduces_scores_and_fallbacks(self, quadratic_task):
        designs = [
            {"temperature": 60.0, "solvent": "ethanol", "time": 5.0},
            None,
            {"temperature": 30.0, "solvent": "water", "time": 1.0},
        ]
        traj = run_optimizer("replay", quadratic_task, iters=3, seed=0, replay_designs=designs)
        assert traj.scores[0] == pytest.approx(12.0)
        assert traj.steps[1].fallback
        assert traj.scores[1] == 1.0
        assert traj.fallback_steps == 1

    def test_replayed_design_with_unknown_option_falls_back(self, quadratic_task):
        designs = [
            {"temperature": 60.0, "solvent": "acetone", "time": 5.0},
            {"temperature": 60.0, "solvent": "ethanol", "time": 5.0},
        ]
        traj = run_optimizer("replay", quadratic_task, iters=2, seed=0, replay_designs=designs)
        assert traj.steps[0].fallback
        assert traj.steps[0].raw["solvent"] == "acetone"
        assert traj.scores.tolist() == pytest.approx([1.0, 12.0])
        assert "UnknownOption" in traj.steps[0].annotations["error"]

    def test_replay_too_short(self, quadratic_task):
        with pytest.raises(ReplayExhausted):
            run_optimizer("replay", quadratic_task, iters=4, seed=0, replay_designs=[{}])

    def test_agent_failure_becomes_fallback_step(self, quadratic_task):
        class Broken:
            kind = "agent"

            def propose(self, history):
                raise ParseFailure("no JSON", retries_used=2)

        traj = run_optimizer("agent", quadratic_task, iters=2, seed=0, agent=Broken(), condition="domain_aware")
        assert all(s.fallback for s in traj.steps)
        assert traj.steps[0].retries_used == 2
        assert traj.scores.tolist() == [1.0, 1.0]
        assert "ParseFailure" in traj.steps[0].annotations["error"]

    def test_out_of_range_proposal_is_clipped_and_recorded(self, quadratic_task):
        class Eager:
            kind = "agent"

            def propose(self, history):
                return Proposal(raw={"temperature": 120.0, "solvent": "dmso", "time": 5.0})

        traj = run_optimizer("agent", quadratic_task, iters=1, seed=0, agent=Eager())
        step = traj.steps[0]
        assert step.design["temperature"] == 80.0
        assert step.raw["temperature"] == 120.0
        assert step.corrections

    def test_minimize_gp_ucb_runs(self, mixed_space):
        task = Task.synthetic(
            "bowl", mixed_space, lambda d: (d["temperature"] - 50.0) ** 2, objective="minimize", worst=900.0
        )
        traj = run_optimizer("gp_ucb", task, iters=6, seed=3)
        assert traj.objective == "minimize"
        assert not traj.maximize

    def test_iters_must_be_positive(self, quadratic_task):
        with pytest.raises(ConfigError):
            run_optimizer("random", quadratic_task, iters=0, seed=0)
