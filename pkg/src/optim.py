"""Optimizers: GP-UCB, uniform random search, trajectory replay, and the run loop.

Every optimizer proposes one design per iteration from the history of
scored steps. The run loop validates each proposal, scores it with the task
oracle and turns agent failures into worst-score fallback steps.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Any, Protocol

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

import config
from src.errors import AgentFailure, ConfigError, DataError, ReplayExhausted, SingularGram
from src.space import Design, ParameterSpace, encode_designs, validate_design
from src.tasks import Task, worst_score
from src.trajectory import Step, Trajectory

logger = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)

# Jitter is multiplied by this factor on each failed factorization
JITTER_GROWTH = 10.0
JITTER_ESCALATIONS = 3


@dataclass(frozen=True)
class GpUcbConfig:
    beta: float = 2.0
    kernel: str = "matern52"
    lengthscale: float = 1.0
    signal_variance: float = 1.0
    noise_jitter: float = 1e-6
    candidates_per_step: int = 100
    seed_points: int = 1

    def __post_init__(self) -> None:
        if self.kernel != "matern52":
            raise ConfigError(f"gp_ucb.kernel: only matern52 is supported, got {self.kernel!r}")
        if self.beta <= 0:
            raise ConfigError("gp_ucb.beta must be > 0")
        if self.lengthscale <= 0:
            raise ConfigError("gp_ucb.lengthscale must be > 0")
        if self.signal_variance <= 0 or self.noise_jitter <= 0:
            raise ConfigError("gp_ucb.signal_variance and gp_ucb.noise_jitter must be > 0")
        if self.candidates_per_step < 1:
            raise ConfigError("gp_ucb.candidates_per_step must be >= 1")
        if self.seed_points < 1:
            raise ConfigError("gp_ucb.seed_points must be >= 1")

    @classmethod
    def from_settings(cls, settings: dict[str, Any]) -> "GpUcbConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in settings.items() if k in known})


# =============================================================================
# GAUSSIAN PROCESS
# =============================================================================

def matern52(r, lengthscale: float = 1.0):
    """Matérn-5/2 correlation at distance r (scalar or array)."""
    scaled = SQRT5 * np.asarray(r, dtype=float) / lengthscale
    value = (1.0 + scaled + scaled**2 / 3.0) * np.exp(-scaled)
    return float(value) if np.ndim(value) == 0 else value


class GaussianProcess:
    """Zero-mean GP with a fixed Matérn-5/2 kernel on standardized targets."""

    def __init__(self, lengthscale: float = 1.0, signal_variance: float = 1.0, jitter: float = 1e-6):
        self.lengthscale = lengthscale
        self.signal_variance = signal_variance
        self.jitter = jitter

    def kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return self.signal_variance * matern52(cdist(A, B), self.lengthscale)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        self.X_ = np.atleast_2d(X)
        self.y_mean_ = float(np.mean(y))
        std = float(np.std(y))
        self.y_scale_ = std if std > 0 else 1.0
        ys = (np.asarray(y, dtype=float) - self.y_mean_) / self.y_scale_

        K = self.kernel(self.X_, self.X_)
        jitter = self.jitter
        for attempt in range(JITTER_ESCALATIONS + 1):
            try:
                self.L_ = cholesky(K + jitter * np.eye(len(K)), lower=True)
                break
            except LinAlgError:
                if attempt == JITTER_ESCALATIONS:
                    raise SingularGram(
                        f"Gram matrix not positive definite at jitter {jitter:g}"
                    ) from None
                jitter *= JITTER_GROWTH
                logger.debug("Cholesky failed; retrying with jitter %g", jitter)
        self.jitter_used_ = jitter
        self.alpha_ = cho_solve((self.L_, True), ys)
        return self

    def posterior(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in original target units."""
        Ks = self.kernel(self.X_, np.atleast_2d(Xs))
        mu = Ks.T @ self.alpha_
        v = solve_triangular(self.L_, Ks, lower=True)
        var = self.signal_variance - np.sum(v**2, axis=0)
        sigma = np.sqrt(np.maximum(var, 0.0))
        return mu * self.y_scale_ + self.y_mean_, sigma * self.y_scale_


def select_ucb(mu: np.ndarray, sigma: np.ndarray, beta: float) -> int:
    """Index of the max of mu + beta * sigma; ties go to the first."""
    return int(np.argmax(mu + beta * sigma))


# =============================================================================
# OPTIMIZERS
# =============================================================================

@dataclass
class Proposal:
    raw: dict[str, Any]
    retries_used: int = 0
    annotations: dict[str, Any] = field(default_factory=dict)


class Optimizer(Protocol):
    kind: str

    def propose(self, history: list[Step]) -> Proposal: ...


class RandomSearch:
    kind = "random"

    def __init__(self, space: ParameterSpace, rng: np.random.Generator):
        self.space = space
        self.rng = rng

    def propose(self, history: list[Step]) -> Proposal:
        return Proposal(raw=self.space.decode(self.space.sample_encoded(self.rng, 1)[0]))


class GpUcb:
    """GP-UCB over the encoded space; always maximizes (scores pre-negated for minimize)."""

    kind = "gp_ucb"

    def __init__(
        self,
        space: ParameterSpace,
        rng: np.random.Generator,
        gp_config: GpUcbConfig | None = None,
        maximize: bool = True,
    ):
        self.space = space
        self.rng = rng
        self.config = gp_config or GpUcbConfig()
        self.sign = 1.0 if maximize else -1.0

    def propose(self, history: list[Step]) -> Proposal:
        if len(history) < self.config.seed_points:
            return Proposal(raw=self.space.decode(self.space.sample_encoded(self.rng, 1)[0]))
        return Proposal(raw=self.gp_ucb_propose(history))

    def gp_ucb_propose(self, history: list[Step]) -> Design:
        if not history:
            raise ValueError("GP-UCB needs at least one observation")
        X = encode_designs(self.space, [s.design for s in history])
        y = self.sign * np.asarray([s.score for s in history], dtype=float)
        gp = GaussianProcess(self.config.lengthscale, self.config.signal_variance, self.config.noise_jitter)
        gp.fit(X, y)

        candidates = self.space.sample_encoded(self.rng, self.config.candidates_per_step)
        mu, sigma = gp.posterior(candidates)
        return self.space.decode(candidates[select_ucb(mu, sigma, self.config.beta)])


class Replay:
    """Re-emit a stored design sequence; None entries replay as fallback steps."""

    kind = "replay"

    def __init__(self, designs: list[dict[str, Any] | None]):
        self.designs = designs

    def propose(self, history: list[Step]) -> Proposal:
        design = self.designs[len(history)]
        if design is None:
            raise AgentFailure("replayed fallback step")
        return Proposal(raw=dict(design))


def make_optimizer(
    kind: str,
    task: Task,
    seed: int,
    gp_config: GpUcbConfig | None = None,
    agent: Optimizer | None = None,
    replay_designs: list[dict[str, Any] | None] | None = None,
) -> Optimizer:
    rng = np.random.default_rng(seed)
    if kind == "gp_ucb":
        return GpUcb(task.space, rng, gp_config, maximize=task.maximize)
    if kind == "random":
        return RandomSearch(task.space, rng)
    if kind == "replay":
        if replay_designs is None:
            raise ConfigError("replay optimizer needs a stored design sequence")
        return Replay(replay_designs)
    if kind == "agent":
        if agent is None:
            raise ConfigError("agent optimizer needs an agent client")
        return agent
    raise ConfigError(f"Unknown optimizer kind {kind!r}; expected one of {', '.join(config.OPTIMIZER_KINDS)}")


def run_optimizer(
    kind: str,
    task: Task,
    iters: int,
    seed: int,
    gp_config: GpUcbConfig | None = None,
    agent: Optimizer | None = None,
    replay_designs: list[dict[str, Any] | None] | None = None,
    condition: str = config.BASELINE_CONDITION,
    run_index: int = 0,
    optimizer_name: str | None = None,
) -> Trajectory:
    """Run one optimizer for exactly `iters` steps and return the trajectory.

    Agent failures that survive the retry policy become fallback steps
    scored at the task's worst score, as do proposals that fail validation.

    Raises:
        ReplayExhausted: replay sequence shorter than iters
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    if kind == "replay" and replay_designs is not None and len(replay_designs) < iters:
        raise ReplayExhausted(f"Stored sequence has {len(replay_designs)} designs, need {iters}")

    optimizer = make_optimizer(kind, task, seed, gp_config, agent, replay_designs)
    trajectory = Trajectory(
        task=task.name,
        optimizer=optimizer_name or kind,
        condition=condition,
        run_index=run_index,
        seed=seed,
        objective=task.objective,
    )

    for _ in range(iters):
        try:
            proposal = optimizer.propose(trajectory.steps)
        except AgentFailure as e:
            logger.warning(
                "%s run %d step %d: agent failed (%s); using worst score",
                task.name, run_index, len(trajectory.steps) + 1, e,
            )
            trajectory.steps.append(Step(
                raw={},
                design={},
                score=worst_score(task),
                fallback=True,
                retries_used=e.retries_used,
                annotations={"error": f"{type(e).__name__}: {e}"},
            ))
            continue

        try:
            validated = validate_design(task.space, proposal.raw)
        except DataError as e:
            logger.warning(
                "%s run %d step %d: proposal rejected (%s); using worst score",
                task.name, run_index, len(trajectory.steps) + 1, e,
            )
            trajectory.steps.append(Step(
                raw=proposal.raw,
                design={},
                score=worst_score(task),
                fallback=True,
                retries_used=proposal.retries_used,
                annotations={"error": f"{type(e).__name__}: {e}"},
            ))
            continue

        trajectory.steps.append(Step(
            raw=proposal.raw,
            design=validated.values,
            score=task.score(validated.values),
            retries_used=proposal.retries_used,
            corrections=list(validated.corrections),
            annotations=proposal.annotations,
        ))

    return trajectory
