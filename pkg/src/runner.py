"""Run matrix execution and the JSONL trajectory store.

A plan is the cross product tasks x optimizers x conditions x runs. Each
(task, optimizer, condition) cell owns one JSONL file with one record per
run, so cells can execute in parallel with a single writer per file.
Completed runs found in the store are skipped.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import config
from src.agent import AgentClient, Transport, UnavailableTransport, make_transport
from src.errors import ConfigError, CorruptRecord, ReplayExhausted, TransportFailure
from src.optim import GpUcbConfig, run_optimizer
from src.tasks import Task, worst_score
from src.trajectory import Trajectory
from src.utils import slugify, stable_seed

logger = logging.getLogger(__name__)

__all__ = [
    "CorpusSummary",
    "OptimizerSpec",
    "RunPlan",
    "TrajectoryStore",
    "execute_plan",
    "load_corpus",
    "run_seed",
    "subset_runs",
    "worst_score",
]


def run_seed(task: str, optimizer: str, run_index: int, global_seed: int, condition: str = "") -> int:
    """Per-run seed; any cell can be re-run in isolation."""
    return stable_seed(task, optimizer, condition, run_index, global_seed)


# =============================================================================
# TRAJECTORY STORE
# =============================================================================

class TrajectoryStore:
    """Directory of `<task>__<optimizer>__<condition>.jsonl` files."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def path_for(self, task: str, optimizer: str, condition: str) -> Path:
        return self.root / f"{slugify(task)}__{slugify(optimizer)}__{slugify(condition)}.jsonl"

    def append(self, trajectory: Trajectory) -> None:
        """Append one run as a single line; the write is flushed and synced."""
        trajectory.check()
        path = self.path_for(trajectory.task, trajectory.optimizer, trajectory.condition)
        path.parent.mkdir(parents=True, exist_ok=True)
        line = json.dumps(trajectory.to_dict(), separators=(",", ":")) + "\n"
        with path.open("a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())

    def read_file(self, path: Path, lenient: bool = False) -> list[Trajectory]:
        trajectories = []
        with path.open(encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    trajectories.append(Trajectory.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    if not lenient:
                        raise CorruptRecord(str(path), line_number, f"{type(e).__name__}: {e}") from e
                    logger.warning("Skipping corrupt record %s:%d (%s)", path, line_number, e)
        return trajectories

    def load(self, task: str, optimizer: str, condition: str, lenient: bool = False) -> list[Trajectory]:
        path = self.path_for(task, optimizer, condition)
        if not path.exists():
            return []
        found = self.read_file(path, lenient)
        found = [t for t in found if (t.task, t.optimizer, t.condition) == (task, optimizer, condition)]
        return sorted(found, key=lambda t: t.run_index)

    def completed_runs(self, task: str, optimizer: str, condition: str) -> set[int]:
        return {t.run_index for t in self.load(task, optimizer, condition)}

    def files(self) -> list[Path]:
        if not self.root.exists():
            return []
        return sorted(self.root.glob("*.jsonl"))


def load_corpus(
    store: TrajectoryStore,
    task: str | None = None,
    optimizer: str | None = None,
    condition: str | None = None,
    lenient: bool = False,
) -> list[Trajectory]:
    """Trajectories matching the filters, ordered by (task, optimizer, condition, run).

    Raises:
        CorruptRecord: a malformed line, unless lenient
    """
    trajectories = []
    for path in store.files():
        for t in store.read_file(path, lenient):
            if task is not None and t.task != task:
                continue
            if optimizer is not None and t.optimizer != optimizer:
                continue
            if condition is not None and t.condition != condition:
                continue
            trajectories.append(t)
    return sorted(trajectories, key=lambda t: t.key)


def subset_runs(trajectories: list[Trajectory], optimizer: str, n: int | None) -> list[Trajectory]:
    """Keep only the first n runs of one optimizer (matched-baseline subsetting)."""
    if n is None:
        return trajectories
    return [t for t in trajectories if t.optimizer != optimizer or t.run_index < n]


# =============================================================================
# PLAN
# =============================================================================

@dataclass
class OptimizerSpec:
    """One optimizer column of the run matrix.

    `name` labels trajectories (e.g. an agent's model name); `kind` selects the
    implementation. Replay reads its sequences from `source_store`, matched by
    task, condition and run index, taking the `source_optimizer` cell.
    """

    name: str
    kind: str
    transport_factory: Callable[[str], Transport] | None = None
    agent_settings: dict[str, Any] = field(default_factory=dict)
    source_store: TrajectoryStore | None = None
    source_optimizer: str | None = None

    @property
    def uses_conditions(self) -> bool:
        return self.kind in ("agent", "replay")


@dataclass
class RunPlan:
    tasks: list[Task]
    optimizers: list[OptimizerSpec]
    conditions: list[str] = field(default_factory=lambda: list(config.CONDITIONS))
    runs_per_cell: int = 4
    iters: int = 30
    baseline_runs: int = 200
    global_seed: int = 0
    workers: int = 1
    gp_config: GpUcbConfig = field(default_factory=GpUcbConfig)

    def __post_init__(self) -> None:
        if self.runs_per_cell < 1:
            raise ConfigError("runs_per_cell must be >= 1")
        if self.iters < 1:
            raise ConfigError("iters must be >= 1")
        if self.baseline_runs < 1:
            raise ConfigError("baseline_runs must be >= 1")
        unknown = [c for c in self.conditions if c not in config.CONDITIONS]
        if unknown:
            raise ConfigError(f"Unknown conditions: {', '.join(unknown)}")
        for spec in self.optimizers:
            if spec.kind not in config.OPTIMIZER_KINDS:
                raise ConfigError(f"Unknown optimizer kind {spec.kind!r}")

    def cells(self) -> list[tuple[Task, OptimizerSpec, str, int]]:
        """(task, optimizer, condition, run count) for every cell, in plan order."""
        cells = []
        for task in self.tasks:
            for spec in self.optimizers:
                if spec.uses_conditions:
                    for condition in self.conditions:
                        cells.append((task, spec, condition, self.runs_per_cell))
                elif spec.kind == "gp_ucb":
                    cells.append((task, spec, config.BASELINE_CONDITION, task.baseline_runs(self.baseline_runs)))
                else:
                    cells.append((task, spec, config.BASELINE_CONDITION, self.runs_per_cell))
        return cells


@dataclass
class CorpusSummary:
    cells: int = 0
    cells_skipped: int = 0
    runs_new: int = 0
    runs_total: int = 0
    steps: int = 0
    fallback_steps: int = 0

    def add(self, other: "CorpusSummary") -> None:
        self.cells += other.cells
        self.cells_skipped += other.cells_skipped
        self.runs_new += other.runs_new
        self.runs_total += other.runs_total
        self.steps += other.steps
        self.fallback_steps += other.fallback_steps


def _replay_designs(spec: OptimizerSpec, task: Task, condition: str, run_index: int, iters: int):
    if spec.source_store is None or spec.source_optimizer is None:
        raise ConfigError(f"replay optimizer {spec.name!r} needs a source store and source optimizer")
    runs = spec.source_store.load(task.name, spec.source_optimizer, condition)
    match = [t for t in runs if t.run_index == run_index]
    if not match:
        raise ReplayExhausted(
            f"No stored run {run_index} for {task.name}/{spec.source_optimizer}/{condition}"
        )
    designs = [None if s.fallback else s.design for s in match[0].steps]
    if len(designs) < iters:
        raise ReplayExhausted(f"Stored run has {len(designs)} steps, need {iters}")
    return designs


def _run_cell(
    plan: RunPlan,
    store: TrajectoryStore,
    task: Task,
    spec: OptimizerSpec,
    condition: str,
    runs: int,
) -> CorpusSummary:
    summary = CorpusSummary(cells=1)
    done = store.completed_runs(task.name, spec.name, condition)
    pending = [r for r in range(runs) if r not in done]
    if not pending:
        logger.info("Skipping %s / %s / %s: %d runs already stored", task.name, spec.name, condition, runs)
        summary.cells_skipped = 1
        summary.runs_total = len(done)
        return summary

    logger.info("Running %s / %s / %s: %d of %d runs", task.name, spec.name, condition, len(pending), runs)
    for run_index in pending:
        seed = run_seed(task.name, spec.name, run_index, plan.global_seed, condition)
        agent = None
        replay = None
        if spec.kind == "agent":
            factory = spec.transport_factory or (lambda c: make_transport(spec.agent_settings, c))
            try:
                transport = factory(condition)
            except TransportFailure as e:
                logger.warning("%s run %d: agent transport unavailable (%s); every step falls back",
                               task.name, run_index, e)
                transport = UnavailableTransport(str(e))
            agent = AgentClient(
                task,
                transport,
                condition,
                plan.iters,
                max_retries=spec.agent_settings.get("max_retries", config.AGENT_MAX_RETRIES),
            )
        elif spec.kind == "replay":
            replay = _replay_designs(spec, task, condition, run_index, plan.iters)

        try:
            trajectory = run_optimizer(
                spec.kind,
                task,
                plan.iters,
                seed,
                gp_config=plan.gp_config,
                agent=agent,
                replay_designs=replay,
                condition=condition,
                run_index=run_index,
                optimizer_name=spec.name,
            )
        finally:
            if agent is not None:
                agent.close()

        store.append(trajectory)
        summary.runs_new += 1
        summary.steps += len(trajectory)
        summary.fallback_steps += trajectory.fallback_steps

    summary.runs_total = runs
    logger.info("Finished %s / %s / %s", task.name, spec.name, condition)
    return summary


def execute_plan(plan: RunPlan, store: TrajectoryStore) -> CorpusSummary:
    """Run every missing (task, optimizer, condition, run) of the plan.

    Agent failures never propagate: they become fallback steps.
    """
    summary = CorpusSummary()
    cells = plan.cells()
    if plan.workers <= 1:
        for task, spec, condition, runs in cells:
            summary.add(_run_cell(plan, store, task, spec, condition, runs))
        return summary

    with ThreadPoolExecutor(max_workers=plan.workers) as pool:
        futures = [
            pool.submit(_run_cell, plan, store, task, spec, condition, runs)
            for task, spec, condition, runs in cells
        ]
        for future in futures:
            summary.add(future.result())
    return summary
