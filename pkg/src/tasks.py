"""Task manifests, task loading and the cached task optimum."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

import config
from src.dataset import MAXIMIZE, OBJECTIVES, Dataset, load_dataset
from src.errors import DataError, ManifestInvalid, TaskLoadError
from src.oracle import OracleModel, load_oracle, predict
from src.space import Design, ParameterSpace

logger = logging.getLogger(__name__)

MANIFEST_KEYS = {
    "name",
    "description",
    "objective",
    "target",
    "dataset",
    "oracle",
    "space",
    "audit",
    "baseline_runs_override",
    "optimum_source",
    "cache",
}
OPTIMUM_SOURCES = ("oracle", "dataset")


@dataclass
class TaskManifest:
    """Parsed task.yaml with resolved asset paths."""

    name: str
    objective: str
    target: str
    space: ParameterSpace
    dataset_path: Path
    oracle_path: Path
    path: Path
    description: str = ""
    key_column: str | None = None
    baseline_runs_override: int | None = None
    optimum_source: str = "oracle"
    cached_optimum: float | None = None
    cached_worst: float | None = None

    @property
    def directory(self) -> Path:
        return self.path.parent


def manifest_path(path: Path) -> Path:
    path = Path(path)
    return path / config.MANIFEST_FILE if path.is_dir() else path


def _parse_manifest(path: Path, raw: Any, require_oracle: bool) -> TaskManifest:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ManifestInvalid(str(path), ["document must be a mapping"])

    for key in sorted(set(raw) - MANIFEST_KEYS):
        problems.append(f"{key}: unknown field")

    name = raw.get("name")
    if not isinstance(name, str) or not name.strip():
        problems.append("name: required non-empty string")

    objective = raw.get("objective")
    if objective not in OBJECTIVES:
        problems.append(f"objective: must be one of {', '.join(OBJECTIVES)}, got {objective!r}")

    target = raw.get("target")
    if not isinstance(target, str) or not target:
        problems.append("target: required column name")

    space = None
    try:
        items = raw.get("space")
        if not isinstance(items, list) or not items:
            problems.append("space: required non-empty list of parameters")
        else:
            space = ParameterSpace.from_list(items, name=str(name))
    except DataError as e:
        problems.append(f"space: {e}")

    directory = path.parent
    dataset_path = oracle_path = None
    if not isinstance(raw.get("dataset"), str):
        problems.append("dataset: required file path")
    else:
        dataset_path = directory / raw["dataset"]
        if not dataset_path.exists():
            problems.append(f"dataset: file not found: {dataset_path}")
    if not isinstance(raw.get("oracle"), str):
        problems.append("oracle: required file path")
    else:
        oracle_path = directory / raw["oracle"]
        if require_oracle and not oracle_path.exists():
            problems.append(f"oracle: file not found: {oracle_path} (run train-oracle)")

    audit = raw.get("audit") or {}
    key_column = None
    if not isinstance(audit, dict):
        problems.append("audit: must be a mapping")
    else:
        unknown = set(audit) - {"key_column"}
        if unknown:
            problems.append(f"audit: unknown fields {', '.join(sorted(unknown))}")
        key_column = audit.get("key_column")
        if key_column is not None and space is not None:
            if key_column not in space or space.get(key_column).is_numeric:
                problems.append(f"audit.key_column: {key_column!r} is not a categorical parameter")

    override = raw.get("baseline_runs_override")
    if override is not None and (not isinstance(override, int) or isinstance(override, bool) or override < 1):
        problems.append("baseline_runs_override: must be a positive integer")

    optimum_source = raw.get("optimum_source", "oracle")
    if optimum_source not in OPTIMUM_SOURCES:
        problems.append(f"optimum_source: must be one of {', '.join(OPTIMUM_SOURCES)}")

    cache = raw.get("cache") or {}
    cached_optimum = cached_worst = None
    if not isinstance(cache, dict):
        problems.append("cache: must be a mapping")
    else:
        try:
            cached_optimum = None if cache.get("optimum") is None else float(cache["optimum"])
            cached_worst = None if cache.get("worst") is None else float(cache["worst"])
        except (TypeError, ValueError):
            problems.append("cache: optimum and worst must be numbers")

    if problems:
        raise ManifestInvalid(str(path), problems)

    return TaskManifest(
        name=name,
        objective=objective,
        target=target,
        space=space,
        dataset_path=dataset_path,
        oracle_path=oracle_path,
        path=path,
        description=str(raw.get("description") or ""),
        key_column=key_column,
        baseline_runs_override=override,
        optimum_source=optimum_source,
        cached_optimum=cached_optimum,
        cached_worst=cached_worst,
    )


def load_manifest(
    path: Path,
    refresh_cache: bool = False,
    require_oracle: bool = True,
) -> TaskManifest:
    """Parse and validate a task manifest and the assets it references.

    Args:
        path: task directory or manifest file
        refresh_cache: recompute the cached task optimum/worst and write them back
        require_oracle: fail when the oracle file does not exist yet

    Raises:
        ManifestInvalid: with one diagnostic per offending field
    """
    path = manifest_path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ManifestInvalid(str(path), [f"cannot read manifest: {e}"]) from e
    except yaml.YAMLError as e:
        raise ManifestInvalid(str(path), [f"invalid YAML: {e}"]) from e

    manifest = _parse_manifest(path, raw, require_oracle)

    # Referenced assets must parse too
    problems = []
    try:
        load_dataset(manifest.dataset_path, manifest.space, manifest.target, manifest.objective)
    except TaskLoadError as e:
        problems.append(f"dataset: {e}")
    if manifest.oracle_path.exists():
        try:
            load_oracle(manifest.oracle_path)
        except TaskLoadError as e:
            problems.append(f"oracle: {e}")
    if problems:
        raise ManifestInvalid(str(path), problems)

    if refresh_cache:
        refresh_task_range(Task.from_manifest(manifest))
    return manifest


# =============================================================================
# TASK BUNDLE
# =============================================================================

@dataclass
class Task:
    """Everything an optimizer run needs: the space, the direction and a scorer."""

    name: str
    space: ParameterSpace
    objective: str
    scorer: Callable[[Design], float]
    dataset: Dataset | None = None
    oracle: OracleModel | None = None
    manifest: TaskManifest | None = None
    worst_override: float | None = None

    @property
    def maximize(self) -> bool:
        return self.objective == MAXIMIZE

    @property
    def description(self) -> str:
        return self.manifest.description if self.manifest else ""

    def score(self, d: Design) -> float:
        return float(self.scorer(d))

    def baseline_runs(self, default: int) -> int:
        if self.manifest and self.manifest.baseline_runs_override:
            return self.manifest.baseline_runs_override
        return default

    @classmethod
    def from_manifest(cls, manifest: TaskManifest) -> "Task":
        dataset = load_dataset(manifest.dataset_path, manifest.space, manifest.target, manifest.objective)
        oracle = load_oracle(manifest.oracle_path)
        space = manifest.space
        return cls(
            name=manifest.name,
            space=space,
            objective=manifest.objective,
            scorer=lambda d: predict(oracle, space, d),
            dataset=dataset,
            oracle=oracle,
            manifest=manifest,
        )

    @classmethod
    def synthetic(
        cls,
        name: str,
        space: ParameterSpace,
        fn: Callable[[Design], float],
        objective: str = MAXIMIZE,
        dataset: Dataset | None = None,
        worst: float | None = None,
    ) -> "Task":
        """A task scored by an arbitrary callable instead of a trained oracle."""
        return cls(
            name=name,
            space=space,
            objective=objective,
            scorer=fn,
            dataset=dataset,
            worst_override=worst,
        )


def load_task(path: Path, refresh_cache: bool = False) -> Task:
    return Task.from_manifest(load_manifest(path, refresh_cache=refresh_cache))


def discover_tasks(root: Path) -> list[Path]:
    """Task directories under root (root itself if it holds a manifest)."""
    root = Path(root)
    if (root / config.MANIFEST_FILE).exists():
        return [root]
    return sorted(p.parent for p in root.glob(f"*/{config.MANIFEST_FILE}"))


# =============================================================================
# TASK OPTIMUM
# =============================================================================

def compute_task_range(
    task: Task,
    samples: int = config.OPTIMUM_SAMPLES,
    seed: int = config.OPTIMUM_SEED,
) -> tuple[float, float]:
    """(optimum, worst) of a task, direction-aware.

    With the default "oracle" source these are the extreme oracle predictions
    over a seeded uniform sample of designs; with "dataset" they are the
    extreme dataset targets.
    """
    source = task.manifest.optimum_source if task.manifest else "oracle"
    if source == "dataset":
        values = task.dataset.targets
    else:
        rng = np.random.default_rng(seed)
        encoded = task.space.sample_encoded(rng, samples)
        if task.oracle is not None:
            values = task.oracle.predict_encoded(encoded)
        else:
            values = np.asarray([task.score(task.space.decode(x)) for x in encoded])
    high, low = float(np.max(values)), float(np.min(values))
    return (high, low) if task.maximize else (low, high)


def task_range(task: Task) -> tuple[float, float]:
    """Cached (optimum, worst), computed on a cache miss."""
    manifest = task.manifest
    if manifest and manifest.cached_optimum is not None and manifest.cached_worst is not None:
        return manifest.cached_optimum, manifest.cached_worst
    logger.warning("No cached optimum for task %s; computing it", task.name)
    return compute_task_range(task)


def refresh_task_range(task: Task) -> tuple[float, float]:
    """Recompute the task optimum/worst and write them into the manifest."""
    optimum, worst = compute_task_range(task)
    manifest = task.manifest
    if manifest is not None:
        raw = yaml.safe_load(manifest.path.read_text(encoding="utf-8"))
        raw["cache"] = {
            "optimum": optimum,
            "worst": worst,
            "samples": config.OPTIMUM_SAMPLES,
            "seed": config.OPTIMUM_SEED,
        }
        manifest.path.write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")
        manifest.cached_optimum = optimum
        manifest.cached_worst = worst
        logger.info("Cached optimum %.6g / worst %.6g for %s", optimum, worst, task.name)
    return optimum, worst


def worst_score(task: Task) -> float:
    """Fallback score: worst dataset target (min when maximizing, max when minimizing)."""
    if task.dataset is None:
        if task.worst_override is None:
            raise TaskLoadError(f"Task {task.name} has no dataset to define a worst score")
        return task.worst_override
    targets = task.dataset.targets
    return float(targets.min() if task.maximize else targets.max())
