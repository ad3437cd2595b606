"""Trajectory records shared by the optimizers, the runner and the analyses."""

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from src.space import Design


@dataclass
class Step:
    """One iteration: what was proposed, what was scored, and how."""

    raw: dict[str, Any]
    design: Design
    score: float
    fallback: bool = False
    retries_used: int = 0
    corrections: list[str] = field(default_factory=list)
    annotations: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "raw": self.raw,
            "design": self.design,
            "score": self.score,
            "fallback": self.fallback,
            "retries_used": self.retries_used,
        }
        if self.corrections:
            data["corrections"] = self.corrections
        if self.annotations:
            data["annotations"] = self.annotations
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Step":
        return cls(
            raw=dict(data["raw"]),
            design=dict(data["design"]),
            score=float(data["score"]),
            fallback=bool(data.get("fallback", False)),
            retries_used=int(data.get("retries_used", 0)),
            corrections=list(data.get("corrections", [])),
            annotations=dict(data.get("annotations", {})),
        )


@dataclass
class Trajectory:
    """One run of one optimizer on one task."""

    task: str
    optimizer: str
    condition: str
    run_index: int
    seed: int
    objective: str = "maximize"
    steps: list[Step] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def maximize(self) -> bool:
        return self.objective == "maximize"

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.task, self.optimizer, self.condition, self.run_index)

    @property
    def scores(self) -> np.ndarray:
        return np.asarray([s.score for s in self.steps], dtype=float)

    @property
    def designs(self) -> list[Design]:
        return [s.design for s in self.steps]

    @property
    def fallback_steps(self) -> int:
        return sum(1 for s in self.steps if s.fallback)

    def check(self) -> None:
        """Raise ValueError if any score is not finite."""
        for i, step in enumerate(self.steps, start=1):
            if not math.isfinite(step.score):
                raise ValueError(f"{self.key}: step {i} has non-finite score {step.score!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "optimizer": self.optimizer,
            "condition": self.condition,
            "run_index": self.run_index,
            "seed": self.seed,
            "objective": self.objective,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Trajectory":
        return cls(
            task=str(data["task"]),
            optimizer=str(data["optimizer"]),
            condition=str(data["condition"]),
            run_index=int(data["run_index"]),
            seed=int(data["seed"]),
            objective=str(data.get("objective", "maximize")),
            steps=[Step.from_dict(s) for s in data["steps"]],
        )

    @classmethod
    def from_scores(
        cls,
        scores: list[float],
        task: str = "task",
        optimizer: str = "replay",
        condition: str = "none",
        run_index: int = 0,
        objective: str = "maximize",
        designs: list[Design] | None = None,
    ) -> "Trajectory":
        """Build a trajectory from bare scores (and optionally designs)."""
        designs = designs or [{} for _ in scores]
        steps = [Step(raw=dict(d), design=dict(d), score=float(s)) for d, s in zip(designs, scores)]
        return cls(
            task=task,
            optimizer=optimizer,
            condition=condition,
            run_index=run_index,
            seed=0,
            objective=objective,
            steps=steps,
        )
