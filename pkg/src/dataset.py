"""Tabular (design, target) datasets behind each task."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from src.errors import InvalidValue, TaskLoadError
from src.space import Design, ParameterSpace, is_missing

logger = logging.getLogger(__name__)

MAXIMIZE = "maximize"
MINIMIZE = "minimize"
OBJECTIVES = (MAXIMIZE, MINIMIZE)


@dataclass
class Dataset:
    """Published-style rows of (design, target) for one task.

    `frame` holds one column per parameter plus the target column. Numeric
    columns are float with NaN for missing cells; categorical columns hold
    option strings or None.
    """

    space: ParameterSpace
    frame: pd.DataFrame
    target_name: str
    objective: str = MAXIMIZE

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise InvalidValue(f"Objective must be one of {OBJECTIVES}, got {self.objective!r}")
        targets = self.frame[self.target_name].to_numpy(dtype=float)
        if not np.all(np.isfinite(targets)):
            raise InvalidValue(f"Target column {self.target_name!r} has missing or non-finite values")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def maximize(self) -> bool:
        return self.objective == MAXIMIZE

    @property
    def targets(self) -> np.ndarray:
        return self.frame[self.target_name].to_numpy(dtype=float)

    def column(self, name: str) -> pd.Series:
        return self.frame[name]

    def observed(self, name: str) -> list[Any]:
        """Non-missing values of a column in row order."""
        return [v for v in self.frame[name].tolist() if not is_missing(v)]

    def row_design(self, index: int) -> Design:
        row = self.frame.iloc[index]
        return {
            spec.name: (float(row[spec.name]) if spec.is_numeric else row[spec.name])
            for spec in self.space
            if not is_missing(row[spec.name])
        }

    def designs(self) -> list[Design]:
        return [self.row_design(i) for i in range(len(self))]

    @classmethod
    def from_rows(
        cls,
        space: ParameterSpace,
        rows: list[tuple[dict[str, Any], float]],
        target_name: str = "y",
        objective: str = MAXIMIZE,
    ) -> "Dataset":
        """Build a dataset from in-memory (design, target) pairs."""
        records = []
        for design, target in rows:
            record: dict[str, Any] = {}
            for spec in space:
                value = design.get(spec.name)
                if spec.is_numeric:
                    record[spec.name] = math.nan if is_missing(value) else float(value)
                else:
                    record[spec.name] = None if is_missing(value) else value
            record[target_name] = float(target)
            records.append(record)
        frame = pd.DataFrame.from_records(records, columns=space.names + [target_name])
        return cls(space=space, frame=frame, target_name=target_name, objective=objective)


def load_dataset(
    path: Path,
    space: ParameterSpace,
    target_name: str,
    objective: str = MAXIMIZE,
) -> Dataset:
    """Read a dataset CSV: header row, one column per parameter plus the target.

    Empty cells are missing values. Extra columns are ignored.

    Raises:
        TaskLoadError: file unreadable, a column absent, or a cell unparsable
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise TaskLoadError(f"Cannot read dataset {path}: {e}") from e

    missing = [c for c in space.names + [target_name] if c not in raw.columns]
    if missing:
        raise TaskLoadError(f"Dataset {path} lacks columns: {', '.join(missing)}")

    frame = pd.DataFrame(index=raw.index)
    for spec in space:
        column = raw[spec.name]
        if spec.is_numeric:
            try:
                frame[spec.name] = pd.to_numeric(column, errors="raise").astype(float)
            except (ValueError, TypeError) as e:
                raise TaskLoadError(f"Dataset {path}: column {spec.name!r} is not numeric ({e})") from e
        else:
            values = column.map(lambda v: None if is_missing(v) else str(v).strip())
            unknown = sorted({v for v in values if not is_missing(v) and v not in spec.options})
            if unknown:
                raise TaskLoadError(
                    f"Dataset {path}: column {spec.name!r} has undeclared options: {', '.join(unknown)}"
                )
            frame[spec.name] = values.astype(object)

    try:
        frame[target_name] = pd.to_numeric(raw[target_name], errors="raise").astype(float)
    except (ValueError, TypeError) as e:
        raise TaskLoadError(f"Dataset {path}: target {target_name!r} is not numeric ({e})") from e

    try:
        dataset = Dataset(space=space, frame=frame, target_name=target_name, objective=objective)
    except InvalidValue as e:
        raise TaskLoadError(f"Dataset {path}: {e}") from e

    logger.debug("Loaded %d rows from %s", len(dataset), path)
    return dataset
