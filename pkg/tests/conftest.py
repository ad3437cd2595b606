"""Shared fixtures for the harness tests."""

import shutil

import numpy as np
import pytest

import config
from src.dataset import Dataset
from src.space import ParameterSpace, ParameterSpec
from src.tasks import Task


@pytest.fixture
def mixed_space() -> ParameterSpace:
    return ParameterSpace(
        params=(
            ParameterSpec(name="temperature", kind="numeric", lower=20.0, upper=80.0, unit="C"),
            ParameterSpec(name="solvent", kind="categorical", options=("water", "ethanol", "dmso")),
            ParameterSpec(name="time", kind="numeric", lower=0.0, upper=10.0),
        ),
        name="mixed",
    )


@pytest.fixture
def quadratic_task(mixed_space) -> Task:
    """Peak at temperature 60, ethanol, time 5."""

    def score(d):
        t = d.get("temperature", 50.0)
        h = d.get("time", 5.0)
        bonus = {"water": 0.0, "ethanol": 2.0, "dmso": 1.0}.get(d.get("solvent"), 0.0)
        return 10.0 - ((t - 60.0) / 10.0) ** 2 - (h - 5.0) ** 2 / 4.0 + bonus

    rows = [
        ({"temperature": 30.0, "solvent": "water", "time": 1.0}, 1.0),
        ({"temperature": 50.0, "solvent": "ethanol", "time": 4.0}, 9.0),
        ({"temperature": 70.0, "solvent": "dmso", "time": 8.0}, 5.0),
    ]
    dataset = Dataset.from_rows(mixed_space, rows, target_name="yield")
    return Task.synthetic("quadratic", mixed_space, score, dataset=dataset)


@pytest.fixture
def fixture_root(tmp_path):
    """Writable copy of the fixture task corpus."""
    root = tmp_path / "tasks"
    for name in ("linear", "catstep", "divergent"):
        shutil.copytree(config.FIXTURES_DIR / name, root / name)
    shutil.copy(config.FIXTURES_DIR / "harness.yaml", tmp_path / "harness.yaml")
    return root


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
