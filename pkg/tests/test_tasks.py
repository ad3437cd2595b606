"""Tests for task manifests, task bundles and harness settings."""

import pytest
import yaml

import config
from src.dataset import Dataset, load_dataset
from src.errors import ConfigError, ManifestInvalid, TaskLoadError
from src.oracle import fit_oracle, save_oracle
from src.tasks import (
    Task,
    compute_task_range,
    discover_tasks,
    load_manifest,
    load_task,
    task_range,
    worst_score,
)


def edit_manifest(task_dir, **changes):
    path = task_dir / config.MANIFEST_FILE
    raw = yaml.safe_load(path.read_text())
    for key, value in changes.items():
        if value is None:
            raw.pop(key, None)
        else:
            raw[key] = value
    path.write_text(yaml.safe_dump(raw, sort_keys=False))


def train(task_dir):
    manifest = load_manifest(task_dir, require_oracle=False)
    data = load_dataset(manifest.dataset_path, manifest.space, manifest.target, manifest.objective)
    save_oracle(fit_oracle(data, seed=0), manifest.oracle_path)
    return manifest


class TestManifest:
    def test_valid_fixture(self, fixture_root):
        manifest = load_manifest(fixture_root / "divergent", require_oracle=False)
        assert manifest.name == "divergent"
        assert manifest.objective == "maximize"
        assert manifest.key_column == "reactor"
        assert manifest.space.names == ["light", "reactor"]
        assert manifest.dataset_path == fixture_root / "divergent" / "dataset.csv"

    def test_oracle_required_by_default(self, fixture_root):
        with pytest.raises(ManifestInvalid, match="train-oracle"):
            load_manifest(fixture_root / "linear")

    def test_missing_dataset(self, fixture_root):
        (fixture_root / "linear" / "dataset.csv").unlink()
        with pytest.raises(ManifestInvalid) as info:
            load_manifest(fixture_root / "linear", require_oracle=False)
        assert any(p.startswith("dataset:") for p in info.value.problems)

    def test_british_spelling_is_rejected(self, fixture_root):
        edit_manifest(fixture_root / "linear", objective="maximise")
        with pytest.raises(ManifestInvalid, match="objective"):
            load_manifest(fixture_root / "linear", require_oracle=False)

    def test_every_problem_is_reported(self, fixture_root):
        edit_manifest(fixture_root / "linear", objective="up", target=None, colour="red")
        with pytest.raises(ManifestInvalid) as info:
            load_manifest(fixture_root / "linear", require_oracle=False)
        fields = {p.split(":")[0] for p in info.value.problems}
        assert {"objective", "target", "colour"} <= fields

    def test_key_column_must_be_categorical(self, fixture_root):
        edit_manifest(fixture_root / "divergent", audit={"key_column": "light"})
        with pytest.raises(ManifestInvalid, match="key_column"):
            load_manifest(fixture_root / "divergent", require_oracle=False)

    def test_invalid_yaml(self, fixture_root):
        (fixture_root / "linear" / config.MANIFEST_FILE).write_text("name: [unclosed\n")
        with pytest.raises(ManifestInvalid, match="invalid YAML"):
            load_manifest(fixture_root / "linear", require_oracle=False)

    def test_discover(self, fixture_root):
        assert [p.name for p in discover_tasks(fixture_root)] == ["catstep", "divergent", "linear"]
        assert discover_tasks(fixture_root / "linear") == [fixture_root / "linear"]


class TestTask:
    def test_oracle_backed_scorer(self, fixture_root):
        train(fixture_root / "linear")
        task = load_task(fixture_root / "linear")
        assert task.maximize
        assert task.score({"loading": 4.0, "buffer": "tris"}) == pytest.approx(9.0, abs=0.05)

    def test_refresh_cache_writes_range(self, fixture_root):
        train(fixture_root / "linear")
        task = load_task(fixture_root / "linear", refresh_cache=True)
        optimum, worst = task_range(task)
        assert optimum == pytest.approx(21.0, abs=1.0)
        assert worst == pytest.approx(1.0, abs=1.0)
        cache = yaml.safe_load((fixture_root / "linear" / config.MANIFEST_FILE).read_text())["cache"]
        assert cache["optimum"] == optimum
        assert cache["samples"] == config.OPTIMUM_SAMPLES
        # A fresh load reads the cache back
        assert load_manifest(fixture_root / "linear").cached_optimum == optimum

    def test_dataset_optimum_source(self, fixture_root):
        edit_manifest(fixture_root / "linear", optimum_source="dataset")
        train(fixture_root / "linear")
        task = load_task(fixture_root / "linear")
        assert compute_task_range(task) == (pytest.approx(19.999), pytest.approx(1.001))

    def test_baseline_runs_override(self, fixture_root):
        edit_manifest(fixture_root / "linear", baseline_runs_override=3)
        train(fixture_root / "linear")
        task = load_task(fixture_root / "linear")
        assert task.baseline_runs(200) == 3

    def test_worst_score_follows_direction(self, quadratic_task):
        assert worst_score(quadratic_task) == 1.0
        rows = [(d, float(t)) for d, t in zip(quadratic_task.dataset.designs(), quadratic_task.dataset.targets)]
        dataset = Dataset.from_rows(quadratic_task.space, rows, target_name="yield", objective="minimize")
        flipped = Task.synthetic("min", quadratic_task.space, quadratic_task.scorer, objective="minimize", dataset=dataset)
        assert worst_score(flipped) == 9.0

    def test_worst_score_needs_a_dataset(self, mixed_space):
        bare = Task.synthetic("bare", mixed_space, lambda d: 0.0)
        with pytest.raises(TaskLoadError):
            worst_score(bare)
        assert worst_score(Task.synthetic("w", mixed_space, lambda d: 0.0, worst=-3.0)) == -3.0


class TestSettings:
    def test_defaults(self, tmp_path):
        path = tmp_path / "harness.yaml"
        path.write_text("{}\n")
        settings = config.load_settings(path)
        assert settings["iters"] == 30
        assert settings["gp_ucb"]["beta"] == 2.0

    def test_precedence(self, tmp_path):
        path = tmp_path / "harness.yaml"
        path.write_text("iters: 12\nruns_per_cell: 3\ngp_ucb:\n  beta: 0.5\n")
        settings = config.load_settings(path, overrides={"iters": 20, "runs_per_cell": None})
        assert settings["iters"] == 20
        assert settings["runs_per_cell"] == 3
        assert settings["gp_ucb"]["beta"] == 0.5
        assert settings["gp_ucb"]["lengthscale"] == 1.0

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "harness.yaml"
        path.write_text("gp_ucb:\n  kappa: 3\n")
        with pytest.raises(ConfigError, match="gp_ucb.kappa"):
            config.load_settings(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            config.load_settings(tmp_path / "absent.yaml")
