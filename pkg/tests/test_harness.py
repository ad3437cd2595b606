"""End-to-end tests for the command-line harness."""

import shlex
import sys

import pandas as pd
import pytest
import yaml

from harness import execute_command

AGENT_SCRIPT = """\
import json
import sys

offset = int(sys.argv[1])
for line in sys.stdin:
    request = json.loads(line)
    step = request["iteration"] + offset
    design = {}
    for param in request["space"]:
        if param["kind"] == "numeric":
            design[param["name"]] = param["lower"] + (param["upper"] - param["lower"]) * (step % 5) / 4
        else:
            design[param["name"]] = param["options"][step % len(param["options"])]
    print(json.dumps(design), flush=True)
"""


@pytest.fixture
def harness(fixture_root):
    settings = fixture_root.parent / "harness.yaml"

    def invoke(*args) -> int:
        return execute_command(["--config", str(settings), "-q", *[str(a) for a in args]])

    return invoke


@pytest.fixture
def agent_command(tmp_path):
    script = tmp_path / "sweep_agent.py"
    script.write_text(AGENT_SCRIPT, encoding="utf-8")
    return lambda offset: shlex.join([sys.executable, str(script), str(offset)])


def run_pipeline(harness, agent_command, root, store, reports):
    assert harness("baseline", "--tasks", root, "--store", store) == 0
    assert harness("run", "--tasks", root, "--store", store,
                   "--command", agent_command(0), "--agent-name", "sweeper") == 0
    assert harness("run", "--tasks", root, "--store", store,
                   "--command", agent_command(2), "--agent-name", "stepper") == 0
    assert harness("metrics", "--tasks", root, "--store", store, "--out", reports / "metrics.csv") == 0
    assert harness("analyze", "--tasks", root, "--store", store, "--report-dir", reports) == 0
    assert harness("audit", "--tasks", root, "--store", store, "--report-dir", reports) == 0
    assert harness("report", "--tasks", root, "--store", store, "--report-dir", reports) == 0


@pytest.mark.slow
def test_full_pipeline_is_reproducible(harness, agent_command, fixture_root, tmp_path):
    assert harness("train-oracle", "--task", fixture_root, "--refresh-cache") == 0
    for name in ("linear", "catstep", "divergent"):
        assert (fixture_root / name / "oracle.json").exists()
        assert "cache" in yaml.safe_load((fixture_root / name / "task.yaml").read_text())

    first, second = tmp_path / "reports-1", tmp_path / "reports-2"
    run_pipeline(harness, agent_command, fixture_root, tmp_path / "runs-1", first)
    run_pipeline(harness, agent_command, fixture_root, tmp_path / "runs-2", second)

    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in ("analysis.md", "audit.md", "metrics.csv", "pass_rate.csv", "disagreement.csv",
                 "audit_divergent.yaml", "bsf_curves.csv", "fraction_of_optimum.csv"):
        assert name in names
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    table = pd.read_csv(first / "metrics.csv")
    assert set(table["optimizer"]) == {"gp_ucb", "random", "sweeper", "stepper"}
    assert set(table["condition"]) == {"none", "domain_aware", "domain_agnostic"}
    assert set(table["horizon"][table["metric"] == "bsf_auc"]) == {5, 10}

    audit = yaml.safe_load((first / "audit_divergent.yaml").read_text())
    assert audit["task"] == "divergent"
    assert audit["key_categorical"] == "reactor"


def test_resume_adds_nothing(harness, fixture_root, tmp_path):
    linear = fixture_root / "linear"
    assert harness("train-oracle", "--task", linear, "--families", "ridge") == 0
    store = tmp_path / "runs"
    assert harness("baseline", "--tasks", linear, "--store", store, "--no-random") == 0
    before = {str(p.relative_to(store)): p.read_bytes() for p in store.rglob("*") if p.is_file()}
    assert harness("baseline", "--tasks", linear, "--store", store, "--no-random") == 0
    after = {str(p.relative_to(store)): p.read_bytes() for p in store.rglob("*") if p.is_file()}
    assert before == after


def test_metrics_on_empty_store(harness, fixture_root, tmp_path):
    linear = fixture_root / "linear"
    assert harness("train-oracle", "--task", linear, "--families", "ridge") == 0
    out = tmp_path / "metrics.csv"
    assert harness("metrics", "--tasks", linear, "--store", tmp_path / "empty", "--out", out) == 0
    assert out.read_text().strip() == "task,optimizer,condition,run_index,metric,horizon,value"


def test_unknown_subcommand(harness):
    assert harness("frobnicate") == 1


def test_unknown_setting(fixture_root, tmp_path):
    settings = tmp_path / "bad.yaml"
    settings.write_text("iterations: 5\n")
    code = execute_command(["--config", str(settings), "-q", "baseline", "--tasks", str(fixture_root)])
    assert code == 1


def test_untrained_task_is_a_data_error(harness, fixture_root, tmp_path):
    assert harness("analyze", "--tasks", fixture_root / "linear", "--store", tmp_path / "runs") == 2


def test_replay_needs_source_optimizer(harness, fixture_root, tmp_path):
    linear = fixture_root / "linear"
    assert harness("run", "--tasks", linear, "--store", tmp_path / "runs", "--replay-from", linear) == 1
