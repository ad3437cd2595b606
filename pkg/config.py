"""Configuration settings for the Design Loop Bench harness."""

import copy
import os
from pathlib import Path
from typing import Any

import yaml

# Base directory (project root)
BASE_DIR = Path(__file__).parent

# API Configuration
AGENT_API_KEY_ENV = "HARNESS_AGENT_API_KEY"
ANTHROPIC_API_KEY = os.environ.get("ANTHROPIC_API_KEY", "")
DEFAULT_MODEL = "claude-sonnet-4-20250514"
MAX_TOKENS = 2048

# Directory paths
AGENTS_DIR = BASE_DIR / "agents"
FIXTURES_DIR = BASE_DIR / "fixtures"
DEFAULT_STORE_DIR = Path("runs")
DEFAULT_REPORT_DIR = Path("reports")
SETTINGS_FILE = Path("harness.yaml")

# File names inside a task directory
MANIFEST_FILE = "task.yaml"
ORACLE_FORMAT = "design-loop-oracle/1"

# Prompt conditions (agent runs only)
CONDITIONS = ["domain_aware", "domain_agnostic"]
BASELINE_CONDITION = "none"

# Optimizer kinds
OPTIMIZER_KINDS = ["gp_ucb", "random", "replay", "agent"]

# Emitted tables use this many significant digits
FLOAT_FORMAT = "%.6g"

# Masking alphabet for categorical options
OPTION_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"

# Default encoding value for an absent numeric field (scaled space)
MISSING_NUMERIC_FILL = 0.5

# Oracle families in tie-break order, each with its fixed hyperparameter grid
ORACLE_FAMILIES = ["ridge", "random_forest", "gradient_boosting"]

ORACLE_GRID = {
    "ridge": [
        {"alpha": 0.01},
        {"alpha": 0.1},
        {"alpha": 1.0},
        {"alpha": 10.0},
    ],
    "random_forest": [
        {"n_estimators": 200, "max_features": "third", "bootstrap": True, "min_samples_leaf": 1},
    ],
    "gradient_boosting": [
        {"n_estimators": 200, "max_depth": 3, "learning_rate": 0.1},
    ],
}

# Samples drawn when caching a task's empirical optimum
OPTIMUM_SAMPLES = 100_000
OPTIMUM_SEED = 0

# Agent retry policy (retries after the first attempt)
AGENT_MAX_RETRIES = 2
AGENT_TIMEOUT_SECONDS = 120.0

# Reply fields that annotate a proposal without being parameters
AGENT_ANNOTATION_FIELDS = ("hypothesis_name", "rationale")

# GRPO group size
GRPO_GROUP_SIZE = 8

# Default settings; a harness.yaml file and CLI flags override these
DEFAULT_SETTINGS: dict[str, Any] = {
    "global_seed": 0,
    "workers": 1,
    "iters": 30,
    "runs_per_cell": 4,
    "baseline_runs": 200,
    "baseline_runs_used": None,
    "horizons": [5, 10, 15, 20, 25, 30],
    "epsilon": 0.01,
    "optimum_fraction": 0.99,
    "convergence_tolerance": 0.01,
    "tie_tolerance": 1e-9,
    "bootstrap": {
        "B": 1000,
        "seed": 0,
    },
    "audit": {
        "alignment_min": 0.95,
        "range_gap_min": 0.10,
        "sigma_gap_min": 0.5,
        "alignment_sweep": [0.90, 0.95, 0.99],
        "grouping": "best",
    },
    "gp_ucb": {
        "beta": 2.0,
        "lengthscale": 1.0,
        "signal_variance": 1.0,
        "noise_jitter": 1e-6,
        "candidates_per_step": 100,
        "seed_points": 1,
    },
    "agent": {
        "name": "agent",
        "transport": "subprocess",
        "command": None,
        "url": None,
        "model": DEFAULT_MODEL,
        "max_retries": AGENT_MAX_RETRIES,
    },
    "store_dir": str(DEFAULT_STORE_DIR),
    "report_dir": str(DEFAULT_REPORT_DIR),
}


def _merge(base: dict[str, Any], updates: dict[str, Any], path: str = "") -> dict[str, Any]:
    """Deep-merge updates into a copy of base, rejecting unknown keys."""
    from src.errors import ConfigError

    merged = copy.deepcopy(base)
    for key, value in updates.items():
        if key not in base:
            raise ConfigError(f"Unknown setting: {path}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            merged[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def load_settings(
    path: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Load harness settings.

    Args:
        path: Optional YAML settings file (defaults to harness.yaml if it exists)
        overrides: Flag values; None entries are ignored

    Returns:
        Settings dictionary with precedence flag > file > default.
    """
    from src.errors import ConfigError

    settings = copy.deepcopy(DEFAULT_SETTINGS)

    settings_path = path or SETTINGS_FILE
    if settings_path.exists():
        content = settings_path.read_text(encoding="utf-8")
        try:
            loaded = yaml.safe_load(content) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Settings file {settings_path} is not valid YAML: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Settings file {settings_path} must be a mapping")
        settings = _merge(settings, loaded)
    elif path is not None:
        raise ConfigError(f"Settings file not found: {path}")

    if overrides:
        flat = {k: v for k, v in overrides.items() if v is not None}
        settings = _merge(settings, flat)

    return settings
