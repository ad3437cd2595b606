"""Per-task surrogate oracles.

Families are fitted with scikit-learn and selected by leave-one-out R².
The selected model is exported to plain arrays (ridge coefficients with
scaler statistics, or tree node lists) and served from those arrays, so a
model loaded from its JSON file predicts bit-identically to the in-memory one.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import Ridge
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

import config
from src.dataset import Dataset
from src.errors import DegenerateTarget, NoObservedValues, TaskLoadError, TooFewRows
from src.space import Design, ParameterSpace, encode_design, encode_designs, is_missing
from src.utils import stable_seed

logger = logging.getLogger(__name__)

# Rows routed through the tree ensembles per chunk
PREDICT_CHUNK = 4096


def modal_value(values: list[Any]) -> Any:
    """Most frequent value; ties go to the lexicographically smallest."""
    counts = Counter(values)
    return min(counts, key=lambda v: (-counts[v], str(v)))


# =============================================================================
# TRAINING DATA
# =============================================================================

def feature_statistics(data: Dataset) -> dict[str, dict[str, Any]]:
    """Training mean/min/max per numeric column and modal value per categorical."""
    stats: dict[str, dict[str, Any]] = {}
    for spec in data.space:
        observed = data.observed(spec.name)
        if not observed:
            raise NoObservedValues(f"Column {spec.name!r} has no observed values")
        if spec.is_numeric:
            values = np.asarray(observed, dtype=float)
            stats[spec.name] = {
                "mean": float(values.mean()),
                "min": float(values.min()),
                "max": float(values.max()),
            }
        else:
            stats[spec.name] = {"mode": modal_value(observed)}
    return stats


def training_matrix(data: Dataset) -> tuple[np.ndarray, np.ndarray, dict[str, dict[str, Any]]]:
    """Encode a dataset with missing numerics at the mean and categoricals at the mode."""
    stats = feature_statistics(data)
    filled = []
    for design in data.designs():
        row = dict(design)
        for spec in data.space:
            if is_missing(row.get(spec.name)):
                row[spec.name] = stats[spec.name]["mean" if spec.is_numeric else "mode"]
        filled.append(row)
    return encode_designs(data.space, filled), data.targets, stats


def check_trainable(y: np.ndarray) -> None:
    if len(y) < 3:
        raise TooFewRows(f"Need at least 3 rows to train an oracle, got {len(y)}")
    if np.all(y == y[0]):
        raise DegenerateTarget("All targets are equal; R² is undefined")


# =============================================================================
# FAMILIES
# =============================================================================

def make_estimator(family: str, hyper: dict[str, Any], n_features: int, random_state: int):
    """Build an unfitted scikit-learn estimator for a (family, hyperparameter) pair."""
    if family == "ridge":
        return make_pipeline(StandardScaler(), Ridge(alpha=hyper["alpha"]))
    if family == "random_forest":
        max_features = hyper["max_features"]
        if max_features == "third":
            max_features = max(1, math.ceil(n_features / 3))
        return RandomForestRegressor(
            n_estimators=hyper["n_estimators"],
            max_features=max_features,
            bootstrap=hyper["bootstrap"],
            min_samples_leaf=hyper["min_samples_leaf"],
            random_state=random_state,
            n_jobs=1,
        )
    if family == "gradient_boosting":
        return GradientBoostingRegressor(
            loss="squared_error",
            n_estimators=hyper["n_estimators"],
            max_depth=hyper["max_depth"],
            learning_rate=hyper["learning_rate"],
            random_state=random_state,
        )
    raise ValueError(f"Unknown oracle family: {family!r}")


def estimator_seed(train_seed: int, family: str, hyper: dict[str, Any], fold: int | str) -> int:
    """Seed for one fit; folds are the held-out row index or "all"."""
    key = json.dumps(hyper, sort_keys=True)
    return stable_seed(train_seed, family, key, fold) % (2**32)


def r_squared(y: np.ndarray, predictions: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTarget("All targets are equal; R² is undefined")
    ss_res = float(np.sum((y - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


def loo_predictions(
    X: np.ndarray,
    y: np.ndarray,
    family: str,
    hyper: dict[str, Any],
    seed: int = 0,
) -> np.ndarray:
    n = len(y)
    predictions = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        estimator = make_estimator(family, hyper, X.shape[1], estimator_seed(seed, family, hyper, i))
        estimator.fit(X[keep], y[keep])
        predictions[i] = estimator.predict(X[i:i + 1])[0]
    return predictions


def loo_r2(data: Dataset, family: str, hyper: dict[str, Any], seed: int = 0) -> float:
    """Leave-one-out R² of one (family, hyperparameter) pair.

    Raises:
        TooFewRows: fewer than 3 rows
        DegenerateTarget: all targets equal
    """
    X, y, _ = training_matrix(data)
    check_trainable(y)
    return r_squared(y, loo_predictions(X, y, family, hyper, seed))


# =============================================================================
# EXPORT AND SERVING
# =============================================================================

def export_tree(tree) -> list[list[float]]:
    """Flatten a fitted sklearn tree into [feature, threshold, left, right, value] nodes.

    Leaves carry feature -1 and children -1.
    """
    nodes = []
    for i in range(tree.node_count):
        left = int(tree.children_left[i])
        if left == -1:
            nodes.append([-1, 0.0, -1, -1, float(tree.value[i].ravel()[0])])
        else:
            nodes.append([
                int(tree.feature[i]),
                float(tree.threshold[i]),
                left,
                int(tree.children_right[i]),
                float(tree.value[i].ravel()[0]),
            ])
    return nodes


def export_estimator(family: str, estimator, y: np.ndarray) -> dict[str, Any]:
    if family == "ridge":
        scaler: StandardScaler = estimator[0]
        ridge: Ridge = estimator[-1]
        return {
            "scaler_mean": [float(v) for v in scaler.mean_],
            "scaler_scale": [float(v) for v in scaler.scale_],
            "coef": [float(v) for v in ridge.coef_],
            "intercept": float(ridge.intercept_),
        }
    if family == "random_forest":
        return {"trees": [export_tree(t.tree_) for t in estimator.estimators_]}
    if family == "gradient_boosting":
        return {
            "init": float(np.mean(y)),
            "learning_rate": float(estimator.learning_rate),
            "trees": [export_tree(row[0].tree_) for row in estimator.estimators_],
        }
    raise ValueError(f"Unknown oracle family: {family!r}")


@dataclass(frozen=True)
class TreeEnsemble:
    """Node arrays of several trees stacked end to end."""

    roots: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def from_nodes(cls, trees: list[list[list[float]]]) -> "TreeEnsemble":
        roots, feature, threshold, left, right, value = [], [], [], [], [], []
        offset = 0
        for nodes in trees:
            roots.append(offset)
            for feat, thr, lo, hi, val in nodes:
                feature.append(int(feat))
                threshold.append(float(thr))
                left.append(int(lo) + offset if lo >= 0 else -1)
                right.append(int(hi) + offset if hi >= 0 else -1)
                value.append(float(val))
            offset += len(nodes)
        return cls(
            roots=np.asarray(roots, dtype=np.int64),
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold, dtype=np.float64),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            value=np.asarray(value, dtype=np.float64),
        )

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """(n_samples, n_trees) leaf values; features compared in float32 as sklearn does."""
        X32 = np.asarray(X, dtype=np.float32)
        n = X32.shape[0]
        node = np.tile(self.roots, (n, 1))
        rows = np.arange(n)[:, None]
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            go_left = X32[rows, np.where(internal, feat, 0)] <= self.threshold[node]
            step = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, step, node)
        return self.value[node]


@dataclass(frozen=True)
class OracleModel:
    """A fitted, deterministic regressor over encoded designs."""

    family: str
    hyper: dict[str, Any]
    loo_r2: float
    train_seed: int
    feature_names: list[str]
    feature_stats: dict[str, dict[str, Any]]
    payload: dict[str, Any]
    selection: list[dict[str, Any]] = field(default_factory=list)

    @cached_property
    def _ensemble(self) -> TreeEnsemble:
        return TreeEnsemble.from_nodes(self.payload["trees"])

    def numeric_fill(self, space: ParameterSpace) -> dict[str, float]:
        """Scaled training means used for absent numerics."""
        return {
            spec.name: (self.feature_stats[spec.name]["mean"] - spec.lower) / (spec.upper - spec.lower)
            for spec in space.numeric
        }

    def predict_encoded(self, X: np.ndarray) -> np.ndarray:
        """Predict a batch of encoded designs, in original target units."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.family == "ridge":
            mean = np.asarray(self.payload["scaler_mean"])
            scale = np.asarray(self.payload["scaler_scale"])
            coef = np.asarray(self.payload["coef"])
            return ((X - mean) / scale) @ coef + self.payload["intercept"]

        chunks = []
        for start in range(0, X.shape[0], PREDICT_CHUNK):
            leaves = self._ensemble.leaf_values(X[start:start + PREDICT_CHUNK])
            if self.family == "random_forest":
                chunks.append(leaves.mean(axis=1))
            else:
                chunks.append(self.payload["init"] + self.payload["learning_rate"] * leaves.sum(axis=1))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": config.ORACLE_FORMAT,
            "family": self.family,
            "hyper": self.hyper,
            "loo_r2": self.loo_r2,
            "train_seed": self.train_seed,
            "feature_names": self.feature_names,
            "feature_stats": self.feature_stats,
            "selection": self.selection,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OracleModel":
        if data.get("format") != config.ORACLE_FORMAT:
            raise TaskLoadError(f"Unsupported oracle format: {data.get('format')!r}")
        try:
            return cls(
                family=data["family"],
                hyper=data["hyper"],
                loo_r2=float(data["loo_r2"]),
                train_seed=int(data["train_seed"]),
                feature_names=list(data["feature_names"]),
                feature_stats=data["feature_stats"],
                payload=data["payload"],
                selection=list(data.get("selection", [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise TaskLoadError(f"Malformed oracle document: {e}") from e


def predict(model: OracleModel, space: ParameterSpace, d: Design) -> float:
    """Score one validated design.

    Absent numerics take the scaled training mean; absent categoricals encode
    as an all-zero block.
    """
    x = encode_design(space, d, missing_fill=model.numeric_fill(space))
    return float(model.predict_encoded(x[None, :])[0])


def predict_designs(model: OracleModel, space: ParameterSpace, designs: list[Design]) -> np.ndarray:
    return model.predict_encoded(encode_designs(space, designs, missing_fill=model.numeric_fill(space)))


# =============================================================================
# SELECTION
# =============================================================================

def fit_oracle(
    data: Dataset,
    seed: int = 0,
    families: set[str] | list[str] | None = None,
) -> OracleModel:
    """Select the (family, hyperparameter) pair with the best LOO R² and refit it on all rows.

    Ties go to the earlier family (ridge, random_forest, gradient_boosting),
    then to the earlier grid entry.
    """
    requested = set(families) if families else set(config.ORACLE_FAMILIES)
    unknown = requested - set(config.ORACLE_FAMILIES)
    if unknown:
        raise ValueError(f"Unknown oracle families: {', '.join(sorted(unknown))}")

    X, y, stats = training_matrix(data)
    check_trainable(y)

    selection: list[dict[str, Any]] = []
    best: tuple[float, str, dict[str, Any]] | None = None
    for family in config.ORACLE_FAMILIES:
        if family not in requested:
            continue
        for hyper in config.ORACLE_GRID[family]:
            score = r_squared(y, loo_predictions(X, y, family, hyper, seed))
            selection.append({"family": family, "hyper": hyper, "loo_r2": score})
            logger.debug("LOO R² %s %s = %.6g", family, hyper, score)
            if best is None or score > best[0]:
                best = (score, family, hyper)

    score, family, hyper = best
    estimator = make_estimator(family, hyper, X.shape[1], estimator_seed(seed, family, hyper, "all"))
    estimator.fit(X, y)
    logger.info("Selected %s with LOO R² %.6g", family, score)

    return OracleModel(
        family=family,
        hyper=dict(hyper),
        loo_r2=score,
        train_seed=seed,
        feature_names=data.space.feature_names(),
        feature_stats=stats,
        payload=export_estimator(family, estimator, y),
        selection=selection,
    )


def save_oracle(model: OracleModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_oracle(path: Path) -> OracleModel:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise TaskLoadError(f"Cannot read oracle {path}: {e}") from e
    return OracleModel.from_dict(data)
