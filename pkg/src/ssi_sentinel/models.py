"""Classifiers and sensitivity-first threshold calibration.

Both models are trained deterministically so surveillance runs are
auditable: logistic regression by full-batch gradient descent with
backtracking line search, random forests from a fixed seed with
seed-derived per-tree generators. Calibration pins the decision threshold
to the lowest predicted probability among known positive cases, so every
known case is flagged (ties at the threshold flag positive).
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureMatrix

MODEL_SCHEMA_VERSION = 1


class ModelError(ValueError):
    pass


class FeatureMismatchError(ModelError):
    """Scoring matrix columns do not match the model's feature names."""


class ModelFormatError(ModelError):
    """Unreadable or wrong-version model artifact."""


# --- logistic regression ---------------------------------------------------


@dataclass
class LogRegModel:
    feature_names: list[str]
    weights: np.ndarray
    bias: float
    l2_lambda: float
    n_iters: int
    grad_norm: float
    converged: bool


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2_lambda: float
) -> float:
    """Mean negative log-likelihood plus an L2 penalty on the weights.

    The data term is a mean, so duplicating every row leaves the optimum
    unchanged; the bias is not regularized.
    """
    z = X @ w + b
    nll = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return nll + 0.5 * l2_lambda * float(w @ w)


def logreg_gradient(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2_lambda: float
) -> tuple[np.ndarray, float]:
    z = X @ w + b
    residual = _sigmoid(z) - y
    grad_w = X.T @ residual / len(y) + l2_lambda * w
    grad_b = float(np.mean(residual))
    return grad_w, grad_b


def _check_labels(y: np.ndarray) -> None:
    if y.min() == y.max():
        raise ModelError("training labels contain a single class")


def train_logreg(
    matrix: FeatureMatrix,
    labels: Sequence[bool] | None = None,
    l2_lambda: float = 1e-2,
    max_iters: int = 500,
    tolerance: float = 1e-6,
) -> LogRegModel:
    """Deterministic full-batch gradient descent with backtracking."""
    X = np.asarray(matrix.values, dtype=float)
    y = (
        np.array([1.0 if lab else 0.0 for lab in labels])
        if labels is not None
        else matrix.label_array()
    )
    _check_labels(y)
    w = np.zeros(X.shape[1])
    b = 0.0
    step = 1.0
    loss = logreg_loss(X, y, w, b, l2_lambda)
    grad_norm = math.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad_w, grad_b = logreg_gradient(X, y, w, b, l2_lambda)
        grad_norm = math.sqrt(float(grad_w @ grad_w) + grad_b**2)
        if grad_norm < tolerance:
            converged = True
            break
        # Armijo backtracking from a slightly optimistic previous step.
        step = min(step * 2.0, 1e4)
        while step > 1e-12:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            new_loss = logreg_loss(X, y, w_new, b_new, l2_lambda)
            if new_loss <= loss - 0.5 * step * grad_norm**2:
                break
            step *= 0.5
        w, b, loss = w_new, b_new, new_loss
    return LogRegModel(
        feature_names=list(matrix.feature_names),
        weights=w,
        bias=float(b),
        l2_lambda=l2_lambda,
        n_iters=it,
        grad_norm=float(grad_norm),
        converged=converged,
    )


# --- random forest ----------------------------------------------------------


@dataclass
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_fraction: float | None = None

    def to_dict(self) -> dict:
        if self.leaf_fraction is not None:
            return {"leaf": self.leaf_fraction}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TreeNode":
        if "leaf" in raw:
            return cls(leaf_fraction=float(raw["leaf"]))
        return cls(
            feature=int(raw["feature"]),
            threshold=float(raw["threshold"]),
            left=cls.from_dict(raw["left"]),
            right=cls.from_dict(raw["right"]),
        )


@dataclass
class RandomForestModel:
    feature_names: list[str]
    trees: list[TreeNode]
    n_trees: int
    max_depth: int
    features_per_split: int
    seed: int


def _gini(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    p = float(np.mean(y))
    return 2.0 * p * (1.0 - p)


def _best_split(
    X: np.ndarray, y: np.ndarray, feature_ids: np.ndarray
) -> tuple[int, float] | None:
    """Lowest weighted child Gini over candidate features and thresholds.

    Features are scanned in ascending id and thresholds in ascending value,
    accepting only strict improvements, so the choice is deterministic.
    """
    parent = _gini(y)
    n = len(y)
    best: tuple[float, int, float] | None = None
    for f in sorted(int(f) for f in feature_ids):
        column = X[:, f]
        values = np.unique(column)
        if len(values) < 2:
            continue
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = (lo + hi) / 2.0
            mask = column <= threshold
            left, right = y[mask], y[~mask]
            score = (len(left) * _gini(left) + len(right) * _gini(right)) / n
            if best is None or score < best[0] - 1e-12:
                best = (score, f, float(threshold))
    if best is None or best[0] >= parent - 1e-12:
        return None
    return best[1], best[2]


def _build_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_depth: int,
    features_per_split: int,
    depth: int = 0,
) -> TreeNode:
    if depth >= max_depth or len(y) < 2 or y.min() == y.max():
        return TreeNode(leaf_fraction=float(np.mean(y)))
    feature_ids = rng.choice(X.shape[1], size=features_per_split, replace=False)
    split = _best_split(X, y, feature_ids)
    if split is None:
        return TreeNode(leaf_fraction=float(np.mean(y)))
    f, threshold = split
    mask = X[:, f] <= threshold
    return TreeNode(
        feature=f,
        threshold=threshold,
        left=_build_tree(X[mask], y[mask], rng, max_depth, features_per_split, depth + 1),
        right=_build_tree(X[~mask], y[~mask], rng, max_depth, features_per_split, depth + 1),
    )


def train_forest(
    matrix: FeatureMatrix,
    labels: Sequence[bool] | None = None,
    n_trees: int = 100,
    max_depth: int = 8,
    features_per_split: int | None = None,
    seed: int = 0,
) -> RandomForestModel:
    """Bootstrap-sampled Gini trees; fully reproducible for a given seed.

    Each tree gets its own generator spawned from the seed, so trees could
    be built concurrently and merged in index order without changing the
    result.
    """
    X = np.asarray(matrix.values, dtype=float)
    y = (
        np.array([1.0 if lab else 0.0 for lab in labels])
        if labels is not None
        else matrix.label_array()
    )
    _check_labels(y)
    p = X.shape[1]
    m = features_per_split or max(1, math.ceil(math.sqrt(p)))
    m = min(m, p)
    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, len(y), size=len(y))
        trees.append(_build_tree(X[idx], y[idx], rng, max_depth, m))
    return RandomForestModel(
        feature_names=list(matrix.feature_names),
        trees=trees,
        n_trees=n_trees,
        max_depth=max_depth,
        features_per_split=m,
        seed=seed,
    )


def _tree_predict(node: TreeNode, x: np.ndarray) -> float:
    while node.leaf_fraction is None:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.leaf_fraction


# --- scoring ----------------------------------------------------------------

Model = LogRegModel | RandomForestModel


def _align(matrix: FeatureMatrix, feature_names: Sequence[str]) -> np.ndarray:
    """Matrix values reordered to the model's columns; error on mismatch."""
    if list(matrix.feature_names) == list(feature_names):
        return np.asarray(matrix.values, dtype=float)
    have = set(matrix.feature_names)
    want = set(feature_names)
    missing = sorted(want - have)
    extra = sorted(have - want)
    if missing or extra:
        raise FeatureMismatchError(
            f"feature mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    order = [matrix.feature_names.index(name) for name in feature_names]
    return np.asarray(matrix.values, dtype=float)[:, order]


def predict_proba(model: Model, matrix: FeatureMatrix) -> np.ndarray:
    """Probability of SSI per row, in [0, 1]."""
    X = _align(matrix, model.feature_names)
    if isinstance(model, LogRegModel):
        return _sigmoid(X @ model.weights + model.bias)
    scores = np.zeros(len(X))
    for tree in model.trees:
        scores += np.array([_tree_predict(tree, x) for x in X])
    return scores / len(model.trees)


# --- calibration and flagging ------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    procedure_id: str
    probability: float
    flagged: bool


@dataclass
class CalibratedModel:
    """A trained model plus its sensitivity-first decision threshold.

    The threshold is the minimum predicted probability over the
    calibration positives; flagging uses probability >= threshold, so
    every calibration positive is flagged.
    """

    model: Model
    threshold: float
    fingerprint: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return self.model.feature_names


def _dataset_fingerprint(matrix: FeatureMatrix, y: np.ndarray) -> dict:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(matrix.values, dtype=float).tobytes())
    digest.update(",".join(matrix.procedure_ids).encode())
    digest.update(y.tobytes())
    return {
        "dataset": digest.hexdigest(),
        "features": hashlib.sha256("\x1f".join(matrix.feature_names).encode()).hexdigest(),
        "config": matrix.config_hash,
    }


def calibrate(
    model: Model, matrix: FeatureMatrix, labels: Sequence[bool] | None = None
) -> CalibratedModel:
    y = (
        np.array([1.0 if lab else 0.0 for lab in labels])
        if labels is not None
        else matrix.label_array()
    )
    if not np.any(y == 1.0):
        raise ModelError("calibration requires at least one positive")
    probs = predict_proba(model, matrix)
    threshold = float(np.min(probs[y == 1.0]))
    return CalibratedModel(
        model=model, threshold=threshold, fingerprint=_dataset_fingerprint(matrix, y)
    )


def flag(calibrated: CalibratedModel, matrix: FeatureMatrix) -> list[Prediction]:
    """Score a matrix and apply the inclusive threshold rule."""
    expected = calibrated.fingerprint.get("config")
    if expected is not None and matrix.config_hash is not None and matrix.config_hash != expected:
        warnings.warn(
            "scoring a matrix built with a different feature configuration "
            "than the calibration set",
            stacklevel=2,
        )
    probs = predict_proba(calibrated.model, matrix)
    return [
        Prediction(pid, float(p), bool(p >= calibrated.threshold))
        for pid, p in zip(matrix.procedure_ids, probs)
    ]


# --- persistence -------------------------------------------------------------


def _model_params(model: Model) -> tuple[str, dict]:
    if isinstance(model, LogRegModel):
        return "logreg", {
            "weights": [float(w) for w in model.weights],
            "bias": model.bias,
            "l2_lambda": model.l2_lambda,
            "n_iters": model.n_iters,
            "grad_norm": model.grad_norm,
            "converged": model.converged,
        }
    return "forest", {
        "trees": [t.to_dict() for t in model.trees],
        "n_trees": model.n_trees,
        "max_depth": model.max_depth,
        "features_per_split": model.features_per_split,
        "seed": model.seed,
    }


def save_model(model: Model | CalibratedModel, path: str | Path) -> None:
    """Write a model.json artifact; calibration threshold included if set."""
    if isinstance(model, CalibratedModel):
        base, threshold, fingerprint = model.model, model.threshold, model.fingerprint
    else:
        base, threshold, fingerprint = model, None, {}
    kind, params = _model_params(base)
    artifact = {
        "version": MODEL_SCHEMA_VERSION,
        "kind": kind,
        "feature_names": base.feature_names,
        "params": params,
        "threshold": threshold,
        "fingerprint": fingerprint,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(artifact, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> Model | CalibratedModel:
    """Load a model.json artifact; returns a CalibratedModel when calibrated."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable model artifact: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("version") != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model schema version {raw.get('version')!r}"
            if isinstance(raw, dict)
            else f"{path}: model artifact must be a JSON object"
        )
    try:
        kind = raw["kind"]
        names = list(raw["feature_names"])
        params = raw["params"]
        if kind == "logreg":
            model: Model = LogRegModel(
                feature_names=names,
                weights=np.array(params["weights"], dtype=float),
                bias=float(params["bias"]),
                l2_lambda=float(params["l2_lambda"]),
                n_iters=int(params["n_iters"]),
                grad_norm=float(params["grad_norm"]),
                converged=bool(params["converged"]),
            )
        elif kind == "forest":
            model = RandomForestModel(
                feature_names=names,
                trees=[TreeNode.from_dict(t) for t in params["trees"]],
                n_trees=int(params["n_trees"]),
                max_depth=int(params["max_depth"]),
                features_per_split=int(params["features_per_split"]),
                seed=int(params["seed"]),
            )
        else:
            raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: corrupt model artifact: {exc}") from exc
    if raw.get("threshold") is None:
        return model
    return CalibratedModel(
        model=model,
        threshold=float(raw["threshold"]),
        fingerprint=raw.get("fingerprint") or {},
    )
