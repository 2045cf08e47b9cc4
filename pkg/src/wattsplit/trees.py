"""Regression trees and bagged forests over lagged aggregate-power features."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError
from .timeseries import PowerSeries

CRITERIA = ("squared_error", "friedman_mse")
DEFAULT_MAX_DEPTH = 20


@dataclass
class TreeNode:
    """Internal split node or leaf of a regression tree."""

    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    mean: float = 0.0
    n: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass
class Forest:
    """Bagged ensemble; prediction is the arithmetic mean over trees."""

    trees: list
    seed: int
    feature_fraction: float = 1.0


def build_lag_features(aggregate: PowerSeries, lag: int) -> np.ndarray:
    """Row t holds the ``lag`` most recent aggregate samples ending at t,
    zero-padded on the left."""
    if lag < 1:
        raise DataError("lag must be >= 1")
    values = aggregate.values if isinstance(aggregate, PowerSeries) else np.asarray(aggregate)
    padded = np.concatenate([np.zeros(lag - 1), values])
    return np.lib.stride_tricks.sliding_window_view(padded, lag).copy()


def _best_split_all_features(X, y, feature_idx, friedman):
    """Best (gain, feature, threshold) over candidate features.

    Ties resolve to the lower feature index then lower threshold (the
    per-feature kernel already scans thresholds ascending).
    """
    best = (-np.inf, -1, np.nan)
    for f in feature_idx:
        order = np.argsort(X[:, f], kind="stable")
        gain, thr = _kernels.best_split(X[order, f], y[order], friedman)
        if gain > best[0]:
            best = (gain, f, thr)
    return best


def fit_cart(X, y, criterion: str = "squared_error", min_samples_split: int = 2,
             max_depth: int = DEFAULT_MAX_DEPTH, seed: int = 0,
             feature_idx=None) -> TreeNode:
    """Greedy binary regression tree.

    Splits maximize the SSE reduction (``squared_error``) or the
    ``(nL*nR/n)*(muL-muR)^2`` improvement (``friedman_mse``); candidate
    thresholds are midpoints between consecutive distinct sorted values.
    A node stops when it has fewer than ``min_samples_split`` samples,
    sits at ``max_depth``, or no candidate has positive gain.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise DataError("X must be (n, d) with matching non-empty y")
    if criterion not in CRITERIA:
        raise DataError(f"unknown criterion {criterion!r}")
    friedman = criterion == "friedman_mse"
    if feature_idx is None:
        feature_idx = np.arange(X.shape[1])

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        node = TreeNode(mean=float(y[idx].mean()), n=int(idx.size))
        if idx.size < min_samples_split or depth >= max_depth:
            return node
        gain, f, thr = _best_split_all_features(X[idx], y[idx], feature_idx, friedman)
        # cancellation in the prefix sums leaves ~1e-15-relative residue on
        # flat targets; treat such gains as zero
        if gain <= 1e-12 * (float(np.sum(y[idx] ** 2)) + 1.0):
            return node
        mask = X[idx, f] < thr
        node.feature = int(f)
        node.threshold = float(thr)
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    return grow(np.arange(X.shape[0]), 0)


def fit_forest(X, y, n_estimators: int = 10, criterion: str = "squared_error",
               min_samples_split: int = 2, max_depth: int = DEFAULT_MAX_DEPTH,
               seed: int = 0, feature_fraction: float = 1.0,
               bootstrap: bool = True) -> Forest:
    """Bag ``n_estimators`` trees; tree i draws its bootstrap sample and
    feature subset from ``seed + i``, so the fit is reproducible."""
    if n_estimators < 1:
        raise DataError("n_estimators must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    trees = []
    for i in range(n_estimators):
        rng = np.random.default_rng(seed + i)
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        if feature_fraction < 1.0:
            n_feat = max(1, int(round(feature_fraction * d)))
            feats = np.sort(rng.choice(d, size=n_feat, replace=False))
        else:
            feats = None
        trees.append(fit_cart(X[idx], y[idx], criterion, min_samples_split,
                              max_depth, seed=seed + i, feature_idx=feats))
    return Forest(trees, seed, feature_fraction)


def _predict_one_tree(root: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            out[idx] = node.mean
            continue
        mask = X[idx, node.feature] < node.threshold
        stack.append((node.left, idx[mask]))
        stack.append((node.right, idx[~mask]))
    return out


def predict_tree(model, X) -> np.ndarray:
    """Predicted watts for each feature row; forests average their trees.
    Output is clamped at zero."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be 2-d")
    if isinstance(model, Forest):
        preds = np.mean([_predict_one_tree(t, X) for t in model.trees], axis=0)
    else:
        preds = _predict_one_tree(model, X)
    return np.maximum(preds, 0.0)


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"mean": node.mean, "n": node.n}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(d: dict) -> TreeNode:
    if "mean" in d:
        return TreeNode(mean=d["mean"], n=d["n"])
    return TreeNode(feature=d["feature"], threshold=d["threshold"],
                    left=_node_from_dict(d["left"]), right=_node_from_dict(d["right"]))


def save_tree_model(model, stream) -> None:
    if isinstance(model, Forest):
        doc = {"kind": "forest", "seed": model.seed,
               "feature_fraction": model.feature_fraction,
               "trees": [_node_to_dict(t) for t in model.trees]}
    else:
        doc = {"kind": "tree", "root": _node_to_dict(model)}
    json.dump(doc, stream, indent=1, sort_keys=True)


def load_tree_model(stream):
    doc = json.load(stream)
    if doc["kind"] == "forest":
        return Forest([_node_from_dict(t) for t in doc["trees"]],
                      doc["seed"], doc["feature_fraction"])
    return _node_from_dict(doc["root"])
