"""Fitted tree containers over the kernel node arrays."""
from __future__ import annotations

import math

import numpy as np

from .. import kernels

MAX_DEPTH_CAP = 64


class DegenerateData(ValueError):
    pass


class NonFiniteFeature(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def check_X(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch("features must be a 2-d array")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise NonFiniteFeature("features contain NaN or infinity")
    return X


def resolve_depth(max_depth) -> int:
    if max_depth is None:
        return MAX_DEPTH_CAP
    return min(int(max_depth), MAX_DEPTH_CAP)


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features in (None, "all", "none"):
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if max_features == "log2":
        return max(1, int(math.log2(n_features)))
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    return max(1, min(int(max_features), n_features))


class Tree:
    """Node arrays of one fitted tree: ``value`` rows are per-leaf outputs."""

    def __init__(self, feature, threshold, left, right, value, n_samples=None):
        self.feature = np.ascontiguousarray(feature, dtype=np.int64)
        self.threshold = np.ascontiguousarray(threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.int64)
        self.right = np.ascontiguousarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim == 1:
            self.value = self.value[:, None]
        self.n_samples = None if n_samples is None else np.asarray(n_samples, dtype=np.int64)

    @classmethod
    def from_kernel(cls, d: dict) -> "Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d.get("n_samples"))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        return kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            leaf = self.left[i] < 0
            nodes.append({
                "feature_idx": None if leaf else int(self.feature[i]),
                "threshold": None if leaf else float(self.threshold[i]),
                "left": None if leaf else int(self.left[i]),
                "right": None if leaf else int(self.right[i]),
                "leaf_value": self.value[i].tolist() if leaf else None,
            })
        return {"n_out": int(self.value.shape[1]), "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        n_out = d["n_out"]
        nodes = d["nodes"]
        feature = [-1 if n["feature_idx"] is None else n["feature_idx"] for n in nodes]
        threshold = [0.0 if n["threshold"] is None else n["threshold"] for n in nodes]
        left = [-1 if n["left"] is None else n["left"] for n in nodes]
        right = [-1 if n["right"] is None else n["right"] for n in nodes]
        value = [n["leaf_value"] if n["leaf_value"] is not None else [0.0] * n_out for n in nodes]
        return cls(feature, threshold, left, right, np.asarray(value).reshape(len(nodes), n_out))


def fit_classifier_tree(Xf, y, samples, n_classes, max_depth=None, min_samples_split=2,
                        min_samples_leaf=1, max_features=None, seed=0, backend=None) -> Tree:
    """One CART tree on Fortran-ordered ``Xf`` over the rows in ``samples``."""
    k = backend or kernels
    d = k.build_classifier_tree(
        Xf, y, np.array(samples, dtype=np.int64), int(n_classes), resolve_depth(max_depth),
        int(min_samples_split), int(min_samples_leaf), resolve_max_features(max_features, Xf.shape[1]),
        int(seed) & (2**63 - 1),
    )
    return Tree.from_kernel(d)


def fit_gradient_tree(Xf, grad, hess, samples, max_depth=None, min_samples_split=2, min_samples_leaf=1,
                      min_child_weight=0.0, max_features=None, reg_lambda=0.0, min_gain=0.0,
                      seed=0, backend=None) -> Tree:
    """One second-order tree; leaves hold ``-G / (H + lambda)``."""
    k = backend or kernels
    d = k.build_gradient_tree(
        Xf, np.ascontiguousarray(grad, dtype=np.float64), np.ascontiguousarray(hess, dtype=np.float64),
        np.array(samples, dtype=np.int64), resolve_depth(max_depth), int(min_samples_split),
        int(min_samples_leaf), float(min_child_weight), resolve_max_features(max_features, Xf.shape[1]),
        float(reg_lambda), float(min_gain), int(seed) & (2**63 - 1),
    )
    return Tree.from_kernel(d)
