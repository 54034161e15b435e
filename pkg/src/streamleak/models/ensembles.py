"""Random forests and gradient-boosted trees built on the tree kernels."""
from __future__ import annotations

import numpy as np

from ..rng import child_seed, rng
from .trees import (
    DegenerateData,
    Tree,
    check_X,
    fit_classifier_tree,
    fit_gradient_tree,
)


def _encode(y, classes=None):
    y = np.asarray(y)
    classes = sorted(set(y.tolist())) if classes is None else list(classes)
    index = {c: i for i, c in enumerate(classes)}
    return classes, np.array([index[v] for v in y.tolist()], dtype=np.int64)


class _Base:
    family = ""

    def __init__(self, seed=0):
        self.seed = seed
        self.trees: list[Tree] = []
        self.n_features = None

    def _check(self, X):
        if self.n_features is None:
            raise RuntimeError("model is not fitted")
        return check_X(X, self.n_features)

    def params(self) -> dict:
        raise NotImplementedError


class RandomForestClassifier(_Base):
    """Bagged CART trees; prediction is the majority vote, ties to the lowest class index."""

    family = "RandomForest"

    def __init__(self, n_estimators=100, max_depth=None, max_features="sqrt", bootstrap=True,
                 min_samples_split=2, min_samples_leaf=1, seed=0):
        super().__init__(seed)
        self.n_estimators = int(n_estimators)
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bool(bootstrap)
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.classes: list = []

    def params(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "max_features": self.max_features, "bootstrap": self.bootstrap,
                "min_samples_split": self.min_samples_split, "min_samples_leaf": self.min_samples_leaf}

    def fit(self, X, y, backend=None):
        X = check_X(X)
        self.classes, yi = _encode(y)
        if len(self.classes) < 2:
            raise DegenerateData("need at least two classes")
        n = X.shape[0]
        Xf = np.asfortranarray(X)
        gen = rng(self.seed, "forest")
        self.trees = []
        for t in range(self.n_estimators):
            samples = gen.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees.append(fit_classifier_tree(
                Xf, yi, samples, len(self.classes), self.max_depth, self.min_samples_split,
                self.min_samples_leaf, self.max_features, child_seed(self.seed, "tree", t), backend))
        self.n_features = X.shape[1]
        return self

    def votes(self, X) -> np.ndarray:
        X = np.ascontiguousarray(self._check(X))
        counts = np.zeros((X.shape[0], len(self.classes)), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            # argmax returns the first maximum, so ties go to the lowest index
            counts[rows, np.argmax(tree.predict_value(X), axis=1)] += 1
        return counts

    def predict_index(self, X) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.array(self.classes, dtype=object)[self.predict_index(X)]

    def predict_proba(self, X) -> np.ndarray:
        return self.votes(X) / float(len(self.trees))

    def confidence(self, X) -> np.ndarray:
        """Vote share of the winning class."""
        return self.predict_proba(X).max(axis=1)


class RandomForestRegressor(_Base):
    """Bagged variance-reduction trees; prediction is the mean of tree outputs."""

    family = "RandomForest"

    def __init__(self, n_estimators=100, max_depth=None, max_features=1.0, bootstrap=True,
                 min_samples_split=2, min_samples_leaf=1, seed=0):
        super().__init__(seed)
        self.n_estimators = int(n_estimators)
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bool(bootstrap)
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf

    def params(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "max_features": self.max_features, "bootstrap": self.bootstrap,
                "min_samples_split": self.min_samples_split, "min_samples_leaf": self.min_samples_leaf}

    def fit(self, X, y, backend=None):
        X = check_X(X)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        Xf = np.asfortranarray(X)
        # squared loss around zero: gradient -y, unit hessian, no shrinkage
        grad, hess = -y, np.ones(n)
        gen = rng(self.seed, "forest-reg")
        self.trees = []
        for t in range(self.n_estimators):
            samples = gen.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees.append(fit_gradient_tree(
                Xf, grad, hess, samples, self.max_depth, self.min_samples_split, self.min_samples_leaf,
                0.0, self.max_features, 0.0, 0.0, child_seed(self.seed, "tree", t), backend))
        self.n_features = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(self._check(X))
        return np.mean([tree.predict_value(X)[:, 0] for tree in self.trees], axis=0)


class GradientBoostingClassifier(_Base):
    """Softmax boosting: one second-order tree per class per round."""

    family = "GradientBoostedTrees"

    def __init__(self, n_estimators=100, max_depth=6, gamma=0.0, learning_rate=0.3, reg_lambda=1.0,
                 min_child_weight=1.0, max_features=None, seed=0):
        super().__init__(seed)
        self.n_estimators = int(n_estimators)
        self.max_depth = max_depth
        self.gamma = float(gamma)
        self.learning_rate = float(learning_rate)
        self.reg_lambda = float(reg_lambda)
        self.min_child_weight = float(min_child_weight)
        self.max_features = max_features
        self.classes: list = []
        self.base_score = None

    def params(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth, "gamma": self.gamma,
                "learning_rate": self.learning_rate, "reg_lambda": self.reg_lambda,
                "min_child_weight": self.min_child_weight, "max_features": self.max_features}

    def fit(self, X, y, backend=None):
        X = check_X(X)
        self.classes, yi = _encode(y)
        K = len(self.classes)
        if K < 2:
            raise DegenerateData("need at least two classes")
        n = X.shape[0]
        Xf = np.asfortranarray(X)
        Xc = np.ascontiguousarray(X)
        onehot = np.eye(K)[yi]
        prior = onehot.mean(axis=0)
        self.base_score = np.log(np.clip(prior, 1e-12, None))
        margin = np.tile(self.base_score, (n, 1))
        samples = np.arange(n)
        self.trees = []
        for r in range(self.n_estimators):
            z = margin - margin.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            for c in range(K):
                g = p[:, c] - onehot[:, c]
                h = np.maximum(p[:, c] * (1 - p[:, c]), 1e-16)
                tree = fit_gradient_tree(
                    Xf, g, h, samples, self.max_depth, 2, 1, self.min_child_weight, self.max_features,
                    self.reg_lambda, self.gamma, child_seed(self.seed, "round", r, c), backend)
                tree.value *= self.learning_rate
                self.trees.append(tree)
                margin[:, c] += tree.predict_value(Xc)[:, 0]
        self.n_features = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        X = np.ascontiguousarray(self._check(X))
        K = len(self.classes)
        margin = np.tile(self.base_score, (X.shape[0], 1))
        for i, tree in enumerate(self.trees):
            margin[:, i % K] += tree.predict_value(X)[:, 0]
        return margin

    def predict_proba(self, X) -> np.ndarray:
        m = self.decision_function(X)
        p = np.exp(m - m.max(axis=1, keepdims=True))
        return p / p.sum(axis=1, keepdims=True)

    def predict_index(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.array(self.classes, dtype=object)[self.predict_index(X)]

    def confidence(self, X) -> np.ndarray:
        return self.predict_proba(X).max(axis=1)


class GradientBoostingRegressor(_Base):
    family = "GradientBoostedTrees"

    def __init__(self, n_estimators=100, max_depth=6, gamma=0.0, learning_rate=0.3, reg_lambda=1.0,
                 min_child_weight=1.0, max_features=None, seed=0):
        super().__init__(seed)
        self.n_estimators = int(n_estimators)
        self.max_depth = max_depth
        self.gamma = float(gamma)
        self.learning_rate = float(learning_rate)
        self.reg_lambda = float(reg_lambda)
        self.min_child_weight = float(min_child_weight)
        self.max_features = max_features
        self.base_score = 0.0

    def params(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth, "gamma": self.gamma,
                "learning_rate": self.learning_rate, "reg_lambda": self.reg_lambda,
                "min_child_weight": self.min_child_weight, "max_features": self.max_features}

    def fit(self, X, y, backend=None):
        X = check_X(X)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        Xf = np.asfortranarray(X)
        Xc = np.ascontiguousarray(X)
        self.base_score = float(y.mean())
        pred = np.full(n, self.base_score)
        samples = np.arange(n)
        hess = np.ones(n)
        self.trees = []
        for r in range(self.n_estimators):
            tree = fit_gradient_tree(
                Xf, pred - y, hess, samples, self.max_depth, 2, 1, self.min_child_weight,
                self.max_features, self.reg_lambda, self.gamma, child_seed(self.seed, "round", r), backend)
            tree.value *= self.learning_rate
            self.trees.append(tree)
            pred += tree.predict_value(Xc)[:, 0]
        self.n_features = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(self._check(X))
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += tree.predict_value(X)[:, 0]
        return out
