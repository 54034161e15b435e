"""Model specs, grid search with stratified k-fold CV, and serialisation."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..features import LabeledDataset, stratified_assign
from ..rng import rng
from .ensembles import (
    GradientBoostingClassifier,
    GradientBoostingRegressor,
    RandomForestClassifier,
    RandomForestRegressor,
)
from .metrics import MetricsReport, RegressionReport, classification_report, regression_report
from .trees import DegenerateData, Tree

RANDOM_FOREST = "RandomForest"
BOOSTED = "GradientBoostedTrees"
SVM = "SupportVectorMachine"
FAMILIES = (RANDOM_FOREST, BOOSTED, SVM)
FORMAT_VERSION = 1

# hyperparameter domains searched for each family
PARAM_GRIDS = {
    RANDOM_FOREST: {
        "n_estimators": [100, 150, 200, 250, 300],
        "max_depth": [None, 10, 20],
        "max_features": ["sqrt", "log2"],
        "bootstrap": [True, False],
    },
    BOOSTED: {
        "n_estimators": [100, 150, 200, 250, 300],
        "max_depth": [3, 6, 10],
        "gamma": [0, 1, 5],
    },
    SVM: {
        "C": [0.1, 1, 10, 100],
        "gamma": ["scale", "auto", 0.001, 0.01, 0.1, 1],
        "kernel": ["linear", "rbf", "poly"],
    },
}


class UnsupportedFamily(ValueError):
    pass


class MissingTarget(ValueError):
    pass


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of a parameter grid, in key order."""
    if not grid:
        return [{}]
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamily(f"unknown model family {self.family!r}")
        domain = PARAM_GRIDS[self.family]
        for k, v in self.hyperparams.items():
            if k in domain and v not in domain[k]:
                raise ValueError(f"{k}={v!r} is outside the {self.family} grid")

    def to_dict(self) -> dict:
        return {"family": self.family, "hyperparams": dict(self.hyperparams), "seed": self.seed}


def make_classifier(spec: ClassifierSpec):
    if spec.family == RANDOM_FOREST:
        return RandomForestClassifier(seed=spec.seed, **spec.hyperparams)
    if spec.family == BOOSTED:
        return GradientBoostingClassifier(seed=spec.seed, **spec.hyperparams)
    raise UnsupportedFamily(f"{spec.family} is not shipped; use a tree family")


def make_regressor(spec: ClassifierSpec):
    if spec.family == RANDOM_FOREST:
        hp = dict(spec.hyperparams)
        # regression forests consider every feature unless told otherwise
        hp.setdefault("max_features", 1.0)
        return RandomForestRegressor(seed=spec.seed, **hp)
    if spec.family == BOOSTED:
        return GradientBoostingRegressor(seed=spec.seed, **spec.hyperparams)
    raise UnsupportedFamily(f"{spec.family} is not shipped; use a tree family")


@dataclass
class TrainedModel:
    spec: ClassifierSpec
    model: object
    task: str  # "classify" or "regress"
    target: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def classes(self) -> list:
        return list(getattr(self.model, "classes", []))

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X)

    def confidence(self, X) -> np.ndarray:
        return self.model.confidence(X)

    # -- versioned JSON

    def to_dict(self) -> dict:
        m = self.model
        body = {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "task": self.task,
            "target": self.target,
            "meta": self.meta,
            "model_class": type(m).__name__,
            "params": m.params(),
            "n_features": m.n_features,
            "trees": [t.to_dict() for t in m.trees],
        }
        if hasattr(m, "classes"):
            body["classes"] = list(m.classes)
        if hasattr(m, "base_score"):
            bs = m.base_score
            body["base_score"] = bs.tolist() if isinstance(bs, np.ndarray) else bs
        return body

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        classes = {c.__name__: c for c in (RandomForestClassifier, RandomForestRegressor,
                                            GradientBoostingClassifier, GradientBoostingRegressor)}
        spec = ClassifierSpec(d["spec"]["family"], d["spec"]["hyperparams"], d["spec"]["seed"])
        model = classes[d["model_class"]](seed=spec.seed, **d["params"])
        model.trees = [Tree.from_dict(t) for t in d["trees"]]
        model.n_features = d["n_features"]
        if "classes" in d:
            model.classes = d["classes"]
        if "base_score" in d:
            bs = d["base_score"]
            model.base_score = np.asarray(bs) if isinstance(bs, list) else bs
        return cls(spec, model, d["task"], d.get("target"), d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        return cls.from_dict(json.loads(text))


def fit(spec: ClassifierSpec, train: LabeledDataset, backend=None) -> TrainedModel:
    if len(train.classes) < 2:
        raise DegenerateData("need at least two classes")
    model = make_classifier(spec).fit(train.X, train.labels, backend=backend)
    return TrainedModel(spec, model, "classify", meta={"n_train": len(train)})


def evaluate(model: TrainedModel, test: LabeledDataset) -> MetricsReport:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = model.predict(test.X)
    classes = sorted(set(model.classes) | set(test.classes))
    return classification_report(test.labels, pred, classes)


def stratified_kfold(labels, folds: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    if folds < 2:
        raise ValueError("need at least 2 folds")
    assign = stratified_assign(np.asarray(labels, dtype=object), folds, rng(seed, "kfold"))
    return [(np.flatnonzero(assign != f), np.flatnonzero(assign == f)) for f in range(folds)]


def grid_search(family: str, grid: dict | list, ds: LabeledDataset, folds: int = 5, seed: int = 0,
                backend=None):
    """Mean CV accuracy of every grid point; returns (best spec, cv table).

    Cells whose fit fails are kept in the table with their error and never win.
    Ties keep the earliest grid point.
    """
    points = grid if isinstance(grid, list) else expand_grid(grid)
    if not points:
        raise ValueError("empty grid")
    splits = stratified_kfold(ds.labels, folds, seed)
    table = []
    best, best_score = None, -np.inf
    for hp in points:
        spec = ClassifierSpec(family, dict(hp), seed)
        row = {"family": family, **{k: hp[k] for k in hp}}
        try:
            scores = []
            for tr, te in splits:
                model = make_classifier(spec).fit(ds.X[tr], ds.labels[tr], backend=backend)
                scores.append(float(np.mean(model.predict(ds.X[te]) == ds.labels[te])))
            row.update(mean_accuracy=float(np.mean(scores)), std_accuracy=float(np.std(scores)),
                       fold_scores=scores, error=None)
            if row["mean_accuracy"] > best_score:
                best, best_score = spec, row["mean_accuracy"]
        except Exception as exc:  # recorded, not fatal
            row.update(mean_accuracy=None, std_accuracy=None, fold_scores=[], error=repr(exc))
        table.append(row)
    if best is None:
        raise DegenerateData("every grid point failed")
    return best, table


def cv_table_csv(table: list[dict], path) -> None:
    import csv

    keys = []
    for row in table:
        keys.extend(k for k in row if k not in keys and k != "fold_scores")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, keys, extrasaction="ignore")
        w.writeheader()
        for row in table:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in keys})


def fit_param_regressor(family: str, ds: LabeledDataset, target: str, hyperparams: dict | None = None,
                        seed: int = 0, backend=None) -> TrainedModel:
    """Regress ``window_size`` or ``slide`` from the features of one operator kind."""
    kinds = ds.classes
    if len(kinds) != 1:
        raise ValueError(f"rows must share one operator kind, got {kinds}")
    if target not in ("window_size", "slide"):
        raise MissingTarget(f"unknown target {target!r}")
    y = ds.target(target)
    if (y < 0).any():
        raise MissingTarget(f"some rows carry no {target}")
    spec = ClassifierSpec(family, dict(hyperparams or {}), seed)
    model = make_regressor(spec).fit(ds.X, y, backend=backend)
    return TrainedModel(spec, model, "regress", target, {"kind": kinds[0], "n_train": len(ds)})


def evaluate_regressor(model: TrainedModel, test: LabeledDataset) -> RegressionReport:
    return regression_report(test.target(model.target), model.predict(test.X))
