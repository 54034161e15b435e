"""The two-phase attack and its evaluation.

Offline, the attacker profiles every operator kind on synthetic data, builds
a CDF-feature dataset and trains a kind classifier plus per-kind window
regressors. Online, it observes each stage of a victim pipeline through the
in-buffer tail, classifies the traces and estimates window parameters.
QRSR, the product of per-operator accuracies of a query, scores recovery.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .costmodel import CostModel
from .engine.mitigations import batch_stage, fuse_stages, pad_all
from .engine.operators import (
    AVERAGE,
    AVERAGE_PARTITION,
    COUNT,
    FILTER,
    JOIN,
    MAP,
    MAX,
    REDUCE,
    WINDOWED,
    OperatorSpec,
)
from .engine.pipeline import PipelineSpec, RunOptions, run_pipeline, run_reference
from .engine.records import EventRecord, encode
from .features import DEFAULT_K, DEFAULT_TRIM, LabeledDataset, build_dataset, featurize, split_even
from .generators import (
    CATALOG_KINDS,
    QUERY_IDS,
    SECURESTREAM,
    GeneratorConfig,
    catalog_query,
    query_inputs,
    synth_schema_subsets,
)
from .models import (
    RANDOM_FOREST,
    ClassifierSpec,
    DegenerateData,
    MetricsReport,
    TrainedModel,
    classification_report,
    expand_grid,
    fit,
    fit_param_regressor,
    grid_search,
)
from .observer import MEASURED, SIMULATED, ObserverStarved, TimingTrace, observe_stage, profile_operator
from .rng import child_seed, rng

# traces per operator kind in the offline datasets
NEXMARK_COUNTS = {
    MAP: 1262, FILTER: 1297, JOIN: 1009, MAX: 1059, AVERAGE: 1018, AVERAGE_PARTITION: 1071,
    # Q5's only operator; not among the six profiled kinds of the reference dataset
    COUNT: 750,
}
SECURESTREAM_COUNTS = {MAP: 350, FILTER: 350, REDUCE: 350}
SIX_KINDS = (MAP, FILTER, JOIN, MAX, AVERAGE, AVERAGE_PARTITION)

W_GRID = (8, 16, 32, 64)
S_GRID = (2, 4, 8)

# a small grid that keeps desk-scale runs quick
QUICK_RF_GRID = {"n_estimators": [100], "max_depth": [None, 10], "max_features": ["sqrt", "log2"],
                 "bootstrap": [True]}
REGRESSOR_PARAMS = {"n_estimators": 100, "max_depth": None, "max_features": "sqrt"}


# ------------------------------------------------------------ query suite


@dataclass(frozen=True)
class Instance:
    """One operator of one catalog query, with the fields its input carries."""

    query_id: str
    stage_id: str
    spec: OperatorSpec
    input_fields: tuple  # ((name, type), ...)


def stage_inputs(query_id: str, cfg: GeneratorConfig, limit: int = 3000) -> dict[str, list]:
    """Records each stage of a catalog query consumes on a small sample."""
    spec = catalog_query(query_id)
    inputs = query_inputs(query_id, cfg, limit)
    produced = run_reference(spec, inputs, all_stages=True)
    out = {}
    for sid in spec.stage_ids:
        recs = []
        for kind, name in spec.inputs(sid):
            recs.extend(inputs[name] if kind == "source" else produced[name])
        out[sid] = recs
    return out


def _fields_of(records) -> tuple:
    seen = {}
    for rec in records[:50]:
        for name, value in rec.fields:
            seen.setdefault(name, type(value))
    return tuple(seen.items())


def operator_instances(query_ids=QUERY_IDS, cfg: GeneratorConfig | None = None) -> list[Instance]:
    cfg = cfg or GeneratorConfig(seed=0, persons=2000, auctions=6000, bids=92000, flights=20000)
    out = []
    for q in query_ids:
        spec = catalog_query(q)
        ins = stage_inputs(q, cfg)
        prev = ()
        for sid in spec.stage_ids:
            fields = _fields_of(ins[sid]) or prev
            prev = fields
            out.append(Instance(q, sid, spec.stage(sid).op, fields))
    return out


def payload_pools(instance: Instance, seed: int, n_variants: int = 32, n_records: int = 64) -> list[np.ndarray]:
    """Record-size pools from random field subsets of the instance's input schema.

    Each pool also places its records at a random stream position (sequence
    number and timestamp spanning several decades), since those travel in
    every sealed payload; this keeps pool sizes from clustering on a few levels.
    """
    pools = []
    sub_seed = child_seed(seed, instance.query_id, instance.stage_id)
    gen = rng(sub_seed, "positions")
    for _, stream in synth_schema_subsets(instance.input_fields, sub_seed, n_variants, n_records):
        seq0, ts0 = (int(10 ** gen.uniform(0, 7)) for _ in range(2))
        sizes = [len(encode(EventRecord(r.seq + seq0, r.schema_id, r.fields, r.ts + ts0))) for r in stream]
        pools.append(np.array(sizes, dtype=np.float64))
    return pools


def split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def profile_suite(counts: dict, instances: list[Instance], model: CostModel, seed: int = 0,
                  n_events: int = 10_000, w_grid=W_GRID, s_grid=S_GRID, pad_target: int = 0):
    """Labeled synthetic traces: ``counts[kind]`` spread over the kind's instances."""
    traces = []
    for kind, total in counts.items():
        members = [i for i in instances if i.spec.kind == kind]
        if not members:
            raise ValueError(f"no query uses {kind}")
        for inst, reps in zip(members, split_counts(total, len(members))):
            if reps == 0:
                continue
            traces.extend(profile_operator(
                inst.spec, None, SIMULATED, reps, model=model, n_events=n_events,
                seed=child_seed(seed, "profile", inst.query_id, inst.stage_id), w_grid=w_grid,
                s_grid=s_grid, payloads=payload_pools(inst, seed),
                meta={"query_id": inst.query_id, "stage_id": inst.stage_id}, pad_target=pad_target,
            ))
    return traces


# ------------------------------------------------------------------ offline


@dataclass
class OfflineArtifacts:
    dataset: LabeledDataset
    classifier: TrainedModel
    regressors: dict  # kind -> {"window_size": TrainedModel, "slide": TrainedModel}
    cv_table: list = field(default_factory=list)

    def save(self, directory) -> None:
        import os

        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "classifier.json"), "w") as fh:
            fh.write(self.classifier.to_json())
        regs = {k: {t: m.to_dict() for t, m in v.items()} for k, v in self.regressors.items()}
        with open(os.path.join(directory, "regressors.json"), "w") as fh:
            json.dump(regs, fh, sort_keys=True)

    @classmethod
    def load(cls, directory, dataset: LabeledDataset | None = None) -> "OfflineArtifacts":
        import os

        with open(os.path.join(directory, "classifier.json")) as fh:
            clf = TrainedModel.from_json(fh.read())
        regs = {}
        path = os.path.join(directory, "regressors.json")
        if os.path.exists(path):
            with open(path) as fh:
                raw = json.load(fh)
            regs = {k: {t: TrainedModel.from_dict(m) for t, m in v.items()} for k, v in raw.items()}
        return cls(dataset, clf, regs)


def fit_regressors(ds: LabeledDataset, family: str = RANDOM_FOREST, params: dict | None = None,
                   seed: int = 0, kinds=None) -> dict:
    out = {}
    for kind in kinds or ds.classes:
        if kind not in WINDOWED:
            continue
        sub = ds.of_kind(kind)
        if len(sub) < 2:
            continue
        out[kind] = {t: fit_param_regressor(family, sub, t, params or REGRESSOR_PARAMS, seed)
                     for t in ("window_size", "slide")}
    return out


def offline_phase(kinds, counts: dict | None = None, model: CostModel | None = None,
                  instances: list[Instance] | None = None, seed: int = 0, n_events: int = 10_000,
                  family: str = RANDOM_FOREST, grid=None, folds: int = 5, k: int = DEFAULT_K,
                  w_grid=W_GRID, s_grid=S_GRID, regressors: bool = True) -> OfflineArtifacts:
    """Profile, featurise, grid-search the classifier and fit window regressors."""
    kinds = list(kinds)
    if len(set(kinds)) < 2:
        raise DegenerateData("the offline phase needs at least two operator kinds")
    model = model or CostModel()
    counts = {kd: (counts or NEXMARK_COUNTS)[kd] for kd in kinds}
    instances = instances or operator_instances()
    traces = profile_suite(counts, instances, model, seed, n_events, w_grid, s_grid)
    ds = build_dataset(traces, k)
    best, table = grid_search(family, grid or QUICK_RF_GRID, ds, folds, seed)
    clf = fit(best, ds)
    regs = fit_regressors(ds, seed=seed) if regressors else {}
    return OfflineArtifacts(ds, clf, regs, table)


# ------------------------------------------------------------------- online


@dataclass
class StagePrediction:
    stage_id: str
    kind: str | None
    confidence: float
    window_size: float | None = None
    slide: float | None = None
    n_deltas: int = 0
    missed: int = 0
    note: str | None = None
    true_kind: str | None = None
    dispersion: float | None = None

    @property
    def correct(self) -> bool:
        return self.kind is not None and self.kind == self.true_kind


@dataclass
class RecoveredQuery:
    name: str
    stages: list
    edges: list

    def kinds(self) -> list:
        return [s.kind for s in self.stages]

    def to_dict(self) -> dict:
        return {"name": self.name, "edges": [list(e) for e in self.edges],
                "stages": [asdict(s) for s in self.stages]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def coefficient_of_variation(deltas) -> float:
    d = np.asarray(deltas, dtype=np.float64)
    m = d.mean()
    return float(d.std() / m) if m > 0 else 0.0


def observe_all(victim: PipelineSpec, inputs, opts: RunOptions) -> dict[str, TimingTrace | None]:
    """Run the victim with every stage observed; unlabeled traces per stage."""
    opts = RunOptions(**{**opts.__dict__, "observe": tuple(victim.stage_ids)})
    handle = run_pipeline(victim, inputs, opts)
    handle.wait()
    traces = {}
    for sid in victim.stage_ids:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ObserverStarved)
            probe = handle.probes[sid]
            if len(probe.times) < 2:
                traces[sid] = None
                continue
            traces[sid] = observe_stage(handle, sid, meta={"query_id": victim.name})
    return traces


def online_phase(victim: PipelineSpec, inputs, classifier: TrainedModel, regressors: dict | None = None,
                 mode: str = SIMULATED, model: CostModel | None = None, seed: int = 0,
                 k: int | None = None, trim: float = DEFAULT_TRIM, known_kinds: bool = False,
                 opts: RunOptions | None = None) -> RecoveredQuery:
    """Observe, featurise and classify every stage of ``victim``.

    Regressors are chosen by the predicted kind, or by the true kind with
    ``known_kinds`` (the idealised evaluation where the type is given).
    """
    if opts is None:
        if mode == SIMULATED:
            opts = RunOptions(mode="deterministic", clock="virtual", cost_model=model or CostModel(), seed=seed)
        elif mode == MEASURED:
            opts = RunOptions(mode="threaded", clock="wall", seed=seed)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    k = k or classifier.model.n_features
    traces = observe_all(victim, inputs, opts)
    stages = []
    for sid in victim.stage_ids:
        truth = victim.stage(sid).kind
        trace = traces[sid]
        if trace is None:
            stages.append(StagePrediction(sid, None, 0.0, note="fewer than two transitions observed",
                                          true_kind=truth))
            continue
        X = featurize([trace], k, trim)
        kind = str(classifier.predict(X)[0])
        conf = float(classifier.confidence(X)[0])
        pred = StagePrediction(sid, kind, conf, n_deltas=len(trace), missed=int(trace.meta.get("missed", 0)),
                               true_kind=truth, dispersion=coefficient_of_variation(trace.deltas))
        reg_kind = truth if known_kinds else kind
        if regressors and reg_kind in regressors:
            pred.window_size = float(regressors[reg_kind]["window_size"].predict(X)[0])
            pred.slide = float(regressors[reg_kind]["slide"].predict(X)[0])
        stages.append(pred)
    return RecoveredQuery(victim.name, stages, [list(e) for e in victim.edges])


# --------------------------------------------------------------------- QRSR


def qrsr(accuracies) -> float:
    """Product of per-operator accuracies; 1.0 for an empty query."""
    out = 1.0
    for a in accuracies:
        if not 0 <= a <= 1:
            raise ValueError(f"accuracy {a} outside [0, 1]")
        out *= a
    return out


@dataclass
class OperatorScore:
    stage_id: str
    kind: str
    n_samples: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n_samples if self.n_samples else 0.0


@dataclass
class QRSRReport:
    query_id: str
    setting: str
    model_id: str
    operators: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # (stage_id, kind, reason)
    note: str | None = None

    @property
    def accuracies(self) -> list:
        return [op.accuracy for op in self.operators]

    @property
    def qrsr(self) -> float:
        return qrsr(self.accuracies)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id, "setting": self.setting, "model_id": self.model_id,
            "operators": [{**asdict(op), "accuracy": op.accuracy} for op in self.operators],
            "excluded": [list(e) for e in self.excluded], "note": self.note, "qrsr": self.qrsr,
        }


def query_reports(test: LabeledDataset, pred: np.ndarray, setting: str, model_id: str,
                  query_ids=None, excluded_kinds=()) -> dict[str, QRSRReport]:
    out = {}
    for q in query_ids or sorted({x for x in test.query_id.tolist() if x is not None}):
        rep = QRSRReport(q, setting, model_id)
        kinds = CATALOG_KINDS.get(q)
        spec = catalog_query(q) if kinds else None
        stage_ids = spec.stage_ids if spec else sorted(set(test.stage_id[test.query_id == q].tolist()))
        for sid in stage_ids:
            mask = (test.query_id == q) & (test.stage_id == sid)
            kind = spec.stage(sid).kind if spec else str(test.labels[mask][0])
            if kind in excluded_kinds:
                rep.excluded.append((sid, kind, "class absent from training data"))
                continue
            n = int(mask.sum())
            if n == 0:
                continue
            rep.operators.append(OperatorScore(sid, kind, n, int((pred[mask] == test.labels[mask]).sum())))
        out[q] = rep
    return out


@dataclass
class SettingResult:
    setting: str
    reports: dict
    metrics: MetricsReport | None = None
    best: dict | None = None
    cv_table: list = field(default_factory=list)
    excluded_queries: dict = field(default_factory=dict)
    # the fitted classifier (setting 1 only); not part of the report
    model: TrainedModel | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "reports": {q: r.to_dict() for q, r in self.reports.items()},
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "best": self.best,
            "cv_table": self.cv_table,
            "excluded_queries": self.excluded_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _model_id(spec: ClassifierSpec) -> str:
    hp = ",".join(f"{k}={v}" for k, v in sorted(spec.hyperparams.items()))
    return f"{spec.family}({hp})"


def evaluate_setting1(ds: LabeledDataset, family: str = RANDOM_FOREST, grid=None, seed: int = 0,
                      ratio: float = 0.5, folds: int = 5) -> SettingResult:
    """Stratified even split; grid search on the training half; QRSR per query."""
    if len({q for q in ds.query_id.tolist() if q}) < 2:
        raise ValueError("need traces from at least two queries")
    train, test = split_even(ds, ratio, seed)
    best, table = grid_search(family, grid or QUICK_RF_GRID, train, folds, seed)
    model = fit(best, train)
    pred = model.predict(test.X)
    reports = query_reports(test, pred, "even_split", _model_id(best))
    metrics = classification_report(test.labels, pred, sorted(set(ds.classes)))
    return SettingResult("even_split", reports, metrics, best.to_dict(), table, model=model)


def evaluate_setting2(ds: LabeledDataset, family: str = RANDOM_FOREST, grid=None, seed: int = 0,
                      folds: int = 5, search: bool = False) -> SettingResult:
    """Leave one query out. Operators whose kind never occurs outside the
    held-out query are excluded; a query with nothing left is skipped.
    """
    queries = sorted({q for q in ds.query_id.tolist() if q})
    if len(queries) < 2:
        raise ValueError("need at least two queries")
    reports, excluded = {}, {}
    y_true, y_pred = [], []
    grid = grid or QUICK_RF_GRID
    for q in queries:
        mask = ds.query_id == q
        train, test = ds.where(~mask), ds.where(mask)
        absent = sorted(set(test.classes) - set(train.classes))
        kept = test.where(~np.isin(test.labels, absent))
        if len(kept) == 0:
            excluded[q] = f"every operator kind of {q} is absent from the other queries: {absent}"
            continue
        if search:
            best, _ = grid_search(family, grid, train, folds, seed)
        else:
            best = ClassifierSpec(family, expand_grid(grid)[0], seed)
        model = fit(best, train)
        pred = model.predict(kept.X)
        rep = query_reports(kept, pred, "leave_one_query_out", _model_id(best), [q])[q]
        spec = catalog_query(q) if q in CATALOG_KINDS else None
        if spec is not None:
            for sid in spec.stage_ids:
                if spec.stage(sid).kind in absent:
                    rep.excluded.append((sid, spec.stage(sid).kind, "class absent from training data"))
        reports[q] = rep
        y_true.extend(kept.labels.tolist())
        y_pred.extend(pred.tolist())
    metrics = classification_report(y_true, y_pred) if y_true else None
    return SettingResult("leave_one_query_out", reports, metrics, None, [], excluded)


def reports_csv(result: SettingResult, path) -> None:
    """Per-operator rows: Query, Operator, No. Samples, Correctly Predicted, %, QRSR."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "stage", "operator", "n_samples", "correct", "percent", "qrsr"])
        for q, rep in result.reports.items():
            for op in rep.operators:
                w.writerow([q, op.stage_id, op.kind, op.n_samples, op.correct,
                            f"{100 * op.accuracy:.2f}", f"{100 * rep.qrsr:.2f}"])


# --------------------------------------------------------------- mitigation


def padding_budget(model: CostModel, specs, payload_bytes: float = 400.0, w_max: int = max(W_GRID),
                   z: float = 6.0) -> int:
    """A per-record budget above nearly every unpadded cost of ``specs``.

    ``specs`` is a list of operator chains (one per stage) whose items are
    OperatorSpecs or bare kind names; fused stages pay for every operator in
    their chain.
    """
    budget = 0.0
    for chain in specs:
        total = model.per_byte * payload_bytes
        for op in chain:
            kind = op if isinstance(op, str) else op.kind
            c = model.cost(kind)
            total += c.loc + z * model.jitter * c.scale
            if c.h0 is not None:
                w = (None if isinstance(op, str) else op.window_size) or w_max
                total += c.h0 + c.h1 * w + z * model.jitter * c.heavy_scale
        budget = max(budget, total)
    return int(math.ceil(budget))


def apply_mitigation(victim: PipelineSpec, mitigation: str, params: dict | None = None,
                     model: CostModel | None = None) -> PipelineSpec:
    params = params or {}
    if mitigation == "pad":
        target = params.get("target")
        if target is None:
            target = padding_budget(model or CostModel(), [victim.stage(s).ops for s in victim.stage_ids])
        return pad_all(victim, int(target))
    if mitigation == "fuse":
        ids = params.get("stages") or victim.topo_order()
        return fuse_stages(victim, list(ids))
    if mitigation == "batch":
        b = int(params.get("batch_size", 1))
        for sid in params.get("stages") or victim.stage_ids:
            victim = batch_stage(victim, sid, b)
        return victim
    raise ValueError(f"unknown mitigation {mitigation!r}")


@dataclass
class MitigationReport:
    mitigation: str
    params: dict
    before: RecoveredQuery
    after: RecoveredQuery
    outputs_equal: bool

    @staticmethod
    def _acc(rq: RecoveredQuery) -> float:
        return float(np.mean([s.correct for s in rq.stages])) if rq.stages else 0.0

    @staticmethod
    def _cv(rq: RecoveredQuery) -> float:
        vals = [s.dispersion for s in rq.stages if s.dispersion is not None]
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self) -> dict:
        b, a = self._acc(self.before), self._acc(self.after)
        qb = qrsr([float(s.correct) for s in self.before.stages])
        qa = qrsr([float(s.correct) for s in self.after.stages])
        return {
            "mitigation": self.mitigation, "params": self.params,
            "before": {"accuracy": b, "qrsr": qb, "cv": self._cv(self.before), "stages": len(self.before.stages),
                       "recovered": self.before.to_dict()},
            "after": {"accuracy": a, "qrsr": qa, "cv": self._cv(self.after), "stages": len(self.after.stages),
                      "recovered": self.after.to_dict()},
            "accuracy_delta": a - b, "qrsr_delta": qa - qb, "outputs_equal": self.outputs_equal,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def evaluate_mitigation(victim: PipelineSpec, mitigation: str, params: dict | None, artifacts: OfflineArtifacts,
                        inputs, model: CostModel | None = None, seed: int = 0) -> MitigationReport:
    """Attack the plain and the mitigated victim with the same artifacts."""
    model = model or CostModel()
    mitigated = apply_mitigation(victim, mitigation, params, model)
    before = online_phase(victim, inputs, artifacts.classifier, artifacts.regressors, model=model, seed=seed)
    after = online_phase(mitigated, inputs, artifacts.classifier, artifacts.regressors, model=model, seed=seed)
    ref_a = run_reference(victim, inputs)
    ref_b = run_reference(mitigated, inputs)
    equal = list(ref_a.values()) == list(ref_b.values())
    if equal:
        opts = RunOptions(cost_model=model, seed=seed)
        equal = list(run_pipeline(mitigated, inputs, opts).outputs.values()) == list(ref_a.values())
    return MitigationReport(mitigation, dict(params or {}), before, after, equal)


def padded_suite_accuracy(classifier: TrainedModel, model: CostModel, kinds=SIX_KINDS, per_kind: int = 50,
                          instances: list[Instance] | None = None, seed: int = 0, n_events: int = 10_000,
                          budget: int | None = None) -> dict:
    """Classifier accuracy and dispersion on padded synthetic traces of ``kinds``."""
    instances = instances or operator_instances()
    if budget is None:
        budget = padding_budget(model, [[kd] for kd in kinds])
    counts = {kd: per_kind for kd in kinds}
    traces = profile_suite(counts, instances, model, child_seed(seed, "padded"), n_events, pad_target=budget)
    ds = build_dataset(traces, classifier.model.n_features)
    pred = classifier.predict(ds.X)
    cvs = [coefficient_of_variation(t.deltas) for t in traces]
    report = classification_report(ds.labels, pred, sorted(set(kinds) | set(classifier.classes)))
    return {"budget": budget, "accuracy": report.accuracy, "mean_cv": float(np.mean(cvs)),
            "max_cv": float(np.max(cvs)), "metrics": report.to_dict(), "n": len(traces)}

