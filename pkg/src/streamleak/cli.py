"""Command-line driver: generate, profile, featurize, train, attack, mitigate, report.

Every subcommand reads an optional JSON experiment config, applies flag
overrides, and writes its outputs plus the resolved config under ``--out``.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import attack
from .costmodel import CostModel, InvalidModel
from .features import DEFAULT_K, DEFAULT_TRIM, LabeledDataset, build_dataset
from .generators import QUERY_IDS, SECURESTREAM, GeneratorConfig, catalog_query, gen_flights, gen_nexmark, query_inputs
from .models import PARAM_GRIDS, RANDOM_FOREST, TrainedModel, cv_table_csv, evaluate, fit, grid_search
from .models.selection import FAMILIES
from .observer import read_traces, write_traces

CONFIG_VERSION = 1
OK, CONFIG_ERROR, RUNTIME_ERROR = 0, 2, 3


class ConfigError(ValueError):
    pass


class MissingInput(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    mode: str = "simulated"
    out: str = "out"
    suite: str = "nexmark"  # or "securestream"
    scale: float = 1.0  # fraction of the reference trace counts
    n_events: int = 10_000
    generator: dict = field(default_factory=dict)
    cost_model: dict = field(default_factory=dict)
    k: int = DEFAULT_K
    trim: float = DEFAULT_TRIM
    normalize: bool = False
    family: str = RANDOM_FOREST
    grid: dict | None = None  # None: the quick grid; "full" via --full-grid
    folds: int = 5
    setting: int = 1
    query: str = "Q2"
    input_limit: int = 20_000
    mitigation: dict = field(default_factory=lambda: {"kind": "pad", "params": {}})

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is not supported")
        if self.mode not in ("simulated", "measured"):
            raise ConfigError(f"mode must be simulated or measured, not {self.mode!r}")
        if self.suite not in ("nexmark", "securestream"):
            raise ConfigError(f"unknown suite {self.suite!r}")
        if not 0 < self.scale <= 1:
            raise ConfigError("scale must lie in (0, 1]")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.setting not in (1, 2):
            raise ConfigError("setting must be 1 or 2")
        if self.query not in QUERY_IDS + (SECURESTREAM,):
            raise ConfigError(f"unknown query {self.query!r}")
        if self.k < 2 or self.n_events < 2 or self.folds < 2:
            raise ConfigError("k, n_events and folds must be at least 2")
        try:
            self.generator_config()
            self.model()
        except (TypeError, ValueError, InvalidModel) as exc:
            raise ConfigError(str(exc)) from exc

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig.from_dict({"seed": self.seed, **self.generator})

    def model(self) -> CostModel:
        return CostModel.from_dict(self.cost_model) if self.cost_model else CostModel()

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | None) -> ExperimentConfig:
    if not path:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**raw)


# ------------------------------------------------------------------ helpers


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(path: str) -> str:
    if not os.path.exists(path):
        raise MissingInput(f"missing input {path}; run the earlier subcommand first")
    return path


def _counts(cfg: ExperimentConfig) -> dict:
    base = attack.NEXMARK_COUNTS if cfg.suite == "nexmark" else attack.SECURESTREAM_COUNTS
    return {k: max(2, int(round(v * cfg.scale))) for k, v in base.items()}


def _grid(cfg: ExperimentConfig, full: bool) -> dict:
    if full:
        return PARAM_GRIDS[cfg.family]
    if cfg.grid:
        return cfg.grid
    if cfg.family == RANDOM_FOREST:
        return attack.QUICK_RF_GRID
    return {"n_estimators": [100], "max_depth": [6], "gamma": [0]}


def _instances(cfg: ExperimentConfig):
    queries = QUERY_IDS if cfg.suite == "nexmark" else (SECURESTREAM,)
    return attack.operator_instances(queries)


# ------------------------------------------------------------- subcommands


def cmd_generate(cfg: ExperimentConfig, args) -> dict:
    gcfg = cfg.generator_config()
    files = {}
    streams = gen_nexmark(gcfg)
    streams["flights"] = gen_flights(gcfg)
    for name, stream in streams.items():
        path = os.path.join(cfg.out, f"{name}.jsonl")
        with open(path, "w") as fh:
            stream.write_jsonl(fh)
        files[name] = {"path": os.path.basename(path), "records": len(stream), "sha256": _sha256(path)}
    manifest = {"config": cfg.to_dict(), "generator": asdict(gcfg), "files": files}
    _write_json(os.path.join(cfg.out, "manifest.json"), manifest)
    return manifest


def cmd_profile(cfg: ExperimentConfig, args) -> dict:
    model = cfg.model()
    counts = _counts(cfg)
    if args.reps:
        counts = {k: args.reps for k in counts}
    traces = attack.profile_suite(counts, _instances(cfg), model, cfg.seed, cfg.n_events)
    path = os.path.join(cfg.out, "traces.jsonl")
    n = write_traces(traces, path)
    meta = {"config": cfg.to_dict(), "counts": counts, "traces": n, "cost_model": model.to_dict()}
    _write_json(path + ".meta.json", meta)
    return meta


def cmd_featurize(cfg: ExperimentConfig, args) -> dict:
    traces = list(read_traces(_need(os.path.join(cfg.out, "traces.jsonl"))))
    ds = build_dataset(traces, cfg.k, cfg.trim, cfg.normalize)
    ds.meta["config"] = cfg.to_dict()
    ds.to_csv(os.path.join(cfg.out, "dataset.csv"))
    return {"rows": len(ds), "classes": ds.classes}


def _load_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    return LabeledDataset.from_csv(_need(os.path.join(cfg.out, "dataset.csv")))


def cmd_train(cfg: ExperimentConfig, args) -> dict:
    ds = _load_dataset(cfg)
    best, table = grid_search(cfg.family, _grid(cfg, args.full_grid), ds, cfg.folds, cfg.seed)
    clf = fit(best, ds)
    clf.meta["config"] = cfg.to_dict()
    regs = attack.fit_regressors(ds, seed=cfg.seed)
    art = attack.OfflineArtifacts(ds, clf, regs, table)
    art.save(cfg.out)
    cv_table_csv(table, os.path.join(cfg.out, "cv_table.csv"))
    summary = {"config": cfg.to_dict(), "best": best.to_dict(), "grid_points": len(table),
               "train_metrics": evaluate(clf, ds).to_dict()}
    _write_json(os.path.join(cfg.out, "train_report.json"), summary)
    return summary


def _victim_inputs(cfg: ExperimentConfig):
    return query_inputs(cfg.query, cfg.generator_config(), cfg.input_limit)


def cmd_attack(cfg: ExperimentConfig, args) -> dict:
    _need(os.path.join(cfg.out, "classifier.json"))
    art = attack.OfflineArtifacts.load(cfg.out)
    victim = catalog_query(cfg.query)
    rq = attack.online_phase(victim, _victim_inputs(cfg), art.classifier, art.regressors, cfg.mode,
                             cfg.model(), cfg.seed, cfg.k, cfg.trim)
    recovered = {"config": cfg.to_dict(), **rq.to_dict()}
    _write_json(os.path.join(cfg.out, "recovered_query.json"), recovered)
    out = {"recovered": recovered}
    dataset = os.path.join(cfg.out, "dataset.csv")
    if os.path.exists(dataset):
        ds = _load_dataset(cfg)
        if cfg.setting == 1:
            res = attack.evaluate_setting1(ds, cfg.family, _grid(cfg, False), cfg.seed, folds=cfg.folds)
        else:
            res = attack.evaluate_setting2(ds, cfg.family, _grid(cfg, False), cfg.seed, cfg.folds)
        report = {"config": cfg.to_dict(), **res.to_dict()}
        _write_json(os.path.join(cfg.out, "qrsr_report.json"), report)
        attack.reports_csv(res, os.path.join(cfg.out, "qrsr_report.csv"))
        out["qrsr"] = {q: r.qrsr for q, r in res.reports.items()}
    return out


def cmd_mitigate(cfg: ExperimentConfig, args) -> dict:
    _need(os.path.join(cfg.out, "classifier.json"))
    art = attack.OfflineArtifacts.load(cfg.out)
    kind = args.mitigation or cfg.mitigation.get("kind", "pad")
    params = dict(cfg.mitigation.get("params") or {})
    if args.batch_size:
        params["batch_size"] = args.batch_size
    if args.pad_target:
        params["target"] = args.pad_target
    model = cfg.model()
    rep = attack.evaluate_mitigation(catalog_query(cfg.query), kind, params, art, _victim_inputs(cfg),
                                     model, cfg.seed)
    body = {"config": cfg.to_dict(), **rep.to_dict()}
    suite = attack.padded_suite_accuracy(art.classifier, model, per_kind=args.per_kind,
                                         instances=_instances(cfg), seed=cfg.seed,
                                         n_events=cfg.n_events) if kind == "pad" else None
    body["padded_suite"] = suite
    _write_json(os.path.join(cfg.out, "mitigation_report.json"), body)
    return body


def cmd_report(cfg: ExperimentConfig, args) -> dict:
    written = []
    traces_path = os.path.join(cfg.out, "traces.jsonl")
    dataset_path = os.path.join(cfg.out, "dataset.csv")
    if not os.path.exists(traces_path) and not os.path.exists(dataset_path):
        raise MissingInput("nothing to report: no traces.jsonl or dataset.csv under --out")
    if os.path.exists(traces_path):
        # pooled empirical CDF per operator kind, on a common quantile grid
        pooled: dict[str, list] = {}
        for t in read_traces(traces_path):
            pooled.setdefault(t.label, []).append(t.deltas)
        path = os.path.join(cfg.out, "cdf_curves.csv")
        with open(path, "w") as fh:
            fh.write("label,x,y\n")
            for label in sorted(pooled):
                d = np.sort(np.concatenate(pooled[label]))
                for j in range(args.points):
                    y = j / (args.points - 1)
                    x = d[int(np.floor(y * (len(d) - 1)))]
                    fh.write(f"{label},{int(x)},{y:.6f}\n")
        written.append(path)
    if os.path.exists(os.path.join(cfg.out, "classifier.json")) and os.path.exists(dataset_path):
        with open(os.path.join(cfg.out, "classifier.json")) as fh:
            clf = TrainedModel.from_json(fh.read())
        ds = _load_dataset(cfg)
        res = attack.evaluate_setting1(ds, cfg.family, _grid(cfg, False), cfg.seed, folds=cfg.folds) \
            if args.evaluate else None
        metrics = res.metrics if res else evaluate(clf, ds)
        path = os.path.join(cfg.out, "confusion.csv")
        with open(path, "w") as fh:
            fh.write("true\\pred," + ",".join(metrics.classes) + "\n")
            for c, row in zip(metrics.classes, metrics.confusion):
                fh.write(c + "," + ",".join(str(v) for v in row) + "\n")
        written.append(path)
        _write_json(os.path.join(cfg.out, "metrics.json"), {"config": cfg.to_dict(), **metrics.to_dict()})
        written.append(os.path.join(cfg.out, "metrics.json"))
    return {"written": [os.path.basename(p) for p in written]}


COMMANDS = {
    "generate": cmd_generate,
    "profile": cmd_profile,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "attack": cmd_attack,
    "mitigate": cmd_mitigate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=["simulated", "measured"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--query", help="catalog query id, e.g. Q2 or SecureStream")
    common.add_argument("--model", dest="family", help="model family")
    common.add_argument("--setting", type=int, help="1: even split, 2: leave one query out")
    common.add_argument("--scale", type=float, help="fraction of the reference trace counts")
    common.add_argument("--n-events", type=int, dest="n_events")
    common.add_argument("--suite", choices=["nexmark", "securestream"])

    p = argparse.ArgumentParser(prog="streamleak", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write synthetic input streams")
    sp = sub.add_parser("profile", parents=[common], help="synthesise labeled timing traces")
    sp.add_argument("--reps", type=int, help="traces per operator kind (overrides counts)")
    sub.add_parser("featurize", parents=[common], help="traces -> CDF feature dataset")
    sp = sub.add_parser("train", parents=[common], help="grid-search and fit the models")
    sp.add_argument("--full-grid", action="store_true", help="search the family's complete grid")
    sub.add_parser("attack", parents=[common], help="recover a victim query; QRSR on the dataset")
    sp = sub.add_parser("mitigate", parents=[common], help="attack a mitigated victim")
    sp.add_argument("--mitigation", choices=["pad", "fuse", "batch"])
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--pad-target", type=int)
    sp.add_argument("--per-kind", type=int, default=50)
    sp = sub.add_parser("report", parents=[common], help="figure data: CDF curves, confusion matrix")
    sp.add_argument("--points", type=int, default=201)
    sp.add_argument("--evaluate", action="store_true", help="score a held-out split instead of the training set")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    for name in ("seed", "mode", "out", "query", "family", "setting", "scale", "n_events", "suite"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code == 0 else CONFIG_ERROR
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        _write_json(os.path.join(cfg.out, "config.json"), cfg.to_dict())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = COMMANDS[args.command](cfg, args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    print(json.dumps({"command": args.command, "out": cfg.out, **_brief(result)}, sort_keys=True))
    return OK


def _brief(result: dict) -> dict:
    keep = {}
    for k, v in result.items():
        if k == "config":
            continue
        if isinstance(v, (int, float, str, bool)) or (isinstance(v, list) and len(v) < 20):
            keep[k] = v
        elif isinstance(v, dict) and len(json.dumps(v)) < 400:
            keep[k] = v
    return keep


if __name__ == "__main__":
    sys.exit(main())
