"""Compiled vs pure-Python tree kernels on CDF-shaped data.

    python3 benchmarks/bench_kernels.py [--rows 1500] [--features 256] [--trees 20]

Both backends must produce identical trees; the script checks predictions
before timing anything.
"""
import argparse
import time

import numpy as np

from streamleak.kernels import get_backend
from streamleak.models import GradientBoostingRegressor, RandomForestClassifier


def make_data(rows, features, classes, seed):
    gen = np.random.default_rng(seed)
    y = gen.integers(0, classes, rows)
    # sorted columns, like quantile features of timing traces
    base = 1500 + 150 * y[:, None] + gen.normal(0, 40, (rows, features))
    X = np.sort(base, axis=1)
    return X, np.array([f"k{c}" for c in y], dtype=object), X[:, -1] - X[:, 0]


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=1500)
    p.add_argument("--features", type=int, default=256)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    X, labels, target = make_data(args.rows, args.features, args.classes, args.seed)
    backends = {name: get_backend(name) for name in ("compiled", "python")}
    jobs = {
        "forest fit": lambda b: RandomForestClassifier(n_estimators=args.trees, seed=1).fit(X, labels, backend=b),
        "boosted fit": lambda b: GradientBoostingRegressor(n_estimators=args.trees, max_depth=6, seed=1).fit(
            X, target, backend=b),
    }

    models = {}
    for job, fn in jobs.items():
        preds = [fn(b).predict(X) for b in backends.values()]
        if not np.array_equal(preds[0], preds[1]):
            raise SystemExit(f"{job}: backends disagree")
        models[job] = {name: fn(b) for name, b in backends.items()}

    print(f"{args.rows} rows x {args.features} features, {args.trees} trees, best of {args.repeat}")
    print(f"{'task':<14}{'compiled s':>12}{'python s':>12}{'speedup':>10}")
    for job, fn in jobs.items():
        t = {name: timed(lambda: fn(b), args.repeat)[0] for name, b in backends.items()}
        print(f"{job:<14}{t['compiled']:>12.3f}{t['python']:>12.3f}{t['python'] / t['compiled']:>9.1f}x")
    trees = models["forest fit"]["compiled"].trees

    def route(b):
        return [b.apply_tree(X, tr.feature, tr.threshold, tr.left, tr.right) for tr in trees]

    t = {name: timed(lambda: route(b), args.repeat)[0] for name, b in backends.items()}
    print(f"{'forest apply':<14}{t['compiled']:>12.3f}{t['python']:>12.3f}{t['python'] / t['compiled']:>9.1f}x")


if __name__ == "__main__":
    main()
