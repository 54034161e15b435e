import json

import numpy as np
import pytest

from streamleak import attack
from streamleak.attack import (
    SIX_KINDS,
    OperatorScore,
    QRSRReport,
    apply_mitigation,
    coefficient_of_variation,
    evaluate_mitigation,
    evaluate_setting1,
    evaluate_setting2,
    offline_phase,
    online_phase,
    operator_instances,
    padded_suite_accuracy,
    padding_budget,
    profile_suite,
    qrsr,
    reports_csv,
    split_counts,
)
from streamleak.costmodel import CostModel
from streamleak.features import build_dataset
from streamleak.generators import QUERY_IDS, GeneratorConfig, catalog_query, query_inputs

GRID = {"n_estimators": [100], "max_depth": [None], "max_features": ["sqrt"], "bootstrap": [True]}
CFG = GeneratorConfig(seed=2, persons=400, auctions=1200, bids=18400, flights=2000)


@pytest.fixture(scope="module")
def instances():
    return operator_instances()


@pytest.fixture(scope="module")
def suite(instances):
    counts = {k: 24 for k in (*SIX_KINDS, "Count")}
    return build_dataset(profile_suite(counts, instances, CostModel(), seed=1, n_events=2000), k=128)


@pytest.fixture(scope="module")
def artifacts(instances):
    counts = {"Map": 250, "Filter": 250, "Max": 100, "Average": 100}
    return offline_phase(counts, counts, CostModel(), instances, seed=0, grid=GRID, folds=2, k=256)


def test_qrsr_arithmetic():
    assert qrsr([0.8882, 1.0]) == pytest.approx(0.8882, abs=1e-4)
    assert qrsr([0.9946, 0.9933, 1.0, 0.9844]) == pytest.approx(0.9726, abs=1e-4)
    assert qrsr([]) == 1.0
    with pytest.raises(ValueError):
        qrsr([1.2])


def test_report_qrsr_from_counts():
    rep = QRSRReport("Q2", "even_split", "m", [OperatorScore("filter", "Filter", 152, 135),
                                               OperatorScore("map", "Map", 125, 125)])
    assert round(100 * rep.qrsr, 2) == 88.82
    assert rep.to_dict()["qrsr"] == rep.qrsr


def test_split_counts():
    assert split_counts(10, 3) == [4, 3, 3]
    assert sum(split_counts(1297, 4)) == 1297


def test_instances_cover_the_catalog(instances):
    kinds = {(i.query_id, i.spec.kind) for i in instances}
    assert ("Q6", "AveragePartition") in kinds and ("Q5", "Count") in kinds
    assert len([i for i in instances if i.spec.kind == "Filter"]) == 4
    assert all(i.input_fields for i in instances)


def test_suite_labels_and_meta(suite):
    assert sorted(set(suite.labels.tolist())) == sorted({*SIX_KINDS, "Count"})
    assert (suite.labels == "Filter").sum() == 24
    assert set(suite.query_id.tolist()) == set(QUERY_IDS)
    assert suite.of_kind("Join").window_size.min() >= 8


def test_setting1_reports_every_query(suite):
    res = evaluate_setting1(suite, grid=GRID, seed=0, folds=2)
    assert set(res.reports) == set(QUERY_IDS)
    assert [op.kind for op in res.reports["Q3"].operators] == ["Filter", "Filter", "Join", "Map"]
    assert res.metrics.support == sum(op.n_samples for r in res.reports.values() for op in r.operators)


def test_setting2_excludes_unique_kinds(suite, tmp_path):
    res = evaluate_setting2(suite, grid=GRID, seed=0)
    assert "Q5" in res.excluded_queries and "Q5" not in res.reports
    assert [e[1] for e in res.reports["Q6"].excluded] == ["AveragePartition"]
    assert [e[1] for e in res.reports["Q4"].excluded] == ["Average"]
    assert [op.kind for op in res.reports["Q6"].operators] == ["Join", "Filter", "Max"]
    reports_csv(res, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("query,stage,operator")


def test_online_recovers_q2(artifacts):
    inputs = query_inputs("Q2", CFG, 3000)
    rq = online_phase(catalog_query("Q2"), inputs, artifacts.classifier, artifacts.regressors, seed=4)
    assert rq.kinds() == ["Filter", "Map"]
    assert all(s.correct for s in rq.stages)
    assert json.loads(rq.to_json())["name"] == "Q2"


def test_online_estimates_window_of_known_kind(artifacts):
    victim = catalog_query("Q4", {"max": {"window_size": 16, "slide": 4}})
    inputs = query_inputs("Q4", CFG, 6000)
    rq = online_phase(victim, inputs, artifacts.classifier, artifacts.regressors, seed=1, known_kinds=True)
    mx = rq.stages[1]
    assert mx.true_kind == "Max" and mx.window_size is not None


def test_artifacts_round_trip(artifacts, tmp_path):
    artifacts.save(tmp_path)
    back = attack.OfflineArtifacts.load(tmp_path)
    X = artifacts.dataset.X[:20]
    assert np.array_equal(back.classifier.predict(X), artifacts.classifier.predict(X))
    assert set(back.regressors) == set(artifacts.regressors) == {"Max", "Average"}


def test_padding_budget_covers_zero_jitter_costs():
    m = CostModel()
    budget = padding_budget(m, [[k] for k in SIX_KINDS])
    flat = CostModel(jitter=0)
    worst = max(flat.sample_events([(k, "heavy" if flat.cost(k).h0 else "base")], {k: 64}, 400,
                                   np.random.default_rng(0)) for k in SIX_KINDS)
    assert budget > worst
    assert padding_budget(m, [["Map", "Filter"]]) > padding_budget(m, [["Map"]])


def test_coefficient_of_variation():
    assert coefficient_of_variation([5, 5, 5]) == 0.0
    assert coefficient_of_variation([1, 3]) == pytest.approx(0.5)


def test_fuse_gives_one_stage_and_same_outputs(artifacts):
    inputs = query_inputs("Q2", CFG, 2000)
    rep = evaluate_mitigation(catalog_query("Q2"), "fuse", None, artifacts, inputs, seed=3)
    assert rep.outputs_equal and len(rep.after.stages) == 1
    assert rep.to_dict()["after"]["stages"] == 1


def test_batch_of_one_changes_nothing(artifacts):
    inputs = query_inputs("Q2", CFG, 2000)
    rep = evaluate_mitigation(catalog_query("Q2"), "batch", {"batch_size": 1}, artifacts, inputs, seed=3)
    assert rep.outputs_equal
    assert rep.before.to_dict() == rep.after.to_dict()


def test_pad_flattens_and_preserves_outputs(artifacts):
    inputs = query_inputs("Q2", CFG, 2000)
    rep = evaluate_mitigation(catalog_query("Q2"), "pad", None, artifacts, inputs, seed=3)
    assert rep.outputs_equal
    assert rep.to_dict()["after"]["cv"] < 0.05 < rep.to_dict()["before"]["cv"] + 0.05


def test_unknown_mitigation():
    with pytest.raises(ValueError):
        apply_mitigation(catalog_query("Q1"), "shuffle")


def test_padded_suite_is_flat(artifacts, instances):
    out = padded_suite_accuracy(artifacts.classifier, CostModel(), ("Map", "Filter", "Max", "Average"), 8,
                                instances, seed=0)
    assert out["n"] == 32 and out["max_cv"] < 0.05
    assert out["accuracy"] <= 0.25 + 0.15


def test_offline_needs_two_kinds(instances):
    with pytest.raises(attack.DegenerateData):
        offline_phase(["Map"], instances=instances)
