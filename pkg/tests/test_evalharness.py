import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapedistill.datasets import Dataset, Task, f1, f1_ground_truth
from shapedistill.distill_trees import SatConfig, fit_sat
from shapedistill.errors import DataError, NoLabels, SchemaVersionMismatch, UnknownFeature
from shapedistill.evalharness import (EvalReport, ExplainConfig, ProbeSpec, ReportGrid,
                                      align_intercept, auroc, build_probe_spec, evaluate, explain,
                                      monotonicity_audit, probe_easy_hard, rmse, shape_distance,
                                      step_score)
from shapedistill.shapes import AdditiveModel, FeatureShape, Mode, predict_additive


def pair_count_auroc(y, s):
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return 100.0 * wins / (len(pos) * len(neg))


# ---------------------------------------------------------------- metrics

def test_auroc_examples():
    assert auroc([1, 0], [0.9, 0.1]) == 100.0
    assert auroc([1, 0], [0.1, 0.9]) == 0.0
    assert auroc([1, 0], [0.5, 0.5]) == 50.0


def test_auroc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        # rounding creates ties on purpose
        s = np.round(rng.normal(size=n), 1)
        assert auroc(y, s) == pytest.approx(pair_count_auroc(y, s), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=4, max_size=40))
def test_auroc_invariant_to_monotone_transforms(scores):
    # integer scores keep exp strictly monotone in floating point
    s = np.array(scores, dtype=float) / 10
    y = (np.arange(len(s)) % 2).astype(float)
    assert auroc(y, np.exp(s)) == pytest.approx(auroc(y, s))


def test_auroc_needs_both_classes():
    with pytest.raises(DataError):
        auroc([1, 1], [0.2, 0.3])


def test_rmse():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(np.sqrt(2.0))


# ---------------------------------------------------------------- evaluate

def additive_teacher():
    a = FeatureShape("a", np.linspace(-1, 1, 9), np.linspace(-1, 1, 9) ** 3, Mode.CUBIC_SPLINE)
    b = FeatureShape("b", [-1.0, 0.0], [1.0, -1.0])
    return AdditiveModel(0.5, (a, b))


def test_fidelity_of_a_teacher_to_itself_is_zero():
    m = additive_teacher()
    X = np.random.default_rng(1).uniform(-1, 1, (300, 2))
    ds = Dataset(X, ("a", "b"), predict_additive(m, X) + 0.1)
    r = evaluate(m, m, ds)
    assert r.fidelity_rmse == 0.0
    assert r.accuracy == pytest.approx(0.1) and r.accuracy_metric == "rmse"


def test_missing_labels():
    m = additive_teacher()
    ds = Dataset(np.random.default_rng(2).uniform(-1, 1, (50, 2)), ("a", "b"))
    r = evaluate(m, m, ds)
    assert r.accuracy is None and r.fidelity_rmse == 0.0
    with pytest.raises(NoLabels):
        evaluate(m, m, ds, require_labels=True)


def test_binary_accuracy_is_auroc():
    m = additive_teacher()
    X = np.random.default_rng(3).uniform(-1, 1, (200, 2))
    y = (predict_additive(m, X) > 0.5).astype(float)
    r = evaluate(m, m, Dataset(X, ("a", "b"), y, Task.BINARY))
    assert r.accuracy_metric == "auroc" and r.accuracy == 100.0


def test_align_intercept_only_shifts_predictions():
    m = additive_teacher()
    ds = Dataset(np.random.default_rng(4).uniform(-1, 1, (100, 2)), ("a", "b"))
    shifted = AdditiveModel(7.0, m.shapes)
    aligned = align_intercept(shifted, m, ds)
    np.testing.assert_allclose(predict_additive(aligned, ds), predict_additive(m, ds), atol=1e-12)


# ---------------------------------------------------------------- shapes vs truth

def test_shape_distance_cases():
    truth = lambda x: np.sin(3 * x)  # noqa: E731
    g = np.linspace(-1, 1, 401)
    sampled = FeatureShape("a", g, truth(g), Mode.CUBIC_SPLINE)
    d = shape_distance(sampled, truth)
    assert d.l_inf < 1e-6 and d.l2 < 1e-6
    off = shape_distance(lambda x: truth(x) + 3.0, truth)
    assert off.l_inf == pytest.approx(0.0, abs=1e-12)
    half = shape_distance(lambda x: 0.5 * truth(x), truth)
    assert half.l_inf > 0.4 and half.l2 < half.l_inf


def test_sat_on_analytic_f1_recovers_x8():
    X = np.random.default_rng(5).uniform(-1, 1, (20_000, 10))
    m = fit_sat(X, f1(X), SatConfig(bags=3))
    truth = f1_ground_truth()
    d = shape_distance(m.shape("x8"), lambda x: truth.raw("x8", x), reference=X[:, 7])
    assert d.l_inf <= 0.1


# ---------------------------------------------------------------- probes

def test_perfect_teacher_scores_zero_on_every_probe_set():
    truth = f1_ground_truth()
    X = np.random.default_rng(6).uniform(-1, 1, (2000, 10))
    learned = fit_sat(X, f1(X), SatConfig(rounds=50, bags=1))
    spec = build_probe_spec(learned, truth, n=2000)
    out = probe_easy_hard(f1, spec, f1, truth.feature_names)
    assert set(out) == {"rmse_easy", "rmse_all", "rmse_hard"}
    assert max(out.values()) < 1e-12


def test_probe_spec_selects_extremes_of_disagreement():
    truth = f1_ground_truth()
    X = np.random.default_rng(7).uniform(-1, 1, (3000, 10))
    learned = fit_sat(X, f1(X), SatConfig(rounds=50, bags=1))
    spec = build_probe_spec(learned, truth, n_features=3, k=5)
    assert len(spec.hard) == 3 and all(len(v) == 5 for v in spec.hard.values())
    assert spec.easy.keys() == spec.hard.keys()


def test_probe_values_must_stay_in_domain():
    with pytest.raises(DataError):
        ProbeSpec({"x1": (1.5,)}, {"x1": (0.0,)})
    with pytest.raises(DataError):
        ProbeSpec({"x1": ()}, {"x1": (0.0,)})
    spec = ProbeSpec({"zz": (0.0,)}, {"zz": (0.0,)}, n=10)
    with pytest.raises(UnknownFeature):
        probe_easy_hard(f1, spec, f1, f1_ground_truth().feature_names)


# ---------------------------------------------------------------- controlled experiments

def test_staircase_teacher_gives_high_step_score():
    X = np.random.default_rng(8).uniform(-1, 1, (8000, 3))
    cuts = [-0.5, 0.0, 0.5]
    stairs = np.digitize(X[:, 0], cuts).astype(float)
    m_step = fit_sat(X, stairs + X[:, 1], SatConfig(bags=2))
    m_line = fit_sat(X, 1.5 * X[:, 0] + X[:, 1], SatConfig(bags=2))
    s_step = step_score(m_step.shape("x1"), X[:, 0], cuts)
    s_line = step_score(m_line.shape("x1"), X[:, 0], cuts)
    assert s_step > 0.95
    # a line over four equal bins keeps 1/16 of its variance inside the bins
    assert s_line == pytest.approx(15 / 16, abs=0.01)
    assert step_score(lambda x: np.zeros_like(x), X[:, 0], cuts) == 0.0


def test_monotonicity_audit_flags_only_the_reversed_feature():
    up = FeatureShape("a", np.linspace(-1, 1, 5), np.linspace(-1, 1, 5))
    down = FeatureShape("b", np.linspace(-1, 1, 5), -np.linspace(-1, 1, 5))
    m = AdditiveModel(0.0, (up, down))
    ds = Dataset(np.random.default_rng(9).uniform(-1, 1, (100, 2)), ("a", "b"))
    rep = monotonicity_audit(m, {"a": "increasing", "b": "increasing"}, net=m, ds=ds)
    assert rep["a"].holds and not rep["b"].holds
    assert rep["a"].fraction_expected == 1.0 and rep["b"].fraction_reversed == 1.0
    assert monotonicity_audit(m, {}) == {}
    with pytest.raises(UnknownFeature):
        monotonicity_audit(m, {"c": "increasing"})


# ---------------------------------------------------------------- dispatch and reports

def test_explain_rejects_unknown_method():
    m = additive_teacher()
    ds = Dataset(np.zeros((3, 2)), ("a", "b"))
    with pytest.raises(DataError):
        explain("LIME", m, ds)


def test_every_method_produces_an_additive_model():
    m = additive_teacher()
    ds = Dataset(np.random.default_rng(10).uniform(-1, 1, (300, 2)), ("a", "b"))
    cfg = ExplainConfig(sat=SatConfig(rounds=30, bags=1))
    for method in ("SAT", "SAS", "PD", "gSHAP"):
        e = explain(method, m, ds, cfg)
        assert e.method == method and e.feature_names == ("a", "b")


def _grid():
    g = ReportGrid()
    for seed, (fid, acc) in enumerate([(0.1, 0.5), (0.2, 0.7)]):
        g.add(EvalReport("SAT", fid, acc, "rmse", 100, "2H", "F1", seed))
    g.add(EvalReport("PD", 0.3, None, "rmse", 100, "2H", "F1", 0))
    return g


def test_report_grid_summary_and_json():
    g = _grid()
    rows = {r["method"]: r for r in g.summary()}
    assert rows["SAT"]["fidelity_rmse"]["mean"] == pytest.approx(0.15)
    assert rows["SAT"]["fidelity_rmse"]["stderr"] == pytest.approx(0.05)
    assert rows["PD"]["accuracy"] is None
    text = g.to_json()
    assert text == _grid().to_json()
    back = ReportGrid.from_dict(json.loads(text))
    assert back.to_json() == text
    with pytest.raises(SchemaVersionMismatch):
        ReportGrid.from_dict({"format": "x", "reports": []})


def test_report_table_layout():
    table = _grid().format_table()
    lines = table.splitlines()
    assert lines[0] == "Accuracy" and "Fidelity (RMSE)" in lines
    assert lines.index("Fidelity (RMSE)") > lines.index("Accuracy")
    sat = [ln for ln in lines if ln.startswith("SAT")]
    assert "0.1500±0.0500" in sat[1]
