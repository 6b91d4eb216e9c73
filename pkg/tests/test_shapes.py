import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from shapedistill.baselines import globalize
from shapedistill.datasets import Dataset
from shapedistill.errors import DataError, MissingFeature, SchemaVersionMismatch
from shapedistill.shapes import (
    AdditiveModel, AttributionTable, Direction, FeatureShape, Mode, PairShape, average_shapes,
    center, check_monotonic, curve_bins, export_shapes, global_attribution_curve,
    local_attribution, local_attributions, predict_additive, read_shapes_csv, subtract_shapes,
    write_shapes_csv,
)


def step(feature="a"):
    return FeatureShape(feature, [0.0, 1.0, 2.0], [10.0, 20.0, 30.0])


def toy_model():
    a = FeatureShape("a", [-1.0, 0.0, 0.5], [1.0, -2.0, 3.0])
    b = FeatureShape("b", np.linspace(-1, 1, 9), np.linspace(-1, 1, 9) ** 2, Mode.CUBIC_SPLINE)
    return AdditiveModel(0.7, (a, b), method="toy")


def toy_data(n=200, seed=0):
    X = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    return Dataset(X, ("a", "b"))


# ---------------------------------------------------------------- FeatureShape

def test_piecewise_constant_semantics():
    s = step()
    # breakpoints are left edges of right-open intervals, clamped at both ends
    np.testing.assert_array_equal(s([-5.0, 0.0, 0.999, 1.0, 2.0, 7.0]),
                                  [10, 10, 10, 20, 30, 30])


def test_spline_mode_matches_natural_cubic_spline():
    xs = np.array([-1.0, -0.2, 0.3, 1.0])
    ys = np.array([0.5, -1.0, 2.0, 0.0])
    s = FeatureShape("a", xs, ys, Mode.CUBIC_SPLINE)
    g = np.linspace(-1, 1, 33)
    np.testing.assert_allclose(s(g), CubicSpline(xs, ys, bc_type="natural")(g))
    # clamped outside the knot range
    assert s(5.0) == pytest.approx(0.0) and s(-5.0) == pytest.approx(0.5)


def test_single_breakpoint_is_constant():
    s = FeatureShape("a", [0.3], [2.0], Mode.CUBIC_SPLINE)
    np.testing.assert_array_equal(s([-1, 0, 1]), 2.0)


def test_shape_validation():
    with pytest.raises(DataError):
        FeatureShape("a", [0.0, 0.0], [1.0, 2.0])
    with pytest.raises(DataError):
        FeatureShape("a", [0.0], [np.inf])
    with pytest.raises(DataError):
        FeatureShape("a", [], [])


def test_pair_shape_lookup():
    p = PairShape(("a", "b"), [0.0, 1.0], [0.0, 1.0, 2.0], [[1, 2, 3], [4, 5, 6]])
    np.testing.assert_array_equal(p([0.5, 1.5, -1], [1.5, 2.5, 0]), [2, 6, 1])


# ---------------------------------------------------------------- model

def test_prediction_is_intercept_plus_shapes():
    m = toy_model()
    X = toy_data().features
    expect = 0.7 + m.shape("a")(X[:, 0]) + m.shape("b")(X[:, 1])
    np.testing.assert_allclose(predict_additive(m, X), expect, rtol=0, atol=1e-15)


def test_prediction_by_name_ignores_column_order():
    m = toy_model()
    X = toy_data().features
    swapped = predict_additive(m, X[:, ::-1], ["b", "a"])
    np.testing.assert_array_equal(swapped, predict_additive(m, X))


def test_missing_feature():
    with pytest.raises(MissingFeature):
        predict_additive(toy_model(), np.zeros((2, 2)), ["a", "c"])


def test_centering_preserves_predictions_and_zeroes_means():
    m = toy_model()
    ds = toy_data()
    c = center(m, ds)
    np.testing.assert_allclose(predict_additive(c, ds), predict_additive(m, ds), atol=1e-12)
    for s in c.shapes:
        assert abs(np.mean(s(ds.column(s.feature)))) < 1e-12


def test_model_json_round_trip(tmp_path):
    m = toy_model().with_pairs([PairShape(("a", "b"), [0.0], [0.0, 0.5], [[1.0, -1.0]])])
    p = tmp_path / "m.json"
    m.save(p)
    back = AdditiveModel.load(p)
    X = toy_data().features
    assert predict_additive(back, X).tobytes() == predict_additive(m, X).tobytes()
    assert back.method == "toy" and len(back.pairs) == 1


def test_model_rejects_unknown_format():
    d = toy_model().to_dict()
    d["format"] = "other/2"
    with pytest.raises(SchemaVersionMismatch):
        AdditiveModel.from_dict(d)


# ---------------------------------------------------------------- attributions

def test_local_attribution_efficiency():
    m = toy_model()
    ds = toy_data()
    t = local_attributions(m, ds)
    np.testing.assert_allclose(t.totals(), predict_additive(m, ds), atol=1e-12)
    attrs, base = local_attribution(m, ds.features[3])
    assert base + attrs.sum() == pytest.approx(predict_additive(m, ds.features[3:4])[0])


def test_globalize_of_local_attributions_is_identity_at_data_values():
    m = center(toy_model(), toy_data())
    ds = toy_data(150, 1)
    g = globalize(local_attributions(m, ds), ds)
    for f in ("a", "b"):
        x = ds.column(f)
        np.testing.assert_allclose(g.shape(f)(x) - np.mean(g.shape(f)(x)),
                                   m.shape(f)(x) - np.mean(m.shape(f)(x)), atol=1e-12)


def test_single_row_gives_one_breakpoint():
    ds = Dataset(np.array([[0.2, 0.4]]), ("a", "b"))
    g = globalize(local_attributions(toy_model(), ds), ds)
    assert all(len(s.xs) == 1 for s in g.shapes)


def test_global_curve_averages_duplicate_values():
    ds = Dataset(np.array([[0.0], [0.0], [1.0]]), ("a",))
    t = AttributionTable([[1.0], [3.0], [5.0]], [0, 0, 0], ("a",))
    s = global_attribution_curve(t, ds, "a")
    np.testing.assert_array_equal(s.xs, [0.0, 1.0])
    np.testing.assert_array_equal(s.ys, [2.0, 5.0])


def test_curve_bins_caps_group_count():
    x = np.random.default_rng(0).uniform(size=5000)
    idx, lefts = curve_bins(x, 64)
    assert len(lefts) <= 64 and idx.max() == len(lefts) - 1
    assert np.all(np.diff(lefts) > 0)
    for k in range(len(lefts)):
        assert x[idx == k].min() == lefts[k]


def test_attribution_csv_round_trip(tmp_path):
    t = local_attributions(toy_model(), toy_data(20))
    p = tmp_path / "a.csv"
    t.save_csv(p)
    assert p.read_text().splitlines()[0] == "row,feature,value"
    back = AttributionTable.load_csv(p)
    np.testing.assert_array_equal(back.values, t.values)
    np.testing.assert_array_equal(back.baseline, t.baseline)


# ---------------------------------------------------------------- algebra

def test_union_grid_average_is_exact():
    rng = np.random.default_rng(4)
    shapes = [FeatureShape("a", np.sort(rng.choice(np.linspace(-1, 1, 50), 8, replace=False)),
                           rng.normal(size=8)) for _ in range(5)]
    avg = average_shapes(shapes)
    g = rng.uniform(-1.2, 1.2, 1000)
    np.testing.assert_allclose(avg(g), np.mean([s(g) for s in shapes], axis=0), atol=1e-14)


def test_subtract_shapes():
    a, b = step(), FeatureShape("a", [0.5], [1.0])
    d = subtract_shapes(a, b)
    g = np.linspace(-1, 3, 41)
    np.testing.assert_allclose(d(g), a(g) - b(g))


# ---------------------------------------------------------------- monotonicity

def test_check_monotonic():
    assert check_monotonic(step(), Direction.INCREASING).holds
    r = check_monotonic(step(), "decreasing")
    assert not r.holds and r.worst_violation == 10.0 and r.location == 1.0
    wiggle = FeatureShape("a", [0, 1, 2], [0.0, 1.0, 0.95])
    assert not check_monotonic(wiggle, "increasing").holds
    assert check_monotonic(wiggle, "increasing", tol=0.1).holds


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20))
def test_sorted_values_are_monotone(values):
    ys = np.sort(values)
    s = FeatureShape("a", np.arange(len(ys), dtype=float), ys)
    assert check_monotonic(s, "increasing").holds
    assert check_monotonic(FeatureShape("a", s.xs, ys[::-1]), "decreasing").holds


# ---------------------------------------------------------------- export

def test_shape_csv_round_trip(tmp_path):
    m = toy_model()
    p = tmp_path / "s.csv"
    write_shapes_csv(m, p)
    assert p.read_text().splitlines()[0] == "feature,breakpoint,value,mode"
    back = read_shapes_csv(p)
    assert all(a.equals(b) for a, b in zip(back, m.shapes))


def test_svg_export_is_deterministic(tmp_path):
    m = toy_model().with_pairs([PairShape(("a", "b"), [0.0], [0.0, 0.5], [[1.0, -1.0]])])
    w1 = export_shapes({"one": m, "two": center(m, toy_data())}, tmp_path / "1.csv", tmp_path / "a")
    w2 = export_shapes({"one": m, "two": center(m, toy_data())}, tmp_path / "2.csv", tmp_path / "b")
    names = sorted(p.name for p in w1 if p.suffix == ".svg")
    assert names == ["pair_a__b.svg", "shape_a.svg", "shape_b.svg"]
    for p in w1:
        if p.suffix == ".svg":
            text = p.read_text()
            assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
            assert text == (tmp_path / "b" / p.name).read_text()
    assert len(w2) == len(w1)
