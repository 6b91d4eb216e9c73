import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapedistill.datasets import (
    FEATURE_NAMES, Dataset, SplitSpec, Task, bin_index, bin_midpoints, bump_labels,
    discretize_feature, f1, f2, f1_ground_truth, f2_ground_truth, gen_f1, gen_f2, generate,
    load_csv, save_csv, split,
)
from shapedistill.errors import (
    DataError, EmptyFile, InvalidLabels, MissingColumn, NonNumericCell, UnknownFeature,
    UnsortedCuts,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# ---------------------------------------------------------------- Dataset

def test_dataset_is_read_only():
    ds = Dataset(np.zeros((2, 2)), ("a", "b"), [1.0, 2.0])
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_dataset_rejects_nan_and_duplicate_names():
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan]]), ("a",))
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 2)), ("a", "a"))


def test_binary_labels_must_be_zero_one():
    Dataset(np.zeros((2, 1)), ("a",), [0, 1], Task.BINARY)
    with pytest.raises(InvalidLabels):
        Dataset(np.zeros((2, 1)), ("a",), [0, 2], Task.BINARY)


# ---------------------------------------------------------------- CSV

def test_load_three_row_csv(tmp_path):
    p = _write(tmp_path, "a,b,label\n1,2,3\n4,5,6\n7,8.5,9\n")
    ds = load_csv(p)
    assert ds.n == 3 and ds.feature_names == ("a", "b")
    np.testing.assert_array_equal(ds.labels, [3, 6, 9])
    assert ds.features[2, 1] == 8.5


def test_non_numeric_cell_reports_row_and_column(tmp_path):
    p = _write(tmp_path, "a,b,label\n1,2,3\n4,abc,6\n")
    with pytest.raises(NonNumericCell) as ei:
        load_csv(p)
    assert ei.value.row == 2 and ei.value.col == "b" and ei.value.value == "abc"


def test_binary_csv_label_check(tmp_path):
    ok = _write(tmp_path, "a,label\n1,0\n2,1\n", "ok.csv")
    bad = _write(tmp_path, "a,label\n1,0\n2,2\n", "bad.csv")
    assert load_csv(ok, "binary").task is Task.BINARY
    with pytest.raises(InvalidLabels):
        load_csv(bad, "binary")


def test_empty_and_missing_column(tmp_path):
    with pytest.raises(EmptyFile):
        load_csv(_write(tmp_path, "", "e.csv"))
    with pytest.raises(EmptyFile):
        load_csv(_write(tmp_path, "a,label\n", "h.csv"))
    with pytest.raises(MissingColumn):
        load_csv(_write(tmp_path, "a,b\n1,2\n", "m.csv"))


def test_csv_round_trip_is_exact(tmp_path):
    ds, _ = gen_f1(50, 3)
    p = tmp_path / "f1.csv"
    save_csv(ds, p)
    back = load_csv(p)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.feature_names == ds.feature_names


# ---------------------------------------------------------------- splits

def test_split_is_deterministic_and_partitions():
    ds, _ = gen_f1(1000, 0)
    a = split(ds, SplitSpec(seed=4))
    b = split(ds, SplitSpec(seed=4))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.features, y.features)
    assert [p.n for p in a] == [700, 150, 150]
    rows = np.concatenate([p.features[:, 0] for p in a])
    np.testing.assert_array_equal(np.sort(rows), np.sort(ds.features[:, 0]))


def test_split_spec_validation():
    with pytest.raises(DataError):
        SplitSpec(0.5, 0.3, 0.3)
    with pytest.raises(DataError):
        SplitSpec(1.0, 0.0, 0.0)


# ---------------------------------------------------------------- F1 / F2

def test_f1_worked_values():
    x = np.zeros((2, 10))
    x[1, 0] = 1.0
    np.testing.assert_allclose(f1(x), [2.5, 5.5], atol=1e-12)


def test_f2_worked_value():
    x = np.zeros((1, 10))
    x[0, 2] = x[0, 3] = 0.5
    f1_part = 3.5 - math.sqrt(math.pi) - (1 - math.exp(-0.5))
    assert f1(x)[0] == pytest.approx(f1_part, abs=1e-12)
    assert f2(x)[0] == pytest.approx(f1_part + 0.5 + 1.0, abs=1e-12)
    assert f2(x)[0] == pytest.approx(2.8340, abs=1e-4)


def test_continuous_limit_conventions():
    x = np.zeros((1, 10))
    # x6 log|x6| is 0 at 0, and |x3|^(2|x4|) is 1 at 0^0
    assert np.isfinite(f1(x)).all()
    assert f2(x)[0] - f1(x)[0] == pytest.approx(1.0 + 1.0)


def test_f1_ground_truth_reproduces_labels():
    ds, truth = gen_f1(5000, 7)
    assert np.max(np.abs(truth.total(ds.features) - ds.labels)) < 1e-10


def test_noise_features_have_zero_shapes():
    g = np.linspace(-1, 1, 11)
    for truth in (f1_ground_truth(), f2_ground_truth()):
        for f in ("x9", "x10"):
            np.testing.assert_array_equal(truth.raw(f, g), 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_sample_means_match_reported_values(seed):
    ds1, _ = gen_f1(50_000, seed)
    ds2, _ = gen_f2(50_000, seed)
    assert abs(ds1.labels.mean() - 1.15) <= 0.05
    assert abs(ds2.labels.mean() - 2.74) <= 0.05


def test_f2_truth_expected_total_matches_mean():
    ds, truth = gen_f2(200_000, 11)
    assert abs(truth.total(ds.features).mean() - ds.labels.mean()) < 0.01


def test_f2_projections_match_monte_carlo():
    # E[F2 | x_j = v] - E[F2] should equal the centered ground-truth shape
    truth = f2_ground_truth()
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(400_000, 10))
    base = f2(X).mean()
    for j, v in ((2, 0.7), (3, -0.4), (4, 0.9), (1, 0.5)):
        Xv = X.copy()
        Xv[:, j] = v
        mc = f2(Xv).mean() - base
        assert mc == pytest.approx(float(truth.centered(j, np.array([v]))[0]), abs=0.01)


def test_x2_shape_unchanged_by_product_term():
    g = np.linspace(-1, 1, 21)
    np.testing.assert_allclose(f2_ground_truth().raw("x2", g), f1_ground_truth().raw("x2", g))


def test_generators_are_bit_deterministic():
    a, _ = gen_f2(100, 9)
    b, _ = gen_f2(100, 9)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.feature_names == FEATURE_NAMES


def test_generate_rejects_unknown_function():
    with pytest.raises(DataError):
        generate("f3", 10, 0)


# ---------------------------------------------------------------- transforms

def _small():
    return Dataset(np.array([[1.0], [5.0], [9.0]]), ("h",), [0.0, 0.0, 0.0])


def test_bump_is_inclusive():
    out = bump_labels(_small(), "h", 5.0, 9.0, 1.0)
    np.testing.assert_array_equal(out.labels, [0, 1, 1])


def test_bump_zero_delta_and_empty_range():
    ds = _small()
    np.testing.assert_array_equal(bump_labels(ds, "h", 0, 10, 0.0).labels, ds.labels)
    np.testing.assert_array_equal(bump_labels(ds, "h", 20, 30, 1.0).labels, ds.labels)


def test_bump_errors():
    with pytest.raises(UnknownFeature):
        bump_labels(_small(), "zz", 0, 1, 1.0)
    with pytest.raises(DataError):
        bump_labels(_small(), "h", 1, 1, 1.0)


def test_discretize_examples():
    out = discretize_feature(_small(), "h", [4, 8])
    np.testing.assert_array_equal(out.column("h"), [0, 1, 2])
    # a value exactly on a cut goes to the upper bin
    np.testing.assert_array_equal(bin_index([4.0, 8.0], [4, 8]), [1, 2])


def test_discretize_cut_validation():
    with pytest.raises(UnsortedCuts):
        discretize_feature(_small(), "h", [])
    with pytest.raises(UnsortedCuts):
        discretize_feature(_small(), "h", [8, 4])


def test_bin_midpoints():
    np.testing.assert_allclose(bin_midpoints([0.0], -1, 1), [-0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30),
       st.lists(st.floats(-100, 100), min_size=1, max_size=5, unique=True))
def test_bin_index_is_monotone(values, cuts):
    cuts = sorted(cuts)
    x = np.sort(np.array(values))
    b = bin_index(x, cuts)
    assert np.all(np.diff(b) >= 0)
    assert b.min() >= 0 and b.max() <= len(cuts)
