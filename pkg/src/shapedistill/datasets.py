"""Tabular datasets, CSV ingestion, splitting and the synthetic F1/F2 functions."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, euler

from .errors import (
    EmptyFile,
    InvalidLabels,
    MissingColumn,
    NoLabels,
    NonNumericCell,
    UnknownFeature,
    UnsortedCuts,
    DataError,
)


class Task(str, enum.Enum):
    REGRESSION = "regression"
    BINARY = "binary"

    @classmethod
    def parse(cls, value: "str | Task") -> "Task":
        if isinstance(value, Task):
            return value
        aliases = {"classification": cls.BINARY, "binaryclassification": cls.BINARY,
                   "reg": cls.REGRESSION, "clf": cls.BINARY}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray | None = None
    task: Task = Task.REGRESSION

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise DataError(f"dataset needs n >= 1 and p >= 1, got {X.shape}")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite feature value at row {r}, column {names[c]!r}")
        task = Task.parse(self.task)
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "task", task)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
            if len(y) != n:
                raise DataError(f"{len(y)} labels for {n} rows")
            if not np.all(np.isfinite(y)):
                raise DataError("labels must be finite")
            if task is Task.BINARY and not np.all((y == 0) | (y == 1)):
                bad = y[(y != 0) & (y != 1)][0]
                raise InvalidLabels(f"binary labels must be 0/1, found {bad:g}")
            object.__setattr__(self, "labels", _frozen(y))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def index(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise UnknownFeature(f"unknown feature {feature!r}") from None

    def column(self, feature: str) -> np.ndarray:
        return self.features[:, self.index(feature)]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise NoLabels("dataset has no labels")
        return self.labels

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.feature_names,
                       None if self.labels is None else self.labels[rows], self.task)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, self.feature_names, labels, self.task)

    def without_labels(self) -> "Dataset":
        return Dataset(self.features, self.feature_names, None, self.task)

    def with_column(self, feature: str, values) -> "Dataset":
        j = self.index(feature)
        X = np.array(self.features)
        X[:, j] = values
        return Dataset(X, self.feature_names, self.labels, self.task)


# ---------------------------------------------------------------- CSV

def load_csv(path, task="regression", label_column: str | None = "label") -> Dataset:
    """Read a numeric CSV with a header row.

    ``label_column=None`` loads an unlabeled dataset. Cells that do not parse
    as floats raise :class:`NonNumericCell` with 1-based data-row numbers.
    """
    path = Path(path)
    task = Task.parse(task)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path} has a header but no data rows")
    if label_column is not None and label_column not in header:
        raise MissingColumn(f"label column {label_column!r} not in {path}")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 1, j] = float(cell)
            except ValueError:
                raise NonNumericCell(i, header[j], cell) from None
            if not math.isfinite(values[i - 1, j]):
                raise NonNumericCell(i, header[j], cell)
    if label_column is None:
        return Dataset(values, header, None, task)
    k = header.index(label_column)
    keep = [j for j in range(len(header)) if j != k]
    return Dataset(values[:, keep], [header[j] for j in keep], values[:, k], task)


def save_csv(ds: Dataset, path, label_column: str = "label") -> None:
    path = Path(path)
    header = list(ds.feature_names)
    cols = [ds.features]
    if ds.labels is not None:
        if label_column in header:
            raise DataError(f"label column name {label_column!r} clashes with a feature")
        header.append(label_column)
        cols.append(ds.labels[:, None])
    data = np.hstack(cols)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    valid_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fr):
            raise DataError(f"split fractions must lie in (0, 1): {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1: {fr}")
        if self.seed < 0:
            raise DataError("seed must be non-negative")


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    n = ds.n
    if n < 3:
        raise DataError("need at least 3 rows to split three ways")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = max(1, int(round(spec.train_fraction * n)))
    n_valid = max(1, int(round(spec.valid_fraction * n)))
    n_train = min(n_train, n - 2)
    n_valid = min(n_valid, n - n_train - 1)
    a, b = n_train, n_train + n_valid
    return ds.subset(perm[:a]), ds.subset(perm[a:b]), ds.subset(perm[b:])


# ---------------------------------------------------------------- synthetic functions

def _xlogx(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(ax)
    return np.where(ax == 0.0, 0.0, out)


def _abs_pow(base, expo):
    # |base|^expo with 0^0 = 1 (numpy already does this)
    return np.power(np.abs(base), expo)


F1_TERMS: tuple[Callable[[np.ndarray], np.ndarray], ...] = (
    lambda x: 3.0 * x,
    lambda x: x ** 3,
    lambda x: -np.power(np.pi, x),
    lambda x: np.exp(-2.0 * x ** 2),
    lambda x: 1.0 / (2.0 + np.abs(x)),
    _xlogx,
    lambda x: np.sqrt(2.0 * np.abs(x)) + np.maximum(0.0, x),
    lambda x: x ** 4 + 2.0 * np.cos(np.pi * x),
    lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
    lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
)

# exact means of each F1 term under U(-1, 1)
F1_TERM_MEANS: tuple[float, ...] = (
    0.0,
    0.0,
    -(np.pi - 1.0 / np.pi) / (2.0 * np.log(np.pi)),
    0.5 * np.sqrt(np.pi / 2.0) * erf(np.sqrt(2.0)),
    np.log(1.5),
    0.0,
    2.0 * np.sqrt(2.0) / 3.0 + 0.25,
    0.2,
    0.0,
    0.0,
)

FEATURE_NAMES = tuple(f"x{i}" for i in range(1, 11))


def f1(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros(X.shape[0])
    for j, g in enumerate(F1_TERMS):
        out += g(X[:, j])
    return out


def _sec(z):
    return 1.0 / np.cos(z)


def f2(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    x1, x2, x3, x4, x5, x6 = (X[:, j] for j in range(6))
    return f1(X) + x1 * x2 + _abs_pow(x3, 2.0 * np.abs(x4)) + _sec(x3 * x5 * x6)


# Conditional expectations of the F2 interaction terms given one feature, with
# the other features ~ U(-1, 1).

def _cusp_given_x4(x4):
    # E[|x3|^(2|x4|) | x4]
    return 1.0 / (2.0 * np.abs(np.asarray(x4, dtype=np.float64)) + 1.0)


def _cusp_given_x3(x3):
    # E[|x3|^(2|x4|) | x3] = integral_0^1 a^(2t) dt = (a^2 - 1) / (2 ln a)
    a = np.abs(np.asarray(x3, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (a * a - 1.0) / (2.0 * np.log(a))
    v = np.where(a == 0.0, 0.0, v)
    return np.where(np.abs(a - 1.0) < 1e-12, 1.0, v)


_N_SEC_TERMS = 40
_SEC_COEF = np.array([abs(float(euler(2 * k)[-1])) / math.factorial(2 * k)
                      for k in range(_N_SEC_TERMS)])


def _sec_given_one(x):
    """E[sec(x * u * v) | x] for u, v ~ U(-1, 1), via the Maclaurin series of sec."""
    x2 = np.asarray(x, dtype=np.float64) ** 2
    k = np.arange(_N_SEC_TERMS)
    coef = _SEC_COEF / (2.0 * k + 1.0) ** 2
    return np.polynomial.polynomial.polyval(x2, coef)


_CUSP_MEAN = 0.5 * np.log(3.0)
_SEC_MEAN = float(np.sum(_SEC_COEF / (2.0 * np.arange(_N_SEC_TERMS) + 1.0) ** 3))


@dataclass(frozen=True)
class GroundTruthShapes:
    """Closed-form per-feature contributions of a synthetic function.

    ``funcs[j](x)`` is feature j's contribution and ``means[j]`` its mean under
    U(-1, 1); ``offset`` is added to the sum of the contributions.
    """

    feature_names: tuple[str, ...]
    funcs: tuple[Callable[[np.ndarray], np.ndarray], ...]
    means: tuple[float, ...]
    offset: float = 0.0
    name: str = ""

    def raw(self, feature: "str | int", x) -> np.ndarray:
        j = feature if isinstance(feature, int) else self._index(feature)
        return np.asarray(self.funcs[j](np.asarray(x, dtype=np.float64)), dtype=np.float64)

    def centered(self, feature: "str | int", x) -> np.ndarray:
        j = feature if isinstance(feature, int) else self._index(feature)
        return self.raw(j, x) - self.means[j]

    def total(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], self.offset)
        for j in range(len(self.funcs)):
            out += self.raw(j, X[:, j])
        return out

    def _index(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise UnknownFeature(f"unknown feature {feature!r}") from None


def f1_ground_truth() -> GroundTruthShapes:
    return GroundTruthShapes(FEATURE_NAMES, F1_TERMS, F1_TERM_MEANS, 0.0, "f1")


def f2_ground_truth() -> GroundTruthShapes:
    funcs = list(F1_TERMS)
    means = list(F1_TERM_MEANS)

    def add(j, extra, mean):
        base = funcs[j]
        funcs[j] = lambda x, base=base: base(x) + extra(x)
        means[j] += mean

    # x1*x2 projects to zero on both features
    add(2, _cusp_given_x3, _CUSP_MEAN)
    add(3, _cusp_given_x4, _CUSP_MEAN)
    for j in (2, 4, 5):
        add(j, _sec_given_one, _SEC_MEAN)
    total_mean = sum(F1_TERM_MEANS) + _CUSP_MEAN + _SEC_MEAN
    return GroundTruthShapes(FEATURE_NAMES, tuple(funcs), tuple(means),
                             total_mean - sum(means), "f2")


SYNTHETIC = {"f1": (f1, f1_ground_truth), "f2": (f2, f2_ground_truth)}


def sample_uniform(n: int, seed: int, p: int = 10) -> np.ndarray:
    if n < 1:
        raise DataError("n must be >= 1")
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, p))


def gen_f1(n: int, seed: int) -> tuple[Dataset, GroundTruthShapes]:
    X = sample_uniform(n, seed)
    return Dataset(X, FEATURE_NAMES, f1(X)), f1_ground_truth()


def gen_f2(n: int, seed: int) -> tuple[Dataset, GroundTruthShapes]:
    X = sample_uniform(n, seed)
    return Dataset(X, FEATURE_NAMES, f2(X)), f2_ground_truth()


def generate(fn: str, n: int, seed: int) -> tuple[Dataset, GroundTruthShapes]:
    if fn == "f1":
        return gen_f1(n, seed)
    if fn == "f2":
        return gen_f2(n, seed)
    raise DataError(f"unknown synthetic function {fn!r} (expected f1 or f2)")


# ---------------------------------------------------------------- controlled transforms

def bump_labels(ds: Dataset, feature: str, lo: float, hi: float, delta: float) -> Dataset:
    if not lo < hi:
        raise DataError(f"bump range needs lo < hi, got [{lo}, {hi}]")
    if ds.task is not Task.REGRESSION:
        raise DataError("label bump is defined for regression datasets only")
    y = np.array(ds.require_labels())
    x = ds.column(feature)
    y[(x >= lo) & (x <= hi)] += delta
    return ds.with_labels(y)


def bin_index(x, cut_points: Sequence[float]) -> np.ndarray:
    cuts = _check_cuts(cut_points)
    # ties go to the upper bin
    return np.searchsorted(cuts, np.asarray(x, dtype=np.float64), side="right").astype(np.float64)


def _check_cuts(cut_points) -> np.ndarray:
    cuts = np.asarray(cut_points, dtype=np.float64).reshape(-1)
    if cuts.size == 0:
        raise UnsortedCuts("at least one cut point is required")
    if np.any(np.diff(cuts) <= 0):
        raise UnsortedCuts(f"cut points must be strictly increasing: {cuts.tolist()}")
    return cuts


def discretize_feature(ds: Dataset, feature: str, cut_points: Sequence[float]) -> Dataset:
    return ds.with_column(feature, bin_index(ds.column(feature), cut_points))


def bin_midpoints(cut_points: Sequence[float], lo: float, hi: float) -> np.ndarray:
    """Midpoint of each bin, with the outer bins closed at ``lo`` and ``hi``."""
    cuts = _check_cuts(cut_points)
    edges = np.concatenate([[min(lo, cuts[0])], cuts, [max(hi, cuts[-1])]])
    return 0.5 * (edges[:-1] + edges[1:])
