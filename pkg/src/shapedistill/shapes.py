"""Feature shapes and the additive explanation model built from them."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .datasets import Dataset, Task
from .errors import (
    DataError,
    EmptyDataset,
    LengthMismatch,
    MissingFeature,
    SchemaVersionMismatch,
    UnknownFeature,
)

MODEL_FORMAT = "shapedistill.additive/1"
MAX_CURVE_BINS = 256


class Mode(str, enum.Enum):
    PIECEWISE_CONSTANT = "piecewise_constant"
    CUBIC_SPLINE = "cubic_spline"


def _as_vector(v) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(-1)
    a.setflags(write=False)
    return a


def _step_index(xs: np.ndarray, x: np.ndarray) -> np.ndarray:
    # right-open intervals with breakpoints as left edges, clamped at both ends
    return np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 1)


@dataclass(frozen=True, eq=False)
class FeatureShape:
    feature: str
    xs: np.ndarray
    ys: np.ndarray
    mode: Mode = Mode.PIECEWISE_CONSTANT

    def __post_init__(self):
        xs, ys = _as_vector(self.xs), _as_vector(self.ys)
        if len(xs) < 1 or len(xs) != len(ys):
            raise DataError(f"shape {self.feature!r}: need len(xs) == len(ys) >= 1")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise DataError(f"shape {self.feature!r}: breakpoints and values must be finite")
        if np.any(np.diff(xs) <= 0):
            raise DataError(f"shape {self.feature!r}: breakpoints must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "mode", Mode(self.mode))

    @cached_property
    def _spline(self):
        if len(self.xs) < 2:
            return None
        return CubicSpline(self.xs, self.ys, bc_type="natural")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mode is Mode.PIECEWISE_CONSTANT or len(self.xs) == 1:
            return self.ys[_step_index(self.xs, x)]
        return self._spline(np.clip(x, self.xs[0], self.xs[-1]))

    def shifted(self, c: float) -> "FeatureShape":
        return replace(self, ys=self.ys - c)

    def equals(self, other: "FeatureShape") -> bool:
        return (self.feature == other.feature and self.mode == other.mode
                and np.array_equal(self.xs, other.xs) and np.array_equal(self.ys, other.ys))

    def to_dict(self) -> dict:
        return {"feature": self.feature, "mode": self.mode.value,
                "xs": self.xs.tolist(), "ys": self.ys.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureShape":
        return cls(d["feature"], d["xs"], d["ys"], Mode(d["mode"]))


def eval_shape(s: FeatureShape, x) -> np.ndarray | float:
    out = s(x)
    return float(out) if np.ndim(out) == 0 else out


def zero_shape(feature: str, lo: float = 0.0) -> FeatureShape:
    return FeatureShape(feature, [lo], [0.0])


@dataclass(frozen=True, eq=False)
class PairShape:
    features: tuple[str, str]
    grid_x: np.ndarray
    grid_y: np.ndarray
    values: np.ndarray
    mode: Mode = Mode.PIECEWISE_CONSTANT

    def __post_init__(self):
        gx, gy = _as_vector(self.grid_x), _as_vector(self.grid_y)
        v = np.array(self.values, dtype=np.float64)
        if len(self.features) != 2 or self.features[0] == self.features[1]:
            raise DataError(f"pair shape needs two distinct features, got {self.features}")
        if np.any(np.diff(gx) <= 0) or np.any(np.diff(gy) <= 0):
            raise DataError("pair grids must be strictly increasing")
        if v.shape != (len(gx), len(gy)):
            raise DataError(f"pair values shape {v.shape} != grid {(len(gx), len(gy))}")
        if not np.all(np.isfinite(v)):
            raise DataError("pair values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "grid_x", gx)
        object.__setattr__(self, "grid_y", gy)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mode", Mode(self.mode))

    def __call__(self, x, y) -> np.ndarray:
        i = _step_index(self.grid_x, np.asarray(x, dtype=np.float64))
        j = _step_index(self.grid_y, np.asarray(y, dtype=np.float64))
        return self.values[i, j]

    def shifted(self, c: float) -> "PairShape":
        return replace(self, values=self.values - c)

    def to_dict(self) -> dict:
        return {"features": list(self.features), "mode": self.mode.value,
                "grid_x": self.grid_x.tolist(), "grid_y": self.grid_y.tolist(),
                "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PairShape":
        return cls(tuple(d["features"]), d["grid_x"], d["grid_y"], d["values"], Mode(d["mode"]))


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """``intercept + sum_i shape_i(x_i) (+ sum_ij pair_ij(x_i, x_j))``."""

    intercept: float
    shapes: tuple[FeatureShape, ...]
    pairs: tuple[PairShape, ...] = ()
    task: Task = Task.REGRESSION
    method: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = tuple(self.shapes)
        names = [s.feature for s in shapes]
        if len(set(names)) != len(names):
            raise DataError("at most one shape per feature")
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "task", Task.parse(self.task))

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(s.feature for s in self.shapes)

    def shape(self, feature: str) -> FeatureShape:
        for s in self.shapes:
            if s.feature == feature:
                return s
        raise UnknownFeature(f"model has no shape for {feature!r}")

    def __call__(self, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
        return predict_additive(self, X, feature_names)

    def without(self, feature: str) -> "AdditiveModel":
        return replace(self, shapes=tuple(s for s in self.shapes if s.feature != feature))

    def with_pairs(self, pairs: Iterable[PairShape]) -> "AdditiveModel":
        return replace(self, pairs=tuple(self.pairs) + tuple(pairs))

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "method": self.method,
            "task": self.task.value,
            "intercept": self.intercept,
            "shapes": [s.to_dict() for s in self.shapes],
            "pairs": [p.to_dict() for p in self.pairs],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AdditiveModel":
        if d.get("format") != MODEL_FORMAT:
            raise SchemaVersionMismatch(f"expected {MODEL_FORMAT}, got {d.get('format')!r}")
        return cls(d["intercept"], tuple(FeatureShape.from_dict(s) for s in d["shapes"]),
                   tuple(PairShape.from_dict(p) for p in d.get("pairs", [])),
                   d.get("task", "regression"), d.get("method", ""), d.get("meta") or {})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AdditiveModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _columns(m_features: Iterable[str], X, feature_names) -> dict[str, np.ndarray]:
    if isinstance(X, Dataset):
        feature_names, X = X.feature_names, X.features
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if feature_names is None:
        raise DataError("feature_names are required when X is a bare matrix")
    feature_names = list(feature_names)
    if len(feature_names) != X.shape[1]:
        raise LengthMismatch(f"{len(feature_names)} names for {X.shape[1]} columns")
    index = {f: j for j, f in enumerate(feature_names)}
    cols = {}
    for f in m_features:
        if f not in index:
            raise MissingFeature(f"input lacks feature {f!r}")
        cols[f] = X[:, index[f]]
    return cols


def _used_features(m: AdditiveModel) -> list[str]:
    out = list(m.feature_names)
    for p in m.pairs:
        out.extend(f for f in p.features if f not in out)
    return out


def predict_additive(m: AdditiveModel, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
    """Row-wise additive prediction; a bare matrix defaults to the model's feature order."""
    if feature_names is None and not isinstance(X, Dataset):
        feature_names = m.feature_names
    cols = _columns(_used_features(m), X, feature_names)
    n = len(next(iter(cols.values()))) if cols else np.atleast_2d(X).shape[0]
    out = np.full(n, m.intercept)
    for s in m.shapes:
        out += s(cols[s.feature])
    for p in m.pairs:
        out += p(cols[p.features[0]], cols[p.features[1]])
    return out


def center(m: AdditiveModel, ds: Dataset | np.ndarray,
           feature_names: Sequence[str] | None = None) -> AdditiveModel:
    """Shift every component to zero mean over the rows of ``ds``.

    The shifts are absorbed into the intercept, so predictions are unchanged.
    """
    if isinstance(ds, Dataset):
        n = ds.n
    else:
        n = np.atleast_2d(ds).shape[0]
        if feature_names is None:
            feature_names = m.feature_names
    if n == 0:
        raise EmptyDataset("cannot center on an empty dataset")
    cols = _columns(_used_features(m), ds, feature_names)
    intercept = m.intercept
    shapes = []
    for s in m.shapes:
        c = float(np.mean(s(cols[s.feature])))
        shapes.append(s.shifted(c))
        intercept += c
    pairs = []
    for p in m.pairs:
        c = float(np.mean(p(cols[p.features[0]], cols[p.features[1]])))
        pairs.append(p.shifted(c))
        intercept += c
    return replace(m, intercept=intercept, shapes=tuple(shapes), pairs=tuple(pairs))


# ---------------------------------------------------------------- attributions

@dataclass(frozen=True, eq=False)
class AttributionTable:
    values: np.ndarray          # (n, p)
    baseline: np.ndarray        # (n,)
    feature_names: tuple[str, ...]
    method: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        b = np.array(self.baseline, dtype=np.float64).reshape(-1)
        if v.ndim == 1:
            v = v[None, :]
        if v.shape[0] != b.shape[0] or v.shape[1] != len(self.feature_names):
            raise LengthMismatch(f"attribution shape {v.shape} vs baseline {b.shape} "
                                 f"and {len(self.feature_names)} features")
        v.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "baseline", b)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def column(self, feature: str) -> np.ndarray:
        try:
            return self.values[:, self.feature_names.index(feature)]
        except ValueError:
            raise UnknownFeature(f"unknown feature {feature!r}") from None

    def totals(self) -> np.ndarray:
        return self.baseline + self.values.sum(axis=1)

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "feature", "value"])
            for i in range(self.n):
                w.writerow([i, "__baseline__", f"{self.baseline[i]:.17g}"])
                for j, f in enumerate(self.feature_names):
                    w.writerow([i, f, f"{self.values[i, j]:.17g}"])

    @classmethod
    def load_csv(cls, path) -> "AttributionTable":
        rows: dict[int, dict[str, float]] = {}
        names: list[str] = []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                i, f = int(rec["row"]), rec["feature"]
                rows.setdefault(i, {})[f] = float(rec["value"])
                if f != "__baseline__" and f not in names:
                    names.append(f)
        idx = sorted(rows)
        values = [[rows[i][f] for f in names] for i in idx]
        base = [rows[i].get("__baseline__", 0.0) for i in idx]
        return cls(np.array(values).reshape(len(idx), len(names)), base, names)


def local_attribution(m: AdditiveModel, x, feature_names: Sequence[str] | None = None):
    """(per-feature attributions, baseline) for one row: each shape read at x_i."""
    table = local_attributions(m, np.atleast_2d(np.asarray(x, dtype=np.float64)),
                               feature_names)
    return table.values[0], float(table.baseline[0])


def local_attributions(m: AdditiveModel, X, feature_names: Sequence[str] | None = None
                       ) -> AttributionTable:
    if feature_names is None and not isinstance(X, Dataset):
        feature_names = m.feature_names
    cols = _columns(m.feature_names, X, feature_names)
    n = len(next(iter(cols.values())))
    values = np.column_stack([s(cols[s.feature]) for s in m.shapes]) if m.shapes \
        else np.zeros((n, 0))
    base = np.full(n, m.intercept)
    if m.pairs:
        for p in m.pairs:
            base = base + p(cols[p.features[0]], cols[p.features[1]])
    return AttributionTable(values, base, m.feature_names, m.method)


def curve_bins(x: np.ndarray, max_bins: int = MAX_CURVE_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Group values into at most ``max_bins`` ordered groups.

    Returns (group index per value, left edge of each group). Columns with few
    distinct values get one group per value; others are cut at quantiles.
    """
    x = np.asarray(x, dtype=np.float64)
    uniq, inverse = np.unique(x, return_inverse=True)
    if len(uniq) <= max_bins:
        return inverse, uniq
    qs = np.quantile(x, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    edges = np.unique(qs)
    idx = np.searchsorted(edges, x, side="right")
    used, idx = np.unique(idx, return_inverse=True)
    lefts = np.array([x[idx == k].min() for k in range(len(used))])
    return idx, lefts


def global_attribution_curve(attrs: AttributionTable, ds: Dataset, feature: str,
                             max_bins: int = MAX_CURVE_BINS) -> FeatureShape:
    """Average the local attributions of ``feature`` at each of its values."""
    if attrs.n != ds.n:
        raise LengthMismatch(f"{attrs.n} attribution rows for {ds.n} dataset rows")
    a = attrs.column(feature)
    x = ds.column(feature)
    idx, lefts = curve_bins(x, max_bins)
    counts = np.bincount(idx, minlength=len(lefts))
    means = np.bincount(idx, weights=a, minlength=len(lefts)) / counts
    return FeatureShape(feature, lefts, means, Mode.PIECEWISE_CONSTANT)


# ---------------------------------------------------------------- monotonicity

class Direction(str, enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"


@dataclass(frozen=True)
class MonotonicReport:
    holds: bool
    worst_violation: float
    location: float | None
    index: int | None


def check_monotonic(s: FeatureShape, direction: Direction | str, tol: float = 0.0
                    ) -> MonotonicReport:
    if tol < 0:
        raise DataError("tol must be non-negative")
    direction = Direction(direction)
    d = np.diff(s.ys)
    if direction is Direction.DECREASING:
        d = -d
    if len(d) == 0:
        return MonotonicReport(True, 0.0, None, None)
    k = int(np.argmin(d))
    worst = float(max(0.0, -d[k]))
    holds = bool(np.all(d >= -tol))
    if worst == 0.0:
        return MonotonicReport(holds, 0.0, None, None)
    return MonotonicReport(holds, worst, float(s.xs[k + 1]), k + 1)


# ---------------------------------------------------------------- export

SHAPE_CSV_HEADER = ("feature", "breakpoint", "value", "mode")


def write_shapes_csv(shapes: Iterable[FeatureShape] | AdditiveModel, path) -> None:
    if isinstance(shapes, AdditiveModel):
        shapes = shapes.shapes
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHAPE_CSV_HEADER)
        for s in shapes:
            for x, y in zip(s.xs, s.ys):
                w.writerow([s.feature, f"{x:.17g}", f"{y:.17g}", s.mode.value])


def read_shapes_csv(path) -> list[FeatureShape]:
    order: list[str] = []
    data: dict[str, tuple[list, list, str]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SHAPE_CSV_HEADER:
            raise SchemaVersionMismatch(f"shape CSV header must be {','.join(SHAPE_CSV_HEADER)}")
        for rec in reader:
            f = rec["feature"]
            if f not in data:
                order.append(f)
                data[f] = ([], [], rec["mode"])
            data[f][0].append(float(rec["breakpoint"]))
            data[f][1].append(float(rec["value"]))
    return [FeatureShape(f, data[f][0], data[f][1], Mode(data[f][2])) for f in order]


def export_shapes(m: AdditiveModel | Mapping[str, AdditiveModel], csv_path=None, svg_dir=None,
                  features: Sequence[str] | None = None) -> list[Path]:
    """Write the shape table and one SVG per feature (plus one heatmap per pair).

    A mapping of label -> model overlays all models on each feature plot; the
    CSV then holds the first model's shapes.
    """
    from .plotting import plot_feature, plot_pair

    models = dict(m) if isinstance(m, Mapping) else {m.method or "model": m}
    first = next(iter(models.values()))
    written: list[Path] = []
    if csv_path is not None:
        write_shapes_csv(first, csv_path)
        written.append(Path(csv_path))
    if svg_dir is not None:
        svg_dir = Path(svg_dir)
        svg_dir.mkdir(parents=True, exist_ok=True)
        names = list(features) if features is not None else list(first.feature_names)
        for f in names:
            curves = {label: mod.shape(f) for label, mod in models.items()
                      if f in mod.feature_names}
            path = svg_dir / f"shape_{_slug(f)}.svg"
            path.write_text(plot_feature(f, curves), encoding="utf-8")
            written.append(path)
        for p in first.pairs:
            path = svg_dir / f"pair_{_slug(p.features[0])}__{_slug(p.features[1])}.svg"
            path.write_text(plot_pair(p), encoding="utf-8")
            written.append(path)
    return written


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


# ---------------------------------------------------------------- shape algebra

def average_shapes(shapes: Sequence[FeatureShape]) -> FeatureShape:
    """Pointwise mean of piecewise-constant shapes on the union of their breakpoints."""
    if not shapes:
        raise DataError("nothing to average")
    feature = shapes[0].feature
    if any(s.mode is not Mode.PIECEWISE_CONSTANT for s in shapes):
        raise DataError("union-grid averaging needs piecewise-constant shapes")
    grid = np.unique(np.concatenate([s.xs for s in shapes]))
    total = np.zeros(len(grid))
    for s in shapes:
        total += s(grid)
    return FeatureShape(feature, grid, total / len(shapes), Mode.PIECEWISE_CONSTANT)


def subtract_shapes(a: FeatureShape, b: FeatureShape) -> FeatureShape:
    """a - b on the union grid (piecewise constant)."""
    grid = np.unique(np.concatenate([a.xs, b.xs]))
    return FeatureShape(a.feature, grid, a(grid) - b(grid), Mode.PIECEWISE_CONSTANT)
