"""Comparison explanations: partial dependence, globalized gradient x input, globalized Shapley.

Every baseline ends up as an :class:`AdditiveModel` so the same evaluation
code scores all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .datasets import Dataset
from .errors import DataError, EmptyBackground, ExactModeTooManyFeatures
from .shapes import (
    AdditiveModel,
    AttributionTable,
    FeatureShape,
    Mode,
    center,
    global_attribution_curve,
    predict_additive,
)
from .teacher import TeacherNet, input_gradients, predict

PD_GRID_POINTS = 64
MAX_EXACT_FEATURES = 15


def as_predictor(teacher, feature_names: Sequence[str]) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a teacher (net, additive surrogate or plain callable) as X -> scores."""
    if isinstance(teacher, TeacherNet):
        return lambda X: predict(teacher, X)
    if isinstance(teacher, AdditiveModel):
        return lambda X: predict_additive(teacher, X, feature_names)
    if callable(teacher):
        return lambda X: np.asarray(teacher(X), dtype=np.float64).reshape(-1)
    raise TypeError(f"cannot use {type(teacher).__name__} as a teacher")


# ---------------------------------------------------------------- PD

def pd_grid(x: np.ndarray, n_points: int = PD_GRID_POINTS) -> np.ndarray:
    return np.unique(np.quantile(np.asarray(x, dtype=np.float64), np.linspace(0, 1, n_points)))


def partial_dependence(net, ds: Dataset, feature: str, grid=None,
                       n_points: int = PD_GRID_POINTS, chunk_rows: int = 200_000) -> FeatureShape:
    """Mean teacher output with ``feature`` overwritten to each grid value for all rows."""
    j = ds.index(feature)
    grid = pd_grid(ds.features[:, j], n_points) if grid is None else np.asarray(grid, float)
    if grid.size == 0:
        raise DataError("PD grid must be nonempty")
    if np.any(np.diff(grid) <= 0):
        raise DataError("PD grid must be strictly increasing")
    f = as_predictor(net, ds.feature_names)
    X = ds.features
    per = max(1, chunk_rows // ds.n)
    out = np.empty(len(grid))
    for s in range(0, len(grid), per):
        zs = grid[s:s + per]
        block = np.tile(X, (len(zs), 1))
        block[:, j] = np.repeat(zs, ds.n)
        out[s:s + len(zs)] = f(block).reshape(len(zs), ds.n).mean(axis=1)
    return FeatureShape(feature, grid, out, Mode.PIECEWISE_CONSTANT)


def pd_model(net, ds: Dataset, n_points: int = PD_GRID_POINTS) -> AdditiveModel:
    """Additive model from every feature's PD curve, centered on ``ds``.

    The intercept is the mean teacher output on ``ds`` (each PD curve alone
    already carries that mean, so the curves are centered before summing).
    """
    shapes = tuple(partial_dependence(net, ds, f, n_points=n_points) for f in ds.feature_names)
    m = center(AdditiveModel(0.0, shapes, task=ds.task, method="PD"), ds)
    mean_f = float(np.mean(as_predictor(net, ds.feature_names)(ds.features)))
    return replace(m, intercept=mean_f)


# ---------------------------------------------------------------- gradients

def ggrad_attributions(net: TeacherNet, ds: Dataset) -> AttributionTable:
    """Gradient x input per feature; the baseline is the net at the all-zeros input."""
    G = input_gradients(net, ds.features)
    base = float(predict(net, np.zeros((1, ds.p)))[0])
    return AttributionTable(G * ds.features, np.full(ds.n, base), ds.feature_names, "GRAD")


# ---------------------------------------------------------------- Shapley

@dataclass(frozen=True)
class ShapConfig:
    mode: str = "permutation"          # "exact" or "permutation"
    background_size: int = 128
    permutations: int = 16
    seed: int = 0
    background: Dataset | None = None

    def __post_init__(self):
        if self.mode not in ("exact", "permutation"):
            raise DataError(f"unknown Shapley mode {self.mode!r}")
        if self.permutations < 1:
            raise DataError("permutations must be >= 1")
        if self.background_size < 1:
            raise DataError("background_size must be >= 1")


def _background(ds: Dataset, cfg: ShapConfig) -> np.ndarray:
    if cfg.background is not None:
        B = cfg.background.features
    else:
        B = ds.features
        if ds.n > cfg.background_size:
            rows = np.random.default_rng(cfg.seed).choice(ds.n, cfg.background_size, replace=False)
            B = B[np.sort(rows)]
    if B.shape[0] == 0:
        raise EmptyBackground("Shapley background is empty")
    return B


def shapley_weights(p: int) -> np.ndarray:
    """w[s] = s! (p - s - 1)! / p! for coalitions of size s not containing the player."""
    return np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p)
                     for s in range(p)])


def _coalition_values(f, x: np.ndarray, B: np.ndarray, masks: np.ndarray) -> np.ndarray:
    # masks: (m, p) boolean; returns v(S) averaged over background rows
    m, p = masks.shape
    nb = B.shape[0]
    Z = np.where(masks[:, None, :], x[None, None, :], B[None, :, :]).reshape(m * nb, p)
    return f(Z).reshape(m, nb).mean(axis=1)


def _exact_row(f, x, B, masks, sizes, weights):
    p = len(x)
    v = _coalition_values(f, x, B, masks)
    codes = masks @ (1 << np.arange(p))
    order = np.empty(len(codes), dtype=np.int64)
    order[codes] = np.arange(len(codes))
    phi = np.zeros(p)
    for i in range(p):
        without = np.flatnonzero(~masks[:, i])
        with_i = order[codes[without] | (1 << i)]
        phi[i] = np.sum(weights[sizes[without]] * (v[with_i] - v[without]))
    return phi


def _permutation_row(f, x, B, perms):
    k, p = perms.shape
    # coalition masks along each permutation, sizes 0..p
    masks = np.zeros((k, p + 1, p), dtype=bool)
    for t in range(1, p + 1):
        masks[:, t] = masks[:, t - 1]
        masks[np.arange(k), t, perms[:, t - 1]] = True
    v = _coalition_values(f, x, B, masks.reshape(k * (p + 1), p)).reshape(k, p + 1)
    phi = np.zeros(p)
    np.add.at(phi, perms.reshape(-1), np.diff(v, axis=1).reshape(-1))
    return phi / k


def shap_attributions(net, ds: Dataset, cfg: ShapConfig = ShapConfig(),
                      rows: Sequence[int] | None = None) -> AttributionTable:
    """Interventional Shapley values of ``net`` for every row of ``ds``.

    v(S) averages the teacher over background rows with the features outside
    S replaced by background values. ``exact`` enumerates all 2^p coalitions;
    ``permutation`` averages marginal contributions over random orderings,
    seeded per row so the result does not depend on how rows are batched.
    """
    f = as_predictor(net, ds.feature_names)
    B = _background(ds, cfg)
    p = ds.p
    rows = np.arange(ds.n) if rows is None else np.asarray(rows)
    phi0 = float(np.mean(f(B)))
    out = np.zeros((len(rows), p))
    if cfg.mode == "exact":
        if p > MAX_EXACT_FEATURES:
            raise ExactModeTooManyFeatures(f"exact Shapley needs p <= {MAX_EXACT_FEATURES}, got {p}")
        codes = np.arange(2 ** p)
        masks = ((codes[:, None] >> np.arange(p)) & 1).astype(bool)
        sizes = masks.sum(axis=1)
        weights = shapley_weights(p)
        for k, r in enumerate(rows):
            out[k] = _exact_row(f, ds.features[r], B, masks, sizes, weights)
    else:
        for k, r in enumerate(rows):
            rng = np.random.default_rng([cfg.seed, int(r)])
            perms = np.array([rng.permutation(p) for _ in range(cfg.permutations)])
            out[k] = _permutation_row(f, ds.features[r], B, perms)
    return AttributionTable(out, np.full(len(rows), phi0), ds.feature_names, "SHAP")


# ---------------------------------------------------------------- globalization

def globalize(attrs: AttributionTable, ds: Dataset, method: str | None = None) -> AdditiveModel:
    """Average local attributions at each feature value into one shape per feature."""
    method = method or ("g" + attrs.method if attrs.method else "global")
    shapes = tuple(global_attribution_curve(attrs, ds, f) for f in attrs.feature_names)
    m = AdditiveModel(float(np.mean(attrs.baseline)), shapes, task=ds.task, method=method)
    return center(m, ds)


def ggrad_model(net: TeacherNet, ds: Dataset) -> AdditiveModel:
    return globalize(ggrad_attributions(net, ds), ds, "gGRAD")


def gshap_model(net, ds: Dataset, cfg: ShapConfig = ShapConfig()) -> AdditiveModel:
    return globalize(shap_attributions(net, ds, cfg), ds, "gSHAP")
