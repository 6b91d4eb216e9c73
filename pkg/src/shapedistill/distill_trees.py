"""SAT: bagged cyclic gradient boosting of single-feature trees on teacher outputs."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .datasets import Dataset, Task
from .errors import DataError, LengthMismatch, NonFiniteTarget, UnknownPairFeature
from .shapes import AdditiveModel, FeatureShape, PairShape, average_shapes, center


@dataclass(frozen=True)
class SatConfig:
    rounds: int = 300
    learning_rate: float = 0.25
    max_leaves_per_tree: int = 4
    bags: int = 20
    max_bins: int = 256
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise DataError("rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DataError("learning_rate must lie in (0, 1]")
        if self.max_leaves_per_tree < 2:
            raise DataError("max_leaves_per_tree must be >= 2")
        if self.bags < 1:
            raise DataError("bags must be >= 1")
        if self.max_bins < 2:
            raise DataError("max_bins must be >= 2")


@dataclass(frozen=True)
class PairConfig:
    pairs: tuple[tuple[str, str], ...] | str = "all"
    rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 4
    grid_bins: int = 16

    def __post_init__(self):
        if self.rounds < 1:
            raise DataError("rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DataError("learning_rate must lie in (0, 1]")
        if self.max_leaves < 2:
            raise DataError("max_leaves must be >= 2")
        if self.grid_bins < 2:
            raise DataError("grid_bins must be >= 2")
        if self.pairs != "all":
            pairs = tuple(tuple(p) for p in self.pairs)
            for p in pairs:
                if len(p) != 2 or p[0] == p[1]:
                    raise DataError(f"pair {p} must name two distinct features")
            object.__setattr__(self, "pairs", pairs)


# ---------------------------------------------------------------- binning

def quantile_edges(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Inner bin edges; bin b holds edges[b-1] <= x < edges[b]."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    qs = np.quantile(x, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    edges = np.unique(qs)
    return edges[edges > lo]


def assign_bins(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, x, side="right")


# ---------------------------------------------------------------- 1-D trees

@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function: ``values[k]`` on ``thresholds[k-1] <= x < thresholds[k]``."""

    thresholds: np.ndarray
    values: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return self.values[np.searchsorted(self.thresholds, np.asarray(x, dtype=np.float64),
                                           side="right")]

    @property
    def n_leaves(self) -> int:
        return len(self.values)


def _best_split(S: np.ndarray, N: np.ndarray, lo: int, hi: int):
    """Best least-squares split of bins [lo, hi) into [lo, k) and [k, hi)."""
    if hi - lo < 2:
        return None
    s = np.cumsum(S[lo:hi])
    c = np.cumsum(N[lo:hi])
    st, ct = s[-1], c[-1]
    sl, cl = s[:-1], c[:-1]
    sr, cr = st - sl, ct - cl
    ok = (cl > 0) & (cr > 0)
    if not np.any(ok):
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(ok, sl * sl / cl + sr * sr / cr, -np.inf) - st * st / ct
    k = int(np.argmax(gain))
    if not gain[k] > 1e-12 * max(1.0, abs(st * st / ct)):
        return None
    return float(gain[k]), lo + k + 1


def grow_histogram_tree(S: np.ndarray, N: np.ndarray, max_leaves: int) -> np.ndarray:
    """Greedy best-first least-squares tree over ordered histogram bins.

    ``S``/``N`` are per-bin residual sums and counts. Returns the fitted value
    for every bin (leaf mean; 0 where the whole leaf is empty).
    """
    nb = len(S)
    leaves = [(0, nb)]
    cands = {(0, nb): _best_split(S, N, 0, nb)}
    while len(leaves) < max_leaves:
        best = None
        for leaf in leaves:
            c = cands[leaf]
            if c is not None and (best is None or c[0] > best[1][0]):
                best = (leaf, c)
        if best is None:
            break
        (lo, hi), (_, k) = best
        leaves.remove((lo, hi))
        for part in ((lo, k), (k, hi)):
            leaves.append(part)
            cands[part] = _best_split(S, N, *part)
    out = np.zeros(nb)
    for lo, hi in leaves:
        cnt = N[lo:hi].sum()
        if cnt > 0:
            out[lo:hi] = S[lo:hi].sum() / cnt
    return out


def fit_tree_1d(x, r, max_leaves: int = 3, bins: int | np.ndarray = 256) -> StepFunction:
    """Histogram least-squares regression tree on a single feature.

    ``bins`` is either a bin count (quantile edges are computed from ``x``) or
    an explicit array of inner edges. Splits fall on bin edges only.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise LengthMismatch(f"x has {x.shape}, r has {r.shape}")
    edges = quantile_edges(x, int(bins)) if np.ndim(bins) == 0 else np.asarray(bins, float)
    idx = assign_bins(x, edges)
    nb = len(edges) + 1
    S = np.bincount(idx, weights=r, minlength=nb)
    N = np.bincount(idx, minlength=nb).astype(np.float64)
    v = grow_histogram_tree(S, N, max_leaves)
    # collapse runs of equal bin values into leaves
    change = np.flatnonzero(np.diff(v) != 0) + 1
    thresholds = edges[change - 1]
    values = v[np.concatenate([[0], change])]
    return StepFunction(thresholds, values)


# ---------------------------------------------------------------- SAT

@dataclass
class _Binned:
    idx: list[np.ndarray]
    edges: list[np.ndarray]
    lefts: list[np.ndarray]


def _bin_columns(X: np.ndarray, max_bins: int) -> _Binned:
    idx, edges, lefts = [], [], []
    for j in range(X.shape[1]):
        e = quantile_edges(X[:, j], max_bins)
        idx.append(assign_bins(X[:, j], e))
        edges.append(e)
        lefts.append(np.concatenate([[X[:, j].min()], e]))
    return _Binned(idx, edges, lefts)


def _check_inputs(X, f):
    X = np.asarray(X, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    if X.shape[0] != f.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} rows but {f.shape[0]} teacher outputs")
    if X.shape[0] == 0:
        raise DataError("no rows to fit")
    if not np.all(np.isfinite(f)):
        raise NonFiniteTarget("teacher outputs must be finite")
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    return X, f


def _boost_bag(binned: _Binned, f: np.ndarray, rows: np.ndarray, cfg: SatConfig,
               track_mse: bool):
    p = len(binned.idx)
    fb = f[rows]
    r = fb - fb.mean()
    nbins = [len(e) + 1 for e in binned.edges]
    bidx = [binned.idx[j][rows] for j in range(p)]
    counts = [np.bincount(bidx[j], minlength=nbins[j]).astype(np.float64) for j in range(p)]
    tables = [np.zeros(nbins[j]) for j in range(p)]
    mse = [float(np.mean(r * r))] if track_mse else None
    nu = cfg.learning_rate
    for _ in range(cfg.rounds):
        for j in range(p):
            S = np.bincount(bidx[j], weights=r, minlength=nbins[j])
            v = grow_histogram_tree(S, counts[j], cfg.max_leaves_per_tree)
            v *= nu
            tables[j] += v
            r -= v[bidx[j]]
        if track_mse:
            mse.append(float(np.mean(r * r)))
    return float(fb.mean()), tables, mse


def fit_sat_bags(X, f, cfg: SatConfig = SatConfig(), feature_names: Sequence[str] | None = None,
                 track_mse: bool = False):
    """Per-bag SAT models (uncentered) plus the shared bin layout.

    Returns (list of AdditiveModel, list of per-round training-MSE curves or None).
    """
    X, f = _check_inputs(X, f)
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j + 1}" for j in range(p))
    if len(names) != p:
        raise LengthMismatch(f"{len(names)} names for {p} columns")
    binned = _bin_columns(X, cfg.max_bins)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.bags)

    def run(b):
        rng = np.random.default_rng(seeds[b])
        rows = rng.integers(0, n, size=n) if cfg.bags > 1 else np.arange(n)
        return _boost_bag(binned, f, rows, cfg, track_mse)

    if cfg.n_jobs > 1 and cfg.bags > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as pool:
            results = list(pool.map(run, range(cfg.bags)))
    else:
        results = [run(b) for b in range(cfg.bags)]

    models, curves = [], []
    for mean_b, tables, mse in results:
        shapes = tuple(FeatureShape(names[j], binned.lefts[j], tables[j]) for j in range(p))
        models.append(AdditiveModel(mean_b, shapes, method="SAT"))
        curves.append(mse)
    return models, (curves if track_mse else None)


def fit_sat(X, f, cfg: SatConfig = SatConfig(), feature_names: Sequence[str] | None = None
            ) -> AdditiveModel:
    """Distill teacher outputs ``f`` on ``X`` into bagged additive trees.

    ``X`` may be a :class:`Dataset`; its labels are never read.
    """
    task = Task.REGRESSION
    if isinstance(X, Dataset):
        feature_names, task, X = X.feature_names, X.task, X.features
    X, f = _check_inputs(X, f)
    bags, _ = fit_sat_bags(X, f, cfg, feature_names)
    names = bags[0].feature_names
    shapes = tuple(average_shapes([m.shapes[j] for m in bags]) for j in range(len(names)))
    model = AdditiveModel(float(np.mean(f)), shapes, task=task, method="SAT",
                          meta={"config": asdict(cfg)})
    return center(model, X, names)


# ---------------------------------------------------------------- pairs

def _grow_2d(S: np.ndarray, N: np.ndarray, max_leaves: int) -> np.ndarray:
    """Best-first rectangle splits over a 2-D histogram; returns per-cell values."""

    def best(rect):
        x0, x1, y0, y1 = rect
        out = None
        sub_s, sub_n = S[x0:x1, y0:y1], N[x0:x1, y0:y1]
        for axis, lo in ((0, x0), (1, y0)):
            ss = sub_s.sum(axis=1 - axis)
            nn = sub_n.sum(axis=1 - axis)
            c = _best_split(ss, nn, 0, len(ss))
            if c is not None and (out is None or c[0] > out[0]):
                out = (c[0], axis, lo + c[1])
        return out

    nx, ny = S.shape
    rects = [(0, nx, 0, ny)]
    cands = {rects[0]: best(rects[0])}
    while len(rects) < max_leaves:
        pick = None
        for r in rects:
            c = cands[r]
            if c is not None and (pick is None or c[0] > pick[1][0]):
                pick = (r, c)
        if pick is None:
            break
        (x0, x1, y0, y1), (_, axis, k) = pick
        rects.remove((x0, x1, y0, y1))
        parts = [(x0, k, y0, y1), (k, x1, y0, y1)] if axis == 0 else \
            [(x0, x1, y0, k), (x0, x1, k, y1)]
        for part in parts:
            rects.append(part)
            cands[part] = best(part)
    out = np.zeros_like(S)
    for x0, x1, y0, y1 in rects:
        cnt = N[x0:x1, y0:y1].sum()
        if cnt > 0:
            out[x0:x1, y0:y1] = S[x0:x1, y0:y1].sum() / cnt
    return out


def fit_sat_pairs(X, f, base: AdditiveModel, cfg: PairConfig = PairConfig(),
                  feature_names: Sequence[str] | None = None) -> AdditiveModel:
    """Boost pairwise components on the residual of a frozen main-effects model."""
    if isinstance(X, Dataset):
        feature_names, X = X.feature_names, X.features
    X, f = _check_inputs(X, f)
    names = list(feature_names) if feature_names is not None else list(base.feature_names)
    if len(names) != X.shape[1]:
        raise LengthMismatch(f"{len(names)} names for {X.shape[1]} columns")
    if cfg.pairs == "all":
        pairs = list(itertools.combinations(names, 2))
    else:
        pairs = list(cfg.pairs)
        for a, b in pairs:
            for v in (a, b):
                if v not in names:
                    raise UnknownPairFeature(f"pair feature {v!r} not among the inputs")
    r = f - base(X, names)
    grids = {}
    for name in {v for pr in pairs for v in pr}:
        col = X[:, names.index(name)]
        e = quantile_edges(col, cfg.grid_bins)
        grids[name] = (assign_bins(col, e), e, np.concatenate([[col.min()], e]))
    cells, counts, tables = [], [], []
    for a, b in pairs:
        ia, ea, _ = grids[a]
        ib, eb, _ = grids[b]
        shape = (len(ea) + 1, len(eb) + 1)
        flat = ia * shape[1] + ib
        cells.append((flat, shape))
        counts.append(np.bincount(flat, minlength=shape[0] * shape[1]).reshape(shape)
                      .astype(np.float64))
        tables.append(np.zeros(shape))
    nu = cfg.learning_rate
    for _ in range(cfg.rounds):
        for k, (flat, shape) in enumerate(cells):
            S = np.bincount(flat, weights=r, minlength=shape[0] * shape[1]).reshape(shape)
            v = _grow_2d(S, counts[k], cfg.max_leaves) * nu
            tables[k] += v
            r -= v.reshape(-1)[flat]
    new = [PairShape((a, b), grids[a][2], grids[b][2], tables[k])
           for k, (a, b) in enumerate(pairs)]
    # centering the new pairs only; mains are left untouched
    shift = 0.0
    centered = []
    for p in new:
        c = float(np.mean(p(X[:, names.index(p.features[0])], X[:, names.index(p.features[1])])))
        centered.append(p.shifted(c))
        shift += c
    return AdditiveModel(base.intercept + shift, base.shapes, tuple(base.pairs) + tuple(centered),
                         base.task, base.method + "+pairs" if base.method else "pairs",
                         dict(base.meta, pair_config=_pair_cfg_dict(cfg)))


def _pair_cfg_dict(cfg: PairConfig) -> dict:
    d = asdict(cfg)
    if d["pairs"] != "all":
        d["pairs"] = [list(p) for p in d["pairs"]]
    return d
