"""SAS: penalized cubic regression splines fitted to teacher outputs by backfitting.

The spline basis is parameterized by the function values at the knots, so a
fitted component is exactly the natural cubic spline through (knots, coef) and
is stored as a ``CubicSpline``-mode :class:`FeatureShape` without loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import linalg, sparse

from .datasets import Dataset, Task
from .errors import DataError, LengthMismatch, NonFiniteTarget, SingularSystem, TooFewDistinctValues
from .shapes import AdditiveModel, FeatureShape, Mode, center

log = logging.getLogger(__name__)


def _default_lambdas() -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(-8, 4, 13))


@dataclass(frozen=True)
class SasConfig:
    knots_per_feature: int = 200
    lambda_grid: tuple[float, ...] = _default_lambdas()
    cv_folds: int = 5
    backfit_max_iters: int = 50
    backfit_tol: float = 1e-6
    seed: int = 0
    cv_cycles: int = 2

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda_grid)
        object.__setattr__(self, "lambda_grid", grid)
        if self.knots_per_feature < 4:
            raise DataError("knots_per_feature must be >= 4")
        if not grid or any(v <= 0 for v in grid) or list(grid) != sorted(grid):
            raise DataError("lambda_grid must be a nonempty sorted list of positive values")
        if self.cv_folds < 2:
            raise DataError("cv_folds must be >= 2")
        if self.backfit_max_iters < 1:
            raise DataError("backfit_max_iters must be >= 1")
        if not 1 <= self.cv_cycles <= self.backfit_max_iters:
            raise DataError("cv_cycles must lie in [1, backfit_max_iters]")
        if not self.backfit_tol > 0:
            raise DataError("backfit_tol must be positive")


# ---------------------------------------------------------------- basis

class NaturalSplineBasis:
    """Natural cubic spline basis on fixed knots, one coefficient per knot value."""

    def __init__(self, knots: np.ndarray):
        k = np.asarray(knots, dtype=np.float64)
        if k.ndim != 1 or len(k) < 3 or np.any(np.diff(k) <= 0):
            raise DataError("need >= 3 strictly increasing knots")
        self.knots = k
        K = len(k)
        h = np.diff(k)
        D = np.zeros((K - 2, K))
        B = np.zeros((K - 2, K - 2))
        for i in range(K - 2):
            D[i, i] = 1.0 / h[i]
            D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
            D[i, i + 2] = 1.0 / h[i + 1]
            B[i, i] = (h[i] + h[i + 1]) / 3.0
            if i + 1 < K - 2:
                B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
        BinvD = linalg.solve(B, D, assume_a="pos")
        # second derivatives at the knots as a linear map of the knot values
        self.F = np.vstack([np.zeros(K), BinvD, np.zeros(K)])
        # integrated squared second derivative = coef' P coef
        self.P = D.T @ BinvD
        self.P = 0.5 * (self.P + self.P.T)

    @property
    def size(self) -> int:
        return len(self.knots)

    def _pieces(self, x):
        k = self.knots
        x = np.clip(np.asarray(x, dtype=np.float64), k[0], k[-1])
        j = np.clip(np.searchsorted(k, x, side="right") - 1, 0, len(k) - 2)
        h = k[j + 1] - k[j]
        am = (k[j + 1] - x) / h
        ap = (x - k[j]) / h
        cm = ((k[j + 1] - x) ** 3 / h - h * (k[j + 1] - x)) / 6.0
        cp = ((x - k[j]) ** 3 / h - h * (x - k[j])) / 6.0
        return j, am, ap, cm, cp

    def design(self, x) -> np.ndarray:
        """Dense rows mapping knot values to spline values at x (clamped to the knot range)."""
        j, am, ap, cm, cp = self._pieces(x)
        X = cm[:, None] * self.F[j] + cp[:, None] * self.F[j + 1]
        rows = np.arange(len(j))
        X[rows, j] += am
        X[rows, j + 1] += ap
        return X

    def sparse_design(self, x) -> "SplineDesign":
        j, am, ap, cm, cp = self._pieces(x)
        n, K = len(j), self.size
        rows = np.repeat(np.arange(n), 2)
        cols = np.column_stack([j, j + 1]).reshape(-1)
        L = sparse.csr_matrix((np.column_stack([am, ap]).reshape(-1), (rows, cols)), shape=(n, K))
        C = sparse.csr_matrix((np.column_stack([cm, cp]).reshape(-1), (rows, cols)), shape=(n, K))
        return SplineDesign(L, C, self.F)


class SplineDesign:
    """Design matrix ``L + C F`` kept in factored form: L and C have two nonzeros per row."""

    def __init__(self, L, C, F):
        self.L, self.C, self.F = L, C, F

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def rows(self, mask) -> "SplineDesign":
        return SplineDesign(self.L[mask], self.C[mask], self.F)

    def dot(self, beta: np.ndarray) -> np.ndarray:
        return self.L @ beta + self.C @ (self.F @ beta)

    def tdot(self, r: np.ndarray) -> np.ndarray:
        return self.L.T @ r + self.F.T @ (self.C.T @ r)

    def gram(self) -> np.ndarray:
        LL = (self.L.T @ self.L).toarray()
        LC = (self.L.T @ self.C).toarray()
        CC = (self.C.T @ self.C).toarray()
        cross = LC @ self.F
        G = LL + cross + cross.T + self.F.T @ CC @ self.F
        return 0.5 * (G + G.T)


def quantile_knots(x, K: int) -> np.ndarray:
    uniq = np.unique(np.asarray(x, dtype=np.float64))
    if len(uniq) < K:
        raise TooFewDistinctValues(f"{len(uniq)} distinct values, need >= {K} for {K} knots")
    knots = np.unique(np.quantile(uniq, np.linspace(0.0, 1.0, K)))
    if len(knots) < K:
        # quantile collisions on heavily tied data; fall back to spread-out unique values
        knots = uniq[np.unique(np.round(np.linspace(0, len(uniq) - 1, K)).astype(int))]
    return knots


@dataclass(frozen=True, eq=False)
class SplineFit:
    basis: NaturalSplineBasis
    coef: np.ndarray
    lam: float

    def __call__(self, x) -> np.ndarray:
        return self.basis.sparse_design(np.atleast_1d(x)).dot(self.coef)

    @property
    def knots(self) -> np.ndarray:
        return self.basis.knots

    def roughness(self) -> float:
        """Integrated squared second derivative over the knot range."""
        return float(self.coef @ self.basis.P @ self.coef)

    def to_shape(self, feature: str) -> FeatureShape:
        return FeatureShape(feature, self.knots, self.coef, Mode.CUBIC_SPLINE)


def _solve(XtX: np.ndarray, P: np.ndarray, Xtr: np.ndarray, lam: float) -> np.ndarray:
    A = XtX + lam * P
    try:
        c, low = linalg.cho_factor(A, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"penalized normal equations not solvable (lambda={lam:g}): {e}")
    beta = linalg.cho_solve((c, low), Xtr)
    if not np.all(np.isfinite(beta)):
        raise SingularSystem("penalized normal equations produced non-finite coefficients")
    return beta


def fit_spline_1d(x, r, K: int = 20, lam: float = 1.0,
                  basis: NaturalSplineBasis | None = None) -> SplineFit:
    """Minimize ||r - B coef||^2 + lam * coef' P coef on K quantile knots."""
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise LengthMismatch(f"x has {x.shape}, r has {r.shape}")
    if not lam > 0:
        raise DataError("lambda must be positive")
    if basis is None:
        basis = NaturalSplineBasis(quantile_knots(x, K))
    X = basis.sparse_design(x)
    beta = _solve(X.gram(), basis.P, X.tdot(r), lam)
    return SplineFit(basis, beta, float(lam))


# ---------------------------------------------------------------- backfitting

def _cv_lambda(X: SplineDesign, r: np.ndarray, P: np.ndarray, grid, folds: np.ndarray,
               n_folds: int, XtX: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    XtX = X.gram() if XtX is None else XtX
    Xtr = X.tdot(r)
    parts = []
    for k in range(n_folds):
        m = folds == k
        Xk = X.rows(m)
        parts.append((Xk, r[m], Xk.gram(), Xk.tdot(r[m])))
    errs = np.zeros(len(grid))
    for i, lam in enumerate(grid):
        sse = 0.0
        for Xk, rk, XtXk, Xtrk in parts:
            beta = _solve(XtX - XtXk, P, Xtr - Xtrk, lam)
            sse += float(np.sum((rk - Xk.dot(beta)) ** 2))
        errs[i] = sse / len(r)
    return float(grid[int(np.argmin(errs))]), errs


def fit_sas(X, f, cfg: SasConfig = SasConfig(), feature_names: Sequence[str] | None = None,
            return_trace: bool = False):
    """Backfit one penalized spline per feature to teacher outputs ``f``.

    Smoothing parameters are chosen per feature by k-fold CV on the partial
    residuals of the first ``cfg.cv_cycles`` cycles and frozen afterwards.
    With ``return_trace`` also returns a dict with the chosen lambdas, the
    per-cycle training MSE and the per-cycle penalized objective.
    """
    task = Task.REGRESSION
    if isinstance(X, Dataset):
        feature_names, task, X = X.feature_names, X.task, X.features
    X = np.asarray(X, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != f.shape[0]:
        raise LengthMismatch(f"X shape {X.shape} does not match {f.shape[0]} teacher outputs")
    if not np.all(np.isfinite(f)):
        raise NonFiniteTarget("teacher outputs must be finite")
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j + 1}" for j in range(p))
    if len(names) != p:
        raise LengthMismatch(f"{len(names)} names for {p} columns")

    bases = []
    for j in range(p):
        n_distinct = len(np.unique(X[:, j]))
        if n_distinct < 3:
            raise TooFewDistinctValues(f"feature {names[j]!r} has {n_distinct} distinct values")
        bases.append(NaturalSplineBasis(quantile_knots(X[:, j], min(cfg.knots_per_feature,
                                                                     n_distinct))))
    designs = [b.sparse_design(X[:, j]) for j, b in enumerate(bases)]
    grams = [D.gram() for D in designs]
    folds = np.random.default_rng(cfg.seed).permutation(n) % cfg.cv_folds

    intercept = float(np.mean(f))
    coefs = [np.zeros(b.size) for b in bases]
    fitted = np.zeros((p, n))
    lambdas: list[float] = [0.0] * p
    cv_errors: list[list[float]] = [[] for _ in range(p)]
    resid = f - intercept
    mse_trace = [float(np.mean(resid ** 2))]
    objective = []
    converged = False
    for it in range(cfg.backfit_max_iters):
        max_change = 0.0
        for j in range(p):
            partial = resid + fitted[j]
            if it < cfg.cv_cycles:
                lambdas[j], errs = _cv_lambda(designs[j], partial, bases[j].P, cfg.lambda_grid,
                                              folds, cfg.cv_folds, grams[j])
                cv_errors[j] = errs.tolist()
            beta = _solve(grams[j], bases[j].P, designs[j].tdot(partial), lambdas[j])
            new = designs[j].dot(beta)
            # the basis reproduces constants, so this keeps the component centered
            shift = float(new.mean())
            beta = beta - shift
            new = new - shift
            max_change = max(max_change, float(np.max(np.abs(new - fitted[j]))))
            resid = partial - new
            fitted[j] = new
            coefs[j] = beta
        mse_trace.append(float(np.mean(resid ** 2)))
        objective.append(float(np.sum(resid ** 2) + sum(
            lambdas[j] * coefs[j] @ bases[j].P @ coefs[j] for j in range(p))))
        log.debug("backfit cycle %d: max change %.3g, mse %.6g", it + 1, max_change, mse_trace[-1])
        if it >= cfg.cv_cycles - 1 and max_change < cfg.backfit_tol:
            converged = True
            break

    shapes = tuple(FeatureShape(names[j], bases[j].knots, coefs[j], Mode.CUBIC_SPLINE)
                   for j in range(p))
    model = AdditiveModel(intercept, shapes, task=task, method="SAS",
                          meta={"config": asdict(cfg), "lambdas": lambdas,
                                "converged": converged, "cycles": len(mse_trace) - 1})
    model = center(model, X, names)
    if return_trace:
        return model, {"lambdas": lambdas, "mse": mse_trace, "objective": objective,
                       "cv_errors": cv_errors, "converged": converged}
    return model
