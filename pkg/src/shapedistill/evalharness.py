"""Fidelity and accuracy metrics, probing, controlled experiments and report grids."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .baselines import ShapConfig, as_predictor, ggrad_model, gshap_model, pd_model
from .datasets import Dataset, GroundTruthShapes, Task, bin_index, bin_midpoints, bump_labels
from .distill_splines import SasConfig, fit_sas
from .distill_trees import SatConfig, fit_sat
from .errors import DataError, NoLabels, UnknownFeature
from .shapes import AdditiveModel, Direction, FeatureShape, center, check_monotonic, \
    predict_additive, subtract_shapes
from .teacher import TrainConfig, train_teacher

METHODS = ("SAT", "SAS", "PD", "gGRAD", "gSHAP")
REPORT_FORMAT = "shapedistill.report/1"


# ---------------------------------------------------------------- metrics

def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def auroc(labels, scores) -> float:
    """Area under the ROC curve in percent; tied scores count one half."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise DataError(f"{y.size} labels for {s.size} scores")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs both classes present")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(100.0 * u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalReport:
    method: str
    fidelity_rmse: float
    accuracy: float | None
    accuracy_metric: str
    n_eval: int
    teacher: str = ""
    dataset: str = ""
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(explanation: AdditiveModel, net, ds: Dataset, method: str | None = None,
             teacher: str = "", dataset: str = "", seed: int | None = None,
             require_labels: bool = False) -> EvalReport:
    """Fidelity to ``net`` and accuracy against labels, both on ``ds``.

    Without labels the accuracy is None, or NoLabels is raised when
    ``require_labels`` is set.
    """
    g = predict_additive(explanation, ds)
    f = as_predictor(net, ds.feature_names)(ds.features)
    fid = rmse(g, f)
    metric = "auroc" if ds.task is Task.BINARY else "rmse"
    acc = None
    if ds.labels is None:
        if require_labels:
            raise NoLabels("dataset has no labels; accuracy cannot be computed")
    elif metric == "auroc":
        acc = auroc(ds.labels, g)
    else:
        acc = rmse(g, ds.labels)
    return EvalReport(method or explanation.method, fid, acc, metric, ds.n, teacher, dataset, seed)


def align_intercept(m: AdditiveModel, net, ds: Dataset) -> AdditiveModel:
    """Center ``m`` on ``ds`` and set its intercept to the mean teacher output there.

    Predictions change only by a constant, so every method is compared under
    the same intercept convention.
    """
    c = center(m, ds)
    f = as_predictor(net, ds.feature_names)(ds.features)
    return replace(c, intercept=float(np.mean(f - predict_additive(c, ds) + c.intercept)))


# ---------------------------------------------------------------- shape comparison

@dataclass(frozen=True)
class ShapeDistance:
    l_inf: float
    l2: float


def shape_distance(learned: FeatureShape | Callable, truth: Callable, lo: float = -0.95,
                   hi: float = 0.95, grid_n: int = 1001, reference=None) -> ShapeDistance:
    """Distance between two shapes after centering both on ``reference``.

    ``reference`` is a sample of feature values; it defaults to the uniform
    evaluation grid itself. ``l2`` is the root mean square over the grid.
    """
    grid = np.linspace(lo, hi, grid_n)
    ref = grid if reference is None else np.asarray(reference, dtype=np.float64)
    a = np.asarray(learned(grid), dtype=np.float64) - np.mean(learned(ref))
    b = np.asarray(truth(grid), dtype=np.float64) - np.mean(truth(ref))
    d = a - b
    return ShapeDistance(float(np.max(np.abs(d))), float(np.sqrt(np.mean(d ** 2))))


def pointwise_error(learned: FeatureShape, truth: Callable, grid: np.ndarray,
                    reference=None) -> np.ndarray:
    ref = grid if reference is None else np.asarray(reference, dtype=np.float64)
    a = learned(grid) - np.mean(learned(ref))
    b = truth(grid) - np.mean(truth(ref))
    return a - b


# ---------------------------------------------------------------- easy / hard probes

@dataclass(frozen=True)
class ProbeSpec:
    """Candidate values per feature for the easy and hard probe sets."""

    easy: Mapping[str, tuple[float, ...]]
    hard: Mapping[str, tuple[float, ...]]
    n: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise DataError("probe count must be >= 1")
        for which in (self.easy, self.hard):
            for f, vals in which.items():
                if len(vals) == 0:
                    raise DataError(f"no probe values for {f!r}")
                if np.any(np.abs(np.asarray(vals)) > 1.0):
                    raise DataError(f"probe values for {f!r} leave the [-1, 1] domain")


def build_probe_spec(learned: AdditiveModel, truth: GroundTruthShapes,
                     n_features: int | None = None, k: int = 20, grid_n: int = 201,
                     n: int = 10_000, seed: int = 0) -> ProbeSpec:
    """Pick probe values from the disagreement between learned and true shapes.

    The ``n_features`` features with the largest pointwise error (all of them
    by default) are fixed in both probe sets. Hard values are the ``k`` grid
    points whose error is largest in a common direction, so errors add up
    across features; easy values are the ``k`` points of smallest absolute
    error.
    """
    grid = np.linspace(-1.0, 1.0, grid_n)
    errs = {f: pointwise_error(learned.shape(f), lambda x, f=f: truth.raw(f, x), grid)
            for f in truth.feature_names}
    worst = sorted(errs, key=lambda f: (-float(np.max(np.abs(errs[f]))), f))
    if n_features is not None:
        worst = worst[:n_features]
    sign = np.sign(sum(errs[f][np.argmax(np.abs(errs[f]))] for f in worst)) or 1.0
    hard = {f: tuple(float(v) for v in grid[np.argsort(-sign * errs[f], kind="stable")[:k]])
            for f in worst}
    easy = {f: tuple(float(v) for v in grid[np.argsort(np.abs(errs[f]), kind="stable")[:k]])
            for f in worst}
    return ProbeSpec(easy, hard, n, seed)


_PROBE_STREAM = 0x5EED


def _probe_rows(values: Mapping[str, Sequence[float]], names: Sequence[str], n: int,
                rng: np.random.Generator) -> np.ndarray:
    X = rng.uniform(-1.0, 1.0, size=(n, len(names)))
    for f, vals in values.items():
        if f not in names:
            raise UnknownFeature(f"unknown probe feature {f!r}")
        X[:, list(names).index(f)] = rng.choice(np.asarray(vals, dtype=np.float64), size=n)
    return X


def probe_easy_hard(net, spec: ProbeSpec, truth_fn: Callable[[np.ndarray], np.ndarray],
                    feature_names: Sequence[str]) -> dict[str, float]:
    """Teacher RMSE against ``truth_fn`` on easy, unconstrained and hard probe sets."""
    f = as_predictor(net, feature_names)
    out = {}
    sets = (("rmse_easy", spec.easy), ("rmse_all", {}), ("rmse_hard", spec.hard))
    for k, (name, values) in enumerate(sets):
        # a stream distinct from the data generators', so probes never replay training rows
        rng = np.random.default_rng([spec.seed, _PROBE_STREAM, k])
        X = _probe_rows(values, feature_names, spec.n, rng)
        out[name] = rmse(f(X), truth_fn(X))
    return out


# ---------------------------------------------------------------- distillation dispatch

@dataclass(frozen=True)
class ExplainConfig:
    sat: SatConfig = SatConfig()
    sas: SasConfig = SasConfig()
    shap: ShapConfig = ShapConfig()
    pd_points: int = 64
    pd_rows: int = 2000
    shap_rows: int = 512
    seed: int = 0


def _subsample(ds: Dataset, rows: int, seed: int) -> Dataset:
    if ds.n <= rows:
        return ds
    idx = np.random.default_rng(seed).choice(ds.n, rows, replace=False)
    return ds.subset(np.sort(idx))


def distill(method: str, X: Dataset, f: np.ndarray, cfg: ExplainConfig = ExplainConfig()
            ) -> AdditiveModel:
    if method == "SAT":
        return fit_sat(X, f, cfg.sat)
    if method == "SAS":
        return fit_sas(X, f, cfg.sas)
    raise DataError(f"unknown student {method!r} (expected SAT or SAS)")


def explain(method: str, net, ds: Dataset, cfg: ExplainConfig = ExplainConfig()
            ) -> AdditiveModel:
    """Build one of the five explanation models of ``net`` from the rows of ``ds``."""
    if method in ("SAT", "SAS"):
        return distill(method, ds, as_predictor(net, ds.feature_names)(ds.features), cfg)
    if method == "PD":
        return pd_model(net, _subsample(ds, cfg.pd_rows, cfg.seed), cfg.pd_points)
    if method == "gGRAD":
        return ggrad_model(net, ds)
    if method == "gSHAP":
        return gshap_model(net, _subsample(ds, cfg.shap_rows, cfg.seed), cfg.shap)
    raise DataError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


# ---------------------------------------------------------------- controlled experiments

@dataclass(frozen=True)
class BumpResult:
    shape_delta: FeatureShape
    detected_height: float
    outside_amplitude: float


def _grid_over(x: np.ndarray, n: int = 1001) -> np.ndarray:
    return np.linspace(float(np.min(x)), float(np.max(x)), n)


def run_label_bump_experiment(base_ds: Dataset, feature: str, lo: float, hi: float, delta: float,
                              arch: Sequence[int], train_cfg: TrainConfig = TrainConfig(),
                              student: str = "SAT", cfg: ExplainConfig = ExplainConfig(),
                              guard: float = 0.1) -> BumpResult:
    """Train and distill teachers on original and bumped labels and compare shapes.

    The detected height is the mean shape difference inside [lo, hi] minus
    the mean outside, both over a uniform grid spanning the feature's values.
    The outside amplitude is the spread of the difference beyond a band of
    ``guard`` times the feature range around [lo, hi], which the teacher's
    smoothing of the step edges would otherwise dominate.
    """
    if base_ds.task is not Task.REGRESSION:
        raise DataError("label bump needs a regression dataset")
    bumped = bump_labels(base_ds, feature, lo, hi, delta)
    t0 = train_teacher(base_ds, arch, train_cfg)
    # identical labels give an identical teacher; skip the retrain
    same = np.array_equal(bumped.labels, base_ds.labels)
    t1 = t0 if same else train_teacher(bumped, arch, train_cfg)
    s0 = explain(student, t0, base_ds.without_labels(), cfg)
    s1 = s0 if same else explain(student, t1, base_ds.without_labels(), cfg)
    diff = subtract_shapes(s1.shape(feature), s0.shape(feature))
    grid = _grid_over(base_ds.column(feature))
    d = diff(grid)
    inside = (grid >= lo) & (grid <= hi)
    g = guard * float(grid[-1] - grid[0])
    far = (grid < lo - g) | (grid > hi + g)
    if not inside.any() or inside.all():
        height = 0.0
    else:
        height = float(np.mean(d[inside]) - np.mean(d[~inside]))
    outside_amp = float(np.ptp(d[far])) if far.any() else 0.0
    return BumpResult(diff, height, outside_amp)


def step_score(shape: Callable, x: np.ndarray, cut_points: Sequence[float]) -> float:
    """1 - mean within-bin variance / total variance of the shape over ``x``."""
    v = np.asarray(shape(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    total = float(np.var(v))
    if total == 0.0:
        return 0.0
    bins = bin_index(x, cut_points).astype(np.int64)
    within = 0.0
    for b in np.unique(bins):
        sel = bins == b
        within += float(np.var(v[sel])) * sel.sum()
    return 1.0 - within / (len(v) * total)


@dataclass(frozen=True)
class DiscretizationResult:
    step_score: float
    shape: FeatureShape


def discretized_inputs(ds: Dataset, feature: str, cut_points: Sequence[float]) -> Dataset:
    """Replace ``feature`` by the midpoint of its bin."""
    x = ds.column(feature)
    mids = bin_midpoints(cut_points, float(x.min()), float(x.max()))
    return ds.with_column(feature, mids[bin_index(x, cut_points).astype(np.int64)])


def run_discretization_experiment(base_ds: Dataset, feature: str, cut_points: Sequence[float],
                                  arch: Sequence[int], train_cfg: TrainConfig = TrainConfig(),
                                  student: str = "SAT", cfg: ExplainConfig = ExplainConfig(),
                                  discretize: bool = True) -> DiscretizationResult:
    """Teacher sees ``feature`` only through its bins; the student sees the raw values.

    With ``discretize=False`` the teacher sees the raw feature, which gives
    the smooth reference for the same cuts.
    """
    teacher_view = discretized_inputs(base_ds, feature, cut_points) if discretize else base_ds
    net = train_teacher(teacher_view, arch, train_cfg)
    f = as_predictor(net, base_ds.feature_names)(teacher_view.features)
    m = distill(student, base_ds.without_labels(), f, cfg)
    s = m.shape(feature)
    return DiscretizationResult(step_score(s, base_ds.column(feature), cut_points), s)


# ---------------------------------------------------------------- monotonicity

@dataclass(frozen=True)
class FeatureAudit:
    feature: str
    direction: str
    holds: bool
    worst_violation: float
    location: float | None
    fraction_expected: float | None = None
    fraction_reversed: float | None = None


def monotone_fractions(net, ds: Dataset, feature: str, direction: Direction | str,
                       grid_n: int = 32, tol: float = 0.0) -> tuple[float, float]:
    """Fractions of rows whose teacher output moves in / against ``direction``.

    Each row's ``feature`` is swept across its observed range with the other
    features held fixed.
    """
    direction = Direction(direction)
    j = ds.index(feature)
    grid = _grid_over(ds.features[:, j], grid_n)
    block = np.tile(ds.features, (grid_n, 1))
    block[:, j] = np.repeat(grid, ds.n)
    out = as_predictor(net, ds.feature_names)(block).reshape(grid_n, ds.n)
    d = np.diff(out, axis=0)
    if direction is Direction.DECREASING:
        d = -d
    expected = np.all(d >= -tol, axis=0)
    reversed_ = np.all(d <= tol, axis=0) & np.any(d < -tol, axis=0)
    return float(expected.mean()), float(reversed_.mean())


def monotonicity_audit(m: AdditiveModel, expectations: Mapping[str, Direction | str],
                       tol: float = 0.0, net=None, ds: Dataset | None = None,
                       grid_n: int = 32) -> dict[str, FeatureAudit]:
    """Check each listed shape against its expected direction.

    With ``net`` and ``ds`` the teacher probe also runs for each feature.
    """
    report = {}
    for feature, direction in expectations.items():
        direction = Direction(direction)
        r = check_monotonic(m.shape(feature), direction, tol)
        fe = fr = None
        if net is not None and ds is not None:
            fe, fr = monotone_fractions(net, ds, feature, direction, grid_n, tol)
        report[feature] = FeatureAudit(feature, direction.value, r.holds, r.worst_violation,
                                       r.location, fe, fr)
    return report


# ---------------------------------------------------------------- report grid

@dataclass
class ReportGrid:
    reports: list[EvalReport] = field(default_factory=list)

    def add(self, r: EvalReport) -> None:
        self.reports.append(r)

    def summary(self) -> list[dict]:
        """Mean and standard error over seeds for every (dataset, teacher, method) cell."""
        cells: dict[tuple, list[EvalReport]] = {}
        for r in self.reports:
            cells.setdefault((r.dataset, r.teacher, r.method), []).append(r)
        out = []
        for (dataset, teacher, method), rs in cells.items():
            row = {"dataset": dataset, "teacher": teacher, "method": method, "n_seeds": len(rs),
                   "accuracy_metric": rs[0].accuracy_metric}
            for key in ("fidelity_rmse", "accuracy"):
                vals = [getattr(r, key) for r in rs if getattr(r, key) is not None]
                row[key] = _mean_se(vals)
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT,
                "reports": [r.to_dict() for r in self.reports],
                "summary": self.summary()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReportGrid":
        if d.get("format") != REPORT_FORMAT:
            from .errors import SchemaVersionMismatch
            raise SchemaVersionMismatch(f"expected {REPORT_FORMAT}, got {d.get('format')!r}")
        return cls([EvalReport(**r) for r in d["reports"]])

    def format_table(self) -> str:
        """Methods down, dataset/teacher columns across; accuracy block then fidelity block."""
        rows = self.summary()
        cols = sorted({(r["dataset"], r["teacher"]) for r in rows})
        methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
        methods += sorted({r["method"] for r in rows} - set(methods))
        index = {(r["dataset"], r["teacher"], r["method"]): r for r in rows}
        heads = [f"{d}/{t}" if t else d for d, t in cols]
        width = max([14] + [len(h) + 2 for h in heads])
        lines = []
        for key, title in (("accuracy", "Accuracy"), ("fidelity_rmse", "Fidelity (RMSE)")):
            lines.append(title)
            lines.append("method".ljust(8) + "".join(h.rjust(width) for h in heads))
            for m in methods:
                cells = []
                for d, t in cols:
                    r = index.get((d, t, m))
                    cells.append(_fmt_cell(r[key] if r else None).rjust(width))
                lines.append(m.ljust(8) + "".join(cells))
            lines.append("")
        return "\n".join(lines)


def _mean_se(vals: list[float]) -> dict | None:
    if not vals:
        return None
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return {"mean": mean, "stderr": se}


def _fmt_cell(v: dict | None) -> str:
    if v is None:
        return "-"
    if v["stderr"] == 0.0:
        return f"{v['mean']:.4f}"
    return f"{v['mean']:.4f}±{v['stderr']:.4f}"
