"""Command-line pipeline: every stage reads and writes plain files in ``--out-dir``.

Errors print one line ``ERROR <CODE>: <message>`` on stderr and exit with
2 (usage), 3 (data) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import datasets as dsmod
from .baselines import ShapConfig, ggrad_attributions, shap_attributions
from .datasets import Dataset, SplitSpec, load_csv, save_csv, split
from .distill_splines import SasConfig
from .distill_trees import PairConfig, SatConfig, fit_sat_pairs
from .errors import DataError, MissingArtifact, MissingColumn, SchemaVersionMismatch, \
    ShapeDistillError, UsageError
from .evalharness import (METHODS, ExplainConfig, ReportGrid, align_intercept, build_probe_spec,
                          evaluate, explain, monotonicity_audit, probe_easy_hard,
                          run_discretization_experiment, run_label_bump_experiment)
from .shapes import AdditiveModel, FeatureShape, Mode, export_shapes, write_shapes_csv
from .teacher import TeacherNet, TrainConfig, parse_arch, predict, train_teacher

log = logging.getLogger("shapedistill")

RUN_FORMAT = "shapedistill.run/1"
RESULT_FORMAT = "shapedistill.result/1"


# ---------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    """Declarative defaults for a run; command-line flags override them."""

    seed: int = 0
    arch: str = "2H-128,128"
    task: str = "regression"
    label_column: str = "label"
    split: dict = field(default_factory=lambda: {"train": 0.7, "valid": 0.15, "test": 0.15})
    train: dict = field(default_factory=dict)
    sat: dict = field(default_factory=dict)
    sas: dict = field(default_factory=dict)
    shap: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)
    methods: tuple[str, ...] = METHODS

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if d.get("format") != RUN_FORMAT:
            raise SchemaVersionMismatch(f"expected run config format {RUN_FORMAT}, "
                                        f"got {d.get('format')!r}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known - {"format"})
        if unknown:
            raise UsageError(f"unknown run config keys: {', '.join(unknown)}")
        kw = {k: v for k, v in d.items() if k in known}
        if "methods" in kw:
            kw["methods"] = tuple(kw["methods"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return {"format": RUN_FORMAT, **d}

    def train_config(self, seed: int) -> TrainConfig:
        return _build(TrainConfig, self.train, seed=seed)

    def explain_config(self, seed: int, threads: int) -> ExplainConfig:
        sas = dict(self.sas)
        if "lambda_grid" in sas:
            sas["lambda_grid"] = tuple(float(v) for v in sas["lambda_grid"])
        return ExplainConfig(sat=_build(SatConfig, self.sat, seed=seed, n_jobs=threads),
                             sas=_build(SasConfig, sas, seed=seed),
                             shap=_build(ShapConfig, self.shap, seed=seed), seed=seed)

    def pair_config(self) -> PairConfig:
        kw = dict(self.pairs)
        if isinstance(kw.get("pairs"), list):
            kw["pairs"] = tuple(tuple(p) for p in kw["pairs"])
        return _build(PairConfig, kw)


def _build(cls, overrides: dict, **fixed):
    names = {f.name for f in fields(cls)}
    bad = sorted(set(overrides) - names)
    if bad:
        raise UsageError(f"unknown {cls.__name__} keys: {', '.join(bad)}")
    kw = {**overrides, **{k: v for k, v in fixed.items() if k in names}}
    try:
        return cls(**kw)
    except TypeError as e:
        raise UsageError(f"bad {cls.__name__} values: {e}") from None


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(_read_json(path))


# ---------------------------------------------------------------- file helpers

def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifact(f"no such file: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{p} is not valid JSON: {e.msg} at line {e.lineno}") from None


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _load_dataset(path, cfg: RunConfig, task: str | None = None, label_column: str | None = None,
                  labels: bool = True, required: bool = True) -> Dataset:
    """Read a CSV; with ``required=False`` a missing label column is tolerated."""
    p = Path(path)
    if not p.is_file():
        raise MissingArtifact(f"no such file: {p}")
    if not labels:
        return load_csv(p, task or cfg.task, None)
    try:
        return load_csv(p, task or cfg.task, label_column or cfg.label_column)
    except MissingColumn:
        if required:
            raise
        return load_csv(p, task or cfg.task, None)


def _features_only(path, cfg: RunConfig) -> Dataset:
    return _load_dataset(path, cfg, required=False).without_labels()


def _load_teacher(path) -> TeacherNet:
    return TeacherNet.from_dict(_read_json(path))


def _load_model(path) -> AdditiveModel:
    return AdditiveModel.from_dict(_read_json(path))


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, cfg: RunConfig) -> int:
    ds, truth = dsmod.generate(args.fn, args.n, args.seed)
    out = _out(args)
    data_path = out / f"{args.fn}.csv"
    save_csv(ds, data_path)
    grid = np.linspace(-1.0, 1.0, args.truth_grid)
    shapes = [FeatureShape(f, grid, truth.centered(f, grid), Mode.CUBIC_SPLINE)
              for f in truth.feature_names]
    write_shapes_csv(shapes, out / f"{args.fn}_truth.csv")
    print(data_path)
    return 0


def cmd_load(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.data, cfg, args.task, args.label_column,
                       labels=not args.no_labels)
    out = _out(args)
    summary = {"n": ds.n, "p": ds.p, "feature_names": list(ds.feature_names),
               "task": ds.task.value, "has_labels": ds.labels is not None}
    if args.split:
        fr = cfg.split
        parts = split(ds, SplitSpec(fr["train"], fr["valid"], fr["test"], args.seed))
        for name, part in zip(("train", "valid", "test"), parts):
            save_csv(part, out / f"{name}.csv")
            summary[f"n_{name}"] = part.n
    _write_json(out / "dataset.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out(args)
    train = _load_dataset(args.data, cfg, args.task)
    valid = _load_dataset(args.valid, cfg, args.task) if args.valid else None
    tc = cfg.train_config(args.seed)
    over = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.lr),
                              ("optimizer", args.optimizer), ("batch_size", args.batch_size))
            if v is not None}
    tc = replace(tc, **over)
    net = train_teacher(train, parse_arch(args.arch or cfg.arch), tc, valid)
    path = out / (args.name + ".json")
    net.save(path)
    print(path)
    return 0


def cmd_distill(args, cfg: RunConfig) -> int:
    out = _out(args)
    net = _load_teacher(args.teacher)
    ds = _features_only(args.data, cfg)
    ec = cfg.explain_config(args.seed, args.threads)
    written = []
    for method in args.method:
        m = explain(method, net, ds, ec)
        if args.pairs and method == "SAT":
            m = fit_sat_pairs(ds, predict(net, ds.features), m, cfg.pair_config())
            method = "SAT+pairs"
        path = out / f"model_{method}.json"
        m.save(path)
        written.append(str(path))
    print("\n".join(written))
    return 0


def cmd_baseline(args, cfg: RunConfig) -> int:
    out = _out(args)
    net = _load_teacher(args.teacher)
    ds = _features_only(args.data, cfg)
    ec = cfg.explain_config(args.seed, args.threads)
    if args.shap_mode:
        ec = replace(ec, shap=replace(ec.shap, mode=args.shap_mode))
    written = []
    for method in args.method:
        m = explain(method, net, ds, ec)
        path = out / f"model_{method}.json"
        m.save(path)
        written.append(str(path))
    if args.attributions:
        for method in args.method:
            if method == "gGRAD":
                ggrad_attributions(net, ds).save_csv(out / "attributions_GRAD.csv")
            elif method == "gSHAP":
                sub = ds.subset(np.arange(min(ds.n, ec.shap_rows)))
                shap_attributions(net, sub, ec.shap).save_csv(out / "attributions_SHAP.csv")
    print("\n".join(written))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out(args)
    net = _load_teacher(args.teacher)
    ds = _load_dataset(args.data, cfg, required=False)
    grid = ReportGrid()
    for path in args.models:
        m = _load_model(path)
        if not args.keep_intercept:
            m = align_intercept(m, net, ds)
        grid.add(evaluate(m, net, ds, teacher=args.teacher_name, dataset=args.dataset_name,
                          seed=args.seed))
    (out / "report.json").write_text(grid.to_json(), encoding="utf-8")
    table = grid.format_table()
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_experiment(args, cfg: RunConfig) -> int:
    out = _out(args)
    ec = cfg.explain_config(args.seed, args.threads)
    tc = cfg.train_config(args.seed)
    arch = parse_arch(args.arch or cfg.arch)
    kind = args.kind
    if kind == "easyhard":
        ds, truth = dsmod.generate(args.fn, args.n, args.seed)
        tr, va, _ = split(ds, SplitSpec(seed=args.seed))
        net = train_teacher(tr, arch, tc, va)
        learned = explain(args.student, net, tr.without_labels(), ec)
        spec = build_probe_spec(learned, truth, n=args.probes, seed=args.seed)
        fn = dsmod.SYNTHETIC[args.fn][0]
        result = {"rmse": probe_easy_hard(net, spec, fn, ds.feature_names),
                  "easy": {k: list(v) for k, v in spec.easy.items()},
                  "hard": {k: list(v) for k, v in spec.hard.items()}}
    elif kind == "bump":
        ds = _experiment_data(args, cfg)
        r = run_label_bump_experiment(ds, args.feature, args.lo, args.hi, args.delta, arch, tc,
                                      args.student, ec)
        result = {"detected_height": r.detected_height,
                  "outside_amplitude": r.outside_amplitude,
                  "shape_delta": r.shape_delta.to_dict()}
    elif kind == "discretize":
        ds = _experiment_data(args, cfg)
        cuts = [float(c) for c in args.cuts.split(",")] if args.cuts else []
        stair = run_discretization_experiment(ds, args.feature, cuts, arch, tc, args.student, ec)
        smooth = run_discretization_experiment(ds, args.feature, cuts, arch, tc, args.student, ec,
                                               discretize=False)
        result = {"step_score": stair.step_score, "smooth_step_score": smooth.step_score,
                  "shape": stair.shape.to_dict(), "smooth_shape": smooth.shape.to_dict()}
    else:
        m = _load_model(args.model)
        expectations = dict(_parse_expectation(e) for e in args.expect)
        net = _load_teacher(args.teacher) if args.teacher else None
        ds = _features_only(args.data, cfg) if args.data else None
        report = monotonicity_audit(m, expectations, args.tol, net, ds)
        result = {f: asdict(a) for f, a in report.items()}
    payload = {"format": RESULT_FORMAT, "experiment": kind, "seed": args.seed, "result": result}
    path = out / f"experiment_{kind}.json"
    _write_json(path, payload)
    print(path)
    return 0


def _experiment_data(args, cfg: RunConfig) -> Dataset:
    if args.data:
        return _load_dataset(args.data, cfg)
    return dsmod.generate(args.fn, args.n, args.seed)[0]


def _parse_expectation(text: str) -> tuple[str, str]:
    feature, sep, direction = text.partition("=")
    if not sep or direction not in ("increasing", "decreasing"):
        raise UsageError(f"expectation must look like FEATURE=increasing|decreasing: {text!r}")
    return feature, direction


def cmd_plot(args, cfg: RunConfig) -> int:
    out = _out(args)
    models = {}
    for spec in args.models:
        label, sep, path = spec.partition("=")
        m = _load_model(path if sep else label)
        models[label if sep else (m.method or Path(label).stem)] = m
    export_shapes(models, out / "shapes.csv", out, args.feature or None)
    print(out / "shapes.csv")
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shapedistill", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="seed for splits, teachers, students")
    p.add_argument("--out-dir", default=".", help="directory for all written artifacts")
    p.add_argument("--config", default=None, help="JSON run config with defaults")
    p.add_argument("--threads", type=int, default=1, help="worker threads for bagging")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate an F1/F2 dataset and its true shapes")
    s.add_argument("--fn", required=True, choices=sorted(dsmod.SYNTHETIC))
    s.add_argument("--n", type=int, default=50_000)
    s.add_argument("--truth-grid", type=int, default=201)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("load", help="validate a CSV and optionally split it")
    s.add_argument("--data", required=True)
    s.add_argument("--task", default=None, choices=["regression", "binary"])
    s.add_argument("--label-column", default=None)
    s.add_argument("--no-labels", action="store_true")
    s.add_argument("--split", action="store_true", help="write train/valid/test CSVs")
    s.set_defaults(func=cmd_load)

    s = sub.add_parser("train", help="train a teacher net")
    s.add_argument("--data", required=True)
    s.add_argument("--valid", default=None)
    s.add_argument("--task", default=None, choices=["regression", "binary"])
    s.add_argument("--arch", default=None, help='e.g. "2H-128,128" or "1H-8"')
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--optimizer", choices=["sgd", "adam"], default=None)
    s.add_argument("--name", default="teacher")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("distill", help="fit SAT and/or SAS students to a teacher")
    s.add_argument("--teacher", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--method", nargs="+", choices=["SAT", "SAS"], default=["SAT", "SAS"])
    s.add_argument("--pairs", action="store_true", help="add pairwise components to SAT")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("baseline", help="build PD, gGRAD and/or gSHAP explanations")
    s.add_argument("--teacher", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--method", nargs="+", choices=["PD", "gGRAD", "gSHAP"],
                   default=["PD", "gGRAD", "gSHAP"])
    s.add_argument("--shap-mode", choices=["exact", "permutation"], default=None)
    s.add_argument("--attributions", action="store_true", help="also write local attributions")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", help="score explanation models against a teacher")
    s.add_argument("--teacher", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--models", nargs="+", required=True)
    s.add_argument("--teacher-name", default="")
    s.add_argument("--dataset-name", default="")
    s.add_argument("--keep-intercept", action="store_true",
                   help="skip re-fitting each model's intercept on the evaluation data")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="probing, label bump, discretization, monotonicity")
    s.add_argument("kind", choices=["easyhard", "bump", "discretize", "monotone"])
    s.add_argument("--fn", default="f1", choices=sorted(dsmod.SYNTHETIC))
    s.add_argument("--n", type=int, default=30_000)
    s.add_argument("--data", default=None)
    s.add_argument("--arch", default=None)
    s.add_argument("--student", default="SAT", choices=["SAT", "SAS"])
    s.add_argument("--probes", type=int, default=10_000)
    s.add_argument("--feature", default="x9")
    s.add_argument("--lo", type=float, default=0.2)
    s.add_argument("--hi", type=float, default=0.6)
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--cuts", default="0.0", help="comma-separated cut points")
    s.add_argument("--model", default=None)
    s.add_argument("--teacher", default=None)
    s.add_argument("--expect", nargs="*", default=[], help="FEATURE=increasing|decreasing")
    s.add_argument("--tol", type=float, default=0.0)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("plot", help="export shapes as CSV and SVG")
    s.add_argument("--models", nargs="+", required=True, help="PATH or LABEL=PATH")
    s.add_argument("--feature", nargs="*", default=None)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_run_config(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.command == "experiment" and args.kind == "monotone" and not args.model:
            raise UsageError("experiment monotone needs --model")
        return args.func(args, cfg)
    except ShapeDistillError as e:
        return _fail(e.code, str(e), e.exit_code)
    except OSError as e:
        return _fail("IO", f"{e.strerror or e}: {e.filename}" if e.filename else str(e),
                     DataError.exit_code)


def _fail(code: str, message: str, exit_code: int) -> int:
    line = " ".join(message.split())
    print(f"ERROR {code}: {line}", file=sys.stderr)
    return exit_code


if __name__ == "__main__":
    raise SystemExit(main())
