"""Distill black-box tabular models into additive feature-shape explanations."""

from .baselines import (ShapConfig, ggrad_attributions, ggrad_model, globalize, gshap_model,
                        partial_dependence, pd_model, shap_attributions)
from .datasets import (Dataset, GroundTruthShapes, SplitSpec, Task, bump_labels,
                       discretize_feature, gen_f1, gen_f2, load_csv, save_csv, split)
from .distill_splines import SasConfig, fit_sas, fit_spline_1d
from .distill_trees import PairConfig, SatConfig, fit_sat, fit_sat_pairs
from .errors import DataError, NumericError, ShapeDistillError, UsageError
from .evalharness import (EvalReport, ExplainConfig, ProbeSpec, ReportGrid, auroc, evaluate,
                          explain, monotonicity_audit, probe_easy_hard,
                          run_discretization_experiment, run_label_bump_experiment,
                          shape_distance)
from .shapes import (AdditiveModel, AttributionTable, FeatureShape, Mode, PairShape, center,
                     check_monotonic, export_shapes, predict_additive)
from .teacher import TeacherNet, TrainConfig, input_gradients, predict, train_teacher

__version__ = "0.1.0"

__all__ = [
    "AdditiveModel",
    "AttributionTable",
    "DataError",
    "Dataset",
    "EvalReport",
    "ExplainConfig",
    "FeatureShape",
    "GroundTruthShapes",
    "Mode",
    "NumericError",
    "PairConfig",
    "PairShape",
    "ProbeSpec",
    "ReportGrid",
    "SasConfig",
    "SatConfig",
    "ShapConfig",
    "ShapeDistillError",
    "SplitSpec",
    "Task",
    "TeacherNet",
    "TrainConfig",
    "UsageError",
    "auroc",
    "bump_labels",
    "center",
    "check_monotonic",
    "discretize_feature",
    "evaluate",
    "explain",
    "export_shapes",
    "fit_sas",
    "fit_sat",
    "fit_sat_pairs",
    "fit_spline_1d",
    "gen_f1",
    "gen_f2",
    "ggrad_attributions",
    "ggrad_model",
    "globalize",
    "gshap_model",
    "input_gradients",
    "load_csv",
    "monotonicity_audit",
    "partial_dependence",
    "pd_model",
    "predict",
    "predict_additive",
    "probe_easy_hard",
    "run_discretization_experiment",
    "run_label_bump_experiment",
    "save_csv",
    "shap_attributions",
    "shape_distance",
    "split",
    "train_teacher",
]
