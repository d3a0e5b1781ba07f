"""Bayesian patchwork case-based reasoning."""

from .data import (DiscretizationSpec, FoldPlan, fold_data, kfold_split, load_builtin,
                   load_csv, select_parents)
from .estimator import BayesianPatchworksClassifier, HammingKNNClassifier
from .evaluation import (ExperimentReport, MetricSet, confusion_metrics, cross_validate,
                         feature_subset_eval, knn_predict, sensitivity_sweep)
from .inference import ChainConfig, PosteriorSamples, run_chain
from .model import (CategoricalDataset, Hyperparameters, LabelsRequiredError, ModelState,
                    ParentSet, StructuralError, Variant, generate_synthetic)
from .prediction import (classify, explain, feature_importance, infer_new_case,
                         predict_label_distribution)

__version__ = "0.1.0"

__all__ = [
    "BayesianPatchworksClassifier", "CategoricalDataset", "ChainConfig", "DiscretizationSpec",
    "ExperimentReport", "FoldPlan", "HammingKNNClassifier", "Hyperparameters",
    "LabelsRequiredError", "MetricSet", "ModelState", "ParentSet", "PosteriorSamples",
    "StructuralError", "Variant", "classify", "confusion_metrics", "cross_validate", "explain",
    "feature_importance", "feature_subset_eval", "fold_data", "generate_synthetic",
    "infer_new_case", "kfold_split", "knn_predict", "load_builtin", "load_csv",
    "predict_label_distribution", "run_chain", "select_parents", "sensitivity_sweep",
]
