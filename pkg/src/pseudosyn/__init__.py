"""Pseudo-labeling and edge-conditioned image synthesis for imbalanced wound classification."""

from .balancer import ExtensionPlan, plan_balance, verify_extension
from .catalog import (
    Catalog,
    ClassDistribution,
    ImageRecord,
    Provenance,
    Split,
    load_manifest,
    split_cv,
)
from .classifier import ImageClassifier, TrainingConfig, lr_schedule
from .edgemask import CannyEdgeDetector, CannyParams, canny
from .ensemble import AveragingEnsemble, average_probabilities, decide
from .explain import LimeImageExplainer, explain
from .labels import ClassLabel
from .metrics import evaluate, improvement
from .pipeline import PipelineConfig, report, run_phase
from .pseudolabel import extend_with_pseudo, extension_stats, filter_confident
from .synthesis import EdgeToImageGAN, GanConfig

__version__ = "0.1.0"

__all__ = [
    "AveragingEnsemble",
    "CannyEdgeDetector",
    "CannyParams",
    "Catalog",
    "ClassDistribution",
    "ClassLabel",
    "EdgeToImageGAN",
    "ExtensionPlan",
    "GanConfig",
    "ImageClassifier",
    "ImageRecord",
    "LimeImageExplainer",
    "PipelineConfig",
    "Provenance",
    "Split",
    "TrainingConfig",
    "average_probabilities",
    "canny",
    "decide",
    "evaluate",
    "explain",
    "extend_with_pseudo",
    "extension_stats",
    "filter_confident",
    "improvement",
    "load_manifest",
    "lr_schedule",
    "plan_balance",
    "report",
    "run_phase",
    "split_cv",
    "verify_extension",
]
