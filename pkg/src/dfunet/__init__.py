"""Diabetic foot ulcer patch classification: a from-scratch CNN stack, image
pipeline, hand-crafted descriptors with an SMO-trained SVM, and ROC metrics."""

from .checkpoint import load_checkpoint, save_checkpoint
from .estimators import DFUNetClassifier, PatchFeatureExtractor, SMOClassifier, ZeroCenterNormalizer
from .features import extract_features
from .metrics import auc, binary_report, mcc, multiclass_report, roc_curve
from .netzoo import build_dfunet, build_lenet, forward, init_params
from .optim import TrainConfig, train
from .svm import smo_train

__version__ = "0.1.0"

__all__ = [
    "DFUNetClassifier", "PatchFeatureExtractor", "SMOClassifier", "ZeroCenterNormalizer",
    "auc", "binary_report", "build_dfunet", "build_lenet", "extract_features", "forward",
    "init_params", "load_checkpoint", "mcc", "multiclass_report", "roc_curve", "save_checkpoint",
    "smo_train", "train", "TrainConfig",
]
