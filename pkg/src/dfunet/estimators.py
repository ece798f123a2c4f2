"""scikit-learn compatible wrappers around the network, SVM and descriptors.

These let the pieces drop into ``sklearn.pipeline.Pipeline`` and
``sklearn.model_selection`` utilities. Hyper-parameters live in ``__init__``
untouched; everything learned gets a trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import netzoo
from .features import FeatureConfig, extract_features
from .optim import TrainConfig, train
from .pipeline.image import ImageBuffer
from .pipeline.normalize import apply_normalizer, fit_normalizer
from .svm import KernelSpec, Standardizer, smo_train, svm_decision


def check_patch_batch(X, input_shape=None) -> np.ndarray:
    """Validate an N x C x H x W float batch, optionally against a fixed shape."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim != 4:
        raise ValueError(f"expected an N x C x H x W batch, got shape {X.shape}")
    if input_shape is not None and X.shape[1:] != tuple(input_shape):
        raise ValueError(f"patches have shape {X.shape[1:]}, expected {tuple(input_shape)}")
    return X


def _encode_labels(y):
    classes, encoded = np.unique(np.asarray(y), return_inverse=True)
    if len(classes) < 2:
        raise ValueError("training labels must contain at least two classes")
    return classes, encoded


class ZeroCenterNormalizer(TransformerMixin, BaseEstimator):
    """Per-position zero-centring and scaling of image batches."""

    def __init__(self, epsilon=1e-8):
        self.epsilon = epsilon

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
        self.normalizer_ = fit_normalizer(X, self.epsilon)
        return self

    def transform(self, X):
        check_is_fitted(self, "normalizer_")
        X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
        return apply_normalizer(self.normalizer_, X)


class PatchFeatureExtractor(TransformerMixin, BaseEstimator):
    """Maps a sequence of RGB ``ImageBuffer`` patches to descriptor rows."""

    def __init__(self, which="lbp+hog+color", config=None):
        self.which = which
        self.config = config

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        cfg = self.config or FeatureConfig()
        if not all(isinstance(p, ImageBuffer) for p in X):
            raise TypeError("PatchFeatureExtractor expects ImageBuffer patches")
        vectors = [extract_features(p, self.which, cfg) for p in X]
        if not vectors:
            raise ValueError("no patches given")
        self.layout_ = vectors[0].layout
        return np.vstack([v.values for v in vectors])


class SMOClassifier(ClassifierMixin, BaseEstimator):
    def __init__(self, C=1.0, kernel="linear", gamma=1.0, tol=1e-3, max_passes=100, standardize=True):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = _encode_labels(y)
        if len(self.classes_) != 2:
            raise ValueError("SMOClassifier is binary; got %d classes" % len(self.classes_))
        scaler = Standardizer.fit(X) if self.standardize else None
        Xs = scaler.transform(X) if scaler is not None else X
        model = smo_train(Xs, np.where(encoded == 1, 1.0, -1.0), C=self.C,
                          kernel=KernelSpec(self.kernel, self.gamma), tol=self.tol,
                          max_passes=self.max_passes)
        model.scaler = scaler
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return svm_decision(self.model_, X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[(self.decision_function(X) >= 0).astype(int)]


class DFUNetClassifier(ClassifierMixin, BaseEstimator):
    """Trains a network from the zoo on N x C x H x W batches.

    ``epochs``, ``batch_size`` and ``learning_rate`` left as ``None`` take the
    per-architecture defaults. Inputs are zero-centred per position using
    statistics from the training batch.
    """

    def __init__(self, arch="dfunet-base", input_shape=None, epochs=None, batch_size=None,
                 learning_rate=None, gamma=0.1, step_fraction=0.33, seed=0,
                 stop_at_accuracy=None, head_pool="average", fc_units=100, normalize=True):
        self.arch = arch
        self.input_shape = input_shape
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.step_fraction = step_fraction
        self.seed = seed
        self.stop_at_accuracy = stop_at_accuracy
        self.head_pool = head_pool
        self.fc_units = fc_units
        self.normalize = normalize

    def _build_spec(self, shape, classes):
        if self.arch == "lenet":
            return netzoo.build_lenet(classes)
        return netzoo.build_architecture(self.arch, shape, classes,
                                         fc_units=self.fc_units, head_pool=self.head_pool)

    def train_config(self) -> TrainConfig:
        return TrainConfig.for_arch(self.arch, epochs=self.epochs, batch_size=self.batch_size,
                                    base_lr=self.learning_rate, gamma=self.gamma,
                                    step_fraction=self.step_fraction, seed=self.seed,
                                    stop_at_accuracy=self.stop_at_accuracy)

    def fit(self, X, y):
        X = check_patch_batch(X, self.input_shape)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} patches but {len(y)} labels")
        self.classes_, encoded = _encode_labels(y)
        self.spec_ = self._build_spec(X.shape[1:], len(self.classes_))
        self.normalizer_ = fit_normalizer(X) if self.normalize else None
        Xn = self._prepare(X)
        params = netzoo.init_params(self.spec_, self.seed)
        self.params_, self.log_, self.optimizer_ = train(self.spec_, params, Xn, encoded, self.train_config())
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _prepare(self, X):
        return apply_normalizer(self.normalizer_, X) if self.normalizer_ is not None else X

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_patch_batch(X, self.spec_.input_shape)
        return netzoo.predict_proba(self.spec_, self.params_, self._prepare(X))

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
