"""Estimator wrappers so the engine composes with sklearn pipelines.

FilterbankTransformer and CmvnTransformer are the frontend as transforms;
IntentClassifier wraps model building, training, and inference behind
fit/predict. Hyperparameters live under their constructor names, so
get_params/set_params/clone behave as sklearn expects.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .features import (CMVN_MODES, AudioBuffer, apply_cmvn,
                       compute_global_cmvn, extract_features)
from .model import build_model
from .streaming import StreamConfig, stream_classify
from .training import TrainConfig, predict_logits, train
from .validation import as_feature_list, as_label_array


class FilterbankTransformer(BaseEstimator, TransformerMixin):
    """Audio buffers (or raw int16 sample arrays) to 41-dim feature arrays."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        out = []
        for item in X:
            audio = item if isinstance(item, AudioBuffer) else AudioBuffer(item)
            out.append(extract_features(audio))
        return out


class CmvnTransformer(BaseEstimator, TransformerMixin):
    """Mean/variance normalization in one of three modes.

    mode="global" learns pooled per-dimension stats in fit; "utterance"
    normalizes each sequence with its own stats; "none" passes through.
    """

    def __init__(self, mode: str = "global"):
        self.mode = mode

    def fit(self, X, y=None):
        if self.mode not in CMVN_MODES:
            raise ValueError(f"mode must be one of {CMVN_MODES}, got {self.mode!r}")
        X = as_feature_list(X)
        self.stats_ = compute_global_cmvn(X) if self.mode == "global" else None
        return self

    def transform(self, X):
        stats = getattr(self, "stats_", None)
        return [apply_cmvn(f, self.mode, stats) for f in as_feature_list(X)]


class IntentClassifier(BaseEstimator, ClassifierMixin):
    """Convolutional intent classifier over feature sequences.

    X is a list of (num_frames, 41) arrays (every sequence at least 61
    frames); y is any label array. fit() holds out a seeded validation
    fraction for early stopping and keeps the best-validation weights.
    """

    def __init__(self, learning_rate: float = 1e-3, batch_size: int = 32,
                 max_epochs: int = 30, early_stop_patience: int = 10,
                 validation_fraction: float = 0.15, seed: int = 0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X = as_feature_list(X)
        y = as_label_array(y, len(X))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if X_val is not None:
            train_feats, train_labels = X, encoded
            val_feats = as_feature_list(X_val)
            class_index = {c: i for i, c in enumerate(self.classes_)}
            val_labels = np.array([class_index[v] for v in as_label_array(y_val)])
        else:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError("validation_fraction must be in (0, 1)")
            order = np.random.default_rng(self.seed).permutation(len(X))
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            if n_val >= len(X):
                raise ValueError("validation split leaves no training data")
            val_idx, train_idx = order[:n_val], order[n_val:]
            train_feats = [X[i] for i in train_idx]
            train_labels = encoded[train_idx]
            val_feats = [X[i] for i in val_idx]
            val_labels = encoded[val_idx]
        cfg = TrainConfig(learning_rate=self.learning_rate,
                          batch_size=self.batch_size,
                          max_epochs=self.max_epochs,
                          early_stop_patience=self.early_stop_patience,
                          seed=self.seed)
        weights = build_model(len(self.classes_), seed=self.seed)
        weights.labels = [str(c) for c in self.classes_]
        result = train(weights, train_feats, train_labels,
                       val_feats, val_labels, cfg)
        self.weights_ = result.weights
        self.history_ = result.history
        self.n_iter_ = len(result.history)
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise AttributeError("this IntentClassifier is not fitted yet")

    def decision_function(self, X):
        self._check_fitted()
        return predict_logits(as_feature_list(X), self.weights_, self.batch_size)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def predict_streaming(self, feats, config: StreamConfig | None = None):
        """Segment-by-segment prediction of a single sequence.

        Returns (label, posterior, latency_report).
        """
        self._check_fitted()
        config = config or StreamConfig()
        posterior, report = stream_classify(feats, config, self.weights_)
        return self.classes_[int(posterior.argmax())], posterior, report
