"""scikit-learn facade over the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset
from .evaluation import recall_at_k
from .linalg import normalize_rows
from .losses import MarginConfig
from .training import TrainConfig, embed, fit


class BroadFaceEmbedder(TransformerMixin, BaseEstimator):
    """Learn an embedding with an angular-margin classifier and an embedding queue.

    ``transform`` returns unit-norm embeddings, ``predict`` the class whose
    classifier row has the highest cosine, and ``score`` leave-one-out
    Recall@1 of the embeddings.

    Parameters mirror :class:`broadface.training.TrainConfig`; the encoder's
    input width is taken from ``X`` so only ``hidden_sizes`` and
    ``embedding_dim`` are given here.
    """

    def __init__(
        self,
        hidden_sizes=(64,),
        embedding_dim=16,
        margin="arcface",
        margin_value=0.5,
        scale=64.0,
        batch_size=64,
        queue_capacity=1024,
        compensation=True,
        warmup_iterations=0,
        epochs=20,
        lr=5e-3,
        classifier_lr_scale=1.0,
        momentum=0.9,
        weight_decay=5e-4,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.embedding_dim = embedding_dim
        self.margin = margin
        self.margin_value = margin_value
        self.scale = scale
        self.batch_size = batch_size
        self.queue_capacity = queue_capacity
        self.compensation = compensation
        self.warmup_iterations = warmup_iterations
        self.epochs = epochs
        self.lr = lr
        self.classifier_lr_scale = classifier_lr_scale
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _train_config(self, n_features: int) -> TrainConfig:
        seed = self.random_state if self.random_state is not None else 0
        if not isinstance(seed, (int, np.integer)):
            raise ValueError("random_state must be an int or None")
        return TrainConfig(
            layer_sizes=(n_features, *tuple(self.hidden_sizes), self.embedding_dim),
            margin=MarginConfig(self.margin, self.margin_value, self.scale),
            batch_size=self.batch_size,
            queue_capacity=self.queue_capacity,
            compensation=self.compensation,
            warmup_iterations=self.warmup_iterations,
            epochs=self.epochs,
            lr=self.lr,
            classifier_lr_scale=self.classifier_lr_scale,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=int(seed),
        )

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` adds per-epoch Recall@K to ``history_``."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self._label_encoder = LabelEncoder().fit(y)
        self.classes_ = self._label_encoder.classes_
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        train = LabeledDataset(X, self._label_encoder.transform(y), self.classes_.size)
        test = None
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            if Xv.shape[1] != X.shape[1]:
                raise ValueError(f"eval_set has {Xv.shape[1]} features, expected {X.shape[1]}")
            test = LabeledDataset(Xv, self._label_encoder.transform(yv), self.classes_.size)
        result = fit(train, self._train_config(X.shape[1]), test)
        self.encoder_ = result.encoder
        self.W_ = result.W
        self.history_ = result.records
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the model was fitted with {self.n_features_in_}")
        return X

    def transform(self, X) -> np.ndarray:
        X = self._check(X)
        U, _ = normalize_rows(embed(self.encoder_, X), what="embedding")
        return U

    def predict(self, X) -> np.ndarray:
        U = self.transform(X)
        Wn, _ = normalize_rows(self.W_, what="classifier row")
        return self.classes_[np.argmax(U @ Wn.T, axis=1)]

    def score(self, X, y) -> float:
        U = self.transform(X)
        return recall_at_k(U, np.asarray(y), (1,))[1]
