"""Scikit-learn style wrappers around the frame and sequence models.

``SingleShotReid`` classifies individual preprocessed crops;
``SequenceReid`` runs the two training phases (frame embedding, then the
recurrent stage with attention) and classifies whole sequences through
time fusion. Both follow the usual estimator contract: constructor
arguments are hyperparameters only, ``fit`` learns state into
underscore attributes, and labels may be arbitrary integers or strings
(mapped through ``classes_``).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import FrameStore, windows_for_training
from .embedding import EmbeddingConfig, FrameEmbedding
from .metrics import frame_posteriors
from .nn import RngStream
from .preprocess import (
    NETWORK_INPUT_HEIGHT,
    NETWORK_INPUT_WIDTH,
    expand_channels,
)
from .sequence import SequenceModel
from .training import SequenceTrainer, TrainConfig, train_embedding
from .validation import ShapeError, check_finite


def as_frame_stack(X, name="X"):
    """Coerce input frames to a float64 (n, channels, height, width)
    stack with the expected spatial extent."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4 or X.shape[1] not in (1, 3):
        raise ShapeError(
            f"{name}: expected (n, 1|3, height, width) frames, "
            f"got shape {X.shape}")
    if X.shape[2:] != (NETWORK_INPUT_HEIGHT, NETWORK_INPUT_WIDTH):
        raise ShapeError(
            f"{name}: frames must be "
            f"{NETWORK_INPUT_HEIGHT}x{NETWORK_INPUT_WIDTH}, "
            f"got {X.shape[2]}x{X.shape[3]}")
    if X.shape[0] == 0:
        raise ValueError(f"{name}: no frames")
    check_finite(X, name)
    return X


def encode_labels(y, n_min=2):
    """Map arbitrary labels to dense ids 0..N-1. Returns (classes, ids)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-d, got shape {y.shape}")
    classes, inverse = np.unique(y, return_inverse=True)
    if len(classes) < n_min:
        raise ValueError(
            f"need at least {n_min} distinct classes, got {len(classes)}")
    return classes, inverse.astype(np.int64)


class SingleShotReid(ClassifierMixin, BaseEstimator):
    """Per-frame person classifier over preprocessed depth (or color)
    crops, backed by the frame embedding network."""

    def __init__(self, conv_channels=(8, 16, 24, 32),
                 fc_dims=(256, 256, 256), dropout=0.4, learning_rate=3e-4,
                 momentum=0.5, epochs=20, batch_size=50, seed=0):
        self.conv_channels = conv_channels
        self.fc_dims = fc_dims
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _train_config(self):
        return TrainConfig(embedding_lr=self.learning_rate,
                           embedding_momentum=self.momentum,
                           embedding_epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed)

    def fit(self, X, y):
        X = as_frame_stack(X)
        self.classes_, labels = encode_labels(y)
        if len(labels) != len(X):
            raise ValueError(
                f"got {len(X)} frames but {len(labels)} labels")
        config = self._train_config()
        rng = RngStream(self.seed)
        model = FrameEmbedding(
            EmbeddingConfig(self.conv_channels, self.fc_dims, self.dropout),
            rng.child("init"))
        model.adapt_head(len(self.classes_), rng.child("head"))
        self.history_ = train_embedding(model, X, labels, config,
                                        rng.child("train"))
        self.model_ = model
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        return frame_posteriors(self.model_, as_frame_stack(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        """Frame embeddings, one 256-d row per input frame."""
        check_is_fitted(self)
        return self.model_.embed(expand_channels(as_frame_stack(X)))


class SequenceReid(ClassifierMixin, BaseEstimator):
    """Sequence-level classifier: frame embedding, recurrent layer and
    attention-weighted fusion, trained in the staged regime by default."""

    def __init__(self, conv_channels=(8, 16, 24, 32),
                 fc_dims=(256, 256, 256), dropout=0.4, window=3,
                 embedding_epochs=20, sequence_epochs=250,
                 lambda_reinforce=1.0, lr_start=0.01, lr_end=0.0001,
                 lr_decay_epochs=200, max_epochs=250, batch_size=50,
                 staged=True, fusion="attention", seed=0):
        self.conv_channels = conv_channels
        self.fc_dims = fc_dims
        self.dropout = dropout
        self.window = window
        self.embedding_epochs = embedding_epochs
        self.sequence_epochs = sequence_epochs
        self.lambda_reinforce = lambda_reinforce
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.lr_decay_epochs = lr_decay_epochs
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.staged = staged
        self.fusion = fusion
        self.seed = seed

    def _train_config(self):
        return TrainConfig(
            embedding_epochs=self.embedding_epochs, window=self.window,
            sequence_epochs=self.sequence_epochs,
            lambda_reinforce=self.lambda_reinforce, lr_start=self.lr_start,
            lr_end=self.lr_end, lr_decay_epochs=self.lr_decay_epochs,
            max_epochs=self.max_epochs, batch_size=self.batch_size,
            staged=self.staged, seed=self.seed)

    def _as_store(self, X, labels):
        if not isinstance(X, (list, tuple)) or not X:
            raise TypeError("X must be a nonempty list of frame sequences")
        stacks = [as_frame_stack(seq, name=f"X[{i}]")
                  for i, seq in enumerate(X)]
        channels = {s.shape[1] for s in stacks}
        if len(channels) > 1:
            raise ShapeError("sequences mix channel counts")
        bounds = np.zeros(len(stacks) + 1, dtype=np.int64)
        bounds[1:] = np.cumsum([len(s) for s in stacks])
        frame_labels = np.repeat(labels, [len(s) for s in stacks])
        return FrameStore(frames=np.concatenate(stacks, axis=0),
                          labels=frame_labels, seq_bounds=bounds,
                          seq_labels=labels,
                          n_classes=int(labels.max()) + 1)

    def fit(self, X, y):
        if self.fusion not in ("attention", "uniform"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        self.classes_, labels = encode_labels(y)
        if len(labels) != len(X):
            raise ValueError(
                f"got {len(X)} sequences but {len(labels)} labels")
        store = self._as_store(X, labels)
        config = self._train_config()
        rng = RngStream(self.seed)
        model = FrameEmbedding(
            EmbeddingConfig(self.conv_channels, self.fc_dims, self.dropout),
            rng.child("init"))
        model.adapt_head(len(self.classes_), rng.child("head"))
        history = train_embedding(model, store.frames, store.labels, config,
                                  rng.child("train_frames"))
        sequence_model = SequenceModel(model, len(self.classes_),
                                       rng.child("sequence"))
        windows, valid, window_labels = windows_for_training(
            store, config.window)
        trainer = SequenceTrainer(sequence_model, store.frames, windows,
                                  valid, window_labels, config,
                                  rng.child("train_windows"))
        history.extend(trainer.train())
        self.history_ = history
        self.model_ = sequence_model
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        if not isinstance(X, (list, tuple)) or not X:
            raise TypeError("X must be a nonempty list of frame sequences")
        out = np.zeros((len(X), len(self.classes_)))
        for i, seq in enumerate(X):
            frames = expand_channels(as_frame_stack(seq, name=f"X[{i}]"))
            fused, _, _ = self.model_.predict_sequence(frames,
                                                       fusion=self.fusion)
            out[i] = fused
        return out

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
