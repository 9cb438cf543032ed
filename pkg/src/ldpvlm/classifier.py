"""Classifiers trained on privatized data through the known label-flip channel."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .diffnum import Adam, DenseNetwork
from .exceptions import TrainingDivergedError, ValidationError
from .mechanisms import FlipMechanismSpec
from .rng import as_source
from .vlm import PrivatizedFeatures, PrivatizedLatent

__all__ = [
    "BudgetSplit",
    "split_budget",
    "PrivatizedDataset",
    "NoiseAwareClassifier",
    "noise_aware_loss",
    "train_on_private",
    "predict",
    "join_by_id",
    "train_joined",
    "DEFAULT_HIDDEN",
]

log = logging.getLogger(__name__)

LEVELS = ("latent", "feature", "joined")
MODES = ("clean", "private", "semi_private")
DEFAULT_HIDDEN = {"latent": (50,), "feature": (400, 150, 50), "joined": (50,)}


@dataclass(frozen=True)
class BudgetSplit:
    epsilon_total: float
    lam: float

    @property
    def epsilon_x(self):
        return self.lam * self.epsilon_total

    @property
    def epsilon_y(self):
        if self.lam == 1.0:
            return 0.0
        if math.isinf(self.epsilon_total):
            return math.inf
        return self.epsilon_total - self.epsilon_x

    @property
    def labels_collected(self):
        return self.lam < 1.0


def split_budget(epsilon, lam):
    """Split a local budget into feature and label parts, ``eps_x = lam * eps``.

    ``lam = 1`` means labels are not collected at all.
    """
    epsilon = float(epsilon)
    lam = float(lam)
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if not 0 < lam <= 1:
        raise ValidationError(f"lambda must lie in (0, 1], got {lam}")
    return BudgetSplit(epsilon, lam)


@dataclass
class PrivatizedDataset:
    """Training set as seen by the server.

    Only released values are stored: privatized inputs, privatized (or
    constructed) labels, record ids and the budgets spent on each part.
    """

    features: np.ndarray
    labels: np.ndarray
    level: str
    epsilon_x: float
    epsilon_y: float
    num_classes: int
    record_ids: np.ndarray
    label_source: str = "flipped"

    def __post_init__(self):
        if self.level not in ("latent", "feature"):
            raise ValidationError(f"privatized level must be latent or feature, got {self.level!r}")
        if len(self.features) != len(self.labels) or len(self.features) != len(self.record_ids):
            raise ValidationError("features, labels and ids must have equal length")

    @property
    def flip_spec(self):
        eps_y = math.inf if self.label_source == "constructed" else self.epsilon_y
        return FlipMechanismSpec(self.num_classes, eps_y)

    def budget_per_record(self):
        eps_y = 0.0 if self.label_source == "constructed" else self.epsilon_y
        return np.full(len(self.record_ids), self.epsilon_x + eps_y)


def _nal(probs, y_tilde, T):
    """Per-record -log sum_y T[y, y~] p(y) and its gradient w.r.t. probs."""
    y_tilde = np.asarray(y_tilde, dtype=np.int64)
    cols = T[:, y_tilde].T  # (n, K): T[y, y~_n]
    m = np.maximum((cols * probs).sum(axis=1), 1e-300)
    return -np.log(m), -cols / m[:, None]


class NoiseAwareClassifier(ClassifierMixin, BaseEstimator):
    """Softmax network trained on flipped labels by marginalizing the flip.

    Labels are 0-based class indices ``0..n_classes-1``. ``flip_prob`` is the
    probability that a training label was flipped; 0 gives plain
    cross-entropy. With ``standardize`` the network sees inputs shifted and
    scaled by the training set's per-column mean and standard deviation.
    """

    def __init__(self, n_classes=2, level="latent", hidden=None, flip_prob=0.0,
                 learning_rate=1e-3, batch_size=64, n_epochs=40, standardize=True,
                 random_state=0):
        self.n_classes = n_classes
        self.level = level
        self.hidden = hidden
        self.flip_prob = flip_prob
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.standardize = standardize
        self.random_state = random_state

    def _transition(self):
        k = self.n_classes
        p = float(self.flip_prob)
        if not 0 <= p < (k - 1) / k:
            raise ValidationError(
                f"flip probability {p} must lie in [0, {k - 1}/{k}); at the uniform "
                "boundary the loss carries no label information")
        T = np.full((k, k), p / (k - 1))
        np.fill_diagonal(T, 1.0 - p)
        return T

    def _build(self, n_features, rng):
        if self.level not in LEVELS:
            raise ValidationError(f"unknown level {self.level!r}")
        hidden = DEFAULT_HIDDEN[self.level] if self.hidden is None else tuple(self.hidden)
        self.network_ = DenseNetwork.build(
            [n_features, *hidden, self.n_classes], "relu", "softmax", rng=rng)
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = n_features
        self.input_mean_ = np.zeros(n_features)
        self.input_scale_ = np.ones(n_features)

    def _inputs(self, X):
        return (X - self.input_mean_) / self.input_scale_

    def loss_and_grads(self, X, y_tilde):
        T = self._transition()
        probs, trace = self.network_.forward(self._inputs(X))
        losses, g = _nal(probs, y_tilde, T)
        grads, _ = self.network_.backward(trace, g / len(X))
        return float(losses.mean()), grads

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValidationError("X must be 2-D with one label per row")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValidationError(f"labels must lie in 0..{self.n_classes - 1}")
        self._transition()
        rng = as_source(self.random_state)
        self._build(X.shape[1], rng.spawn("init"))
        if self.standardize and len(X):
            self.input_mean_ = X.mean(axis=0)
            self.input_scale_ = np.maximum(X.std(axis=0), 1e-12)
        params = self.network_.params
        opt = Adam(self.learning_rate)
        bs = min(self.batch_size, len(X))
        self.training_log_ = []
        for epoch in range(self.n_epochs):
            order = rng.spawn("epoch", epoch).permutation(len(X))
            losses = []
            try:
                for start in range(0, len(X), bs):
                    idx = order[start:start + bs]
                    loss, grads = self.loss_and_grads(X[idx], y[idx])
                    opt.step(params, grads)
                    losses.append(loss)
            except FloatingPointError as err:
                raise TrainingDivergedError(
                    f"classifier training diverged in epoch {epoch}: {err}",
                    log=self.training_log_) from err
            self.training_log_.append(float(np.mean(losses)))
            log.debug("classifier epoch %d loss %.4f", epoch, self.training_log_[-1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"expected input width {self.n_features_in_}, got {np.shape(X)}")
        return self.network_(self._inputs(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def noise_aware_loss(classifier: NoiseAwareClassifier, X, y_tilde):
    """Mean over the batch of -log sum_y p(y~ | y) p(y | x)."""
    check_is_fitted(classifier, "network_")
    return classifier.loss_and_grads(np.asarray(X, dtype=float), y_tilde)[0]


def train_on_private(classifier: NoiseAwareClassifier, data: PrivatizedDataset, rng=None):
    """Fit on a privatized training set; the flip channel comes from its budget."""
    if classifier.level != data.level:
        raise ValidationError(
            f"classifier level {classifier.level!r} does not match data level {data.level!r}")
    if data.num_classes != classifier.n_classes:
        raise ValidationError("class count of data and classifier differ")
    params = {"flip_prob": data.flip_spec.flip_prob}
    if rng is not None:
        params["random_state"] = as_source(rng).seed
    classifier.set_params(**params)
    classifier.fit(data.features, data.labels)
    classifier.budget_ = {"epsilon_x": data.epsilon_x, "epsilon_y": data.epsilon_y,
                          "label_source": data.label_source}
    return classifier


def predict(classifier: NoiseAwareClassifier, X, mode="clean", vlm=None):
    """Class probabilities under one of the inference modes.

    - ``clean``: raw records. A latent-level classifier needs ``vlm`` and
      classifies ``vlm.encode_mean(X)`` (no noise).
    - ``private``: privatized inputs at the classifier's level.
    - ``semi_private``: clean columns concatenated with privatized partner
      columns (joined classifiers only).
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    level = classifier.level
    if isinstance(X, PrivatizedLatent):
        if mode != "private" or level != "latent":
            raise ValidationError("privatized latents require private mode on a latent classifier")
        X = X.z_tilde
    elif isinstance(X, PrivatizedFeatures):
        if mode != "private" or level != "feature":
            raise ValidationError("privatized features require private mode on a feature classifier")
        X = X.x_tilde
    if level == "joined":
        if mode != "semi_private":
            raise ValidationError("joined classifiers only support semi_private mode")
        return classifier.predict_proba(X)
    if mode == "semi_private":
        raise ValidationError(f"semi_private mode needs a joined classifier, not {level!r}")
    if mode == "clean" and level == "latent":
        if vlm is None:
            raise ValidationError("clean latent-level prediction needs the VLM encoder")
        X = vlm.encode_mean(X)
    return classifier.predict_proba(X)


def join_by_id(ids_left, X_left, ids_right, X_right):
    """Align two row sets by record id; any id present on one side only is an error."""
    ids_left = np.asarray(ids_left)
    ids_right = np.asarray(ids_right)
    if len(np.unique(ids_left)) != len(ids_left) or len(np.unique(ids_right)) != len(ids_right):
        raise ValidationError("record ids must be unique on each side of a join")
    left_only = np.setdiff1d(ids_left, ids_right)
    right_only = np.setdiff1d(ids_right, ids_left)
    if left_only.size or right_only.size:
        raise ValidationError(
            f"unmatched record ids: left-only {left_only[:20].tolist()}, "
            f"right-only {right_only[:20].tolist()}")
    pos = {int(r): i for i, r in enumerate(ids_right)}
    order = np.array([pos[int(i)] for i in ids_left], dtype=np.int64)
    return np.hstack([np.asarray(X_left, dtype=float),
                      np.asarray(X_right, dtype=float).reshape(len(ids_right), -1)[order]])


def train_joined(classifier: NoiseAwareClassifier, X_clean, y, ids_clean, partner, rng=None):
    """Cross-entropy on clean labels over clean columns joined with privatized partner columns.

    ``partner`` is a :class:`PrivatizedLatent`, :class:`PrivatizedFeatures` or
    an ``(ids, matrix)`` pair; a zero-width partner block trains on the clean
    columns alone.
    """
    if classifier.level != "joined":
        raise ValidationError("train_joined requires a classifier with level='joined'")
    if isinstance(partner, PrivatizedLatent):
        ids_p, X_p = partner.record_ids, partner.z_tilde
    elif isinstance(partner, PrivatizedFeatures):
        ids_p, X_p = partner.record_ids, partner.x_tilde
    else:
        ids_p, X_p = partner
    X = join_by_id(ids_clean, X_clean, ids_p, X_p)
    params = {"flip_prob": 0.0}
    if rng is not None:
        params["random_state"] = as_source(rng).seed
    classifier.set_params(**params)
    classifier.fit(X, y)
    classifier.clean_width_ = np.asarray(X_clean).shape[1]
    classifier.partner_width_ = X.shape[1] - classifier.clean_width_
    return classifier
