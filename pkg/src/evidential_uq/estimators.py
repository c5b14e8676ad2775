"""scikit-learn style wrappers around the functional core.

The estimators follow the usual contract: hyper-parameters are stored
verbatim in ``__init__``, learned state gets a trailing underscore, and
``fit`` returns ``self``. They interoperate with ``sklearn.base.clone`` and
``get_params``/``set_params``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import auxiliary as aux
from .measures import (
    default_tau,
    evidential_measures,
    fit_temperature,
    mahalanobis_fit,
    mahalanobis_score,
)
from .nn import NetworkSpec, TrainConfig, concentration, forward, init_network, softmax, train

__all__ = [
    "EvidentialClassifier",
    "MahalanobisDetector",
    "TemperatureScaler",
    "ConfidenceHeadEstimator",
]


class EvidentialClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier trained with one of three objectives.

    With ``hidden_dims=()`` this is (evidential) logistic regression. Class
    labels may be arbitrary; they are mapped to ``0..K-1`` internally.
    ``init_gain`` scales the Glorot limits: with exponential evidence a full
    gain puts the initial concentrations far from 1 and slows training.
    """

    def __init__(
        self,
        objective="evidential",
        hidden_dims=(),
        lam=5e-2,
        beta_in=100.0,
        optimizer="adam",
        lr=0.02,
        epochs=200,
        batch_size=None,
        init_gain=0.1,
        random_state=0,
    ):
        self.objective = objective
        self.hidden_dims = hidden_dims
        self.lam = lam
        self.beta_in = beta_in
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.init_gain = init_gain
        self.random_state = random_state

    def fit(self, X, y, X_ood=None):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if self.classes_.size < 2:
            raise ValueError("need samples from at least two classes")
        y_idx = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        seed = int(self.random_state or 0)
        spec = NetworkSpec(X.shape[1], self.classes_.size, tuple(self.hidden_dims),
                           seed=seed, init_gain=self.init_gain)
        cfg = TrainConfig(objective=self.objective, lam=self.lam, beta_in=self.beta_in,
                          optimizer=self.optimizer, lr=self.lr, epochs=self.epochs,
                          batch_size=self.batch_size, seed=seed)
        if X_ood is not None:
            X_ood = check_array(X_ood)
        self.network_, self.history_ = train(init_network(spec), X, y_idx, cfg, X_ood=X_ood)
        return self

    def _logits(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return forward(self.network_, X)

    def decision_function(self, X):
        return self._logits(X)[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def predict_alpha(self, X):
        """Dirichlet concentrations ``exp(logits)``."""
        return concentration(self.decision_function(X))

    def transform(self, X):
        """Penultimate features (the input itself for a linear model)."""
        return self._logits(X)[1]

    def uncertainty(self, X, measures=("mcp", "entropy", "mutual_information", "klos"), tau=None):
        """Dict of output-only measures; ``tau`` defaults to ``1 + 1/lam``."""
        tau = default_tau(self.lam) if tau is None else tau
        return evidential_measures(self.decision_function(X), measures, tau)


class MahalanobisDetector(BaseEstimator):
    """Tied-covariance Gaussian class model; ``score_samples`` is the
    negative squared distance to the closest class mean."""

    def __init__(self, ridge=None):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        self.model_ = mahalanobis_fit(X, np.searchsorted(self.classes_, y), ridge=self.ridge)
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return mahalanobis_score(self.model_, check_array(X))


class TemperatureScaler(TransformerMixin, BaseEstimator):
    """Fits one temperature on logits by grid search over validation NLL;
    ``transform`` returns calibrated probabilities."""

    def __init__(self, grid=None):
        self.grid = grid

    def fit(self, logits, y):
        logits, y = check_X_y(logits, y)
        self.temperature_ = fit_temperature(logits, y, self.grid)
        return self

    def transform(self, logits):
        check_is_fitted(self, "temperature_")
        return softmax(check_array(logits) / self.temperature_)


class ConfidenceHeadEstimator(BaseEstimator):
    """ConfidNet / KLoSNet head on top of a fitted :class:`EvidentialClassifier`.

    ``score_samples`` returns confidences (higher = more confident) for both
    targets.
    """

    def __init__(self, classifier=None, hidden_dims=(128, 128, 128), target="tcp", loss="mse",
                 gamma=2.0, epochs1=200, epochs2=50, lr1=1e-3, lr2=1e-5, batch_size=128,
                 validation_fraction=0.2, random_state=0):
        self.classifier = classifier
        self.hidden_dims = hidden_dims
        self.target = target
        self.loss = loss
        self.gamma = gamma
        self.epochs1 = epochs1
        self.epochs2 = epochs2
        self.lr1 = lr1
        self.lr2 = lr2
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        if self.classifier is None:
            raise ValueError("a fitted classifier is required")
        check_is_fitted(self.classifier, "network_")
        X, y = check_X_y(X, y)
        y_idx = np.searchsorted(self.classifier.classes_, y)
        seed = int(self.random_state or 0)
        n_val = int(round(self.validation_fraction * X.shape[0]))
        perm = np.random.Generator(np.random.PCG64(seed)).permutation(X.shape[0])
        val, fit_idx = perm[:n_val], perm[n_val:]
        net = self.classifier.network_
        spec = aux.HeadSpec(tuple(self.hidden_dims), self.target, self.loss, self.gamma, seed)
        head, h1 = aux.train_head_phase1(net, X[fit_idx], y_idx[fit_idx], spec, self.epochs1,
                                         self.lr1, self.batch_size, lam=self.classifier.lam)
        X_val, y_val = (X[val], y_idx[val]) if n_val else (None, None)
        self.head_, h2 = aux.finetune_phase2(head, net, X[fit_idx], y_idx[fit_idx], X_val, y_val,
                                             self.epochs2, self.lr2, self.batch_size)
        self.history_ = h1 + h2
        return self

    def score_samples(self, X):
        check_is_fitted(self, "head_")
        return aux.confidence_score(self.head_, self.classifier.network_, check_array(X))
