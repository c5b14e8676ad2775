"""Confidence and uncertainty measures over classifier outputs.

Functions here are vectorised over a leading batch axis. Each measure has an
orientation recorded in :data:`REGISTRY` (``higher_is_confident``); metrics
use it to turn raw values into confidences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import dirichlet as dr
from .nn import Network, concentration, input_gradient, softmax
from .special import digamma, log_gamma

__all__ = [
    "ScoreConvention",
    "REGISTRY",
    "MEASURE_NAMES",
    "ConfigError",
    "mcp",
    "predictive_entropy",
    "tcp",
    "ntcp",
    "klos",
    "klos_star",
    "klos_offset",
    "klos_decomposition",
    "MahalanobisModel",
    "mahalanobis_fit",
    "mahalanobis_score",
    "odin_score",
    "fit_temperature",
    "log_mcp_score",
    "inverse_fgsm",
    "ensemble_average",
    "variation_ratio",
    "default_tau",
    "evidential_measures",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreConvention:
    name: str
    higher_is_confident: bool


MEASURE_NAMES = (
    "mcp",
    "entropy",
    "tcp",
    "ntcp",
    "klos",
    "klos_star",
    "mutual_information",
    "differential_entropy",
    "epkl",
    "dissonance",
    "precision",
    "mahalanobis",
    "odin",
    "variation_ratio",
    "confidnet",
    "klosnet",
)
_CONFIDENT_HIGH = {"mcp", "tcp", "ntcp", "precision", "mahalanobis", "odin", "confidnet", "klosnet"}
REGISTRY = {
    name: ScoreConvention(name, name in _CONFIDENT_HIGH) for name in MEASURE_NAMES
}


def default_tau(lam: float) -> float:
    """Prototype concentration matching an evidential run with weight ``lam``."""
    return 1.0 + 1.0 / lam


def mcp(p):
    return np.max(np.asarray(p, dtype=np.float64), axis=-1)


def predictive_entropy(p):
    return dr.categorical_entropy(p)


def _take(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y).astype(np.intp)
    if p.ndim == 1:
        return p, p[int(y)]
    return p, p[np.arange(p.shape[0]), y]


def tcp(p, y):
    """Probability assigned to the true class."""
    return _take(p, y)[1]


def ntcp(p, y):
    """True-class probability normalised by the maximum class probability."""
    p, py = _take(p, y)
    return py / p.max(axis=-1)


def _prototype(alpha, cls, tau):
    target = np.ones_like(alpha)
    if alpha.ndim == 1:
        target[int(cls)] = tau
    else:
        target[np.arange(alpha.shape[0]), np.asarray(cls).astype(np.intp)] = tau
    return target


def _check_tau(tau):
    if not tau > 1:
        raise ConfigError(f"tau must exceed 1, got {tau}")


def klos(alpha, tau: float):
    """KL from Dir(alpha) to the prototype peaked with ``tau`` on the
    predicted class. Lower means more confident."""
    _check_tau(tau)
    a = dr._alpha(alpha)
    return dr.kl_dirichlet(a, _prototype(a, np.argmax(a, axis=-1), tau))


def klos_star(alpha, y, tau: float):
    """Like :func:`klos` but with the prototype on the true class ``y``."""
    _check_tau(tau)
    a = dr._alpha(alpha)
    return dr.kl_dirichlet(a, _prototype(a, y, tau))


def klos_offset(K: int, tau: float) -> float:
    """Input-independent term in
    ``klos = -(tau - 1)(psi(a_hat) - psi(a_0)) + KL(Dir(a) || Dir(1)) + offset``.
    """
    return log_gamma(tau) - log_gamma(K - 1.0 + tau) + log_gamma(float(K))


def klos_decomposition(alpha, tau: float):
    """Split KLoS into its class-confusion and evidence terms.

    Returns ``(confusion, evidence, offset)`` whose sum equals ``klos``:
    ``-(tau - 1)(psi(a_hat) - psi(a_0))``, ``KL(Dir(a) || Dir(1))`` and the
    constant from :func:`klos_offset`.
    """
    a = dr._alpha(alpha)
    a_hat = np.max(a, axis=-1)
    a0 = a.sum(axis=-1)
    confusion = -(tau - 1.0) * (digamma(a_hat) - digamma(a0))
    return confusion, dr.kl_to_uniform(a), klos_offset(a.shape[-1], tau)


@dataclass(frozen=True)
class MahalanobisModel:
    means: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray

    @property
    def K(self) -> int:
        return self.means.shape[0]


def mahalanobis_fit(features, labels, ridge: Optional[float] = None) -> MahalanobisModel:
    """Class means and tied (pooled, 1/N-normalised) covariance.

    ``ridge`` is added on the diagonal; by default ``1e-6 * trace / d``.
    """
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.intp)
    classes = np.unique(y)
    if classes.size < 1 or not np.array_equal(classes, np.arange(classes.size)):
        raise ValueError("labels must cover classes 0..K-1")
    counts = np.bincount(y)
    if np.any(counts < 2):
        raise ValueError("each class needs at least two samples")
    means = np.stack([F[y == k].mean(axis=0) for k in classes])
    centred = F - means[y]
    cov = centred.T @ centred / F.shape[0]
    d = F.shape[1]
    if ridge is None:
        ridge = 1e-6 * np.trace(cov) / d
    cov = cov + ridge * np.eye(d)
    try:
        factor = cho_factor(cov, lower=True)
    except LinAlgError:
        raise np.linalg.LinAlgError("covariance is singular even after the ridge term") from None
    prec = cho_solve(factor, np.eye(d))
    prec = 0.5 * (prec + prec.T)
    for arr in (means, cov, prec):
        arr.setflags(write=False)
    return MahalanobisModel(means, cov, prec)


def mahalanobis_score(model: MahalanobisModel, f):
    """Negative squared Mahalanobis distance to the closest class mean."""
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    F = f[None, :] if single else f
    diff = F[:, None, :] - model.means[None, :, :]
    d2 = np.einsum("nkd,de,nke->nk", diff, model.precision, diff)
    score = -d2.min(axis=1)
    return float(score[0]) if single else score


def odin_score(logits, T: float):
    """Maximum softmax probability after dividing the logits by ``T``."""
    if T <= 0:
        raise ConfigError("temperature must be positive")
    return mcp(softmax(np.asarray(logits, dtype=np.float64) / T))


DEFAULT_TEMPERATURE_GRID = np.arange(1, 1001) / 100.0


def fit_temperature(logits, labels, grid=None) -> float:
    """Grid-search the temperature minimising validation NLL."""
    grid = DEFAULT_TEMPERATURE_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ConfigError("temperature grid is empty")
    if np.any(grid <= 0):
        raise ConfigError("temperatures must be positive")
    L = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels).astype(np.intp)
    rows = np.arange(L.shape[0])
    best_T, best = None, np.inf
    for T in grid:
        z = L / T
        z = z - z.max(axis=1, keepdims=True)
        loss = np.mean(np.log(np.exp(z).sum(axis=1)) - z[rows, y])
        if loss < best:
            best, best_T = loss, float(T)
    return best_T


def log_mcp_score(T: float = 1.0) -> Callable:
    """Score function ``logits -> (log max softmax(logits / T), gradient)``
    for :func:`inverse_fgsm`."""

    def score(logits):
        z = np.asarray(logits, dtype=np.float64) / T
        p = softmax(z)
        k = int(np.argmax(z))
        grad = -p / T
        grad[k] += 1.0 / T
        return float(np.log(p[k])), grad

    return score


def inverse_fgsm(net: Network, x, epsilon: float, score: Callable):
    """Move ``x`` by ``epsilon`` along the sign of the score gradient, which
    raises the score (the opposite of an adversarial step)."""
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0:
        return x.copy()
    return x + epsilon * np.sign(input_gradient(net, x, score))


def ensemble_average(alphas: Sequence) -> np.ndarray:
    """Element-wise mean of member concentration vectors."""
    stacked = np.stack([dr._alpha(a) for a in alphas])
    return stacked.mean(axis=0)


def variation_ratio(member_probs) -> float | np.ndarray:
    """One minus the vote share of the modal prediction across members.

    ``member_probs`` has shape ``(M, K)`` or ``(M, n, K)``.
    """
    P = np.asarray(member_probs, dtype=np.float64)
    K = P.shape[-1]
    votes = np.argmax(P, axis=-1)
    counts = np.stack([(votes == k).sum(axis=0) for k in range(K)], axis=-1)
    value = 1.0 - counts.max(axis=-1) / P.shape[0]
    return float(value) if np.ndim(value) == 0 else value


def evidential_measures(logits, names: Sequence[str], tau: float, labels=None):
    """Evaluate the output-only measures in ``names`` on a batch of logits.

    Measures needing extra state (mahalanobis, confidnet, klosnet, odin with a
    fitted temperature) are computed by the caller.
    """
    alpha = concentration(logits)
    probs = dr.expected_probs(alpha)
    out = {}
    for name in names:
        if name == "mcp":
            out[name] = mcp(probs)
        elif name == "entropy":
            out[name] = predictive_entropy(probs)
        elif name == "mutual_information":
            out[name] = dr.mutual_information(alpha)
        elif name == "differential_entropy":
            out[name] = dr.differential_entropy(alpha)
        elif name == "epkl":
            out[name] = dr.epkl(alpha)
        elif name == "precision":
            out[name] = alpha.sum(axis=-1)
        elif name == "klos":
            out[name] = klos(alpha, tau)
        elif name == "dissonance":
            belief = (np.maximum(alpha, 1.0) - 1.0) / alpha.sum(axis=-1, keepdims=True)
            out[name] = dr.dissonance(belief)
        elif name in ("tcp", "ntcp", "klos_star"):
            if labels is None:
                raise ValueError(f"measure {name!r} needs true labels")
            if name == "tcp":
                out[name] = tcp(probs, labels)
            elif name == "ntcp":
                out[name] = ntcp(probs, labels)
            else:
                out[name] = klos_star(alpha, labels, tau)
        else:
            raise KeyError(f"measure {name!r} is not computable from logits alone")
    return out
