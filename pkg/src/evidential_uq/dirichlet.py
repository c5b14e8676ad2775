"""Closed-form quantities of Dirichlet distributions and their opinion view.

Every function takes either a :class:`DirichletParams` or a raw array of
concentrations whose last axis indexes classes, so a whole batch of model
outputs of shape ``(n, K)`` can be scored in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import digamma, log_gamma

__all__ = [
    "DirichletParams",
    "Opinion",
    "EvidenceError",
    "expected_probs",
    "precision",
    "kl_dirichlet",
    "kl_to_uniform",
    "categorical_entropy",
    "expected_categorical_entropy",
    "mutual_information",
    "differential_entropy",
    "epkl",
    "to_opinion",
    "dissonance",
]


class EvidenceError(ValueError):
    """Concentrations below one cannot be read as non-negative evidence."""


@dataclass(frozen=True)
class DirichletParams:
    """Concentration vector of a Dirichlet over the (K-1)-simplex."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        if alpha.ndim != 1 or alpha.shape[0] < 2:
            raise ValueError("alpha must be a vector with at least two classes")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValueError("concentrations must be finite and strictly positive")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    @property
    def alpha0(self) -> float:
        return float(self.alpha.sum())


@dataclass(frozen=True)
class Opinion:
    """Subjective-logic opinion: belief masses, vacuity and base rate."""

    belief: np.ndarray
    vacuity: float | np.ndarray
    base_rate: np.ndarray


def _alpha(d) -> np.ndarray:
    if isinstance(d, DirichletParams):
        return d.alpha
    alpha = np.asarray(d, dtype=np.float64)
    if alpha.ndim == 0 or alpha.shape[-1] < 2:
        raise ValueError("concentrations need a class axis of length >= 2")
    if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise ValueError("concentrations must be finite and strictly positive")
    return alpha


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def precision(d):
    return _out(_alpha(d).sum(axis=-1))


def expected_probs(d) -> np.ndarray:
    """Mean of the Dirichlet, alpha_k / alpha_0."""
    alpha = _alpha(d)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def kl_dirichlet(p, q):
    """KL(Dir(p) || Dir(q)) in closed form."""
    a = _alpha(p)
    b = _alpha(q)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"class count mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )
    a0 = a.sum(axis=-1)
    b0 = b.sum(axis=-1)
    value = (
        log_gamma(a0)
        - np.sum(log_gamma(a), axis=-1)
        - log_gamma(b0)
        + np.sum(log_gamma(b), axis=-1)
        + np.sum((a - b) * (digamma(a) - np.asarray(digamma(a0))[..., None]), axis=-1)
    )
    return _out(value)


def kl_to_uniform(d):
    """KL divergence to the flat Dirichlet Dir(1, ..., 1)."""
    a = _alpha(d)
    K = a.shape[-1]
    a0 = a.sum(axis=-1)
    value = (
        log_gamma(a0)
        - log_gamma(float(K))
        - np.sum(log_gamma(a), axis=-1)
        + np.sum((a - 1.0) * (digamma(a) - np.asarray(digamma(a0))[..., None]), axis=-1)
    )
    return _out(value)


def categorical_entropy(p):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return _out(-np.sum(p * logp, axis=-1))


def expected_categorical_entropy(d):
    """E[H(pi)] for pi ~ Dir(alpha)."""
    a = _alpha(d)
    a0 = a.sum(axis=-1)
    value = -np.sum(
        (a / a0[..., None]) * (digamma(a + 1.0) - np.asarray(digamma(a0 + 1.0))[..., None]),
        axis=-1,
    )
    return _out(value)


def mutual_information(d):
    """Entropy of the mean minus mean entropy; the epistemic part."""
    a = _alpha(d)
    return _out(
        np.asarray(categorical_entropy(expected_probs(a)))
        - np.asarray(expected_categorical_entropy(a))
    )


def differential_entropy(d):
    a = _alpha(d)
    K = a.shape[-1]
    a0 = a.sum(axis=-1)
    log_b = np.sum(log_gamma(a), axis=-1) - log_gamma(a0)
    value = (
        log_b
        + (a0 - K) * digamma(a0)
        - np.sum((a - 1.0) * digamma(a), axis=-1)
    )
    return _out(value)


def epkl(d):
    """Expected pairwise KL between categorical draws: (K - 1) / alpha_0."""
    a = _alpha(d)
    return _out((a.shape[-1] - 1) / a.sum(axis=-1))


def to_opinion(d, base_rate=None) -> Opinion:
    """Map concentrations to belief masses b_k = (alpha_k - 1) / alpha_0 and
    vacuity u = K / alpha_0.

    The base rate is carried along but no measure here uses it; it defaults
    to uniform.
    """
    a = _alpha(d)
    if np.any(a < 1.0):
        raise EvidenceError("every concentration must be >= 1 (evidence = alpha - 1)")
    K = a.shape[-1]
    s = a.sum(axis=-1, keepdims=True)
    belief = (a - 1.0) / s
    vacuity = K / s[..., 0]
    if base_rate is None:
        base_rate = np.full(K, 1.0 / K)
    base_rate = np.asarray(base_rate, dtype=np.float64)
    if base_rate.shape[-1] != K:
        raise ValueError("base rate length must equal the class count")
    return Opinion(belief=belief, vacuity=_out(vacuity), base_rate=base_rate)


def dissonance(o) -> float | np.ndarray:
    """Conflicting-evidence measure built on the pairwise balance of beliefs.

    Accepts an :class:`Opinion` or a raw belief array ``(..., K)``.
    """
    b = np.asarray(o.belief if isinstance(o, Opinion) else o, dtype=np.float64)
    bj = b[..., :, None]
    bk = b[..., None, :]
    total = bj + bk
    nonzero = (bj > 0) & (bk > 0)
    bal = np.where(nonzero, 1.0 - np.abs(bj - bk) / np.where(nonzero, total, 1.0), 0.0)
    K = b.shape[-1]
    off = ~np.eye(K, dtype=bool)
    # numer[k] = sum_{j != k} b_j Bal(b_j, b_k); denom[k] = sum_{j != k} b_j
    numer = np.sum(np.where(off, bj * bal, 0.0), axis=-2)
    denom = b.sum(axis=-1, keepdims=True) - b
    safe = denom > 0
    terms = np.where(safe, b * numer / np.where(safe, denom, 1.0), 0.0)
    return _out(terms.sum(axis=-1))
