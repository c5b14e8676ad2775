"""A small fully-connected classifier with hand-derived gradients.

Three objectives are supported: softmax cross-entropy, the lambda-weighted
evidential (variational Dirichlet) loss, and the reverse-KL loss that can
also consume out-of-distribution samples. Logits ``f`` are read as log
concentrations, ``alpha = exp(f)``, by the two Dirichlet objectives.

Layer ``i`` maps ``h @ W[i] + b[i]``; every layer but the last is followed
by a rectifier. The output of the last hidden layer is the penultimate
feature vector (the raw input when there are no hidden layers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dirichlet import kl_dirichlet, kl_to_uniform
from .special import digamma, trigamma

__all__ = [
    "NetworkSpec",
    "Network",
    "TrainConfig",
    "TrainingDivergedError",
    "init_network",
    "forward",
    "backward",
    "softmax",
    "concentration",
    "loss_softmax_ce",
    "loss_evidential",
    "loss_reverse_kl",
    "train",
    "input_gradient",
    "save_network",
    "load_network",
    "dumps_network",
    "loads_network",
]

OBJECTIVES = ("softmax_ce", "evidential", "reverse_kl")
# exp() of logits beyond this bound leaves double range in later products
LOGIT_CLIP = 60.0


class TrainingDivergedError(ArithmeticError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple = ()
    activation: str = "relu"
    seed: int = 0
    init_gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer widths must be >= 1")
        if self.output_dim < 2:
            raise ValueError("need at least two classes")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.init_gain > 0:
            raise ValueError("init_gain must be positive")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class Network:
    weights: list
    biases: list

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def n_hidden(self) -> int:
        """Index of the encoder/classifier boundary."""
        return len(self.weights) - 1

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])


@dataclass
class TrainConfig:
    objective: str = "evidential"
    lam: float = 5e-2
    beta_in: float = 100.0
    optimizer: str = "adam"
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.objective == "reverse_kl" and self.beta_in <= 1:
            raise ValueError("beta_in must exceed 1 for a sharp in-distribution target")


def init_network(spec: NetworkSpec) -> Network:
    """Glorot-uniform weights from a seeded PCG64 stream, zero biases.

    ``spec.init_gain`` scales the uniform limit; small gains start the logits
    near zero, which matters for the Dirichlet objectives on unscaled inputs.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    dims = spec.dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = spec.init_gain * math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(weights, biases)


def _forward_cache(net: Network, X: np.ndarray):
    pre = []
    h = X
    acts = [X]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return h, (acts, pre)


def forward(net: Network, X):
    """Return ``(logits, penultimate)`` for one sample or a batch."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != net.dims[0]:
        raise ValueError(f"expected {net.dims[0]} input features, got {X2.shape[1]}")
    logits, (acts, _) = _forward_cache(net, X2)
    penultimate = acts[-2]
    if single:
        return logits[0], penultimate[0]
    return logits, penultimate


def backward(net: Network, cache, grad_out: np.ndarray):
    """Backpropagate ``grad_out`` (gradient w.r.t. the final layer output).

    Returns ``(grads, grad_input)`` with ``grads`` ordered like ``net.params()``.
    """
    acts, pre = cache
    grads = [None] * (2 * len(net.weights))
    g = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        if i < len(net.weights) - 1:
            g = g * (pre[i] > 0)
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, g


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def concentration(logits):
    """Dirichlet concentrations alpha = exp(logits)."""
    return np.exp(np.clip(np.asarray(logits, dtype=np.float64), -LOGIT_CLIP, LOGIT_CLIP))


def _batched(logits, y):
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    L = logits[None, :] if single else logits
    if y is not None:
        y = np.atleast_1d(np.asarray(y))
        if y.shape[0] != L.shape[0]:
            raise ValueError("one label per row of logits is required")
        if np.any(y < 0) or np.any(y >= L.shape[1]):
            raise ValueError(f"label out of range [0, {L.shape[1]})")
        y = y.astype(np.intp)
    return L, y, single


def _unbatch(loss, grad, single):
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def loss_softmax_ce(logits, y):
    """Per-sample negative log-likelihood and its gradient w.r.t. logits."""
    L, y, single = _batched(logits, y)
    z = L - L.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(L.shape[0])
    loss = logsum - z[rows, y]
    grad = softmax(L)
    grad[rows, y] -= 1.0
    return _unbatch(loss, grad, single)


def _grad_kl_uniform_alpha(alpha):
    # d/d alpha_k KL(Dir(alpha) || Dir(1)) = (alpha_k - 1) psi'(alpha_k) - (alpha_0 - K) psi'(alpha_0)
    K = alpha.shape[1]
    a0 = alpha.sum(axis=1)
    return (alpha - 1.0) * trigamma(alpha) - ((a0 - K) * trigamma(a0))[:, None]


def _grad_kl_alpha(alpha, target):
    # d/d alpha_k KL(Dir(alpha) || Dir(target))
    #   = (alpha_k - t_k) psi'(alpha_k) - (alpha_0 - t_0) psi'(alpha_0)
    a0 = alpha.sum(axis=1)
    t0 = target.sum(axis=1)
    return (alpha - target) * trigamma(alpha) - ((a0 - t0) * trigamma(a0))[:, None]


def loss_evidential(logits, y, lam):
    """Evidential objective per sample:
    ``-(psi(alpha_y) - psi(alpha_0)) + lam * KL(Dir(alpha) || Dir(1))``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    L, y, single = _batched(logits, y)
    alpha = concentration(L)
    a0 = alpha.sum(axis=1)
    rows = np.arange(L.shape[0])
    ay = alpha[rows, y]
    loss = -(digamma(ay) - digamma(a0)) + lam * kl_to_uniform(alpha)
    g_alpha = lam * _grad_kl_uniform_alpha(alpha)
    g_alpha += trigamma(a0)[:, None]
    g_alpha[rows, y] -= trigamma(ay)
    return _unbatch(np.asarray(loss), g_alpha * alpha, single)


def loss_reverse_kl(logits, y, beta_in, lam):
    """Reverse-KL objective per sample.

    Rows with a label ``y >= 0`` are in-distribution and are pulled towards
    ``Dir(1, ..., beta_in, ..., 1)`` peaked at their class; rows labelled
    ``-1`` are OOD and pay ``lam * KL(Dir(alpha) || Dir(1))``.
    """
    if beta_in <= 1:
        raise ValueError("beta_in must exceed 1")
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    L = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(y)).astype(np.intp)
    if y.shape[0] != L.shape[0]:
        raise ValueError("one label per row of logits is required")
    if np.any(y < -1) or np.any(y >= L.shape[1]):
        raise ValueError("labels must be class indices or -1 for OOD")
    alpha = concentration(L)
    ood = y < 0
    target = np.ones_like(alpha)
    rows = np.flatnonzero(~ood)
    target[rows, y[rows]] = beta_in
    loss = np.asarray(kl_dirichlet(alpha, target), dtype=np.float64)
    g_alpha = _grad_kl_alpha(alpha, target)
    loss = np.where(ood, lam * loss, loss)
    g_alpha = np.where(ood[:, None], lam * g_alpha, g_alpha)
    return _unbatch(loss, g_alpha * alpha, single)


class _Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr, momentum, weight_decay):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.buf = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for i, (p, g, buf) in enumerate(zip(params, grads, self.buf)):
            if self.weight_decay and i % 2 == 0:
                g = g + self.weight_decay * p
            buf *= self.momentum
            buf += g
            p -= self.lr * buf


def make_optimizer(params, cfg):
    if cfg.optimizer == "adam":
        return _Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return _SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)


def objective_loss(cfg: TrainConfig, logits, y):
    if cfg.objective == "softmax_ce":
        return loss_softmax_ce(logits, y)
    if cfg.objective == "evidential":
        return loss_evidential(logits, y, cfg.lam)
    return loss_reverse_kl(logits, y, cfg.beta_in, cfg.lam)


def train(net: Network, X, y, cfg: TrainConfig, X_ood=None):
    """Fit ``net`` on labelled data and return ``(trained_copy, history)``.

    ``history`` holds the mean per-sample loss of each epoch. OOD inputs are
    only accepted by the reverse-KL objective; in each step their mean loss
    is added to the mean in-distribution loss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.intp)
    if X_ood is not None and cfg.objective != "reverse_kl":
        raise ValueError(f"objective {cfg.objective!r} does not use OOD samples")
    net = net.copy()
    history = []
    if cfg.epochs == 0:
        return net, history

    params = net.params()
    opt = make_optimizer(params, cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = X.shape[0]
    bs = n if cfg.batch_size is None else int(cfg.batch_size)
    n_batches = max(1, math.ceil(n / bs))
    X_ood = None if X_ood is None else np.asarray(X_ood, dtype=np.float64)

    for epoch in range(cfg.epochs):
        order = np.arange(n) if n_batches == 1 else rng.permutation(n)
        ood_chunks = None
        if X_ood is not None:
            ood_order = np.arange(len(X_ood)) if n_batches == 1 else rng.permutation(len(X_ood))
            ood_chunks = np.array_split(ood_order, n_batches)
        total = 0.0
        for bi in range(n_batches):
            idx = order[bi * bs:(bi + 1) * bs]
            xb, yb = X[idx], y[idx]
            weights = np.full(len(idx), 1.0 / len(idx))
            if ood_chunks is not None and len(ood_chunks[bi]):
                oidx = ood_chunks[bi]
                xb = np.vstack([xb, X_ood[oidx]])
                yb = np.concatenate([yb, np.full(len(oidx), -1, dtype=np.intp)])
                weights = np.concatenate([weights, np.full(len(oidx), 1.0 / len(oidx))])
            logits, cache = _forward_cache(net, xb)
            if not np.all(np.isfinite(logits)):
                raise TrainingDivergedError(
                    f"non-finite logits at epoch {epoch}, batch {bi} ({cfg.objective})"
                )
            loss, g_logits = objective_loss(cfg, logits, yb)
            batch_loss = float(np.dot(weights, loss))
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi} ({cfg.objective})"
                )
            total += batch_loss * len(idx)
            grads, _ = backward(net, cache, g_logits * weights[:, None])
            opt.step(params, grads)
        history.append(total / n)
    return net, history


ScoreFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def input_gradient(net: Network, x, score_fn: ScoreFn) -> np.ndarray:
    """Gradient of a scalar score of the logits with respect to the input.

    ``score_fn(logits)`` must return ``(score, d score / d logits)``.
    """
    x = np.asarray(x, dtype=np.float64)
    logits, cache = _forward_cache(net, x[None, :])
    _, g = score_fn(logits[0])
    _, gx = backward(net, cache, np.asarray(g, dtype=np.float64)[None, :])
    return gx[0]


def dumps_network(net: Network) -> str:
    lines = ["dims: " + ",".join(str(d) for d in net.dims)]
    for p in net.params():
        lines.append(",".join(repr(float(v)) for v in p.ravel()))
    return "\n".join(lines) + "\n"


def loads_network(text: str) -> Network:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("dims:"):
        raise ValueError("network text must start with a 'dims:' header")
    dims = [int(v) for v in lines[0][len("dims:"):].split(",")]
    n_layers = len(dims) - 1
    if len(lines) - 1 != 2 * n_layers:
        raise ValueError(
            f"expected {2 * n_layers} parameter lines for dims {dims}, got {len(lines) - 1}"
        )
    weights, biases = [], []
    for i in range(n_layers):
        w = np.array([float(v) for v in lines[1 + 2 * i].split(",")])
        b = np.array([float(v) for v in lines[2 + 2 * i].split(",")])
        if w.size != dims[i] * dims[i + 1] or b.size != dims[i + 1]:
            raise ValueError(f"parameter size mismatch in layer {i}")
        weights.append(w.reshape(dims[i], dims[i + 1]))
        biases.append(b)
    return Network(weights, biases)


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_network(net))


def load_network(path) -> Network:
    with open(path) as fh:
        return loads_network(fh.read())
