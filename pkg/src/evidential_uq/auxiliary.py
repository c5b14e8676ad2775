"""Learned confidence heads: ConfidNet (regresses TCP) and KLoSNet
(regresses the sigmoid of KLoS*).

Training runs in two phases. Phase 1 fits a small MLP on the frozen
penultimate features of a classifier. Phase 2 clones the classifier's
encoder, stacks the phase-1 head on top and fine-tunes both with a small
learning rate, keeping the epoch with the best validation AUPR-Error.
The classifier itself is never modified.

A head is stored as a tinynet ``Network`` with one output unit. After phase
2 the same ``Network`` holds the encoder copy followed by the head layers,
so a single forward/backward pass covers both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measures import klos_star, ntcp, tcp
from .metrics import aupr
from .nn import Network, _Adam, concentration, forward, backward, _forward_cache, softmax
from .nn import dumps_network, loads_network

__all__ = [
    "HeadSpec",
    "ConfidenceHead",
    "TARGETS",
    "LOSSES",
    "DESK_PRESET",
    "APPENDIX_PRESET",
    "compute_targets",
    "head_loss",
    "train_head_phase1",
    "finetune_phase2",
    "head_output",
    "confidence_score",
    "save_head",
    "load_head",
]

TARGETS = ("tcp", "ntcp", "klos_star_sigmoid")
LOSSES = ("mse", "bce", "focal")

# (phase-1 epochs, phase-2 epochs, phase-1 lr, phase-2 lr)
DESK_PRESET = dict(epochs1=200, epochs2=50, lr1=1e-3, lr2=1e-5)
APPENDIX_PRESET = dict(epochs1=100, epochs2=30, lr1=1e-4, lr2=1e-6)


@dataclass(frozen=True)
class HeadSpec:
    hidden_dims: tuple = (128, 128, 128)
    target: str = "tcp"
    loss: str = "mse"
    gamma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if len(self.hidden_dims) < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("a head needs at least one hidden layer of positive width")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}; expected one of {TARGETS}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.gamma < 0:
            raise ValueError("focal gamma must be >= 0")

    @property
    def lower_is_confident(self) -> bool:
        return self.target == "klos_star_sigmoid"


@dataclass
class ConfidenceHead:
    """``net`` maps features to one pre-sigmoid unit.

    ``n_encoder`` counts the leading layers of ``net`` that are a copy of the
    classifier's encoder: 0 for a phase-1 head, which reads the classifier's
    penultimate features, and ``classifier.n_hidden`` after phase 2, when the
    head reads raw inputs.
    """

    spec: HeadSpec
    net: Network
    n_encoder: int = 0
    phase: int = 1
    lam: float = 5e-2

    def copy(self) -> "ConfidenceHead":
        return ConfidenceHead(self.spec, self.net.copy(), self.n_encoder, self.phase, self.lam)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def compute_targets(net: Network, X, y, kind: str, lam: float = 5e-2) -> np.ndarray:
    """Per-sample regression targets in [0, 1] from the classifier's logits."""
    logits, _ = forward(net, X)
    y = np.asarray(y).astype(np.intp)
    if kind == "tcp":
        return tcp(softmax(logits), y)
    if kind == "ntcp":
        return ntcp(softmax(logits), y)
    if kind == "klos_star_sigmoid":
        if not lam > 0:
            raise ValueError("KLoS* targets need lambda > 0 (tau = 1 + 1/lambda)")
        return _sigmoid(klos_star(concentration(logits), y, 1.0 + 1.0 / lam))
    raise ValueError(f"unknown target {kind!r}")


def _log_sigmoid(z):
    # log(sigmoid(z)) = -softplus(-z)
    return -np.logaddexp(0.0, -z)


def head_loss(z, t, loss: str = "mse", gamma: float = 2.0):
    """Per-sample loss between ``sigmoid(z)`` and soft targets ``t`` and its
    derivative with respect to ``z``.

    BCE and focal use the soft-label cross-entropy form, so they accept any
    target in [0, 1].
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    p = _sigmoid(z)
    if loss == "mse":
        return (p - t) ** 2, 2.0 * (p - t) * p * (1.0 - p)
    log_p = _log_sigmoid(z)
    log_q = _log_sigmoid(-z)
    q = 1.0 - p
    if loss == "bce":
        return -(t * log_p + (1.0 - t) * log_q), p - t
    if loss == "focal":
        g = gamma
        value = -(t * q ** g * log_p + (1.0 - t) * p ** g * log_q)
        grad = -t * (q ** (g + 1.0) - g * p * q ** g * log_p) - (1.0 - t) * (
            g * p ** g * q * log_q - p ** (g + 1.0)
        )
        return value, grad
    raise ValueError(f"unknown loss {loss!r}")


def _init_head(in_dim: int, spec: HeadSpec) -> Network:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    dims = (in_dim, *spec.hidden_dims, 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(weights, biases)


def _features(head: ConfidenceHead, classifier: Optional[Network], X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if head.n_encoder > 0 or head.phase == 2:
        return X
    if classifier is None:
        raise ValueError("a phase-1 head needs the classifier to compute features")
    return forward(classifier, X)[1]


def head_output(head: ConfidenceHead, classifier: Optional[Network], X) -> np.ndarray:
    """Raw sigmoid output of the head (the regressed target)."""
    z, _ = forward(head.net, _features(head, classifier, X))
    return _sigmoid(z[:, 0])


def confidence_score(head: ConfidenceHead, classifier: Optional[Network], X) -> np.ndarray:
    """Head output oriented so that higher means more confident.

    KLoSNet regresses a squashed divergence, so its confidence is
    ``1 - output``.
    """
    out = head_output(head, classifier, X)
    return 1.0 - out if head.spec.lower_is_confident else out


def _fit(net, feats, targets, spec, epochs, lr, batch_size, rng, on_epoch=None):
    params = net.params()
    opt = _Adam(params, lr, 0.9, 0.999, 1e-8)
    n = feats.shape[0]
    bs = n if batch_size is None else int(batch_size)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            z, cache = _forward_cache(net, feats[idx])
            loss, gz = head_loss(z[:, 0], targets[idx], spec.loss, spec.gamma)
            if not np.all(np.isfinite(loss)):
                raise FloatingPointError(f"non-finite head loss at epoch {epoch}")
            total += float(loss.sum())
            grads, _ = backward(net, cache, (gz / idx.size)[:, None])
            opt.step(params, grads)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch)
    return history


def train_head_phase1(
    net: Network,
    X,
    y,
    spec: HeadSpec = HeadSpec(),
    epochs: int = DESK_PRESET["epochs1"],
    lr: float = DESK_PRESET["lr1"],
    batch_size: Optional[int] = 128,
    lam: float = 5e-2,
):
    """Fit a head on the frozen penultimate features of ``net``.

    Returns ``(head, history)``.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = compute_targets(net, X, y, spec.target, lam)
    feats = forward(net, X)[1]
    head_net = _init_head(feats.shape[1], spec)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    history = _fit(head_net, feats, targets, spec, epochs, lr, batch_size, rng) if lr > 0 else []
    return ConfidenceHead(spec, head_net, 0, 1, lam), history


def _val_score(head, net, X_val, y_val):
    correct = np.argmax(forward(net, X_val)[0], axis=1) == np.asarray(y_val)
    conf = confidence_score(head, net, X_val)
    if correct.all() or not correct.any():
        # AUPR-Error is undefined; fall back to the negative target MSE
        t = compute_targets(net, X_val, y_val, head.spec.target, head.lam)
        return -float(np.mean((head_output(head, net, X_val) - t) ** 2))
    return aupr(correct.astype(int), conf, positive="error")


def finetune_phase2(
    head: ConfidenceHead,
    net: Network,
    X,
    y,
    X_val=None,
    y_val=None,
    epochs: int = DESK_PRESET["epochs2"],
    lr: float = DESK_PRESET["lr2"],
    batch_size: Optional[int] = 128,
):
    """Untie a copy of the encoder and fine-tune it jointly with the head.

    The returned checkpoint is the epoch (phase-1 state included) with the
    best AUPR-Error on ``(X_val, y_val)``, which defaults to the training set.
    Returns ``(head, history)``.
    """
    if head.phase != 1:
        raise ValueError("phase-2 fine-tuning starts from a phase-1 head")
    X = np.asarray(X, dtype=np.float64)
    if X_val is None:
        X_val, y_val = X, y
    X_val = np.asarray(X_val, dtype=np.float64)
    k = net.n_hidden
    joint = Network(
        [w.copy() for w in net.weights[:k]] + [w.copy() for w in head.net.weights],
        [b.copy() for b in net.biases[:k]] + [b.copy() for b in head.net.biases],
    )
    current = ConfidenceHead(head.spec, joint, k, 2, head.lam)
    if epochs == 0 or lr == 0:
        return current, []
    targets = compute_targets(net, X, y, head.spec.target, head.lam)
    best = [_val_score(current, net, X_val, y_val), joint.copy()]

    def track(_epoch):
        score = _val_score(current, net, X_val, y_val)
        if score > best[0]:
            best[0], best[1] = score, joint.copy()

    rng = np.random.Generator(np.random.PCG64(head.spec.seed + 1))
    history = _fit(joint, X, targets, head.spec, epochs, lr, batch_size, rng, on_epoch=track)
    return ConfidenceHead(head.spec, best[1], k, 2, head.lam), history


def save_head(head: ConfidenceHead, path) -> None:
    s = head.spec
    desc = (
        f"head: target={s.target} loss={s.loss} gamma={s.gamma!r} seed={s.seed} "
        f"hidden={','.join(map(str, s.hidden_dims))} n_encoder={head.n_encoder} "
        f"phase={head.phase} lam={head.lam!r}"
    )
    with open(path, "w") as fh:
        fh.write(desc + "\n" + dumps_network(head.net))


def load_head(path) -> ConfidenceHead:
    with open(path) as fh:
        first, rest = fh.read().split("\n", 1)
    if not first.startswith("head:"):
        raise ValueError(f"{path}: missing 'head:' descriptor line")
    fields = dict(kv.split("=", 1) for kv in first[len("head:"):].split())
    spec = HeadSpec(
        hidden_dims=tuple(int(h) for h in fields["hidden"].split(",")),
        target=fields["target"],
        loss=fields["loss"],
        gamma=float(fields["gamma"]),
        seed=int(fields["seed"]),
    )
    return ConfidenceHead(
        spec, loads_network(rest), int(fields["n_encoder"]), int(fields["phase"]), float(fields["lam"])
    )
