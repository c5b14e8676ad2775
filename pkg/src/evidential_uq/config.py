"""Flat ``key = value`` run configuration.

A config file holds one assignment per line; ``#`` starts a comment. Lists
are comma separated. Every key maps onto a field of :class:`RunConfig`, and
unknown keys are rejected by name.
"""

from __future__ import annotations

import hashlib
import platform
from dataclasses import dataclass, fields, replace
from typing import Mapping

import numpy as np
import scipy

from .auxiliary import APPENDIX_PRESET, DESK_PRESET, HeadSpec, LOSSES, TARGETS
from .data import MixtureConfig, RingConfig
from .measures import ConfigError, MEASURE_NAMES
from .nn import NetworkSpec, TrainConfig

__all__ = ["RunConfig", "parse_config", "load_config", "ConfigError", "SEED_OFFSETS", "VERSION"]

VERSION = "0.1.0"

# independent streams derived from a run seed
SEED_OFFSETS = {"ring_eval": 10_000, "ring_train": 20_000, "heldout": 30_000}

TASK_NAMES = ("mis", "ood", "joint", "selective")


def _tuple_int(v):
    v = v.strip()
    return () if v in ("", "none") else tuple(int(x) for x in v.split(","))


def _tuple_str(v):
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _opt_int(v):
    return None if v.strip().lower() in ("", "none", "full") else int(v)


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass(frozen=True)
class RunConfig:
    # data
    sigma: float = 4.0
    n_train: int = 1000
    n_test: int = 1000
    n_ood: int = 100
    ring_radius: float = 12.0
    ring_noise: float = 2.0
    n_heldout: int = 5000
    # classifier
    hidden_dims: tuple = ()
    init_gain: float = 0.1
    objective: str = "evidential"
    lam: float = 5e-2
    beta_in: float = 100.0
    optimizer: str = "adam"
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 200
    batch_size: object = None
    train_ood: bool = False
    # confidence head
    head_hidden: tuple = (128, 128, 128)
    head_target: str = "tcp"
    head_loss: str = "mse"
    head_gamma: float = 2.0
    head_preset: str = "desk"
    head_epochs1: object = None
    head_epochs2: object = None
    head_lr1: object = None
    head_lr2: object = None
    head_batch_size: object = 128
    head_train_set: str = "train"
    # evaluation
    measures: tuple = ("mcp", "entropy", "mutual_information", "differential_entropy", "mahalanobis", "klos")
    tasks: tuple = ("mis", "ood", "joint")
    kappa: float = 1.0
    tau: object = None
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        for m in self.measures:
            if m not in MEASURE_NAMES:
                raise ConfigError(f"measures: unknown measure {m!r}")
        for t in self.tasks:
            if t not in TASK_NAMES:
                raise ConfigError(f"tasks: unknown task {t!r}")
        if self.head_target not in TARGETS:
            raise ConfigError(f"head_target: unknown target {self.head_target!r}")
        if self.head_loss not in LOSSES:
            raise ConfigError(f"head_loss: unknown loss {self.head_loss!r}")
        if self.head_preset not in ("desk", "appendix"):
            raise ConfigError("head_preset: expected 'desk' or 'appendix'")
        if self.head_train_set not in ("train", "heldout"):
            raise ConfigError("head_train_set: expected 'train' or 'heldout'")
        if self.train_ood and self.objective != "reverse_kl":
            raise ConfigError("train_ood: OOD training needs objective = reverse_kl")
        # build the typed configs once so that their checks fire here
        try:
            self.mixture(0), self.ring(0), self.train_config(0), self.network_spec(2, 3, 0)
            self.head_spec(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # typed views -----------------------------------------------------
    def mixture(self, seed: int) -> MixtureConfig:
        return MixtureConfig(sigma=self.sigma, n_train=self.n_train, n_test=self.n_test, seed=seed)

    def ring(self, seed: int, stream: str = "ring_eval") -> RingConfig:
        return RingConfig(
            n_ood=self.n_ood, radius=self.ring_radius, noise=self.ring_noise,
            seed=SEED_OFFSETS[stream] + seed,
        )

    def network_spec(self, input_dim: int, n_classes: int, seed: int) -> NetworkSpec:
        return NetworkSpec(input_dim, n_classes, self.hidden_dims, seed=seed, init_gain=self.init_gain)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            objective=self.objective, lam=self.lam, beta_in=self.beta_in, optimizer=self.optimizer,
            lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
            epochs=self.epochs, batch_size=self.batch_size, seed=seed,
        )

    def head_spec(self, seed: int) -> HeadSpec:
        return HeadSpec(self.head_hidden, self.head_target, self.head_loss, self.head_gamma, seed)

    def head_schedule(self) -> dict:
        base = dict(DESK_PRESET if self.head_preset == "desk" else APPENDIX_PRESET)
        for key in ("epochs1", "epochs2", "lr1", "lr2"):
            val = getattr(self, f"head_{key}")
            if val is not None:
                base[key] = val
        return base

    def resolved_tau(self) -> float:
        return float(self.tau) if self.tau is not None else 1.0 + 1.0 / self.lam

    # serialisation ---------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v) if v else "none"
            elif v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        """Hash of the config together with the versions that produced it."""
        blob = self.to_text() + "\n".join(
            [f"python={platform.python_version()}", f"numpy={np.__version__}",
             f"scipy={scipy.__version__}", f"evidential_uq={VERSION}"]
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def updated(self, values: Mapping[str, str]) -> "RunConfig":
        return replace(self, **_convert(values))


_CONVERTERS = {
    "hidden_dims": _tuple_int,
    "head_hidden": _tuple_int,
    "seeds": _tuple_int,
    "measures": _tuple_str,
    "tasks": _tuple_str,
    "batch_size": _opt_int,
    "head_batch_size": _opt_int,
    "head_epochs1": _opt_int,
    "head_epochs2": _opt_int,
    "train_ood": _bool,
}
_OPT_FLOAT = ("head_lr1", "head_lr2", "tau")


def _convert(values: Mapping[str, str]) -> dict:
    known = {f.name: f for f in fields(RunConfig)}
    out = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        raw = str(raw).strip()
        try:
            if key in _CONVERTERS:
                out[key] = _CONVERTERS[key](raw)
            elif key in _OPT_FLOAT:
                out[key] = None if raw.lower() in ("", "none") else float(raw)
            else:
                default = known[key].default
                out[key] = type(default)(raw) if not isinstance(default, str) else raw
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return out


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a dict of raw strings."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        values[key] = val
    return values


def load_config(path=None, overrides: Mapping[str, str] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (flags win)."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_config(fh.read(), str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values.update(overrides or {})
    return RunConfig().updated(values)
