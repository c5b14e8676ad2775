"""Synthetic benchmark data, splits and CSV round-tripping.

Randomness comes from numpy's PCG64 bit generator seeded directly with the
integer seed; Gaussian draws use the Box-Muller transform on PCG64 uniforms
rather than numpy's ziggurat sampler, so a given (config, seed) pair always
yields the same bytes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Dataset",
    "MixtureConfig",
    "RingConfig",
    "DataFormatError",
    "make_rng",
    "box_muller",
    "gen_mixture",
    "gen_ring",
    "mixture_posterior",
    "split",
    "load_csv",
    "save_csv",
]

SQRT3_2 = math.sqrt(3.0) / 2.0
DEFAULT_MEANS = ((0.0, SQRT3_2), (-1.0, -SQRT3_2), (1.0, -SQRT3_2))


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("need exactly one label per sample")
            if np.any(self.labels < 0):
                raise ValueError("labels must be non-negative class indices")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels)


@dataclass(frozen=True)
class MixtureConfig:
    means: tuple = DEFAULT_MEANS
    sigma: float = 4.0
    n_train: int = 1000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("sample counts must be non-negative")


@dataclass(frozen=True)
class RingConfig:
    n_ood: int = 100
    radius: float = 12.0
    noise: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.noise < 0:
            raise ValueError("radial noise must be non-negative")


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normal draws from pairs of PCG64 uniforms."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # in (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]


def _draw_mixture(rng, means, sigma, n):
    K = means.shape[0]
    labels = np.minimum((rng.random(n) * K).astype(np.int64), K - 1)
    noise = box_muller(rng, 2 * n).reshape(n, 2) if n else np.empty((0, 2))
    return Dataset(means[labels] + sigma * noise, labels)


def gen_mixture(cfg: MixtureConfig = MixtureConfig()):
    """Equal-weight isotropic Gaussian mixture; returns ``(train, test)``.

    Train and test come from independent child streams of the seed.
    """
    means = np.asarray(cfg.means, dtype=np.float64)
    train_ss, test_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    train = _draw_mixture(np.random.Generator(np.random.PCG64(train_ss)), means, cfg.sigma, cfg.n_train)
    test = _draw_mixture(np.random.Generator(np.random.PCG64(test_ss)), means, cfg.sigma, cfg.n_test)
    return train, test


def gen_ring(cfg: RingConfig = RingConfig()) -> Dataset:
    """Noisy circle of OOD points centred on the origin."""
    rng = make_rng(cfg.seed)
    angle = 2.0 * np.pi * rng.random(cfg.n_ood)
    radius = cfg.radius + cfg.noise * box_muller(rng, cfg.n_ood)
    radius = np.maximum(radius, 1e-12)
    pts = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return Dataset(pts)


def mixture_posterior(X, means=DEFAULT_MEANS, sigma=4.0) -> np.ndarray:
    """Exact class posterior p(y | x) of the equal-weight mixture."""
    X = np.asarray(X, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    logits = -d2 / (2.0 * sigma ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def split(d: Dataset, fractions: Sequence[float], seed=0) -> list:
    """Shuffled partition of ``d`` into pieces of the given fractions."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    n = len(d)
    perm = make_rng(seed).permutation(n)
    bounds = np.rint(np.concatenate([[0.0], np.cumsum(fractions)]) * n).astype(int)
    bounds[-1] = n
    return [d.subset(perm[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def save_csv(d: Dataset, path) -> None:
    header = [f"f{i}" for i in range(d.dim)]
    if d.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(d)):
            row = [repr(float(v)) for v in d.features[i]]
            if d.labels is not None:
                row.append(str(int(d.labels[i])))
            w.writerow(row)


def load_csv(path, n_classes: Optional[int] = None) -> Dataset:
    """Read a dataset written by :func:`save_csv`.

    A trailing ``label`` column is optional. Errors name the offending line.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_label = bool(header) and header[-1] == "label"
    n_feat = len(header) - int(has_label)
    for i, name in enumerate(header[:n_feat]):
        if name != f"f{i}":
            raise DataFormatError(f"{path}: line 1: unexpected column name {name!r}")
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: line {lineno}: expected {len(header)} cells, got {len(row)}"
            )
        try:
            feats.append([float(v) for v in row[:n_feat]])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: non-numeric feature") from None
        if has_label:
            try:
                lab = int(row[-1])
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: label {row[-1]!r} is not an integer") from None
            if lab < 0 or (n_classes is not None and lab >= n_classes):
                raise DataFormatError(f"{path}: line {lineno}: label {lab} out of range")
            labels.append(lab)
    X = np.array(feats, dtype=np.float64).reshape(len(feats), n_feat)
    return Dataset(X, np.array(labels, dtype=np.int64) if has_label else None)
