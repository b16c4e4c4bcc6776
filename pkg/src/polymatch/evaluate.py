"""Linear-probe evaluation of frozen features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ssl import DivergenceDetected


class EmptyClass(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    fractions: tuple[float, ...] = (0.01, 0.10, 1.00)
    epochs: int = 300
    lr: float = 0.5
    weight_decay: float = 1e-4
    seed: int = 0
    min_per_class: int = 1

    def __post_init__(self):
        if not all(0 < f <= 1 for f in self.fractions):
            raise ValueError(f"fractions must lie in (0, 1], got {self.fractions}")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be non-negative")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_subset(labels: Sequence[int], fraction: float, seed: int, min_per_class: int = 1) -> np.ndarray:
    """Indices keeping ``round(fraction * n_c)`` (at least one) samples per class.

    Class proportions follow the full set, so imbalance is preserved. Returned
    indices are sorted.
    """
    labels = np.asarray(labels)
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if labels.size == 0:
        raise EmptyClass("no labels")
    rng = np.random.default_rng([seed, 0x57A7])
    picked = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = min(len(idx), max(min_per_class, _round_half_up(fraction * len(idx))))
        picked.append(idx if k == len(idx) else rng.choice(idx, size=k, replace=False))
    return np.sort(np.concatenate(picked))


@dataclass
class LinearProbe:
    weights: np.ndarray  # (dim, n_classes)
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, dtype=float) - self.mean) / self.scale) @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def train_probe(features: np.ndarray, labels: Sequence[int], cfg: ProbeConfig, n_classes: Optional[int] = None) -> LinearProbe:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardised with statistics of the training set; weights
    start at zero, so predictions begin uniform.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} feature rows vs {len(y)} labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    k = int(n_classes if n_classes is not None else y.max() + 1)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-8] = 1.0
    xs = (x - mean) / scale
    w = np.zeros((x.shape[1], k))
    b = np.zeros(k)
    onehot = np.eye(k)[y]
    n = len(x)
    for _ in range(cfg.epochs):
        z = xs @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= cfg.lr * (xs.T @ g + cfg.weight_decay * w)
        b -= cfg.lr * g.sum(axis=0)
        if not np.all(np.isfinite(w)):
            raise DivergenceDetected("probe weights became non-finite")
    return LinearProbe(w, b, mean, scale)


@dataclass
class Metrics:
    top1: float  # percent
    balanced_top1: float  # percent, unweighted mean of per-class recall
    confusion: np.ndarray  # rows: true class, cols: predicted class
    per_class_recall: dict[int, float] = field(default_factory=dict)


def compute_metrics(predictions: Sequence[int], labels: Sequence[int], n_classes: Optional[int] = None) -> Metrics:
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    if len(pred) != len(true):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(true)} labels")
    if len(true) == 0:
        raise ValueError("no samples")
    k = int(n_classes if n_classes is not None else max(pred.max(), true.max()) + 1)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    support = conf.sum(axis=1)
    recalls = {c: 100.0 * conf[c, c] / support[c] for c in range(k) if support[c] > 0}
    top1 = 100.0 * np.trace(conf) / conf.sum()
    balanced = float(np.mean(list(recalls.values())))
    return Metrics(float(top1), balanced, conf, recalls)
