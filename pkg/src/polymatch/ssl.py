"""Self-supervised objectives, positive sampling and the training loop.

Three objectives share one encoder stack ``f -> g (-> h)``: NT-Xent
(SimCLR-style contrastive), SimSiam (predictor + stop-gradient) and a triplet
loss with a random in-batch negative. Positives come either from two
augmentations of one view ("standard") or from an augmented view paired with
an augmented footprint-matched view of the same object ("polygon").

All gradients are derived by hand; every loss returns ``(loss, grads)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .miner import Key, PairManifest, UnknownQuery, sample_positive
from .mlp import MLP

log = logging.getLogger(__name__)

METHODS = ("simclr", "simsiam", "triplet")
REGIMES = ("standard", "polygon")


class ZeroVector(ValueError):
    pass


class BatchTooSmall(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    pass


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _normalize(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("zero embedding")
    return z / norms, norms


def _normalize_backward(u: np.ndarray, norms: np.ndarray, du: np.ndarray) -> np.ndarray:
    return (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms


def nt_xent_loss(z: np.ndarray, temperature: float = 0.5, negated_denominator: bool = False):
    """Normalized temperature-scaled cross entropy over ``2N`` embeddings.

    Rows ``i`` and ``i + N`` are positives of each other; every other row is a
    negative. The denominator runs over all rows except the anchor itself, so
    it includes the positive. ``negated_denominator`` negates the similarities inside
    the denominator, a variant kept for comparison only.

    Returns:
        ``(loss, dz)`` with the loss averaged over all ``2N`` anchors.
    """
    z = np.asarray(z, dtype=float)
    n2 = z.shape[0]
    if n2 % 2 or n2 < 4:
        raise BatchTooSmall(f"need 2N rows with N >= 2, got {n2}")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    n = n2 // 2
    u, norms = _normalize(z)
    s = (u @ u.T) / temperature
    pos = (np.arange(n2) + n) % n2
    rows = np.arange(n2)

    logits = -s if negated_denominator else s.copy()
    np.fill_diagonal(logits, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    denom = e.sum(axis=1)
    lse = m[:, 0] + np.log(denom)
    loss = float(np.mean(lse - s[rows, pos]))

    soft = e / denom[:, None]
    g = (-soft if negated_denominator else soft) / n2  # d loss / d s
    g[rows, pos] -= 1.0 / n2
    du = (g + g.T) @ u / temperature
    return loss, _normalize_backward(u, norms, du)


def _neg_cos_rows(p: np.ndarray, z: np.ndarray):
    """Row-wise ``-cos(p, z)`` and its gradient in ``p``."""
    pn, pnorm = _normalize(p)
    zn, _ = _normalize(z)
    cos = np.sum(pn * zn, axis=1)
    dp = -(zn - pn * cos[:, None]) / pnorm
    return -cos, dp


def simsiam_loss(p1, p2, z1, z2):
    """Symmetrised negative cosine between predictions and detached targets.

    Returns ``(loss, (dp1, dp2, dz1, dz2))``; the target gradients are zero
    by construction.
    """
    p1, p2, z1, z2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (p1, p2, z1, z2))
    if not (p1.shape == p2.shape == z1.shape == z2.shape):
        raise ValueError("simsiam inputs must share a shape")
    b = p1.shape[0]
    l1, dp1 = _neg_cos_rows(p1, z2)
    l2, dp2 = _neg_cos_rows(p2, z1)
    loss = float(np.mean(0.5 * l1 + 0.5 * l2))
    scale = 0.5 / b
    return loss, (dp1 * scale, dp2 * scale, np.zeros_like(z1), np.zeros_like(z2))


def triplet_loss(anchor, positive, negative, margin: float = 1.0):
    """Mean of ``max(0, |a - p|^2 - |a - n|^2 + margin)`` over rows.

    Returns ``(loss, (da, dp, dn))``.
    """
    a, p, n = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (anchor, positive, negative))
    if not (a.shape == p.shape == n.shape):
        raise ValueError("triplet inputs must share a shape")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    b = a.shape[0]
    dap = a - p
    dan = a - n
    hinge = np.sum(dap**2, axis=1) - np.sum(dan**2, axis=1) + margin
    active = (hinge > 0).astype(float)[:, None] * (2.0 / b)
    loss = float(np.mean(np.maximum(hinge, 0.0)))
    da = active * (dap - dan)
    dp = -active * dap
    dn = active * dan
    return loss, (da, dp, dn)


@dataclass(frozen=True)
class AugmentationPolicy:
    """Feature-space stand-ins for crop / flip / colour distortion."""

    jitter: float = 0.1  # multiplicative per-channel scale noise
    noise: float = 0.1  # additive gaussian noise
    dropout: float = 0.1  # probability of zeroing a coordinate

    def __post_init__(self):
        if self.jitter < 0 or self.noise < 0 or not 0 <= self.dropout < 1:
            raise ValueError(f"invalid augmentation policy {self}")

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x * (1.0 + self.jitter * rng.standard_normal(x.shape))
        out = out + self.noise * rng.standard_normal(x.shape)
        if self.dropout > 0:
            out = out * (rng.random(x.shape) >= self.dropout)
        return out


def make_pair(
    query: Key,
    regime: str,
    manifest: Optional[PairManifest],
    features: Mapping[Key, np.ndarray],
    policy: AugmentationPolicy,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Two views forming a positive pair for ``query``.

    In the polygon regime the second view comes from a randomly chosen
    footprint match; boxes without matches fall back to self-augmentation.
    """
    query = tuple(query)
    if query not in features:
        raise UnknownQuery(query)
    if regime not in REGIMES:
        raise ValueError(f"unknown positive regime {regime!r}")
    x = features[query]
    other = x
    if regime == "polygon" and manifest is not None and query in manifest:
        cand = sample_positive(manifest, query, rng)
        if cand is not None:
            if cand not in features:
                raise UnknownQuery(cand)
            other = features[cand]
    return policy.apply(x, rng), policy.apply(other, rng)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "simclr"
    positives: str = "standard"
    temperature: float = 0.5
    margin: float = 1.0
    batch_size: int = 64
    epochs: int = 20
    lr: float = 0.5
    seed: int = 0
    hidden_dim: int = 64
    feature_dim: int = 32
    proj_dim: int = 8
    pred_hidden: int = 16
    batch_norm: bool = True  # in the hidden layers of the projector and predictor
    negated_denominator: bool = False
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.positives not in REGIMES:
            raise ValueError(f"positives must be one of {REGIMES}, got {self.positives!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.batch_size < 2 or self.epochs < 0 or self.lr < 0:
            raise ValueError("batch_size >= 2, epochs >= 0 and lr >= 0 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if "augment" in d and not isinstance(d["augment"], AugmentationPolicy):
            d["augment"] = AugmentationPolicy(**d["augment"])
        return cls(**d)


class EncoderStack:
    """Feature extractor ``f``, projector ``g`` and predictor ``h``."""

    def __init__(self, input_dim: int, cfg: TrainConfig, rng: np.random.Generator):
        self.input_dim = input_dim
        self.f = MLP([input_dim, cfg.hidden_dim, cfg.feature_dim], rng, final_relu=True)
        self.g = MLP([cfg.feature_dim, cfg.feature_dim, cfg.proj_dim], rng, batch_norm=cfg.batch_norm)
        self.h = MLP([cfg.proj_dim, cfg.pred_hidden, cfg.proj_dim], rng, batch_norm=cfg.batch_norm)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Frozen representation used for linear probing."""
        return self.f(np.asarray(x, dtype=float)).copy()

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.g(self.f(np.asarray(x, dtype=float)))

    def state(self) -> dict[str, np.ndarray]:
        return {**self.f.state("f"), **self.g.state("g"), **self.h.state("h")}

    def load(self, state: Mapping[str, np.ndarray]) -> None:
        self.f.load("f", state)
        self.g.load("g", state)
        self.h.load("h", state)

    def nets(self):
        return (self.f, self.g, self.h)


@dataclass
class TrainResult:
    encoder: EncoderStack
    losses: list[float]  # entry 0 is the loss before any update, then one per epoch
    config: TrainConfig


def _batch_step(enc: EncoderStack, xa: np.ndarray, xb: np.ndarray, cfg: TrainConfig,
                rng: np.random.Generator, update: bool) -> float:
    fa, ca_f = enc.f.forward(xa)
    fb, cb_f = enc.f.forward(xb)
    za, ca_g = enc.g.forward(fa)
    zb, cb_g = enc.g.forward(fb)

    if cfg.method == "simclr":
        loss, dz = nt_xent_loss(np.vstack([za, zb]), cfg.temperature, cfg.negated_denominator)
        dza, dzb = dz[: len(za)], dz[len(za):]
        hgrads = None
    elif cfg.method == "simsiam":
        pa, ca_h = enc.h.forward(za)
        pb, cb_h = enc.h.forward(zb)
        loss, (dpa, dpb, _, _) = simsiam_loss(pa, pb, za, zb)
        dza, dwa, dba = enc.h.backward(ca_h, dpa)
        dzb, dwb, dbb = enc.h.backward(cb_h, dpb)
        hgrads = ([x + y for x, y in zip(dwa, dwb)], [x + y for x, y in zip(dba, dbb)])
    else:
        ua, na = _normalize(za)
        ub, nb = _normalize(zb)
        b = len(ua)
        neg = (np.arange(b) + rng.integers(1, b, size=b)) % b
        loss, (dua, dup, dun) = triplet_loss(ua, ub, ub[neg], cfg.margin)
        dub = dup.copy()
        np.add.at(dub, neg, dun)
        dza = _normalize_backward(ua, na, dua)
        dzb = _normalize_backward(ub, nb, dub)
        hgrads = None

    if not math.isfinite(loss):
        raise DivergenceDetected(f"non-finite {cfg.method} loss")
    if not update:
        return loss

    dfa, gwa, gba = enc.g.backward(ca_g, dza)
    dfb, gwb, gbb = enc.g.backward(cb_g, dzb)
    _, fwa, fba = enc.f.backward(ca_f, dfa)
    _, fwb, fbb = enc.f.backward(cb_f, dfb)
    enc.f.step([x + y for x, y in zip(fwa, fwb)], [x + y for x, y in zip(fba, fbb)], cfg.lr)
    enc.g.step([x + y for x, y in zip(gwa, gwb)], [x + y for x, y in zip(gba, gbb)], cfg.lr)
    if hgrads is not None:
        enc.h.step(*hgrads, cfg.lr)
    for net in enc.nets():
        for w in net.weights:
            if not np.all(np.isfinite(w)):
                raise DivergenceDetected("non-finite parameters")
    return loss


def _epoch(enc, keys, features, manifest, cfg, rng, update: bool) -> float:
    order = rng.permutation(len(keys))
    losses, sizes = [], []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        if len(idx) < 2:
            continue
        pairs = [make_pair(keys[i], cfg.positives, manifest, features, cfg.augment, rng) for i in idx]
        xa = np.array([p[0] for p in pairs])
        xb = np.array([p[1] for p in pairs])
        losses.append(_batch_step(enc, xa, xb, cfg, rng, update))
        sizes.append(len(idx))
    return float(np.average(losses, weights=sizes))


def train(
    features: Mapping[Key, np.ndarray],
    manifest: Optional[PairManifest],
    cfg: TrainConfig,
    keys: Optional[Sequence[Key]] = None,
) -> TrainResult:
    """Fit the encoder stack with plain SGD.

    ``keys`` restricts training to a subset of ``features`` (default: all).
    Deterministic given ``cfg.seed``.
    """
    keys = sorted(tuple(k) for k in (keys if keys is not None else features.keys()))
    if len(keys) < 2:
        raise ValueError("training needs at least two samples")
    if cfg.positives == "polygon" and manifest is None:
        raise ValueError("polygon positives need a pair manifest")
    dim = len(features[keys[0]])
    enc = EncoderStack(dim, cfg, np.random.default_rng([cfg.seed, 1]))
    losses = [_epoch(enc, keys, features, manifest, cfg, np.random.default_rng([cfg.seed, 3]), update=False)]
    rng = np.random.default_rng([cfg.seed, 2])
    for epoch in range(cfg.epochs):
        losses.append(_epoch(enc, keys, features, manifest, cfg, rng, update=True))
        log.debug("%s/%s epoch %d loss %.5f", cfg.method, cfg.positives, epoch + 1, losses[-1])
    return TrainResult(enc, losses, cfg)
