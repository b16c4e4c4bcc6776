"""End-to-end experiment plumbing: datasets, training grid, report."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import simulator as sim
from .evaluate import Metrics, ProbeConfig, compute_metrics, stratified_subset, train_probe
from .miner import Key, MinerConfig, Observation, PairManifest, build_footprints, mine_pairs
from .ssl import METHODS, REGIMES, EncoderStack, TrainConfig, train

log = logging.getLogger(__name__)

TEST_OFFSET = 1_000_000


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    train_scenes: int = 6
    test_scenes: int = 3
    scene: sim.SceneConfig = field(default_factory=sim.SceneConfig)
    synth: sim.FeatureSynth = field(default_factory=sim.FeatureSynth)

    def __post_init__(self):
        if self.train_scenes < 1:
            raise ValueError("at least one training scene is required")
        if self.test_scenes < 0:
            raise ValueError("test_scenes must be non-negative")


@dataclass
class Simulation:
    observations: list[Observation]
    gt: sim.GroundTruth
    features: dict[Key, np.ndarray]
    split: dict[Key, str]

    def keys(self, split: str) -> list[Key]:
        return [o.key for o in self.observations if self.split[o.key] == split]


def _covering(k: int, n_scenes: int) -> list[int]:
    # spread one instance of every class over the scenes of a split
    return [c for c in range(sim.N_CLASSES) if c % n_scenes == k]


def scene_specs(cfg: DatasetConfig) -> list[tuple[sim.SceneSpec, str]]:
    specs = []
    for k in range(cfg.train_scenes):
        spec = sim.random_scene(
            cfg.seed * 10_007 + k, cfg.scene, agent_id=f"home{k:03d}", instance_offset=1000 * k,
            required_classes=_covering(k, cfg.train_scenes),
        )
        specs.append((spec, "train"))
    for k in range(cfg.test_scenes):
        spec = sim.random_scene(
            cfg.seed * 10_007 + 5000 + k, cfg.scene, agent_id=f"test{k:03d}",
            instance_offset=TEST_OFFSET + 1000 * k,
            required_classes=_covering(k, cfg.test_scenes),
        )
        specs.append((spec, "test"))
    return specs


def simulate(cfg: DatasetConfig) -> Simulation:
    observations: list[Observation] = []
    gt = sim.GroundTruth()
    split: dict[Key, str] = {}
    for spec, part in scene_specs(cfg):
        obs, scene_gt = sim.generate_scene(spec)
        observations.extend(obs)
        gt.update(scene_gt)
        split.update((o.key, part) for o in obs)
    features = sim.synth_views(gt, observations, cfg.seed, cfg.synth)
    return Simulation(observations, gt, features, split)


@dataclass
class Dataset:
    sim: Simulation
    manifest: PairManifest
    train_keys: list[Key]
    test_keys: list[Key]

    def arrays(self, keys: Sequence[Key]) -> tuple[np.ndarray, np.ndarray]:
        x = np.array([self.sim.features[k] for k in keys])
        y = np.array([self.sim.gt[k].class_id for k in keys])
        return x, y


def build_dataset(cfg: DatasetConfig = DatasetConfig(), miner_cfg: MinerConfig = MinerConfig()) -> Dataset:
    s = simulate(cfg)
    train_obs = [o for o in s.observations if s.split[o.key] == "train"]
    fp = build_footprints(train_obs, miner_cfg)
    manifest = mine_pairs(fp.accepted, miner_cfg)
    return Dataset(s, manifest, s.keys("train"), s.keys("test"))


def probe_encoder(
    encoder: EncoderStack, data: Dataset, fraction: float, probe_cfg: ProbeConfig, seed: int
) -> Metrics:
    x_tr, y_tr = data.arrays(data.train_keys)
    x_te, y_te = data.arrays(data.test_keys)
    idx = stratified_subset(y_tr, fraction, seed)
    probe = train_probe(encoder.features(x_tr[idx]), y_tr[idx], probe_cfg, n_classes=sim.N_CLASSES)
    pred = probe.predict(encoder.features(x_te))
    return compute_metrics(pred, y_te, n_classes=sim.N_CLASSES)


@dataclass
class CellResult:
    method: str
    regime: str
    fraction: float
    seed: int
    top1: float
    balanced_top1: float
    per_class_recall: dict[int, float]
    confusion: list[list[int]]


def _run_cell(args) -> list[CellResult]:
    data, train_cfg, fractions, probe_cfg = args
    result = train(data.sim.features, data.manifest, train_cfg, keys=data.train_keys)
    out = []
    for frac in fractions:
        m = probe_encoder(result.encoder, data, frac, probe_cfg, train_cfg.seed)
        out.append(
            CellResult(train_cfg.method, train_cfg.positives, frac, train_cfg.seed, m.top1,
                       m.balanced_top1, m.per_class_recall, m.confusion.tolist())
        )
    return out


@dataclass
class EvalReport:
    cells: list[CellResult]

    def mean(self, method: str, regime: str, fraction: float, metric: str = "top1") -> float:
        vals = [getattr(c, metric) for c in self.cells
                if c.method == method and c.regime == regime and c.fraction == fraction]
        if not vals:
            raise KeyError((method, regime, fraction))
        return float(np.mean(vals))

    @property
    def methods(self) -> list[str]:
        return [m for m in METHODS if any(c.method == m for c in self.cells)]

    @property
    def regimes(self) -> list[str]:
        return [r for r in REGIMES if any(c.regime == r for c in self.cells)]

    @property
    def fractions(self) -> list[float]:
        return sorted({c.fraction for c in self.cells})

    @property
    def seeds(self) -> list[int]:
        return sorted({c.seed for c in self.cells})

    def to_json(self) -> str:
        summary = []
        for m in self.methods:
            for r in self.regimes:
                for f in self.fractions:
                    summary.append({
                        "method": m, "regime": r, "fraction": f,
                        "top1": self.mean(m, r, f, "top1"),
                        "balanced_top1": self.mean(m, r, f, "balanced_top1"),
                    })
        cells = [
            {**asdict(c), "per_class_recall": {str(k): v for k, v in c.per_class_recall.items()}}
            for c in self.cells
        ]
        return json.dumps({"seeds": self.seeds, "summary": summary, "cells": cells}, indent=1, sort_keys=True)

    def table(self, metric: str = "top1") -> str:
        title = {"top1": "Top-1 Accuracy", "balanced_top1": "Balanced Top-1 Accuracy"}[metric]
        fr = self.fractions
        head = f"{'Approach':<10} {'Method':<18}" + "".join(f"{_pct(f):>8}" for f in fr)
        lines = [title, head, "-" * len(head)]
        names = {"simclr": "SimCLR", "simsiam": "SimSiam", "triplet": "Triplet"}
        regimes = {"standard": "Standard", "polygon": "Polygon Matching"}
        for m in self.methods:
            for i, r in enumerate(self.regimes):
                row = f"{names[m] if i == 0 else '':<10} {regimes[r]:<18}"
                row += "".join(f"{self.mean(m, r, f, metric):8.1f}" for f in fr)
                lines.append(row)
        return "\n".join(lines)


def _pct(f: float) -> str:
    return f"{100 * f:g}%"


def run_grid(
    data: Dataset,
    methods: Iterable[str] = METHODS,
    regimes: Iterable[str] = REGIMES,
    fractions: Sequence[float] = (0.01, 0.10, 1.00),
    seeds: Iterable[int] = range(5),
    base: TrainConfig = TrainConfig(),
    probe_cfg: ProbeConfig = ProbeConfig(),
    threads: int = 1,
) -> EvalReport:
    """Train every (method, regime, seed) and probe it at each label fraction."""
    jobs = [
        (data, replace(base, method=m, positives=r, seed=s), tuple(fractions), probe_cfg)
        for m in methods for r in regimes for s in seeds
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    return EvalReport([c for cells in results for c in cells])
