"""Positive-pair mining from overlapping floor footprints.

Observations are projected onto the floor, grouped per (agent, episode), and
every pair of footprints in a group whose overlap clears the configured
thresholds becomes a pair of candidate positives.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import geometry as geo
from .polygon import EPS_AREA, FloorPolygon, intersect

log = logging.getLogger(__name__)

Key = tuple[str, str]  # (image_id, box_id)


class UnknownQuery(KeyError):
    pass


@dataclass(frozen=True)
class Observation:
    """One detected box together with the pose and camera it was seen from."""

    agent_id: str
    episode_id: str
    image_id: str
    box_id: str
    bbox: tuple[float, float, float, float]
    pose: geo.RobotPose
    intrinsics: geo.CameraIntrinsics
    extrinsics: geo.CameraExtrinsics
    timestamp: float = 0.0
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        for name in ("agent_id", "episode_id", "image_id", "box_id"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        bbox = tuple(float(c) for c in self.bbox)
        if len(bbox) != 4:
            raise ValueError("bbox must have 4 coordinates")
        xmin, ymin, xmax, ymax = bbox
        width, height = self.image_size
        if not (0 <= xmin < xmax <= width and 0 <= ymin < ymax <= height):
            raise ValueError(f"bbox {bbox} not inside image {width}x{height}")
        object.__setattr__(self, "bbox", bbox)

    @property
    def key(self) -> Key:
        return (self.image_id, self.box_id)

    @property
    def group(self) -> tuple[str, str]:
        return (self.agent_id, self.episode_id)


class Source(NamedTuple):
    agent_id: str
    episode_id: str
    image_id: str
    box_id: str

    @property
    def key(self) -> Key:
        return (self.image_id, self.box_id)


@dataclass(frozen=True)
class MinerConfig:
    max_depth: float = 0.7
    min_overlap_area: float = EPS_AREA
    min_iou: float = 0.0  # 0 disables IoU gating
    grid_cell: float = 0.25

    def __post_init__(self):
        if not self.max_depth > 0:
            raise ValueError(f"max_depth must be positive, got {self.max_depth}")
        if not 0.0 <= self.min_iou <= 1.0:
            raise ValueError(f"min_iou must be in [0, 1], got {self.min_iou}")
        if not self.min_overlap_area >= 0:
            raise ValueError("min_overlap_area must be non-negative")
        if not self.grid_cell > 0:
            raise ValueError("grid_cell must be positive")


class Rejection(NamedTuple):
    key: Key
    reason: str
    detail: str = ""


class Footprints(NamedTuple):
    accepted: list[FloorPolygon]
    rejected: list[Rejection]


def build_footprints(observations: Iterable[Observation], cfg: MinerConfig) -> Footprints:
    """Project every observation's box; failures go to the rejection log."""
    accepted: list[FloorPolygon] = []
    rejected: list[Rejection] = []
    homographies: dict = {}
    for obs in observations:
        cache_key = (
            obs.image_id, obs.pose, obs.intrinsics,
            obs.extrinsics.rotation.tobytes(), obs.extrinsics.translation.tobytes(),
        )
        h = homographies.get(cache_key)
        try:
            if h is None:
                P = geo.build_projection_matrix(obs.intrinsics, obs.extrinsics, obs.pose)
                h = homographies[cache_key] = geo.floor_homography(P)
            src = Source(obs.agent_id, obs.episode_id, obs.image_id, obs.box_id)
            res = geo.project_bbox_footprint(
                h, obs.bbox, obs.pose, max_depth=cfg.max_depth, image_size=obs.image_size, source=src
            )
        except geo.DegenerateHomography as exc:
            rejected.append(Rejection(obs.key, geo.ABOVE_HORIZON, str(exc)))
            continue
        except geo.DegenerateFootprint as exc:
            rejected.append(Rejection(obs.key, geo.DEGENERATE, str(exc)))
            continue
        if isinstance(res, geo.Rejected):
            rejected.append(Rejection(obs.key, res.reason, res.detail))
        else:
            accepted.append(res)
    return Footprints(accepted, rejected)


class GridIndex:
    """Uniform grid over axis-aligned bounding boxes.

    Every item is registered in each cell its box touches, so a query returns
    a superset of the items whose boxes overlap the query box.
    """

    def __init__(self, cell: float):
        if not cell > 0:
            raise ValueError("cell size must be positive")
        self.cell = cell
        self.cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        self.boxes: list[tuple[float, float, float, float]] = []
        self.frozen = False

    def _span(self, box):
        c = self.cell
        return (
            range(math.floor(box[0] / c), math.floor(box[2] / c) + 1),
            range(math.floor(box[1] / c), math.floor(box[3] / c) + 1),
        )

    def insert(self, box) -> int:
        if self.frozen:
            raise RuntimeError("index is frozen")
        idx = len(self.boxes)
        self.boxes.append(tuple(box))
        xs, ys = self._span(box)
        for i in xs:
            for j in ys:
                self.cells[(i, j)].append(idx)
        return idx

    def freeze(self) -> "GridIndex":
        self.frozen = True
        self.cells = dict(self.cells)
        return self

    def query(self, box) -> list[int]:
        """Ids of stored boxes overlapping ``box`` (closed intervals), sorted."""
        found = set()
        xs, ys = self._span(box)
        for i in xs:
            for j in ys:
                found.update(self.cells.get((i, j), ()))
        x0, y0, x1, y1 = box
        return sorted(
            k for k in found
            if not (self.boxes[k][0] > x1 or x0 > self.boxes[k][2]
                    or self.boxes[k][1] > y1 or y0 > self.boxes[k][3])
        )


class Candidate(NamedTuple):
    image_id: str
    box_id: str
    overlap_m2: float
    iou: float

    @property
    def key(self) -> Key:
        return (self.image_id, self.box_id)


def _order(c: Candidate):
    return (-c.overlap_m2, c.image_id, c.box_id)


class PairManifest:
    """Per-box lists of candidate positives, largest overlap first.

    Every accepted footprint has an entry, possibly empty.
    """

    def __init__(self, entries: Optional[dict[Key, list[Candidate]]] = None):
        self.entries: dict[Key, list[Candidate]] = {}
        for key, cands in (entries or {}).items():
            self.entries[tuple(key)] = sorted(cands, key=_order)

    def __contains__(self, key) -> bool:
        return tuple(key) in self.entries

    def __getitem__(self, key) -> list[Candidate]:
        try:
            return self.entries[tuple(key)]
        except KeyError:
            raise UnknownQuery(key) from None

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, PairManifest) and self.entries == other.entries

    def keys(self) -> list[Key]:
        return sorted(self.entries)

    def pairs(self) -> dict[tuple[Key, Key], float]:
        """Unordered pairs (as sorted key tuples) mapped to their overlap area."""
        out = {}
        for key, cands in self.entries.items():
            for c in cands:
                pair = tuple(sorted((key, c.key)))
                out[pair] = c.overlap_m2
        return out

    @property
    def n_pairs(self) -> int:
        return sum(len(c) for c in self.entries.values()) // 2

    def to_records(self) -> list[dict]:
        return [
            {
                "image_id": key[0],
                "box_id": key[1],
                "candidates": [
                    {"image_id": c.image_id, "box_id": c.box_id, "overlap_m2": c.overlap_m2, "iou": c.iou}
                    for c in self.entries[key]
                ],
            }
            for key in self.keys()
        ]

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "PairManifest":
        entries = {}
        for rec in records:
            key = (str(rec["image_id"]), str(rec["box_id"]))
            if key in entries:
                raise ValueError(f"duplicate manifest entry {key}")
            entries[key] = [
                Candidate(str(c["image_id"]), str(c["box_id"]), float(c["overlap_m2"]), float(c["iou"]))
                for c in rec["candidates"]
            ]
        return cls(entries)

    def image_level(self) -> dict[str, list[str]]:
        """Aggregate box-level matches to overlapping image ids per image."""
        out: dict[str, set] = defaultdict(set)
        for (image_id, _), cands in self.entries.items():
            out[image_id].update(c.image_id for c in cands if c.image_id != image_id)
        return {k: sorted(v) for k, v in sorted(out.items())}


def _accepts(overlap: float, iou_val: float, cfg: MinerConfig) -> bool:
    if not overlap > 0.0 or overlap < cfg.min_overlap_area:
        return False
    return cfg.min_iou <= 0.0 or iou_val >= cfg.min_iou


def _pair_stats(a: FloorPolygon, b: FloorPolygon) -> tuple[float, float]:
    inter = intersect(a, b)
    if inter is None:
        return 0.0, 0.0
    ov = inter.area
    return ov, min(1.0, ov / (a.area + b.area - ov))


def _mine_group(polys: Sequence[FloorPolygon], cfg: MinerConfig) -> list[tuple[int, int, float, float]]:
    index = GridIndex(cfg.grid_cell)
    for p in polys:
        index.insert(p.aabb)
    index.freeze()
    found = []
    for i, p in enumerate(polys):
        for j in index.query(p.aabb):
            if j <= i:
                continue
            ov, iou_val = _pair_stats(p, polys[j])
            if _accepts(ov, iou_val, cfg):
                found.append((i, j, ov, iou_val))
    return found


def _source_key(poly: FloorPolygon) -> Key:
    return (poly.source.image_id, poly.source.box_id)


def group_footprints(footprints: Iterable[FloorPolygon]) -> dict[tuple[str, str], list[FloorPolygon]]:
    groups: dict = defaultdict(list)
    for p in footprints:
        groups[(p.source.agent_id, p.source.episode_id)].append(p)
    return {g: sorted(ps, key=_source_key) for g, ps in sorted(groups.items())}


def mine_pairs(footprints: Iterable[FloorPolygon], cfg: MinerConfig, threads: int = 1) -> PairManifest:
    """Match overlapping footprints within each (agent, episode) group."""
    groups = group_footprints(footprints)
    entries: dict[Key, list[Candidate]] = {}
    for polys in groups.values():
        for p in polys:
            key = _source_key(p)
            if key in entries:
                raise ValueError(f"duplicate footprint key {key}")
            entries[key] = []

    work = list(groups.values())
    if threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ps: _mine_group(ps, cfg), work))
    else:
        results = [_mine_group(ps, cfg) for ps in work]

    for polys, found in zip(work, results):
        for i, j, ov, iou_val in found:
            ki, kj = _source_key(polys[i]), _source_key(polys[j])
            entries[ki].append(Candidate(kj[0], kj[1], ov, iou_val))
            entries[kj].append(Candidate(ki[0], ki[1], ov, iou_val))
    manifest = PairManifest(entries)
    log.debug("mined %d pairs over %d footprints", manifest.n_pairs, len(manifest))
    return manifest


def sample_positive(
    manifest: PairManifest, query, rng: Union[int, np.random.Generator, None] = None
) -> Optional[Key]:
    """Uniformly random candidate key for ``query``; ``None`` if it has none."""
    cands = manifest[query]
    if not cands:
        return None
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return cands[int(rng.integers(len(cands)))].key
