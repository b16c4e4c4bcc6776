"""On-disk formats: observation / ground-truth / manifest JSONL, feature tensor,
checkpoints and loss curves.

Feature file layout (little-endian)::

    magic   8 bytes   b"PMFEAT01"
    n       uint32    number of records
    dim     uint32    feature dimension
    then n records of
        klen    uint16            byte length of the key
        key     klen bytes        utf-8 "image_id" + "\\x1f" + "box_id"
        values  dim x float64
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import geometry as geo
from .miner import Key, Observation, PairManifest, Rejection
from .simulator import GroundTruth, Label
from .ssl import EncoderStack, TrainConfig, TrainResult

PathLike = Union[str, Path]

FEATURE_MAGIC = b"PMFEAT01"
KEY_SEP = "\x1f"
CHECKPOINT_FORMAT = "polymatch-checkpoint"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = f"{path or '<input>'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _read_jsonl(path: PathLike):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", n, str(path)) from None


def _write_lines(path: PathLike, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


# --- observations -----------------------------------------------------------

OBS_FIELDS = ("agent_id", "episode_id", "image_id", "box_id", "timestamp_s", "bbox", "pose", "camera")
POSE_FIELDS = ("x_m", "y_m", "heading_rad")
CAMERA_FIELDS = ("fx", "fy", "cx", "cy", "skew", "mount_R", "mount_t", "height_m")
CAMERA_OPTIONAL = ("width_px", "height_px")


def observation_to_record(obs: Observation) -> dict:
    return {
        "agent_id": obs.agent_id,
        "episode_id": obs.episode_id,
        "image_id": obs.image_id,
        "box_id": obs.box_id,
        "timestamp_s": obs.timestamp,
        "bbox": list(obs.bbox),
        "pose": {"x_m": obs.pose.x, "y_m": obs.pose.y, "heading_rad": obs.pose.heading},
        "camera": {
            "fx": obs.intrinsics.fx,
            "fy": obs.intrinsics.fy,
            "cx": obs.intrinsics.cx,
            "cy": obs.intrinsics.cy,
            "skew": obs.intrinsics.skew,
            "mount_R": [float(v) for v in obs.extrinsics.rotation.reshape(-1)],
            "mount_t": [float(v) for v in obs.extrinsics.translation],
            "height_m": obs.pose.height,
            "width_px": obs.image_size[0],
            "height_px": obs.image_size[1],
        },
    }


def _num(rec: Mapping, name: str) -> float:
    v = rec[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{name} must be a number")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite")
    return v


def _nums(rec: Mapping, name: str, n: int) -> list[float]:
    v = rec[name]
    if not isinstance(v, list) or len(v) != n:
        raise ValueError(f"{name} must be a list of {n} numbers")
    return [_num({name: x}, name) for x in v]


def _check_keys(rec, required, optional=(), what="record"):
    if not isinstance(rec, dict):
        raise ValueError(f"{what} must be an object")
    missing = [k for k in required if k not in rec]
    if missing:
        raise ValueError(f"{what} missing {', '.join(missing)}")
    extra = sorted(set(rec) - set(required) - set(optional))
    if extra:
        raise ValueError(f"{what} has unknown keys {', '.join(extra)}")


def _str_id(rec, name) -> str:
    v = rec[name]
    if not isinstance(v, str) or not v:
        raise ValueError(f"{name} must be a non-empty string")
    return v


def record_to_observation(rec: dict) -> Observation:
    _check_keys(rec, OBS_FIELDS, what="observation")
    _check_keys(rec["pose"], POSE_FIELDS, what="pose")
    _check_keys(rec["camera"], CAMERA_FIELDS, CAMERA_OPTIONAL, what="camera")
    cam = rec["camera"]
    height = _num(cam, "height_m")
    if not height > 0:
        raise ValueError("camera height_m must be positive")
    width_px = int(_num(cam, "width_px")) if "width_px" in cam else 640
    height_px = int(_num(cam, "height_px")) if "height_px" in cam else 480
    pose = geo.RobotPose(_num(rec["pose"], "x_m"), _num(rec["pose"], "y_m"), _num(rec["pose"], "heading_rad"), height)
    intr = geo.CameraIntrinsics(_num(cam, "fx"), _num(cam, "fy"), _num(cam, "cx"), _num(cam, "cy"), _num(cam, "skew"))
    extr = geo.CameraExtrinsics(np.array(_nums(cam, "mount_R", 9)).reshape(3, 3), _nums(cam, "mount_t", 3))
    return Observation(
        agent_id=_str_id(rec, "agent_id"),
        episode_id=_str_id(rec, "episode_id"),
        image_id=_str_id(rec, "image_id"),
        box_id=_str_id(rec, "box_id"),
        bbox=tuple(_nums(rec, "bbox", 4)),
        pose=pose,
        intrinsics=intr,
        extrinsics=extr,
        timestamp=_num(rec, "timestamp_s"),
        image_size=(width_px, height_px),
    )


def write_observations(path: PathLike, observations: Iterable[Observation]) -> None:
    _write_lines(path, (_dumps(observation_to_record(o)) for o in observations))


def read_observations(path: PathLike) -> list[Observation]:
    """Parse and validate an observations file; errors carry the line number."""
    out: list[Observation] = []
    seen: set = set()
    for n, rec in _read_jsonl(path):
        try:
            obs = record_to_observation(rec)
        except (ValueError, TypeError, KeyError) as exc:
            raise FormatError(str(exc), n, str(path)) from None
        if obs.key in seen:
            raise FormatError(f"duplicate (image_id, box_id) {obs.key}", n, str(path))
        seen.add(obs.key)
        out.append(obs)
    return out


# --- ground truth -------------------------------------------------------------

def write_groundtruth(path: PathLike, gt: GroundTruth, keys: Sequence[Key],
                      split: Optional[Mapping[Key, str]] = None) -> None:
    def rec(k):
        lab = gt[k]
        r = {"image_id": k[0], "box_id": k[1], "instance_id": lab.instance_id, "class_id": lab.class_id,
             "x_m": lab.x, "y_m": lab.y}
        if split is not None:
            r["split"] = split[k]
        return _dumps(r)

    _write_lines(path, (rec(k) for k in keys))


def read_groundtruth(path: PathLike) -> tuple[GroundTruth, dict[Key, str]]:
    gt = GroundTruth()
    split: dict[Key, str] = {}
    for n, rec in _read_jsonl(path):
        try:
            _check_keys(rec, ("image_id", "box_id", "instance_id", "class_id", "x_m", "y_m"), ("split",))
            key = (_str_id(rec, "image_id"), _str_id(rec, "box_id"))
            if key in gt:
                raise ValueError(f"duplicate key {key}")
            gt.labels[key] = Label(int(rec["instance_id"]), int(rec["class_id"]), _num(rec, "x_m"), _num(rec, "y_m"))
            split[key] = str(rec.get("split", "train"))
        except (ValueError, TypeError) as exc:
            raise FormatError(str(exc), n, str(path)) from None
    return gt, split


# --- features -------------------------------------------------------------------

def write_features(path: PathLike, features: Mapping[Key, np.ndarray], keys: Sequence[Key]) -> None:
    dim = len(features[keys[0]]) if keys else 0
    buf = io.BytesIO()
    buf.write(struct.pack("<8sII", FEATURE_MAGIC, len(keys), dim))
    for k in keys:
        kb = (k[0] + KEY_SEP + k[1]).encode("utf-8")
        vals = np.asarray(features[k], dtype="<f8")
        if vals.shape != (dim,):
            raise ValueError(f"feature {k} has shape {vals.shape}, expected ({dim},)")
        buf.write(struct.pack("<H", len(kb)))
        buf.write(kb)
        buf.write(vals.tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_features(path: PathLike) -> dict[Key, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != FEATURE_MAGIC:
        raise FormatError("not a feature file (bad magic)", path=str(path))
    n, dim = struct.unpack_from("<II", data, 8)
    off = 16
    out: dict[Key, np.ndarray] = {}
    try:
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", data, off)
            off += 2
            image_id, box_id = data[off:off + klen].decode("utf-8").split(KEY_SEP)
            off += klen
            vals = np.frombuffer(data, dtype="<f8", count=dim, offset=off).astype(float)
            off += 8 * dim
            out[(image_id, box_id)] = vals
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated or corrupt feature file ({exc})", path=str(path)) from None
    if off != len(data):
        raise FormatError("trailing bytes in feature file", path=str(path))
    return out


# --- manifest and rejections -------------------------------------------------

def write_manifest(path: PathLike, manifest: PairManifest) -> None:
    _write_lines(path, (_dumps(r) for r in manifest.to_records()))


def read_manifest(path: PathLike) -> PairManifest:
    records = []
    for n, rec in _read_jsonl(path):
        try:
            _check_keys(rec, ("image_id", "box_id", "candidates"))
            for c in rec["candidates"]:
                _check_keys(c, ("image_id", "box_id", "overlap_m2", "iou"), what="candidate")
        except ValueError as exc:
            raise FormatError(str(exc), n, str(path)) from None
        records.append(rec)
    try:
        return PairManifest.from_records(records)
    except (ValueError, TypeError) as exc:
        raise FormatError(str(exc), path=str(path)) from None


def write_rejections(path: PathLike, rejections: Iterable[Rejection]) -> None:
    _write_lines(
        path,
        (_dumps({"image_id": r.key[0], "box_id": r.key[1], "reason": r.reason, "detail": r.detail})
         for r in rejections),
    )


# --- checkpoints and loss curves ----------------------------------------------

def write_checkpoint(path: PathLike, result: TrainResult) -> None:
    enc = result.encoder
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": result.config.to_dict(),
        "seed": result.config.seed,
        "input_dim": enc.input_dim,
        "params": {k: v.tolist() for k, v in sorted(enc.state().items())},
        "losses": result.losses,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def read_checkpoint(path: PathLike) -> TrainResult:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError("unsupported checkpoint format", path=str(path))
    cfg = TrainConfig.from_dict(doc["config"])
    enc = EncoderStack(int(doc["input_dim"]), cfg, np.random.default_rng(0))
    enc.load({k: np.asarray(v) for k, v in doc["params"].items()})
    return TrainResult(enc, list(doc["losses"]), cfg)


def write_loss_csv(path: PathLike, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(losses):
            w.writerow([epoch, repr(float(loss))])
