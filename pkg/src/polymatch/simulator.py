"""Synthetic rooms, robot trajectories and detections with ground truth.

Objects are upright cylinders standing on the floor. A detection is the
pixel-space bounding box of an object's silhouette, emitted whenever the whole
silhouette lands inside the image. Views carry no pixels: each detection gets
a feature vector synthesised from a per-instance latent that is rotated by the
viewing angle, so that different perspectives of one object look different.

Scene-scale defaults (rooms 4-8 m, object radii 0.05-0.3 m, heights below the
camera) are assumptions; nothing in the use case pins them down.
"""

from __future__ import annotations

import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import geometry as geo
from .miner import Key, Observation, PairManifest

N_CLASSES = 12


class EmptyScene(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraSpec:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    pitch: float = math.radians(30.0)  # tilt below the horizontal
    mount_height: float = 0.25
    forward_offset: float = 0.15  # optical centre ahead of the robot centre

    @property
    def intrinsics(self) -> geo.CameraIntrinsics:
        return geo.CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    @property
    def extrinsics(self) -> geo.CameraExtrinsics:
        return geo.CameraExtrinsics.forward_looking(self.pitch, (self.forward_offset, 0.0, 0.0))


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    instance_id: int
    x: float
    y: float
    radius: float
    height: float


@dataclass(frozen=True)
class SceneSpec:
    room: tuple[float, float]
    objects: tuple[SceneObject, ...]
    trajectory: tuple[geo.RobotPose, ...]
    camera: CameraSpec = field(default_factory=CameraSpec)
    seed: int = 0
    agent_id: str = "agent0"
    episode_id: str = "ep0"
    frame_rate: float = 10.0
    capture_every: int = 1
    pose_jitter: float = 0.0  # std of additive noise on reported x, y (m)
    heading_jitter: float = 0.0  # std of additive noise on reported heading (rad)
    min_box_px: float = 4.0
    max_range: float = 1.5  # detector range, horizontal distance from the camera
    silhouette_samples: int = 32

    def __post_init__(self):
        w, h = self.room
        for o in self.objects:
            if not (0 <= o.class_id < N_CLASSES):
                raise ValueError(f"class_id {o.class_id} outside 0..{N_CLASSES - 1}")
            if not (o.radius <= o.x <= w - o.radius and o.radius <= o.y <= h - o.radius):
                raise ValueError(f"object {o.instance_id} not inside the room")
            if not (0 < o.height < self.camera.mount_height):
                raise ValueError(f"object {o.instance_id} must be shorter than the camera height")
        for p in self.trajectory:
            if not (0 <= p.x <= w and 0 <= p.y <= h):
                raise ValueError(f"pose ({p.x}, {p.y}) outside the room")
        if self.capture_every < 1:
            raise ValueError("capture_every must be >= 1")


class Label(NamedTuple):
    instance_id: int
    class_id: int
    x: float  # object floor position
    y: float


@dataclass
class GroundTruth:
    labels: dict[Key, Label] = field(default_factory=dict)

    def __getitem__(self, key) -> Label:
        return self.labels[tuple(key)]

    def __contains__(self, key) -> bool:
        return tuple(key) in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    def update(self, other: "GroundTruth") -> None:
        dup = self.labels.keys() & other.labels.keys()
        if dup:
            raise ValueError(f"duplicate ground-truth keys, e.g. {next(iter(dup))}")
        self.labels.update(other.labels)

    def class_counts(self) -> dict[int, int]:
        counts = Counter(lab.class_id for lab in self.labels.values())
        return {c: counts.get(c, 0) for c in range(N_CLASSES)}


def _silhouette_points(obj: SceneObject, n: int) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    ring = np.stack([obj.x + obj.radius * np.cos(t), obj.y + obj.radius * np.sin(t)], axis=1)
    bottom = np.hstack([ring, np.zeros((n, 1))])
    top = np.hstack([ring, np.full((n, 1), obj.height)])
    return np.vstack([bottom, top])


def render_bbox(
    obj: SceneObject, camera: CameraSpec, pose: geo.RobotPose, samples: int = 32
) -> Optional[tuple[float, float, float, float]]:
    """Pixel AABB of the object's silhouette, or None if not fully in view."""
    pts = _silhouette_points(obj, samples)
    r_wc, t_wc = geo.world_to_camera(camera.extrinsics, pose)
    cam = pts @ r_wc.T + t_wc
    if np.any(cam[:, 2] <= 1e-3):
        return None
    pix = cam @ camera.intrinsics.matrix.T
    uv = pix[:, :2] / pix[:, 2:3]
    xmin, ymin = uv.min(axis=0)
    xmax, ymax = uv.max(axis=0)
    if xmin < 0 or ymin < 0 or xmax > camera.width or ymax > camera.height:
        return None
    return (float(xmin), float(ymin), float(xmax), float(ymax))


def generate_scene(spec: SceneSpec) -> tuple[list[Observation], GroundTruth]:
    """Render every pose of the trajectory into detections.

    Raises:
        EmptyScene: no object was ever fully in view.
    """
    rng = np.random.default_rng([spec.seed, 0x5CE4E])
    cam = spec.camera
    intr, extr = cam.intrinsics, cam.extrinsics
    observations: list[Observation] = []
    gt = GroundTruth()
    objects = sorted(spec.objects, key=lambda o: o.instance_id)
    for t in range(0, len(spec.trajectory), spec.capture_every):
        true_pose = geo.RobotPose(
            spec.trajectory[t].x, spec.trajectory[t].y, spec.trajectory[t].heading, cam.mount_height
        )
        reported = true_pose
        if spec.pose_jitter > 0 or spec.heading_jitter > 0:
            dx, dy, dh = rng.normal(0.0, 1.0, 3) * (spec.pose_jitter, spec.pose_jitter, spec.heading_jitter)
            reported = geo.RobotPose(
                true_pose.x + dx, true_pose.y + dy, true_pose.heading + dh, true_pose.height
            )
        centre = geo.camera_center(extr, true_pose)
        image_id = f"{spec.agent_id}-{spec.episode_id}-{t:05d}"
        n_box = 0
        for obj in objects:
            if math.hypot(obj.x - centre[0], obj.y - centre[1]) > spec.max_range:
                continue
            bbox = render_bbox(obj, cam, true_pose, spec.silhouette_samples)
            if bbox is None:
                continue
            if bbox[2] - bbox[0] < spec.min_box_px or bbox[3] - bbox[1] < spec.min_box_px:
                continue
            obs = Observation(
                agent_id=spec.agent_id,
                episode_id=spec.episode_id,
                image_id=image_id,
                box_id=f"b{n_box}",
                bbox=bbox,
                pose=reported,
                intrinsics=intr,
                extrinsics=extr,
                timestamp=round(t / spec.frame_rate, 6),
                image_size=(cam.width, cam.height),
            )
            n_box += 1
            observations.append(obs)
            gt.labels[obs.key] = Label(obj.instance_id, obj.class_id, obj.x, obj.y)
    if not observations:
        raise EmptyScene(f"scene {spec.agent_id}/{spec.episode_id} produced no detections")
    return observations, gt


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for :func:`random_scene`. Sizes in meters, speeds in m/s."""

    room_range: tuple[float, float] = (4.0, 8.0)
    n_objects: tuple[int, int] = (8, 12)
    radius_range: tuple[float, float] = (0.05, 0.3)
    height_range: tuple[float, float] = (0.02, 0.12)
    class_decay: float = 0.8  # class k drawn with probability proportional to decay**k
    min_gap: float = 0.5  # free space between neighbouring objects
    passes: tuple[int, int] = (2, 4)  # drive-bys per object
    approach: float = 1.2  # length of each drive-by
    lateral: float = 0.2  # max sideways offset of a drive-by from the object centre
    speed: float = 0.25
    turn_rate: float = math.radians(90.0)
    frame_rate: float = 10.0
    capture_every: int = 3
    pose_jitter: float = 0.0
    heading_jitter: float = 0.0
    camera: CameraSpec = field(default_factory=CameraSpec)


def class_probabilities(decay: float, n: int = N_CLASSES) -> np.ndarray:
    w = decay ** np.arange(n)
    return w / w.sum()


def _place_objects(rng, cfg: SceneConfig, room, n, separation, instance_offset, required=()) -> list[SceneObject]:
    probs = class_probabilities(cfg.class_decay)
    required = list(required)
    objs: list[SceneObject] = []
    tries = 0
    while len(objs) < n:
        tries += 1
        if tries > 20000:
            raise RuntimeError("could not place objects; room too small for the requested spacing")
        r = float(rng.uniform(*cfg.radius_range))
        margin = r + 0.3
        x = float(rng.uniform(margin, room[0] - margin))
        y = float(rng.uniform(margin, room[1] - margin))
        ok = all(
            math.hypot(x - o.x, y - o.y) >= (separation if separation else r + o.radius + cfg.min_gap)
            for o in objs
        )
        if not ok:
            continue
        cls = required[len(objs)] if len(objs) < len(required) else int(rng.choice(N_CLASSES, p=probs))
        objs.append(
            SceneObject(
                class_id=cls,
                instance_id=instance_offset + len(objs),
                x=x,
                y=y,
                radius=r,
                height=float(rng.uniform(*cfg.height_range)),
            )
        )
    return objs


def _segment(a, b, speed, frame_rate) -> list[tuple[float, float, float]]:
    dx, dy = b[0] - a[0], b[1] - a[1]
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        return []
    heading = math.atan2(dy, dx)
    n = max(1, int(math.ceil(dist / (speed / frame_rate))))
    return [(a[0] + dx * k / n, a[1] + dy * k / n, heading) for k in range(1, n + 1)]


def _turn(x, y, h0, h1, turn_rate, frame_rate) -> list[tuple[float, float, float]]:
    delta = geo.normalize_angle(h1 - h0)
    n = int(math.ceil(abs(delta) / (turn_rate / frame_rate)))
    return [(x, y, h0 + delta * k / n) for k in range(1, n + 1)]


def drive_by_trajectory(rng, objects: Sequence[SceneObject], room, cfg: SceneConfig) -> list[geo.RobotPose]:
    """Straight drive-bys towards each object from random directions, joined by transits."""
    margin = 0.2

    def clamp(p):
        return (min(max(p[0], margin), room[0] - margin), min(max(p[1], margin), room[1] - margin))

    legs = []
    for obj in objects:
        for _ in range(int(rng.integers(cfg.passes[0], cfg.passes[1] + 1))):
            psi = float(rng.uniform(-math.pi, math.pi))
            lat = float(rng.uniform(-cfg.lateral, cfg.lateral))
            d = (math.cos(psi), math.sin(psi))
            n = (-d[1], d[0])
            stop = obj.radius + 0.3
            start = clamp((obj.x - cfg.approach * d[0] + lat * n[0], obj.y - cfg.approach * d[1] + lat * n[1]))
            end = clamp((obj.x - stop * d[0] + lat * n[0], obj.y - stop * d[1] + lat * n[1]))
            legs.append((start, end))
    order = rng.permutation(len(legs))

    poses: list[tuple[float, float, float]] = []
    pos = clamp((room[0] / 2.0, room[1] / 2.0))
    heading = 0.0
    poses.append((pos[0], pos[1], heading))
    for k in order:
        start, end = legs[k]
        for seg_end in (start, end):
            seg = _segment(pos, seg_end, cfg.speed, cfg.frame_rate)
            if seg:
                poses.extend(_turn(pos[0], pos[1], heading, seg[0][2], cfg.turn_rate, cfg.frame_rate))
                poses.extend(seg)
                heading = seg[-1][2]
            pos = seg_end
    return [geo.RobotPose(x, y, h) for x, y, h in poses]


def random_scene(
    seed: int,
    cfg: SceneConfig = SceneConfig(),
    agent_id: str = "agent0",
    episode_id: str = "ep0",
    instance_offset: int = 0,
    n_objects: Optional[int] = None,
    separation: Optional[float] = None,
    room: Optional[tuple[float, float]] = None,
    required_classes: Sequence[int] = (),
) -> SceneSpec:
    """Sample a room, its objects and a drive-by trajectory.

    ``separation`` forces a minimum centre-to-centre distance between objects.
    ``required_classes`` fixes the classes of the first objects; the rest are
    drawn from the imbalanced class distribution.
    """
    rng = np.random.default_rng([seed, 0x0B7EC7])
    if room is None:
        room = (float(rng.uniform(*cfg.room_range)), float(rng.uniform(*cfg.room_range)))
    if n_objects is None:
        n_objects = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    n_objects = max(n_objects, len(required_classes))
    objs = _place_objects(rng, cfg, room, n_objects, separation, instance_offset, required_classes)
    traj = drive_by_trajectory(rng, objs, room, cfg)
    return SceneSpec(
        room=room,
        objects=tuple(objs),
        trajectory=tuple(traj),
        camera=cfg.camera,
        seed=seed,
        agent_id=agent_id,
        episode_id=episode_id,
        frame_rate=cfg.frame_rate,
        capture_every=cfg.capture_every,
        pose_jitter=cfg.pose_jitter,
        heading_jitter=cfg.heading_jitter,
    )


def abutting_scene(
    seed: int = 0,
    cfg: SceneConfig = SceneConfig(),
    n_objects: int = 4,
    radius: float = 0.1,
    gap: float = 0.2,
    agent_id: str = "abut0",
    episode_id: str = "ep0",
    instance_offset: int = 0,
) -> SceneSpec:
    """Adversarial scene: a row of equal cylinders touching (or ``gap`` apart).

    Footprints of neighbouring objects overlap readily here, so the mined
    manifest contains cross-instance pairs whose share grows with depth.
    """
    rng = np.random.default_rng([seed, 0xAB077])
    room = (4.0, 4.0)
    pitch = 2.0 * radius + gap
    x0 = room[0] / 2.0 - pitch * (n_objects - 1) / 2.0
    objs = tuple(
        SceneObject(class_id=k % N_CLASSES, instance_id=instance_offset + k, x=x0 + k * pitch,
                    y=room[1] / 2.0, radius=radius, height=float(rng.uniform(*cfg.height_range)))
        for k in range(n_objects)
    )
    # head-on approaches from both sides of the row, perpendicular to it
    poses: list[tuple[float, float, float]] = []
    for o in objs:
        for y0, y1 in ((0.3, o.y - o.radius - 0.3), (room[1] - 0.3, o.y + o.radius + 0.3)):
            seg = _segment((o.x, y0), (o.x, y1), cfg.speed, cfg.frame_rate)
            poses.append((o.x, y0, seg[0][2]))
            poses.extend(seg)
    traj = [geo.RobotPose(x, y, h) for x, y, h in poses]
    return SceneSpec(
        room=room, objects=objs, trajectory=tuple(traj), camera=cfg.camera, seed=seed,
        agent_id=agent_id, episode_id=episode_id, frame_rate=cfg.frame_rate,
        capture_every=cfg.capture_every, pose_jitter=cfg.pose_jitter, heading_jitter=cfg.heading_jitter,
    )


@dataclass(frozen=True)
class FeatureSynth:
    """Feature model standing in for image crops.

    A view of an instance is ``latent + Q (R(a) - I) Q^T latent + noise`` where
    ``R(a)`` rotates ``n_rotating`` coordinate planes by ``a`` times the angle
    between the viewing direction and the instance's canonical orientation.
    ``class_seed`` fixes the class prototypes and basis shared by all scenes.
    """

    dim: int = 16
    n_rotating: int = 8
    class_seed: int = 0
    class_scale: float = 1.0
    instance_scale: float = 0.5
    noise: float = 0.1

    def __post_init__(self):
        if self.dim % 2 or not (0 <= self.n_rotating <= self.dim // 2):
            raise ValueError("dim must be even and n_rotating <= dim / 2")

    def world(self) -> tuple[np.ndarray, np.ndarray]:
        """Class prototypes (N_CLASSES x dim) and the rotation basis Q."""
        rng = np.random.default_rng([self.class_seed, 0xC1A55])
        protos = rng.normal(0.0, self.class_scale, (N_CLASSES, self.dim))
        q, _ = np.linalg.qr(rng.normal(size=(self.dim, self.dim)))
        return protos, q

    def instance(self, label: Label, seed: int) -> tuple[np.ndarray, float]:
        """Latent vector and canonical orientation of one instance."""
        protos, _ = self.world()
        rng = np.random.default_rng([seed, 0x1257, label.instance_id])
        latent = protos[label.class_id] + rng.normal(0.0, self.instance_scale, self.dim)
        return latent, float(rng.uniform(-math.pi, math.pi))

    def perturbation(self, latent: np.ndarray, angle: float, q: np.ndarray) -> np.ndarray:
        """Deterministic view-dependent offset; exactly zero at ``angle == 0``."""
        c = q.T @ latent
        rot = c.copy()
        ca, sa = math.cos(angle), math.sin(angle)
        for j in range(self.n_rotating):
            a, b = c[2 * j], c[2 * j + 1]
            rot[2 * j] = ca * a - sa * b
            rot[2 * j + 1] = sa * a + ca * b
        return q @ (rot - c)


def viewing_angle(obs: Observation, label: Label) -> float:
    """World bearing from the object to the camera."""
    centre = geo.camera_center(obs.extrinsics, obs.pose)
    return math.atan2(centre[1] - label.y, centre[0] - label.x)


def _key_seed(key: Key) -> list[int]:
    return [zlib.crc32(key[0].encode()), zlib.crc32(key[1].encode())]


def synth_views(
    gt: GroundTruth, observations: Sequence[Observation], seed: int, synth: FeatureSynth = FeatureSynth()
) -> dict[Key, np.ndarray]:
    """Raw feature vector for each observation."""
    _, q = synth.world()
    cache: dict[int, tuple[np.ndarray, float]] = {}
    out: dict[Key, np.ndarray] = {}
    for obs in observations:
        label = gt[obs.key]
        if label.instance_id not in cache:
            cache[label.instance_id] = synth.instance(label, seed)
        latent, canonical = cache[label.instance_id]
        angle = geo.normalize_angle(viewing_angle(obs, label) - canonical)
        rng = np.random.default_rng([seed, 0x7E3, *_key_seed(obs.key)])
        out[obs.key] = latent + synth.perturbation(latent, angle, q) + rng.normal(0.0, synth.noise, synth.dim)
    return out


@dataclass(frozen=True)
class ManifestScore:
    precision: float
    recall: float
    n_pairs: int
    n_correct: int
    n_positive: int  # same-instance pairs among manifest entries
    zero_pairs: bool


def score_manifest(manifest: PairManifest, gt: GroundTruth) -> ManifestScore:
    """Pair precision and recall of a manifest against instance labels.

    Recall counts same-instance pairs among boxes present in the manifest
    (i.e. the ones that survived the depth cutoff). With no mined pairs,
    precision is reported as 1.0 and ``zero_pairs`` is set.
    """
    pairs = manifest.pairs()
    correct = sum(1 for a, b in pairs if gt[a].instance_id == gt[b].instance_id)
    per_instance = Counter(gt[k].instance_id for k in manifest.keys())
    positive = sum(n * (n - 1) // 2 for n in per_instance.values())
    n_pairs = len(pairs)
    precision = correct / n_pairs if n_pairs else 1.0
    recall = correct / positive if positive else 0.0
    return ManifestScore(precision, recall, n_pairs, correct, positive, n_pairs == 0)


def same_instance_pairs(observations: Iterable[Observation], gt: GroundTruth) -> int:
    """Number of same-instance detection pairs within each (agent, episode),
    with no depth cutoff: the denominator of depth-sweep coverage."""
    counts = Counter((o.group, gt[o.key].instance_id) for o in observations)
    return sum(n * (n - 1) // 2 for n in counts.values())
