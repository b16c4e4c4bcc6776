"""Regenerate the committed CLI fixture in tests/fixtures/abutting/.

Two abutting-objects scenes: one training home and one held-out home. Next to
the simulator output the script writes ``expected_pairs.json``, the pairs the
matcher must produce at the default 0.7 m depth. The expectation is computed
without the package's geometry and polygon kernels: corners are ray-cast with
the test oracles, hulls come from gift wrapping and pairs from an O(n^2) scan.

    python scripts/make_fixture.py [--out tests/fixtures/abutting]
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
from polymatch import formats  # noqa: E402
from polymatch import simulator as sim  # noqa: E402

MAX_DEPTH = 0.7
# with 0.1 m objects the head-on poses put some boxes at exactly 0.7 m; 0.11 m
# keeps every footprint at least 1.5 mm away from each swept depth
RADIUS = 0.11


def point_polygon_distance(poly, p):
    if oracles._inside(poly, p, tol=0.0):
        return 0.0
    best = math.inf
    for a, b in zip(poly, poly[1:] + poly[:1]):
        a, b = np.asarray(a), np.asarray(b)
        t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * (b - a)))))
    return best


def oracle_footprint(obs):
    i = obs.intrinsics
    K = [[i.fx, i.skew, i.cx], [0, i.fy, i.cy], [0, 0, 1]]
    pose = (obs.pose.x, obs.pose.y, obs.pose.heading, obs.pose.height)
    x0, y0, x1, y1 = obs.bbox
    corners = []
    for px in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
        hit = oracles.ray_floor(K, obs.extrinsics.rotation, obs.extrinsics.translation, pose, px)
        if hit is None:
            return None
        corners.append(hit)
    hull = [tuple(map(float, v)) for v in oracles.convex_hull_oracle(np.array(corners))]
    if point_polygon_distance(hull, np.array([obs.pose.x, obs.pose.y])) > MAX_DEPTH:
        return None
    return hull


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "tests" / "fixtures" / "abutting"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    observations, gt, split = [], sim.GroundTruth(), {}
    for spec, part in (
        (sim.abutting_scene(0, radius=RADIUS, agent_id="abut0"), "train"),
        (sim.abutting_scene(3, radius=RADIUS, agent_id="abut1", instance_offset=100), "test"),
    ):
        obs, scene_gt = sim.generate_scene(spec)
        observations += obs
        gt.update(scene_gt)
        split.update((o.key, part) for o in obs)
    keys = [o.key for o in observations]
    features = sim.synth_views(gt, observations, 0)
    formats.write_observations(out / "observations.jsonl", observations)
    formats.write_groundtruth(out / "groundtruth.jsonl", gt, keys, split)
    formats.write_features(out / "features.bin", features, keys)

    items = []
    for o in observations:
        hull = oracle_footprint(o)
        if hull is not None:
            items.append(((o.agent_id, o.episode_id), o.key, np.array(hull)))
    pairs = oracles.brute_force_pairs(items)
    doc = {
        "max_depth": MAX_DEPTH,
        "accepted": len(items),
        "pairs": [[list(a), list(b), area] for (a, b), area in sorted(pairs.items())],
    }
    (out / "expected_pairs.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"observations={len(observations)} accepted={len(items)} pairs={len(pairs)}")


if __name__ == "__main__":
    main()
