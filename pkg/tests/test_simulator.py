import math
from itertools import combinations

import numpy as np
import pytest

from polymatch import geometry as geo
from polymatch import simulator as sim
from polymatch.miner import MinerConfig, PairManifest, build_footprints, mine_pairs
from polymatch.polygon import contains_point

import oracles

OBJ = sim.SceneObject(class_id=3, instance_id=7, x=2.0, y=2.0, radius=0.1, height=0.08)


def spec_with(poses, objects=(OBJ,), **kw):
    return sim.SceneSpec(room=(4.0, 4.0), objects=tuple(objects), trajectory=tuple(poses), **kw)


def test_object_ahead_one_detection():
    # camera 0.15 m ahead of the robot centre; object 0.5 m ahead of the camera
    pose = geo.RobotPose(2.0 - 0.65, 2.0, 0.0)
    obs, gt = sim.generate_scene(spec_with([pose]))
    assert len(obs) == 1
    o = obs[0]
    assert gt[o.key] == sim.Label(7, 3, 2.0, 2.0)
    h = geo.floor_homography(geo.build_projection_matrix(o.intrinsics, o.extrinsics, o.pose))
    fp = geo.project_bbox_footprint(h, o.bbox, o.pose)
    assert contains_point(fp, (OBJ.x, OBJ.y))


def test_object_behind_no_detection():
    pose = geo.RobotPose(2.6, 2.0, 0.0)
    with pytest.raises(sim.EmptyScene):
        sim.generate_scene(spec_with([pose]))


def test_arc_of_poses_sees_object_3_to_20_times():
    poses = []
    for k in range(20):
        a = math.pi * k / 19
        x, y = OBJ.x - 0.6 * math.cos(a), OBJ.y - 0.6 * math.sin(a)
        poses.append(geo.RobotPose(x, y, math.atan2(OBJ.y - y, OBJ.x - x)))
    obs, gt = sim.generate_scene(spec_with(poses))
    assert 3 <= len(obs) <= 20
    assert {gt[o.key].instance_id for o in obs} == {7}


def test_spec_validation():
    with pytest.raises(ValueError):
        spec_with([], objects=[sim.SceneObject(0, 0, 5.0, 1.0, 0.1, 0.05)])
    with pytest.raises(ValueError):
        spec_with([], objects=[sim.SceneObject(0, 0, 1.0, 1.0, 0.1, 0.5)])  # taller than camera
    with pytest.raises(ValueError):
        spec_with([geo.RobotPose(9.0, 1.0, 0.0)])


def test_generation_deterministic():
    a = sim.generate_scene(sim.random_scene(11, sim.SceneConfig(pose_jitter=0.02)))
    b = sim.generate_scene(sim.random_scene(11, sim.SceneConfig(pose_jitter=0.02)))
    assert a[0] == b[0]
    assert a[1] == b[1]
    fa = sim.synth_views(a[1], a[0], 5)
    fb = sim.synth_views(b[1], b[0], 5)
    assert all(np.array_equal(fa[k], fb[k]) for k in fa)


def test_every_detection_labelled_once():
    obs, gt = sim.generate_scene(sim.random_scene(12))
    keys = [o.key for o in obs]
    assert len(keys) == len(set(keys)) == len(gt)
    assert set(keys) == set(gt.labels)


def test_footprints_contain_object_centre():
    obs, gt = [], sim.GroundTruth()
    for seed in range(4):
        o, g = sim.generate_scene(sim.random_scene(seed, agent_id=f"h{seed}"))
        obs += o
        gt.update(g)
    fp = build_footprints(obs, MinerConfig(max_depth=0.7)).accepted
    inside = [contains_point(p, (gt[p.source.key].x, gt[p.source.key].y), tol=1e-9) for p in fp]
    assert len(fp) > 200
    assert np.mean(inside) >= 0.99


def test_required_classes_and_distribution():
    spec = sim.random_scene(0, required_classes=[11, 10, 9])
    assert [o.class_id for o in spec.objects[:3]] == [11, 10, 9]
    p = sim.class_probabilities(0.8)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) < 0)
    assert p[1] / p[0] == pytest.approx(0.8)


# --- features ------------------------------------------------------------------------

def test_identical_poses_identical_features():
    pose = geo.RobotPose(1.35, 2.0, 0.0)
    obs, gt = sim.generate_scene(spec_with([pose, pose]))
    f = sim.synth_views(gt, obs, 0, sim.FeatureSynth(noise=0.0))
    a, b = (f[o.key] for o in obs)
    assert np.array_equal(a, b)


def test_zero_angle_perturbation_is_noise_floor():
    synth = sim.FeatureSynth()
    _, q = synth.world()
    latent = np.random.default_rng(0).normal(size=synth.dim)
    assert np.array_equal(synth.perturbation(latent, 0.0, q), np.zeros(synth.dim))
    # a non-zero angle moves the view
    assert np.linalg.norm(synth.perturbation(latent, 1.0, q)) > 0


def test_inter_class_distance_exceeds_intra_instance():
    synth = sim.FeatureSynth()
    _, q = synth.world()
    rng = np.random.default_rng(1)
    intra, inter = [], []
    for k in range(1000):
        la = sim.Label(k, int(rng.integers(12)), 0.0, 0.0)
        lb = sim.Label(10_000 + k, (la.class_id + 1 + int(rng.integers(11))) % 12, 0.0, 0.0)
        za, _ = synth.instance(la, 0)
        zb, _ = synth.instance(lb, 0)

        def view(z, angle):
            return z + synth.perturbation(z, angle, q) + rng.normal(0, synth.noise, synth.dim)

        a1, a2 = rng.uniform(-math.pi, math.pi, 2)
        intra.append(np.linalg.norm(view(za, a1) - view(za, a2)))
        inter.append(np.linalg.norm(view(za, a1) - view(zb, a2)))
    inter, intra = np.array(inter), np.array(intra)
    assert inter.mean() > intra.mean()
    # Mann-Whitney: P(inter > intra) over all pairs, one-sided 3 sigma above 1/2
    auc = (inter[:, None] > intra[None, :]).mean()
    n = len(inter)
    assert auc > 0.5 + 3 * math.sqrt((2 * n + 1) / (12 * n * n))


# --- scoring ---------------------------------------------------------------------------

def test_score_empty_manifest():
    s = sim.score_manifest(PairManifest(), sim.GroundTruth())
    assert s.precision == 1.0 and s.recall == 0.0 and s.zero_pairs


def _footprint_diameter(p):
    v = p.vertices
    return max(np.linalg.norm(a - b) for a, b in combinations(v, 2))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_separated_scene_precision_one(seed):
    spec = sim.random_scene(seed, n_objects=3, separation=4.5, room=(12.0, 12.0))
    obs, gt = sim.generate_scene(spec)
    cfg = MinerConfig()
    fp = build_footprints(obs, cfg).accepted
    # precondition: each footprint contains its object centre and is narrower
    # than half the separation, so footprints of distinct objects cannot meet
    assert all(contains_point(p, (gt[p.source.key].x, gt[p.source.key].y), tol=1e-9) for p in fp)
    assert max(_footprint_diameter(p) for p in fp) < 4.5 / 2
    score = sim.score_manifest(mine_pairs(fp, cfg), gt)
    assert score.n_pairs > 0
    assert score.precision == 1.0


def test_abutting_fixture_precision_from_brute_force():
    obs, gt = sim.generate_scene(sim.abutting_scene(0, n_objects=2, gap=0.0))
    cfg = MinerConfig()
    fp = build_footprints(obs, cfg).accepted
    ref = oracles.brute_force_pairs(
        [((p.source.agent_id, p.source.episode_id), p.source.key, p.vertices) for p in fp]
    )
    correct = sum(gt[a].instance_id == gt[b].instance_id for a, b in ref)
    score = sim.score_manifest(mine_pairs(fp, cfg), gt)
    assert score.n_pairs == len(ref)
    assert score.precision == correct / len(ref)
    assert score.precision < 1.0


def test_abutting_fixture_precision_non_increasing_in_depth():
    obs, gt = sim.generate_scene(sim.abutting_scene())
    prev = 1.0
    for d in (0.5, 0.6, 0.7, 0.8, 0.9, 1.0):
        cfg = MinerConfig(max_depth=d)
        s = sim.score_manifest(mine_pairs(build_footprints(obs, cfg).accepted, cfg), gt)
        assert s.precision <= prev
        prev = s.precision
    assert prev < 1.0


def test_jitter_lowers_recall():
    cfg = sim.SceneConfig(pose_jitter=0.05, heading_jitter=0.05)
    obs, gt = sim.generate_scene(sim.random_scene(5, cfg))
    m = mine_pairs(build_footprints(obs, MinerConfig()).accepted, MinerConfig())
    s = sim.score_manifest(m, gt)
    assert 0.0 < s.recall < 1.0
    assert sim.same_instance_pairs(obs, gt) >= s.n_positive
