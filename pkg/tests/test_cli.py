import csv
import io
import json
import re
import subprocess
import sys
import time

import pytest

from polymatch import config as config_mod
from polymatch import formats
from polymatch.cli import UsageError, main, parse_depths
from polymatch.miner import MinerConfig

FIX = "abutting"


@pytest.fixture
def fix(fixtures_dir):
    d = fixtures_dir / FIX
    return {"dir": d, "obs": str(d / "observations.jsonl"), "gt": str(d / "groundtruth.jsonl"),
            "expected": json.loads((d / "expected_pairs.json").read_text())}


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv(config_mod.ENV_VAR, raising=False)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --- depth parsing ----------------------------------------------------------------

def test_parse_depths():
    assert parse_depths("0.5:1.0:0.1") == [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert parse_depths("0.7") == [0.7]
    assert parse_depths("0.5,0.9") == [0.5, 0.9]
    for bad in ("1.0:0.5:0.1", "0.5:1.0", "0.5:1.0:0", "a:b:c", "-1", ""):
        with pytest.raises(UsageError):
            parse_depths(bad)


# --- simulate ------------------------------------------------------------------------

def test_simulate_deterministic(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "simulate", "--seed", 1, "--scenes", 2, "--test-scenes", 1, "--out", tmp_path / name)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    for f in ("observations.jsonl", "groundtruth.jsonl", "features.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_default_covers_every_class(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--out", tmp_path)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["class", "train", "test"]
    per_class = rows[1:-1]
    assert len(per_class) == 12
    assert all(int(r[1]) > 0 and int(r[2]) > 0 for r in per_class)


def test_simulate_round_trip(tmp_path, capsys):
    run(capsys, "simulate", "--scenes", 1, "--test-scenes", 0, "--out", tmp_path)
    p = tmp_path / "observations.jsonl"
    formats.write_observations(tmp_path / "again.jsonl", formats.read_observations(p))
    assert p.read_bytes() == (tmp_path / "again.jsonl").read_bytes()


def test_simulate_zero_scenes_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--scenes", 0, "--out", tmp_path)
    assert code == 2
    assert "error" in err


# --- match ------------------------------------------------------------------------------

def test_match_equals_committed_oracle(tmp_path, capsys, fix):
    out = tmp_path / "m.jsonl"
    code, stdout, _ = run(capsys, "match", fix["obs"], "--out", out)
    assert code == 0
    exp = fix["expected"]
    assert exp["max_depth"] == MinerConfig().max_depth == 0.7
    pairs = formats.read_manifest(out).pairs()
    want = {(tuple(a), tuple(b)): area for a, b, area in exp["pairs"]}
    assert set(pairs) == set(want)
    assert all(abs(pairs[k] - want[k]) <= 1e-12 for k in want)
    assert stdout.strip() == f"footprints accepted={exp['accepted']} rejected={509 - exp['accepted']} pairs={len(want)}"
    assert (tmp_path / "m.rejections.jsonl").exists()


def test_match_min_overlap_monotone(tmp_path, capsys, fix):
    counts = []
    for t in (0.0, 0.002, 0.01, 0.05):
        _, out, _ = run(capsys, "match", fix["obs"], "--min-overlap", t, "--out", tmp_path / "m.jsonl")
        counts.append(int(re.search(r"pairs=(\d+)", out).group(1)))
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > counts[-1]


def test_match_zero_pairs_warns(tmp_path, capsys, fix):
    code, out, err = run(capsys, "match", fix["obs"], "--max-depth", 0.05, "--out", tmp_path / "m.jsonl")
    assert code == 0
    assert "pairs=0" in out and "warning" in err


def test_match_malformed_line(tmp_path, capsys, fix):
    lines = open(fix["obs"]).read().splitlines()[:5]
    lines[3] = lines[3].replace('"pose"', '"psoe"')
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "match", bad, "--out", tmp_path / "m.jsonl")
    assert code == 2
    assert f"{bad}:4" in err


def test_missing_input_is_usage_error(tmp_path, capsys):
    code, _, _ = run(capsys, "match", tmp_path / "absent.jsonl", "--out", tmp_path / "m.jsonl")
    assert code == 2


# --- sweep ---------------------------------------------------------------------------

def test_sweep_depth_on_fixture(tmp_path, capsys, fix):
    code, out, _ = run(capsys, "sweep-depth", fix["obs"], fix["gt"], "--depths", "0.5:1.0:0.1")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [float(r["depth"]) for r in rows] == [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    pairs = [int(r["pairs"]) for r in rows]
    precision = [float(r["precision"]) for r in rows]
    assert pairs == sorted(pairs)
    assert all(a >= b for a, b in zip(precision, precision[1:]))
    assert precision[-1] < precision[0]


def test_sweep_invalid_range(capsys, fix):
    code, _, err = run(capsys, "sweep-depth", fix["obs"], fix["gt"], "--depths", "1:0.5:0.1")
    assert code == 2 and "depth range" in err


def test_sweep_with_training(tmp_path, capsys, fix):
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep-depth", fix["obs"], fix["gt"], "--depths", "0.6,0.8", "--train",
                     "--features", fix["dir"] / "features.bin", "--method", "triplet", "--out", out)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 2 and all(0 <= float(r["top1"]) <= 100 for r in rows)


# --- train / eval ------------------------------------------------------------------------

def test_train_triplet_standard_within_budget(tmp_path, capsys, fix):
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "train", "--data", fix["dir"], "--method", "triplet", "--positives", "standard",
                       "--out", tmp_path / "ck.json", "--loss-csv", tmp_path / "loss.csv")
    assert code == 0 and time.perf_counter() - t0 < 60
    ck = formats.read_checkpoint(tmp_path / "ck.json")
    assert ck.config.method == "triplet" and len(ck.losses) == ck.config.epochs + 1
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == ck.config.epochs + 2


def test_train_polygon_needs_manifest(tmp_path, capsys, fix):
    code, _, err = run(capsys, "train", "--data", fix["dir"], "--positives", "polygon", "--out", tmp_path / "ck.json")
    assert code == 2 and "--manifest" in err


def test_eval_grid_shape_and_determinism(tmp_path, capsys, fix):
    run(capsys, "match", fix["obs"], "--out", tmp_path / "m.jsonl")
    tables = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "eval", "--data", fix["dir"], "--manifest", tmp_path / "m.jsonl",
                           "--seeds", "0,1", "--epochs", 3, "--out-json", tmp_path / f"{name}.json")
        assert code == 0
        tables.append(out)
    assert tables[0] == tables[1]
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    top1 = tables[0].split("\n\n")[0].splitlines()
    assert top1[0] == "Top-1 Accuracy"
    assert len(top1[3:]) == 6
    assert "Balanced Top-1 Accuracy" in tables[0]


def test_eval_polygon_without_manifest(capsys, fix):
    code, _, _ = run(capsys, "eval", "--data", fix["dir"], "--seeds", "0")
    assert code == 2


# --- viz ----------------------------------------------------------------------------------

def test_viz_trajectory_only_for_empty_manifest(tmp_path, capsys, fix):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    run(capsys, "viz", fix["obs"], "--manifest", empty, "--out", tmp_path / "map.svg")
    svg = (tmp_path / "map.svg").read_text()
    assert 'class="trajectory"' in svg
    assert 'class="footprint"' not in svg and 'class="match"' not in svg


def test_viz_counts(tmp_path, capsys, fix):
    run(capsys, "viz", fix["obs"], "--groundtruth", fix["gt"], "--out", tmp_path / "a.svg")
    assert (tmp_path / "a.svg").read_text().count('class="footprint"') == fix["expected"]["accepted"]
    run(capsys, "match", fix["obs"], "--out", tmp_path / "m.jsonl")
    run(capsys, "viz", fix["obs"], "--manifest", tmp_path / "m.jsonl", "--out", tmp_path / "b.svg")
    svg = (tmp_path / "b.svg").read_text()
    assert svg.count('class="footprint"') == fix["expected"]["accepted"]
    assert svg.count('class="match"') == len(fix["expected"]["pairs"])


# --- config -------------------------------------------------------------------------------

def test_config_defaults():
    cfg = config_mod.load()
    assert cfg.miner.max_depth == 0.7


def test_config_files_and_env(tmp_path, monkeypatch):
    toml = tmp_path / "c.toml"
    toml.write_text("[miner]\nmax_depth = 0.9\n[train]\nepochs = 4\n")
    js = tmp_path / "c.json"
    js.write_text('{"miner": {"max_depth": 0.8}}')
    assert config_mod.load(toml).miner.max_depth == 0.9
    assert config_mod.load(toml).train.epochs == 4
    assert config_mod.load(js).miner.max_depth == 0.8
    monkeypatch.setenv(config_mod.ENV_VAR, str(js))
    assert config_mod.load().miner.max_depth == 0.8
    # explicit flags win over file values
    merged = config_mod.merge(config_mod.load(js), {"miner.max_depth": 0.6, "train.lr": None})
    assert merged.miner.max_depth == 0.6 and merged.train.lr == config_mod.load().train.lr


def test_config_unknown_key(tmp_path, capsys, fix):
    bad = tmp_path / "c.toml"
    bad.write_text("[miner]\nmax_detph = 0.9\n")
    with pytest.raises(config_mod.ConfigError):
        config_mod.load(bad)
    code, _, err = run(capsys, "--config", bad, "match", fix["obs"], "--out", tmp_path / "m.jsonl")
    assert code == 2 and "max_detph" in err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "polymatch.cli", "simulate", "--scenes", "0", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2
