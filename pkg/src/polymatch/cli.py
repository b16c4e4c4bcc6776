"""``polymatch`` command line: simulate, match, sweep-depth, train, eval, viz.

Exit codes: 0 success, 1 runtime failure, 2 usage, config or input error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence


from . import config as config_mod
from . import formats
from . import simulator as sim
from .miner import MinerConfig, PairManifest, build_footprints, mine_pairs
from .pipeline import Dataset, Simulation, probe_encoder, run_grid, simulate
from .ssl import METHODS, REGIMES, train
from .viz import render_svg

log = logging.getLogger("polymatch")

OBS_FILE = "observations.jsonl"
GT_FILE = "groundtruth.jsonl"
FEATURES_FILE = "features.bin"


class UsageError(Exception):
    pass


# --- argument helpers ----------------------------------------------------------

def parse_depths(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list, in meters."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, stop, step = parts
            if not step > 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + k * step, 10) for k in range(n)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"invalid depth range {text!r}; expected start:stop:step or a comma list") from None
    if not values or any(not (math.isfinite(v) and v > 0) for v in values):
        raise UsageError(f"invalid depth range {text!r}; depths must be positive")
    return values


def _floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"expected a comma list of numbers, got {text!r}") from None


def _seeds(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"expected a comma list of integers, got {text!r}") from None


def _choices(text: str, allowed: Sequence[str], what: str) -> list[str]:
    items = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in items if p not in allowed]
    if bad or not items:
        raise UsageError(f"unknown {what} {bad or text!r}; choose from {', '.join(allowed)}")
    return items


def _load_config(args) -> config_mod.PipelineConfig:
    return config_mod.load(args.config)


def _load_simulation(data_dir: Path, need_features: bool = True) -> Simulation:
    obs = formats.read_observations(data_dir / OBS_FILE)
    gt, split = formats.read_groundtruth(data_dir / GT_FILE)
    missing = [o.key for o in obs if o.key not in gt]
    if missing:
        raise formats.FormatError(f"no ground truth for {missing[0]}", path=str(data_dir / GT_FILE))
    features = formats.read_features(data_dir / FEATURES_FILE) if need_features else {}
    if need_features:
        absent = [o.key for o in obs if o.key not in features]
        if absent:
            raise formats.FormatError(f"no features for {absent[0]}", path=str(data_dir / FEATURES_FILE))
    return Simulation(obs, gt, features, {o.key: split[o.key] for o in obs})


def _dataset(s: Simulation, manifest: Optional[PairManifest]) -> Dataset:
    train_keys, test_keys = s.keys("train"), s.keys("test")
    if not test_keys:
        raise UsageError("the data has no test split; simulate with --test-scenes >= 1")
    return Dataset(s, manifest if manifest is not None else PairManifest(), train_keys, test_keys)


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    overrides = {"dataset.seed": args.seed, "dataset.train_scenes": args.scenes,
                 "dataset.test_scenes": args.test_scenes}
    cfg = config_mod.merge(cfg, overrides)
    s = simulate(cfg.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = [o.key for o in s.observations]
    formats.write_observations(out / OBS_FILE, s.observations)
    formats.write_groundtruth(out / GT_FILE, s.gt, keys, s.split)
    formats.write_features(out / FEATURES_FILE, s.features, keys)

    counts = {part: {c: 0 for c in range(sim.N_CLASSES)} for part in ("train", "test")}
    for k in keys:
        counts[s.split[k]][s.gt[k].class_id] += 1
    print("class,train,test")
    for c in range(sim.N_CLASSES):
        print(f"{c},{counts['train'][c]},{counts['test'][c]}")
    print(f"total,{sum(counts['train'].values())},{sum(counts['test'].values())}")
    return 0


def _miner_config(cfg, args) -> MinerConfig:
    return config_mod.merge(cfg, {
        "miner.max_depth": args.max_depth,
        "miner.min_overlap_area": args.min_overlap,
        "miner.min_iou": args.min_iou,
    }).miner


def cmd_match(args) -> int:
    mcfg = _miner_config(_load_config(args), args)
    obs = formats.read_observations(args.observations)
    fp = build_footprints(obs, mcfg)
    manifest = mine_pairs(fp.accepted, mcfg, threads=args.threads)
    out = Path(args.out)
    formats.write_manifest(out, manifest)
    rej_path = Path(args.rejections) if args.rejections else out.with_name(out.stem + ".rejections.jsonl")
    formats.write_rejections(rej_path, fp.rejected)
    print(f"footprints accepted={len(fp.accepted)} rejected={len(fp.rejected)} pairs={manifest.n_pairs}")
    if manifest.n_pairs == 0:
        print("warning: no overlapping footprint pairs were mined", file=sys.stderr)
    return 0


def cmd_sweep_depth(args) -> int:
    cfg = _load_config(args)
    base = _miner_config(cfg, args)
    depths = parse_depths(args.depths)
    obs = formats.read_observations(args.observations)
    gt, split = formats.read_groundtruth(args.groundtruth)
    missing = [o.key for o in obs if o.key not in gt]
    if missing:
        raise formats.FormatError(f"no ground truth for {missing[0]}", path=str(args.groundtruth))

    data = None
    if args.train:
        if not args.features:
            raise UsageError("--train needs --features")
        features = formats.read_features(args.features)
        data = _dataset(Simulation(obs, gt, features, {o.key: split[o.key] for o in obs}), None)
        obs = [o for o in obs if split[o.key] == "train"]
        train_cfg = dataclasses.replace(cfg.train, method=args.method, positives="polygon", seed=args.seed)

    total = sim.same_instance_pairs(obs, gt)
    header = ["depth", "accepted", "pairs", "precision", "recall", "coverage"]
    if args.train:
        header += ["top1", "balanced_top1"]
    rows = []
    for depth in depths:
        mcfg = dataclasses.replace(base, max_depth=depth)
        fp = build_footprints(obs, mcfg)
        manifest = mine_pairs(fp.accepted, mcfg, threads=args.threads)
        score = sim.score_manifest(manifest, gt)
        coverage = score.n_correct / total if total else 0.0
        row = [f"{depth:g}", len(fp.accepted), score.n_pairs, f"{score.precision:.6f}",
               f"{score.recall:.6f}", f"{coverage:.6f}"]
        if data is not None:
            data.manifest = manifest
            result = train(data.sim.features, manifest, train_cfg, keys=data.train_keys)
            m = probe_encoder(result.encoder, data, args.fraction, cfg.probe, args.seed)
            row += [f"{m.top1:.4f}", f"{m.balanced_top1:.4f}"]
        rows.append(row)
        log.info("depth %g: %d pairs", depth, score.n_pairs)

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def _read_optional_manifest(path, positives: Sequence[str]) -> Optional[PairManifest]:
    if path:
        return formats.read_manifest(path)
    if "polygon" in positives:
        raise UsageError("--positives polygon requires --manifest (run `polymatch match` first)")
    return None


def _train_overrides(cfg, args):
    return config_mod.merge(cfg, {
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "train.batch_size": args.batch_size,
    })


def cmd_train(args) -> int:
    cfg = _train_overrides(_load_config(args), args)
    _choices(args.method, METHODS, "method")
    _choices(args.positives, REGIMES, "positives")
    manifest = _read_optional_manifest(args.manifest, [args.positives])
    s = _load_simulation(Path(args.data))
    tcfg = dataclasses.replace(cfg.train, method=args.method, positives=args.positives, seed=args.seed)
    result = train(s.features, manifest if manifest is not None else PairManifest(), tcfg, keys=s.keys("train"))
    formats.write_checkpoint(args.out, result)
    if args.loss_csv:
        formats.write_loss_csv(args.loss_csv, result.losses)
    print(f"method={tcfg.method} positives={tcfg.positives} seed={tcfg.seed} "
          f"epochs={tcfg.epochs} loss_first={result.losses[0]:.6f} loss_last={result.losses[-1]:.6f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _train_overrides(_load_config(args), args)
    methods = _choices(args.methods, METHODS, "method")
    regimes = _choices(args.positives, REGIMES, "positives")
    fractions = _floats(args.fractions) if args.fractions else list(cfg.probe.fractions)
    seeds = _seeds(args.seeds)
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    manifest = _read_optional_manifest(args.manifest, regimes)
    data = _dataset(_load_simulation(Path(args.data)), manifest)
    report = run_grid(data, methods, regimes, fractions, seeds, cfg.train, cfg.probe, threads=args.threads)
    text = report.table("top1") + "\n\n" + report.table("balanced_top1")
    print(text)
    if args.out_json:
        Path(args.out_json).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.out_table:
        Path(args.out_table).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_viz(args) -> int:
    cfg = _load_config(args)
    obs = formats.read_observations(args.observations)
    gt = formats.read_groundtruth(args.groundtruth)[0] if args.groundtruth else None
    manifest = formats.read_manifest(args.manifest) if args.manifest else None
    if manifest is not None:
        # draw exactly the boxes the manifest knows about, whatever depth mined it
        fp = build_footprints([o for o in obs if o.key in manifest], dataclasses.replace(cfg.miner, max_depth=math.inf))
    else:
        fp = build_footprints(obs, cfg.miner)
    Path(args.out).write_text(render_svg(obs, fp.accepted, manifest, gt), encoding="utf-8")
    print(f"footprints={len(fp.accepted)} matches={manifest.n_pairs if manifest is not None else 0}")
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polymatch", description="Polygon-matched positives for SSL on robot imagery.")
    p.add_argument("--config", help=f"TOML or JSON config (default: ${config_mod.ENV_VAR})")
    p.add_argument("--threads", type=int, default=1, help="upper bound on worker parallelism")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--seed", type=int)
    s.add_argument("--scenes", type=int, help="number of training scenes")
    s.add_argument("--test-scenes", type=int, help="number of held-out scenes")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    def miner_flags(q):
        q.add_argument("--max-depth", type=float, help="footprint depth cutoff in meters (default 0.7)")
        q.add_argument("--min-overlap", type=float, help="minimum overlap area in square meters")
        q.add_argument("--min-iou", type=float, help="optional IoU threshold")

    m = sub.add_parser("match", help="mine overlapping-footprint positive pairs")
    m.add_argument("observations")
    miner_flags(m)
    m.add_argument("--out", required=True, help="manifest JSONL")
    m.add_argument("--rejections", help="rejection log JSONL (default: next to the manifest)")
    m.set_defaults(func=cmd_match)

    w = sub.add_parser("sweep-depth", help="pair statistics across max-depth values")
    w.add_argument("observations")
    w.add_argument("groundtruth")
    w.add_argument("--depths", default="0.5:1.0:0.1")
    miner_flags(w)
    w.add_argument("--out", help="CSV path (default: stdout)")
    w.add_argument("--train", action="store_true", help="also train and probe an encoder per depth")
    w.add_argument("--features")
    w.add_argument("--method", default="simclr", choices=METHODS)
    w.add_argument("--fraction", type=float, default=0.10)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_sweep_depth)

    def train_flags(q):
        q.add_argument("--data", required=True, help="directory written by `simulate`")
        q.add_argument("--manifest")
        q.add_argument("--epochs", type=int)
        q.add_argument("--lr", type=float)
        q.add_argument("--batch-size", type=int)

    t = sub.add_parser("train", help="train one encoder")
    train_flags(t)
    t.add_argument("--method", default="simclr")
    t.add_argument("--positives", default="standard")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint JSON")
    t.add_argument("--loss-csv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="method x positives x fraction x seed grid")
    train_flags(e)
    e.add_argument("--methods", default=",".join(METHODS))
    e.add_argument("--positives", default=",".join(REGIMES))
    e.add_argument("--fractions", help="comma list, e.g. 0.01,0.1,1")
    e.add_argument("--seeds", default="0,1,2,3,4")
    e.add_argument("--out-json")
    e.add_argument("--out-table")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="bird's-eye SVG map")
    v.add_argument("observations")
    v.add_argument("--manifest")
    v.add_argument("--groundtruth")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (UsageError, config_mod.ConfigError, formats.FormatError, FileNotFoundError) as exc:
        print(f"polymatch: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"polymatch: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
