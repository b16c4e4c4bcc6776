"""Mined-pair statistics as the footprint depth cutoff grows.

Simulates the reference dataset, then reports for each depth the accepted
footprints, pair count, precision against ground truth and coverage (share
of all same-instance pairs that were mined). With ``--train`` it also trains
an encoder on polygon positives per depth and probes it at 10% labels.

    python scripts/sweep_depth.py --depths 0.5:1.0:0.1 [--train --method simclr]
"""

import argparse
import dataclasses

from polymatch import simulator as sim
from polymatch.cli import parse_depths
from polymatch.evaluate import ProbeConfig
from polymatch.miner import MinerConfig, build_footprints, mine_pairs
from polymatch.pipeline import Dataset, DatasetConfig, probe_encoder, simulate
from polymatch.ssl import METHODS, TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--depths", default="0.5:1.0:0.1")
    ap.add_argument("--train", action="store_true")
    ap.add_argument("--method", default="simclr", choices=METHODS)
    ap.add_argument("--fraction", type=float, default=0.1)
    args = ap.parse_args()

    s = simulate(DatasetConfig(seed=args.seed))
    train_keys, test_keys = s.keys("train"), s.keys("test")
    obs = [o for o in s.observations if s.split[o.key] == "train"]
    total = sim.same_instance_pairs(obs, s.gt)

    header = "depth  accepted    pairs  precision  coverage"
    print(header + ("    top1  balanced" if args.train else ""))
    for depth in parse_depths(args.depths):
        cfg = MinerConfig(max_depth=depth)
        fp = build_footprints(obs, cfg)
        manifest = mine_pairs(fp.accepted, cfg)
        score = sim.score_manifest(manifest, s.gt)
        line = (f"{depth:5.2f}  {len(fp.accepted):8d} {score.n_pairs:8d}  {score.precision:9.4f}"
                f"  {score.n_correct / total:8.4f}")
        if args.train:
            tcfg = dataclasses.replace(TrainConfig(), method=args.method, positives="polygon", seed=args.seed)
            enc = train(s.features, manifest, tcfg, keys=train_keys).encoder
            m = probe_encoder(enc, Dataset(s, manifest, train_keys, test_keys), args.fraction, ProbeConfig(), args.seed)
            line += f"  {m.top1:6.2f}  {m.balanced_top1:8.2f}"
        print(line, flush=True)


if __name__ == "__main__":
    main()
