"""Train every method with standard and polygon positives and probe the encoders.

Prints the top-1 and balanced top-1 tables and the polygon-minus-standard gain
per method. A full run (3 methods x 2 regimes x 3 fractions x 5 seeds) takes a
few minutes on one core.

    python scripts/run_grid.py --seeds 0,1,2,3,4 --threads 4 --out results/grid.json
"""

import argparse
import logging
import time
from pathlib import Path

from polymatch import config as config_mod
from polymatch.pipeline import build_dataset, run_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML or JSON pipeline config")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--fractions", default="0.01,0.1,1")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="write the JSON report here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = config_mod.load(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    fractions = [float(f) for f in args.fractions.split(",")]

    t0 = time.perf_counter()
    data = build_dataset(cfg.dataset, cfg.miner)
    logging.info("dataset: %d train / %d test boxes, %d mined pairs",
                 len(data.train_keys), len(data.test_keys), data.manifest.n_pairs)
    report = run_grid(data, fractions=fractions, seeds=seeds, base=cfg.train, probe_cfg=cfg.probe,
                      threads=args.threads)
    print(report.table("top1"))
    print()
    print(report.table("balanced_top1"))
    print()
    for f in fractions:
        for m in report.methods:
            top = report.mean(m, "polygon", f) - report.mean(m, "standard", f)
            bal = report.mean(m, "polygon", f, "balanced_top1") - report.mean(m, "standard", f, "balanced_top1")
            print(f"gain {m:<8} at {f:g}: top1 {top:+6.2f}  balanced {bal:+6.2f}")
    print(f"elapsed {time.perf_counter() - t0:.0f} s")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json() + "\n")


if __name__ == "__main__":
    main()
