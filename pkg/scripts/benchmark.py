"""Run the synthetic desk-scale benchmark and print RMSE per ablation mode.

    python scripts/benchmark.py --out runs/desk [--config my.cfg] [--max-iters N]
"""

import argparse
import logging
from dataclasses import replace

from gdsr.benchmark import run_benchmark
from gdsr.config import desk_preset, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--config", default=None)
    ap.add_argument("--max-iters", type=int, default=None)
    ap.add_argument("--modes", default="full,refine_only,diffusion_only")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config, desk_preset())
    if args.max_iters is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, max_iters=args.max_iters))
    res = run_benchmark(args.out, cfg, tuple(args.modes.split(",")))

    print(f"{'mode':<16}{'rmse':>10}{'nmad':>10}{'medae':>10}")
    for mode, rmse in res.rmse.items():
        print(f"{mode:<16}{rmse:>10.4f}{res.nmad[mode]:>10.4f}{res.medae[mode]:>10.4f}")
    print(f"full vs bicubic: {100 * res.improvement('full'):.1f}% lower RMSE")
    print(f"total runtime: {res.total_seconds / 60:.1f} min")


if __name__ == "__main__":
    main()
