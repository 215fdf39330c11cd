#!/usr/bin/env python3
"""Cluster-count ablation: train the translation agent with n = 3, 5, 10
clusters and compare final zero-shot rewards."""

import argparse
import json

from thinkerlab.config import EnvConfig, desk_config
from thinkerlab.runner import ablate_clusters


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--counts", default="3,5,10")
    parser.add_argument("--total-steps", type=int, default=100_000)
    parser.add_argument("--seeds", default="0,1,2")
    args = parser.parse_args()

    cfg = desk_config(
        env=EnvConfig(obs_size=32, n_train_levels=50, style_families=6, holdout_styles=True),
        total_steps=args.total_steps,
        eval_every=max(args.total_steps // 4, 1),
        eval_episodes=128,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        output_dir=args.out,
    )
    counts = tuple(int(c) for c in args.counts.split(","))
    report = ablate_clusters(cfg, counts)
    print(json.dumps(report["test_median_by_count"], indent=2))
    print("report:", report["report_dir"])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
