#!/usr/bin/env python3
"""Bootstrap (cluster + translator) on ColorMaze and emit a preview grid:
originals on the top row, style translations below."""

import argparse
from pathlib import Path

import numpy as np

from thinkerlab.config import desk_config
from thinkerlab.pipeline import run_bootstrap
from thinkerlab.plots import translation_preview


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/preview.png")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--count", type=int, default=10)
    args = parser.parse_args()

    cfg = desk_config()
    artifacts, dataset = run_bootstrap(cfg, args.seed)
    rng = np.random.default_rng(args.seed)
    pick = rng.choice(len(dataset.obs), size=args.count, replace=False)
    translation_preview(
        artifacts.translator, artifacts.cluster_model, dataset.obs[pick], Path(args.out), rng
    )
    print(args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
