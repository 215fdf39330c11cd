"""thinker-lab command line: train, eval, ablate, plot, translate-preview,
bootstrap."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, save_config


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "agent", None):
        cfg = cfg.with_agent(args.agent)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def cmd_train(args) -> int:
    from .runner import run_experiment

    cfg = _load(args)
    run_dir = run_experiment(cfg)
    print(run_dir)
    return 0


def cmd_bootstrap(args) -> int:
    """Clustering + translator training only; artifacts land in --out."""
    from . import checkpoint as ckpt
    from .clustering import extract_features_batch
    from .pipeline import run_bootstrap
    from .plots import cluster_summary, translation_preview

    cfg = _load(args)
    seed = cfg.seeds[0]
    out = Path(args.out or cfg.output_dir) / f"bootstrap_seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    artifacts, dataset = run_bootstrap(cfg, seed)
    ckpt.save_cluster_model(out / "clusters", artifacts.cluster_model)
    ckpt.save_translator(out / "translator", artifacts.translator)
    labels = artifacts.cluster_model.assign(extract_features_batch(dataset.obs))
    cluster_summary(artifacts.cluster_model, dataset.obs, labels, out / "clusters.png")
    rng = np.random.Generator(np.random.PCG64(seed))
    pick = rng.choice(len(dataset.obs), size=min(8, len(dataset.obs)), replace=False)
    translation_preview(
        artifacts.translator, artifacts.cluster_model, dataset.obs[pick], out / "translation_preview.png", rng
    )
    print(out)
    return 0


def cmd_eval(args) -> int:
    from . import checkpoint as ckpt
    from .evaluate import evaluate_zero_shot, greedy_policy

    seed_dir = Path(args.run)
    cfg = load_config(seed_dir.parent / "config.json")
    model = ckpt.load_policy(seed_dir / "policy")
    rng = np.random.Generator(np.random.PCG64(args.seed if args.seed is not None else 0))
    stats = evaluate_zero_shot(greedy_policy(model), cfg.env, args.episodes, rng)
    print(
        json.dumps(
            {
                "episodes": len(stats.rewards),
                "mean": stats.mean,
                "median": stats.median,
                "q25": stats.q25,
                "q75": stats.q75,
            },
            indent=2,
        )
    )
    return 0


def cmd_ablate(args) -> int:
    from .runner import ablate_clusters

    cfg = _load(args)
    counts = tuple(int(c) for c in args.counts.split(","))
    report = ablate_clusters(cfg, counts)
    print(json.dumps(report["test_median_by_count"], indent=2))
    print(report["report_dir"])
    return 0


def cmd_plot(args) -> int:
    from .plots import emit_plots

    stats = emit_plots([Path(d) for d in args.run_dirs], Path(args.out))
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_translate_preview(args) -> int:
    from . import checkpoint as ckpt
    from .colormaze import ColorMaze
    from .plots import translation_preview

    art_dir = Path(args.run)
    cfg_path = art_dir.parent / "config.json"
    cfg = load_config(cfg_path) if cfg_path.exists() else ExperimentConfig()
    translator = ckpt.load_translator(art_dir / "translator")
    cluster_model = ckpt.load_cluster_model(art_dir / "clusters")
    rng = np.random.Generator(np.random.PCG64(args.seed if args.seed is not None else 0))
    env = ColorMaze(cfg.env)
    obs = np.stack([env.reset(int(rng.integers(2**31))) for _ in range(args.count)])
    out = Path(args.out or (art_dir / "translation_preview.png"))
    translation_preview(translator, cluster_model, obs, out, rng)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinker-lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="run only this seed")
        p.add_argument("--agent", choices=["ppo", "thinker", "cutout", "crop"], default=None)
        p.add_argument("--out", default=None, help="output directory override")

    p = sub.add_parser("train", help="run the configured experiment")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bootstrap", help="clustering + translator training only")
    common(p)
    p.set_defaults(fn=cmd_bootstrap)

    p = sub.add_parser("eval", help="zero-shot evaluation of a trained policy")
    p.add_argument("--run", required=True, help="seed directory containing policy checkpoint")
    p.add_argument("--episodes", type=int, default=128)
    p.add_argument("--seed", type=int, default=None, help="evaluation rng seed")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="cluster-count ablation")
    common(p)
    p.add_argument("--counts", default="3,5,10")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("plot", help="emit boxplots and curves for finished runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("translate-preview", help="grid of originals over translations")
    p.add_argument("--run", required=True, help="directory with translator/clusters checkpoints")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=8)
    p.set_defaults(fn=cmd_translate_preview)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
