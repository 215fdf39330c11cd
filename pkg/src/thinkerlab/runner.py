"""Experiment runner: run directories, locking, resume, idempotence.

Layout of one run::

    <runs_root>/<agent>-<confighash>/
        config.json                 # snapshot of the full configuration
        seed_<k>/
            metrics.csv             # one row per evaluation
            policy.{json,bin}       # latest policy checkpoint
            optimizer.{json,bin}
            trainer_state.json      # rng/env/step state for resuming
            clusters.{json,bin}     # thinker only
            translator.{json,bin}   # thinker only
            bootstrap.json          # thinker only: cluster sizes, env steps
            summary.json            # written when the seed finishes
            DONE

A completed seed is never re-run (the run hash covers every config field
except the output location). A crashed run resumes from its last
checkpoint. THINKERLAB_RUNS overrides the runs root.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ExperimentConfig, config_to_dict, save_config
from .errors import StateError
from .metrics import MetricsWriter
from .pipeline import (
    BootstrapArtifacts,
    PolicyTrainer,
    build_transform,
    run_bootstrap,
    run_training,
)

RUNS_ENV_VAR = "THINKERLAB_RUNS"


def runs_root(config: ExperimentConfig) -> Path:
    return Path(os.environ.get(RUNS_ENV_VAR, config.output_dir))


def run_hash(config: ExperimentConfig) -> str:
    data = config_to_dict(config)
    data.pop("output_dir", None)
    data.pop("name", None)
    canon = json.dumps(data, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:10]


def run_dir_for(config: ExperimentConfig) -> Path:
    prefix = f"{config.name}-" if config.name else ""
    return runs_root(config) / f"{prefix}{config.agent}-{run_hash(config)}"


class _Lock:
    def __init__(self, directory: Path):
        self.path = directory / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StateError(
                f"run directory {self.path.parent} is locked by another run "
                f"(remove {self.path} if that run is dead)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _save_trainer(seed_dir: Path, trainer: PolicyTrainer) -> None:
    ckpt.save_policy(seed_dir / "policy", trainer.model)
    ckpt.save_optimizer(seed_dir / "optimizer", trainer.optimizer)
    state = {
        "steps_done": trainer.steps_done,
        "rng": trainer.rng_states(),
        "envs": trainer.env_states(),
        "episode_window": list(trainer.episode_window),
        "last_update_stats": trainer.last_update_stats,
    }
    (seed_dir / "trainer_state.json").write_text(json.dumps(state))


def _restore_trainer(seed_dir: Path, trainer: PolicyTrainer) -> None:
    state = json.loads((seed_dir / "trainer_state.json").read_text())
    model = ckpt.load_policy(seed_dir / "policy")
    trainer.model.load_state_dict(model.state_dict())
    ckpt.load_optimizer_into(seed_dir / "optimizer", trainer.optimizer)
    trainer.steps_done = state["steps_done"]
    trainer.set_rng_states(state["rng"])
    trainer.set_env_states(state["envs"])
    trainer.episode_window.extend(state["episode_window"])
    trainer.last_update_stats = state.get("last_update_stats", {})


def _load_or_run_bootstrap(
    config: ExperimentConfig, seed: int, seed_dir: Path
) -> tuple[BootstrapArtifacts, dict]:
    cluster_prefix = seed_dir / "clusters"
    translator_prefix = seed_dir / "translator"
    info_path = seed_dir / "bootstrap.json"
    if info_path.exists():
        info = json.loads(info_path.read_text())
        artifacts = BootstrapArtifacts(
            cluster_model=ckpt.load_cluster_model(cluster_prefix),
            translator=ckpt.load_translator(translator_prefix),
            dataset_summary={int(k): v for k, v in info["cluster_sizes"].items()},
        )
        return artifacts, info
    artifacts, dataset = run_bootstrap(config, seed)
    ckpt.save_cluster_model(cluster_prefix, artifacts.cluster_model)
    ckpt.save_translator(translator_prefix, artifacts.translator)
    info = {
        "cluster_sizes": {str(k): v for k, v in artifacts.dataset_summary.items()},
        "n_clusters": artifacts.cluster_model.n,
        "init_dataset_size": int(len(dataset.obs)),
        "init_env_steps": int(dataset.env_steps),
    }
    info_path.write_text(json.dumps(info, indent=2))

    from .clustering import extract_features_batch
    from .plots import cluster_summary, translation_preview

    labels = artifacts.cluster_model.assign(extract_features_batch(dataset.obs))
    cluster_summary(artifacts.cluster_model, dataset.obs, labels, seed_dir / "clusters.png")
    preview_rng = np.random.Generator(np.random.PCG64(seed))
    pick = preview_rng.choice(len(dataset.obs), size=min(8, len(dataset.obs)), replace=False)
    translation_preview(
        artifacts.translator,
        artifacts.cluster_model,
        dataset.obs[pick],
        seed_dir / "translation_preview.png",
        preview_rng,
    )
    return artifacts, info


def run_seed(config: ExperimentConfig, seed: int, run_dir: Path) -> Path:
    seed_dir = run_dir / f"seed_{seed}"
    if (seed_dir / "DONE").exists():
        return seed_dir
    seed_dir.mkdir(parents=True, exist_ok=True)
    with _Lock(seed_dir):
        started = time.time()
        artifacts = None
        bootstrap_info: dict = {}
        if config.augment == "thinker" and config.pipeline.translate_enabled:
            artifacts, bootstrap_info = _load_or_run_bootstrap(config, seed, seed_dir)
        transform = build_transform(config, artifacts)
        trainer = PolicyTrainer(config, seed, transform)
        if (seed_dir / "trainer_state.json").exists():
            _restore_trainer(seed_dir, trainer)
        writer = MetricsWriter(seed_dir / "metrics.csv")

        trainer, records = run_training(
            config,
            seed,
            transform,
            on_eval=writer.append,
            on_checkpoint=lambda t: _save_trainer(seed_dir, t),
            trainer=trainer,
        )
        summary = {
            "seed": seed,
            "agent": config.agent,
            "ppo_env_steps": trainer.steps_done,
            "init_env_steps": bootstrap_info.get("init_env_steps", 0),
            "total_env_steps": trainer.steps_done + bootstrap_info.get("init_env_steps", 0),
            "final": dataclasses.asdict(records[-1]) if records else None,
            "wall_clock": time.time() - started,
        }
        (seed_dir / "summary.json").write_text(json.dumps(summary, indent=2))
        (seed_dir / "DONE").write_text("ok\n")
    return seed_dir


def run_experiment(config: ExperimentConfig) -> Path:
    """Run every configured seed to total_steps; completed seeds are
    skipped, so re-running a finished experiment is a no-op."""
    config.validate()
    run_dir = run_dir_for(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        save_config(config, cfg_path)
    for seed in config.seeds:
        run_seed(config, seed, run_dir)
    return run_dir


def ablate_clusters(config: ExperimentConfig, counts: tuple[int, ...] = (3, 5, 10)) -> dict:
    """Run the translation agent once per cluster count and summarize the
    final zero-shot rewards per count."""
    from .metrics import read_metrics

    base = config.with_agent("thinker")
    entries = []
    run_dirs = []
    for n in counts:
        cfg = dataclasses.replace(
            base, pipeline=dataclasses.replace(base.pipeline, n_clusters=n)
        )
        run_dir = run_experiment(cfg)
        run_dirs.append(run_dir)
        for seed in cfg.seeds:
            records = read_metrics(run_dir / f"seed_{seed}" / "metrics.csv")
            entries.append(
                {
                    "n_clusters": n,
                    "seed": seed,
                    "final_test_median": records[-1].test_reward_median,
                    "final_test_mean": records[-1].test_reward_mean,
                    "run_dir": str(run_dir),
                }
            )
    medians_by_count = {
        n: float(np.median([e["final_test_mean"] for e in entries if e["n_clusters"] == n]))
        for n in counts
    }
    report = {"counts": list(counts), "runs": entries, "test_median_by_count": medians_by_count}
    out = runs_root(config) / f"ablation-{run_hash(config)}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    from .plots import _box_stats
    import matplotlib.pyplot as plt

    boxes = [
        _box_stats(f"n={n}", [e["final_test_mean"] for e in entries if e["n_clusters"] == n])
        for n in counts
    ]
    fig, ax = plt.subplots(figsize=(1.5 * len(boxes) + 1.5, 4))
    ax.bxp(boxes, showfliers=False)
    ax.set_ylabel("final zero-shot test reward")
    ax.set_title("Cluster-count ablation")
    fig.tight_layout()
    fig.savefig(out / "ablation_boxplot.png", dpi=120)
    plt.close(fig)
    report["report_dir"] = str(out)
    return report
