"""Figure emission: generalization boxplots, training curves, translation
previews and cluster summaries.

Every number a figure shows is computed here from persisted metrics and
returned to the caller (and written to a JSON sidecar), so plots are fully
recomputable and checkable against the CSV files.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .clustering import ClusterModel
from .errors import DataError
from .images import Convention, convert, infer_convention
from .metrics import read_metrics
from .styletransfer import TranslatorModel, translate_batch


def seed_dirs(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    dirs = sorted(p for p in run_dir.glob("seed_*") if p.is_dir())
    if not dirs:
        raise DataError(f"no seed directories under {run_dir}")
    return dirs


def final_test_means(run_dir: str | Path) -> list[float]:
    """Final test_reward_mean per seed of one run directory."""
    values = []
    missing = []
    for sd in seed_dirs(run_dir):
        path = sd / "metrics.csv"
        if not path.exists():
            missing.append(str(path))
            continue
        records = read_metrics(path)
        if not records:
            missing.append(str(path))
            continue
        values.append(records[-1].test_reward_mean)
    if missing:
        raise DataError(f"missing metrics for: {missing}")
    return values


def run_label(run_dir: str | Path) -> str:
    cfg_path = Path(run_dir) / "config.json"
    if cfg_path.exists():
        data = json.loads(cfg_path.read_text())
        from .config import AGENT_BY_AUGMENT

        return AGENT_BY_AUGMENT.get(data.get("augment", "none"), Path(run_dir).name)
    return Path(run_dir).name


def _box_stats(label: str, values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {
        "label": label,
        "med": float(np.percentile(arr, 50)),
        "q1": float(np.percentile(arr, 25)),
        "q3": float(np.percentile(arr, 75)),
        "whislo": float(arr.min()),
        "whishi": float(arr.max()),
        "mean": float(arr.mean()),
        "fliers": [],
    }


def emit_plots(run_dirs: list[str | Path], out_dir: str | Path) -> dict:
    """Boxplot of final test rewards per run, plus training curves.

    Returns the exact box statistics drawn, keyed by run label, and writes
    them to ``plot_stats.json`` beside the figures.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    boxes = []
    for rd in run_dirs:
        boxes.append(_box_stats(run_label(rd), final_test_means(rd)))

    fig, ax = plt.subplots(figsize=(1.8 * len(boxes) + 1.5, 4))
    ax.bxp(boxes, showfliers=False, showmeans=False)
    ax.set_ylabel("final zero-shot test reward")
    ax.set_title("Generalization across seeds")
    fig.tight_layout()
    fig.savefig(out_dir / "generalization_boxplot.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for rd in run_dirs:
        label = run_label(rd)
        curves = []
        for sd in seed_dirs(rd):
            records = read_metrics(sd / "metrics.csv")
            steps = [r.step for r in records]
            train = [r.train_reward_mean for r in records]
            curves.append((steps, train))
            ax.plot(steps, train, alpha=0.25)
        if curves:
            ax.plot(*curves[0], alpha=0.0)  # keep color cycle aligned with label
            ax.plot(curves[0][0], np.mean([c[1] for c in curves], axis=0), label=label)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("train reward (rolling mean)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "training_curves.png", dpi=120)
    plt.close(fig)

    stats = {b["label"]: b for b in boxes}
    (out_dir / "plot_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True))
    return stats


def _to_byte_image(img: np.ndarray) -> np.ndarray:
    return convert(img, infer_convention(img), Convention.BYTES)


def image_grid(rows: list[np.ndarray], path: str | Path, pad: int = 2) -> None:
    """Save a grid PNG; ``rows`` is a list of (N, H, W, 3) byte batches."""
    rows = [np.asarray(r) for r in rows]
    n = min(len(r) for r in rows)
    h, w = rows[0].shape[1:3]
    grid = np.full(
        (len(rows) * (h + pad) + pad, n * (w + pad) + pad, 3), 255, dtype=np.uint8
    )
    for i, row in enumerate(rows):
        for j in range(n):
            top = pad + i * (h + pad)
            left = pad + j * (w + pad)
            grid[top : top + h, left : left + w] = _to_byte_image(row[j])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(path)


def translation_preview(
    translator: TranslatorModel,
    cluster_model: ClusterModel,
    obs_batch: np.ndarray,
    path: str | Path,
    rng: np.random.Generator,
) -> np.ndarray:
    """Two-row grid: originals on top, their translations below.

    Returns the translated batch for further inspection.
    """
    translated = translate_batch(translator, cluster_model, obs_batch, rng)
    image_grid([obs_batch, translated], path)
    return translated


def cluster_summary(
    cluster_model: ClusterModel,
    obs: np.ndarray,
    labels: np.ndarray,
    path: str | Path,
) -> dict[int, int]:
    """One mean image per cluster, annotated by membership counts in the
    returned dict."""
    means = []
    counts = {}
    for k in range(cluster_model.n):
        members = obs[labels == k]
        counts[k] = int(len(members))
        if len(members):
            means.append(members.astype(np.float64).mean(axis=0).astype(np.uint8))
        else:
            means.append(np.zeros(obs.shape[1:], dtype=np.uint8))
    image_grid([np.stack(means)], path)
    return counts
