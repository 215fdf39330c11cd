"""Data-augmentation baselines applied to rollout observations.

Both transforms preserve shape and numeric convention and are pure
functions of (observation, rng). They run at training time only, after
which behavior log-probs are recomputed on the augmented observations
(same consistency rule the translator path uses).
"""

from __future__ import annotations

import numpy as np


def random_cutout_color(
    obs: np.ndarray, rng: np.random.Generator, max_frac: float = 0.5
) -> np.ndarray:
    """Fill one uniformly placed rectangle with a uniform random color.

    Side lengths are uniform in [0, max_frac * H] x [0, max_frac * W]; a
    zero-area draw returns the input unchanged.
    """
    if obs.ndim != 3 or obs.shape[-1] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {obs.shape}")
    h, w = obs.shape[:2]
    ch = int(rng.integers(0, int(max_frac * h) + 1))
    cw = int(rng.integers(0, int(max_frac * w) + 1))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    color = rng.random(3)
    out = obs.copy()
    if ch == 0 or cw == 0:
        return out
    if obs.dtype == np.uint8:
        out[top : top + ch, left : left + cw] = np.rint(color * 255.0).astype(np.uint8)
    else:
        out[top : top + ch, left : left + cw] = color.astype(obs.dtype)
    return out


def random_crop(obs: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Zero-pad by ``pad`` on every side, then crop a random H x W window.

    An offset of (pad, pad) reproduces the input; content translates by at
    most ``pad`` pixels per axis.
    """
    if obs.ndim != 3 or obs.shape[-1] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {obs.shape}")
    h, w = obs.shape[:2]
    padded = np.zeros((h + 2 * pad, w + 2 * pad, obs.shape[2]), dtype=obs.dtype)
    padded[pad : pad + h, pad : pad + w] = obs
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    return padded[top : top + h, left : left + w].copy()


def augment_batch(obs: np.ndarray, rng: np.random.Generator, kind: str) -> np.ndarray:
    """Apply the named augmentation independently to each image in a batch."""
    if kind == "cutout_color":
        fn = random_cutout_color
    elif kind == "crop":
        fn = random_crop
    else:
        raise ValueError(f"unknown augmentation {kind!r}")
    out = np.empty_like(obs)
    for i in range(len(obs)):
        out[i] = fn(obs[i], rng)
    return out
