"""Visual-style clustering: feature extraction plus a diagonal-covariance
Gaussian mixture fitted with EM.

The default feature extractor is an 8x8 area-average downsample of the RGB
image (d = 192): style in ColorMaze is dominated by color statistics, so a
pretrained CNN embedding is unnecessary, but any callable mapping an
observation to a fixed-length vector can be plugged in via ``extractors``.

The mixture is fitted by hand rather than delegated to scikit-learn so the
fit is bit-deterministic for a given seed and the per-iteration
log-likelihood trace is available to monotonicity checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError, StateError
from .images import to_unit

FEATURE_GRID = 8
VARIANCE_FLOOR = 1e-6
DEFAULT_EXTRACTOR = "avgpool8"


def extract_features(obs: np.ndarray) -> np.ndarray:
    """Area-average an H x W x 3 image (bytes or unit) to 8 x 8 x 3, flattened."""
    if obs.ndim != 3 or obs.shape[-1] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {obs.shape}")
    return extract_features_batch(obs[None])[0]


def extract_features_batch(obs: np.ndarray) -> np.ndarray:
    """Vectorized extractor for a (N, H, W, 3) batch; returns (N, 192) float64."""
    if obs.ndim != 4 or obs.shape[-1] != 3:
        raise ValueError(f"expected an NxHxWx3 batch, got shape {obs.shape}")
    unit = to_unit(obs).astype(np.float64)
    n, h, w, _ = unit.shape
    k = FEATURE_GRID
    if h % k == 0 and w % k == 0:
        pooled = unit.reshape(n, k, h // k, k, w // k, 3).mean(axis=(2, 4))
    else:
        # uneven block boundaries: average over [i*H//k, (i+1)*H//k) ranges
        rb = (np.arange(k + 1) * h) // k
        cb = (np.arange(k + 1) * w) // k
        pooled = np.empty((n, k, k, 3), dtype=np.float64)
        for i in range(k):
            for j in range(k):
                pooled[:, i, j] = unit[:, rb[i]:rb[i + 1], cb[j]:cb[j + 1]].mean(axis=(1, 2))
    return pooled.reshape(n, k * k * 3)


extractors: dict[str, Callable[[np.ndarray], np.ndarray]] = {DEFAULT_EXTRACTOR: extract_features}


@dataclass
class ClusterModel:
    """Fitted diagonal-covariance Gaussian mixture over feature vectors."""

    weights: np.ndarray  # (n,)
    means: np.ndarray  # (n, d)
    variances: np.ndarray  # (n, d), floored
    feature_extractor_id: str = DEFAULT_EXTRACTOR
    log_likelihood_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        for arr in (self.weights, self.means, self.variances):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_joint(self, features: np.ndarray) -> np.ndarray:
        """(N, n) array of log w_k + log N(x | mu_k, diag sigma_k)."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise StateError(
                f"feature dimension {x.shape[1]} does not match fitted model ({self.dim})"
            )
        diff = x[:, None, :] - self.means[None, :, :]  # (N, n, d)
        quad = np.sum(diff * diff / self.variances[None], axis=2)
        logdet = np.sum(np.log(self.variances), axis=1)
        d = self.dim
        log_pdf = -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))
        return log_pdf + np.log(np.maximum(self.weights, 1e-300))[None, :]

    def posterior(self, features: np.ndarray) -> np.ndarray:
        """(N, n) responsibilities; each row sums to 1."""
        lj = self.log_joint(features)
        lse = logsumexp(lj, axis=1, keepdims=True)
        post = np.exp(lj - lse)
        return post / post.sum(axis=1, keepdims=True)

    def assign(self, features: np.ndarray) -> np.ndarray:
        """Hard labels: argmax posterior, ties to the lowest index."""
        return np.argmax(self.posterior(features), axis=1)


def _kmeans_pp_centers(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((n, x.shape[1]), dtype=np.float64)
    centers[0] = x[int(rng.integers(len(x)))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for k in range(1, n):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(len(x)))
        else:
            pick = int(rng.choice(len(x), p=d2 / total))
        centers[k] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[k]) ** 2, axis=1))
    return centers


def fit_clusters(
    features: np.ndarray,
    n: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-3,
    feature_extractor_id: str = DEFAULT_EXTRACTOR,
) -> ClusterModel:
    """EM fit with k-means++-style initialization.

    Stops after ``max_iter`` iterations or once the relative log-likelihood
    improvement drops below ``tol``.
    """
    if n < 2:
        raise ConfigError(f"at least two clusters are required, got n={n}")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be a 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite entries")
    if len(x) < 10 * n:
        raise DataError(f"need at least {10 * n} samples to fit {n} clusters, got {len(x)}")

    rng = np.random.Generator(np.random.PCG64(seed))
    centers = _kmeans_pp_centers(x, n, rng)

    # hard-assignment warm start
    d2 = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    weights = np.full(n, 1.0 / n)
    means = centers.copy()
    variances = np.tile(global_var, (n, 1))
    counts = np.bincount(labels, minlength=n)
    for k in range(n):
        if counts[k] > 0:
            weights[k] = counts[k] / len(x)
            means[k] = x[labels == k].mean(axis=0)
            variances[k] = np.maximum(x[labels == k].var(axis=0), VARIANCE_FLOOR)
    weights = weights / weights.sum()

    model = ClusterModel(weights, means, variances, feature_extractor_id)
    trace: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        lj = model.log_joint(x)
        per_sample = logsumexp(lj, axis=1)
        ll = float(per_sample.sum())
        trace.append(ll)
        resp = np.exp(lj - per_sample[:, None])

        nk = resp.sum(axis=0)
        weights = nk / nk.sum()
        safe_nk = np.maximum(nk, 1e-12)
        means = (resp.T @ x) / safe_nk[:, None]
        sq = resp.T @ (x * x) / safe_nk[:, None]
        variances = np.maximum(sq - means * means, VARIANCE_FLOOR)
        model = ClusterModel(weights, means, variances, feature_extractor_id)

        if np.isfinite(prev_ll) and ll - prev_ll < tol * abs(prev_ll):
            break
        prev_ll = ll

    model.log_likelihood_trace.extend(trace)
    return model


def assign_cluster(model: ClusterModel, obs: np.ndarray) -> tuple[int, np.ndarray]:
    """Cluster id and posterior vector for one observation."""
    extractor = extractors[model.feature_extractor_id]
    feats = extractor(obs)
    post = model.posterior(feats[None])[0]
    return int(np.argmax(post)), post
