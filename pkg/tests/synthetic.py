"""Synthetic datasets and independent oracles shared across the test suite."""

from __future__ import annotations

from collections import deque
from itertools import permutations

import numpy as np

from thinkerlab.images import hsv_to_rgb, unit_to_bytes


def glyph_dataset(
    n_per_style: int = 200, size: int = 32, n_styles: int = 3, seed: int = 0
) -> list[np.ndarray]:
    """Solid hue-band backgrounds with one fixed black cross glyph placed at
    a random grid position. Style = hue band; content = glyph position."""
    rng = np.random.default_rng(seed)
    clusters = []
    positions = [(r, c) for r in (8, 16, 24) for c in (8, 16, 24)]
    for k in range(n_styles):
        imgs = np.empty((n_per_style, size, size, 3), dtype=np.uint8)
        for i in range(n_per_style):
            # tight hue spread per style: the cycle can then actually restore
            # the source color, so reconstruction has a low floor
            hue = ((k + 0.5) / n_styles + rng.uniform(-0.04, 0.04)) % 1.0
            img = np.broadcast_to(hsv_to_rgb(hue, 0.7, 0.85), (size, size, 3)).copy()
            r, c = positions[int(rng.integers(len(positions)))]
            img[r - 1 : r + 2, c - 6 : c + 7] = 0.0
            img[r - 6 : r + 7, c - 1 : c + 2] = 0.0
            imgs[i] = unit_to_bytes(img.astype(np.float32))
        clusters.append(imgs)
    return clusters


def separated_blobs(
    n_components: int = 3, n_per: int = 200, dim: int = 8, separation: float = 10.0, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance Gaussian blobs whose centers are ``separation`` sigma
    apart along orthogonal axes."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_components, dim))
    for k in range(n_components):
        centers[k, k % dim] = separation * (k + 1)
    x = np.concatenate([c + rng.normal(size=(n_per, dim)) for c in centers])
    labels = np.repeat(np.arange(n_components), n_per)
    return x, labels


def permutation_purity(pred: np.ndarray, true: np.ndarray, n: int) -> float:
    """Best assignment accuracy over all label permutations."""
    return max(float((pred == np.asarray(p)[true]).mean()) for p in permutations(range(n)))


def gae_bruteforce(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) double-sum advantage oracle:
    A_t = sum_l (gamma*lam)^l * prod_{j<l}(1 - done_{t+j}) * delta_{t+l}."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = len(rewards)
    next_values = np.append(values[1:], bootstrap)
    deltas = rewards + gamma * (1.0 - dones) * next_values - values
    adv = np.zeros(t_len)
    for t in range(t_len):
        coeff = 1.0
        for l in range(t_len - t):
            adv[t] += coeff * deltas[t + l]
            coeff *= gamma * lam * (1.0 - dones[t + l])
    return adv, adv + values


def bfs_path(grid: np.ndarray, start: tuple[int, int], goal: tuple[int, int]):
    """Shortest path (list of cells) through free cells, or None."""
    prev = {start: None}
    q = deque([start])
    while q:
        cell = q.popleft()
        if cell == goal:
            path = [cell]
            while prev[path[-1]] is not None:
                path.append(prev[path[-1]])
            return path[::-1]
        r, c = cell
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (r + dr, c + dc)
            if (
                0 <= nxt[0] < grid.shape[0]
                and 0 <= nxt[1] < grid.shape[1]
                and not grid[nxt]
                and nxt not in prev
            ):
                prev[nxt] = cell
                q.append(nxt)
    return None


class ShortestPathPolicy:
    """Oracle acting policy: rebuilds the level from the seed in ``info``
    and walks the BFS shortest path to the goal."""

    def __init__(self, env_config):
        self.env_config = env_config
        self._plan: list[int] = []
        self._seed = None

    def __call__(self, obs: np.ndarray, info: dict) -> int:
        from thinkerlab.colormaze import make_level

        if info["seed"] != self._seed or info["step"] == 0:
            self._seed = info["seed"]
            level = make_level(self._seed, self.env_config)
            path = bfs_path(level.grid, level.agent_start, level.goal)
            self._plan = []
            for (r0, c0), (r1, c1) in zip(path[:-1], path[1:]):
                self._plan.append({(-1, 0): 0, (1, 0): 1, (0, -1): 2, (0, 1): 3}[(r1 - r0, c1 - c0)])
            self._plan.reverse()
        return self._plan.pop() if self._plan else 4
