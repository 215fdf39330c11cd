"""ColorMaze: a seeded procedural maze with style-confounded rendering.

Levels vary along two independent axes:

* layout -- a randomized depth-first maze carve, so every free cell is
  reachable from every other;
* style  -- a hue family derived from the seed plus within-family hue and
  texture draws. Style never touches dynamics or reward.

Walls are always dark (value <= ~0.55) and the background always bright
(value ~0.9) regardless of hue family, so a per-pixel value threshold
recovers the structural wall mask under any style. The agent renders as a
pure white square and the goal as a black-bordered yellow square in every
style ("semantic markers").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EnvConfig
from .errors import StateError
from .images import hsv_to_rgb

ACTION_COUNT = 5
ACTIONS = ("up", "down", "left", "right", "noop")
_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

BACKGROUND_SATURATION = 0.35
BACKGROUND_VALUE = 0.90
WALL_SATURATION = 0.70
WALL_VALUE = 0.45
WALL_TEXTURE_AMP = 0.08
WALL_TEXTURE_PERIOD = 8.0
# Anything below this per-pixel value (max of RGB) is structural: walls or
# the goal border; the background, agent and goal fill all sit above it.
STRUCTURE_VALUE_THRESHOLD = 0.65

_MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a platform-stable integer hash."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def style_family(seed: int, n_families: int) -> int:
    """Hue family of a level seed: ``hash(seed) mod n_families``."""
    return mix64(seed) % n_families


@dataclass(frozen=True)
class StyleParams:
    family: int
    background_hue: float
    wall_hue: float
    texture_phase: float


@dataclass(frozen=True)
class LevelSpec:
    seed: int
    grid: np.ndarray  # (G, G) bool, True = wall
    agent_start: tuple[int, int]
    goal: tuple[int, int]
    style: StyleParams


def _carve_maze(size: int, rng: np.random.Generator) -> np.ndarray:
    """Randomized DFS carve over the odd-coordinate room lattice."""
    grid = np.ones((size, size), dtype=bool)
    rooms = [(r, c) for r in range(1, size - 1, 2) for c in range(1, size - 1, 2)]
    start = rooms[int(rng.integers(len(rooms)))]
    grid[start] = False
    stack = [start]
    while stack:
        r, c = stack[-1]
        neighbors = []
        for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2)):
            nr, nc = r + dr, c + dc
            if 1 <= nr < size - 1 and 1 <= nc < size - 1 and grid[nr, nc]:
                neighbors.append((nr, nc))
        if neighbors:
            nr, nc = neighbors[int(rng.integers(len(neighbors)))]
            grid[(r + nr) // 2, (c + nc) // 2] = False
            grid[nr, nc] = False
            stack.append((nr, nc))
        else:
            stack.pop()
    return grid


def make_level(seed: int, config: EnvConfig) -> LevelSpec:
    """Deterministically expand a seed into a level (layout + style)."""
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    config.validate()
    layout_rng, pick_rng = [
        np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(2)
    ]
    grid = _carve_maze(config.grid_size, layout_rng)
    free = np.argwhere(~grid)
    idx = pick_rng.choice(len(free), size=2, replace=False)
    agent_start = tuple(int(v) for v in free[idx[0]])
    goal = tuple(int(v) for v in free[idx[1]])

    family = style_family(seed, config.style_families)
    style_rng = np.random.Generator(np.random.PCG64(mix64(seed ^ 0xC0108A2E)))
    band = 1.0 / config.style_families
    style = StyleParams(
        family=family,
        background_hue=(family + float(style_rng.random())) * band,
        wall_hue=(family + float(style_rng.random())) * band,
        texture_phase=float(style_rng.random()) * 2.0 * np.pi,
    )
    grid.flags.writeable = False
    return LevelSpec(seed=seed, grid=grid, agent_start=agent_start, goal=goal, style=style)


def _cell_pixel_index(obs_size: int, grid_size: int) -> np.ndarray:
    return (np.arange(obs_size) * grid_size) // obs_size


def render(level: LevelSpec, agent_cell: tuple[int, int], obs_size: int) -> np.ndarray:
    """Render a byte-convention observation of the level at one agent cell."""
    g = level.grid.shape[0]
    r, c = agent_cell
    if not (0 <= r < g and 0 <= c < g) or level.grid[r, c]:
        raise ValueError(f"agent cell {agent_cell} is not a free cell")
    idx = _cell_pixel_index(obs_size, g)
    cell_r = idx[:, None]
    cell_c = idx[None, :]
    wall = level.grid[cell_r, cell_c]

    img = np.empty((obs_size, obs_size, 3), dtype=float)
    img[:] = hsv_to_rgb(level.style.background_hue, BACKGROUND_SATURATION, BACKGROUND_VALUE)

    px = np.arange(obs_size)
    phase = 2.0 * np.pi * (px[:, None] + px[None, :]) / WALL_TEXTURE_PERIOD
    wall_value = WALL_VALUE + WALL_TEXTURE_AMP * np.sin(phase + level.style.texture_phase)
    wall_rgb = hsv_to_rgb(level.style.wall_hue, WALL_SATURATION, wall_value)
    img[wall] = wall_rgb[wall]

    def cell_slice(k: int) -> slice:
        lo = int(np.searchsorted(idx, k, side="left"))
        hi = int(np.searchsorted(idx, k, side="right"))
        return slice(lo, hi)

    gr, gc = level.goal
    rs, cs = cell_slice(gr), cell_slice(gc)
    img[rs, cs] = (0.0, 0.0, 0.0)
    inner_r = slice(rs.start + 1, max(rs.stop - 1, rs.start + 1))
    inner_c = slice(cs.start + 1, max(cs.stop - 1, cs.start + 1))
    img[inner_r, inner_c] = (1.0, 0.92, 0.0)

    ar, ac = agent_cell
    img[cell_slice(ar), cell_slice(ac)] = (1.0, 1.0, 1.0)

    return np.clip(np.rint(img * 255.0), 0.0, 255.0).astype(np.uint8)


def wall_mask(obs: np.ndarray) -> np.ndarray:
    """Structural-pixel mask: pixels darker than the structure threshold."""
    if obs.dtype == np.uint8:
        value = obs.max(axis=-1).astype(float) / 255.0
    else:
        value = np.asarray(obs, dtype=float).max(axis=-1)
    return value < STRUCTURE_VALUE_THRESHOLD


def train_level_seeds(config: EnvConfig) -> list[int]:
    """Training seeds. Plain mode: {0..n_train-1}. Holdout mode: the first
    n_train seeds whose style family lies in the lower half, so evaluation
    on the full seed space includes visually unseen families."""
    if not config.holdout_styles:
        return list(range(config.n_train_levels))
    allowed = config.style_families // 2
    seeds: list[int] = []
    seed = 0
    while len(seeds) < config.n_train_levels:
        if style_family(seed, config.style_families) < allowed:
            seeds.append(seed)
        seed += 1
    return seeds


class ColorMaze:
    """Single-threaded gym-style environment over seeded LevelSpecs.

    Not shareable across threads; run several instances for parallel
    collection.
    """

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.level: LevelSpec | None = None
        self.agent_cell: tuple[int, int] | None = None
        self.steps = 0
        self._done = True

    def reset(self, seed: int) -> np.ndarray:
        self.level = make_level(seed, self.config)
        self.agent_cell = self.level.agent_start
        self.steps = 0
        self._done = False
        return self._render()

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        if self.level is None:
            raise StateError("step() before reset()")
        if self._done:
            raise StateError("step() after episode end; call reset()")
        if not isinstance(action, (int, np.integer)) or not 0 <= int(action) < ACTION_COUNT:
            raise ValueError(f"action must be an integer in [0, {ACTION_COUNT}), got {action!r}")
        dr, dc = _DELTAS[int(action)]
        nr, nc = self.agent_cell[0] + dr, self.agent_cell[1] + dc
        g = self.config.grid_size
        if 0 <= nr < g and 0 <= nc < g and not self.level.grid[nr, nc]:
            self.agent_cell = (nr, nc)
        self.steps += 1
        reached = self.agent_cell == self.level.goal
        reward = 1.0 if reached else 0.0
        self._done = reached or self.steps >= self.config.max_steps
        info = {
            "seed": self.level.seed,
            "step": self.steps,
            "style_family": self.level.style.family,
        }
        return self._render(), reward, self._done, info

    @property
    def done(self) -> bool:
        return self._done

    def current_obs(self) -> np.ndarray:
        if self.level is None:
            raise StateError("current_obs() before reset()")
        return self._render()

    def _render(self) -> np.ndarray:
        return render(self.level, self.agent_cell, self.config.obs_size)
