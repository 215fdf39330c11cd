"""Zero-shot evaluation on the full level distribution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .colormaze import ColorMaze
from .config import EnvConfig
from .ppo import policy_forward

TEST_SEED_SPACE = 2**31

# An acting policy maps (observation, info dict) -> action. The info dict
# carries the level seed and step counter, so stateful hand-coded policies
# can reconstruct the level.
ActFn = Callable[[np.ndarray, dict], int]


@dataclass
class RewardStats:
    rewards: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def median(self) -> float:
        return float(np.median(self.rewards))

    @property
    def q25(self) -> float:
        return float(np.percentile(self.rewards, 25))

    @property
    def q75(self) -> float:
        return float(np.percentile(self.rewards, 75))


def greedy_policy(model) -> ActFn:
    """Deterministic argmax wrapper around a policy network."""

    def act(obs: np.ndarray, info: dict) -> int:
        logits, _ = policy_forward(model, obs[None])
        return int(np.argmax(logits[0]))

    return act


def evaluate_zero_shot(
    policy,
    env_config: EnvConfig,
    n_episodes: int = 128,
    rng: np.random.Generator | None = None,
    seed_space: int = TEST_SEED_SPACE,
    n_parallel: int = 8,
) -> RewardStats:
    """Run greedy episodes on uniformly random seeds from the full
    distribution (no levels excluded) and summarize episode rewards.

    ``policy`` is either an acting callable (obs, info) -> action, run one
    episode at a time, or a policy network, in which case episodes are
    batched across parallel environment instances for speed. Episode seeds
    are drawn identically in both modes.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = [int(s) for s in rng.integers(seed_space, size=n_episodes)]
    if callable(policy) and not hasattr(policy, "forward"):
        return RewardStats([_run_episode(policy, env_config, s) for s in seeds])
    return _evaluate_batched(policy, env_config, seeds, n_parallel)


def _run_episode(policy: ActFn, env_config: EnvConfig, seed: int) -> float:
    env = ColorMaze(env_config)
    obs = env.reset(seed)
    info = {"seed": seed, "step": 0, "style_family": env.level.style.family}
    total = 0.0
    done = False
    while not done:
        obs, r, done, info = env.step(policy(obs, info))
        total += r
    return total


def _evaluate_batched(
    model, env_config: EnvConfig, seeds: list[int], n_parallel: int
) -> RewardStats:
    n_parallel = min(n_parallel, len(seeds))
    envs = [ColorMaze(env_config) for _ in range(n_parallel)]
    rewards: dict[int, float] = {}
    queue = list(enumerate(seeds))
    active: list[int | None] = []  # episode index per env slot, None = idle
    totals = [0.0] * n_parallel
    for env in envs:
        idx, seed = queue.pop(0)
        env.reset(seed)
        active.append(idx)
    while len(rewards) < len(seeds):
        live = [i for i, a in enumerate(active) if a is not None]
        obs = np.stack([envs[i].current_obs() for i in live])
        logits, _ = policy_forward(model, obs)
        actions = np.argmax(logits, axis=1)
        for k, i in enumerate(live):
            _, r, done, _ = envs[i].step(int(actions[k]))
            totals[i] += r
            if done:
                rewards[active[i]] = totals[i]
                totals[i] = 0.0
                if queue:
                    idx, seed = queue.pop(0)
                    envs[i].reset(seed)
                    active[i] = idx
                else:
                    active[i] = None
    return RewardStats([rewards[i] for i in range(len(seeds))])
