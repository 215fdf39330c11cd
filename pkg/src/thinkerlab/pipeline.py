"""End-to-end orchestration: initial data collection, clustering, translator
training, then PPO whose train batches are rewritten by an observation
transform (style translation or a data-augmentation baseline).

The transform never touches actions, rewards or done flags; after it runs,
behavior log-probs and value estimates are recomputed on the transformed
observations so the PPO ratio starts at exactly 1. With no transform the
loop is plain PPO, bit for bit.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .augment import augment_batch
from .clustering import ClusterModel, extract_features_batch, fit_clusters
from .colormaze import ACTION_COUNT, ColorMaze, train_level_seeds
from .config import ExperimentConfig, PipelineConfig
from .errors import DataError, StateError
from .evaluate import RewardStats, evaluate_zero_shot, greedy_policy
from .metrics import MetricsRecord
from .ppo import ImpalaCnn, RolloutBuffer, collect_rollout, forward_in_chunks, update_policy
from .styletransfer import TranslatorModel, train_translator, translate_batch

Transform = Callable[[np.ndarray, np.random.Generator], np.ndarray]

_ROOT_SALT = 0x7A11


@dataclass
class ObservationDataset:
    """Initial exploration dataset, deduplicated by (level seed, step) key."""

    obs: np.ndarray  # (M, H, W, 3) uint8
    seeds: np.ndarray  # (M,) level seed per observation
    env_steps: int  # environment steps actually consumed


@dataclass
class BootstrapArtifacts:
    cluster_model: ClusterModel
    translator: TranslatorModel
    dataset_summary: dict[int, int]  # cluster id -> training-set size


def collect_initial_dataset(
    envs: list[ColorMaze],
    n_obs: int,
    rng: np.random.Generator,
    seed_sampler: Callable[[np.random.Generator], int],
) -> ObservationDataset:
    """Uniform-random exploration across train levels until ``n_obs``
    distinct observations are stored.

    A ColorMaze observation is fully determined by (level seed, agent
    cell), so that pair is the deduplication key: every stored image is
    pixel-unique and episodes keep contributing until their level is
    exhausted.
    """
    seen: set[tuple[int, tuple[int, int]]] = set()
    obs_list: list[np.ndarray] = []
    seed_list: list[int] = []
    env_steps = 0
    stall_budget = max(200 * n_obs, 100_000)

    def record(env: ColorMaze, ob: np.ndarray) -> None:
        key = (env.level.seed, env.agent_cell)
        if key not in seen and len(obs_list) < n_obs:
            seen.add(key)
            obs_list.append(ob)
            seed_list.append(env.level.seed)

    for env in envs:
        record(env, env.reset(int(seed_sampler(rng))))
    while len(obs_list) < n_obs:
        if env_steps > stall_budget:
            raise DataError(
                f"collected only {len(obs_list)} of {n_obs} distinct observations in "
                f"{env_steps} steps; the configured levels cannot supply that many"
            )
        for env in envs:
            if env.done:
                record(env, env.reset(int(seed_sampler(rng))))
                continue
            ob, _, _, _ = env.step(int(rng.integers(ACTION_COUNT)))
            env_steps += 1
            record(env, ob)
            if len(obs_list) >= n_obs:
                break
    return ObservationDataset(np.stack(obs_list), np.asarray(seed_list), env_steps)


def bootstrap_setup(
    dataset: ObservationDataset,
    n_clusters: int,
    config: ExperimentConfig,
    seed: int,
) -> BootstrapArtifacts:
    """Fit the style clusters, partition the dataset, and train the
    translator once. If assignment leaves a cluster empty the fit retries
    with one fewer cluster, down to two."""
    if len(dataset.obs) == 0:
        raise DataError("initial dataset is empty")
    features = extract_features_batch(dataset.obs)
    n = n_clusters
    while True:
        cluster_model = fit_clusters(features, n, seed)
        labels = cluster_model.assign(features)
        sizes = np.bincount(labels, minlength=n)
        if np.all(sizes > 0):
            break
        if n <= 2:
            raise DataError("could not populate even two clusters from the initial dataset")
        n -= 1
    partitions = [dataset.obs[labels == k] for k in range(n)]
    gan_seed = int(np.random.SeedSequence([seed, 0x6A9]).generate_state(1)[0])
    translator = train_translator(
        partitions, config.gan, gan_seed, balanced=config.pipeline.balanced_clusters
    )
    summary = {int(k): int(sizes[k]) for k in range(n)}
    return BootstrapArtifacts(cluster_model, translator, summary)


def make_translate_transform(
    artifacts: BootstrapArtifacts, pipeline: PipelineConfig
) -> Transform:
    if artifacts.translator.n_clusters != artifacts.cluster_model.n:
        raise StateError("translator and cluster model disagree on n")

    def transform(obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if pipeline.translate_prob >= 1.0:
            return translate_batch(artifacts.translator, artifacts.cluster_model, obs, rng)
        out = obs.copy()
        mask = rng.random(len(obs)) < pipeline.translate_prob
        if mask.any():
            out[mask] = translate_batch(
                artifacts.translator, artifacts.cluster_model, obs[mask], rng
            )
        return out

    return transform


def make_augment_transform(kind: str) -> Transform:
    def transform(obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return augment_batch(obs, rng, kind)

    return transform


def _recompute_behavior_stats(model: ImpalaCnn, buffer: RolloutBuffer) -> None:
    """Re-evaluate values and stored-action log-probs on (transformed)
    buffer observations; these become the frozen PPO baselines."""
    tp1, n = buffer.obs.shape[:2]
    flat = buffer.obs.reshape((tp1 * n,) + buffer.obs.shape[2:])
    logits, values = forward_in_chunks(model, flat)
    buffer.value_estimate = values.reshape(tp1, n).astype(np.float32)
    t = tp1 - 1
    z = logits[: t * n].astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    logp_all = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    acts = buffer.actions.reshape(t * n)
    logp = logp_all[np.arange(t * n), acts]
    buffer.behavior_logprob = logp.reshape(t, n).astype(np.float32)


class PolicyTrainer:
    """One seed's PPO loop with independent RNG streams for rollouts,
    updates, evaluation and observation transforms, so enabling or
    disabling a transform does not perturb the other streams."""

    def __init__(self, config: ExperimentConfig, seed: int, transform: Transform | None = None):
        config.validate()
        self.config = config
        self.seed = seed
        self.transform = transform
        streams = np.random.SeedSequence([_ROOT_SALT, seed]).spawn(4)
        self.rollout_rng = np.random.Generator(np.random.PCG64(streams[0]))
        self.update_rng = np.random.Generator(np.random.PCG64(streams[1]))
        self.eval_rng = np.random.Generator(np.random.PCG64(streams[2]))
        self.transform_rng = np.random.Generator(np.random.PCG64(streams[3]))

        torch.manual_seed(int(np.random.SeedSequence([_ROOT_SALT, seed, 1]).generate_state(1)[0]))
        self.model = ImpalaCnn(ACTION_COUNT, config.env.obs_size, config.policy_net)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.ppo.lr)

        self.train_seeds = train_level_seeds(config.env)
        self.envs = [ColorMaze(config.env) for _ in range(config.n_envs)]
        for env in self.envs:
            env.reset(self._sample_train_seed(self.rollout_rng))
        self.steps_done = 0
        self.episode_window: deque[float] = deque(maxlen=100)
        self.last_update_stats: dict[str, float] = {}

    def _sample_train_seed(self, rng: np.random.Generator) -> int:
        return int(self.train_seeds[int(rng.integers(len(self.train_seeds)))])

    def train_one_batch(self) -> dict[str, float]:
        hyper = self.config.ppo
        steps_per_env = hyper.train_batch // self.config.n_envs
        buffer = collect_rollout(
            self.envs,
            self.model,
            steps_per_env,
            self.rollout_rng,
            self._sample_train_seed,
            fragment=hyper.rollout_fragment,
        )
        self.episode_window.extend(buffer.episode_returns)
        if self.transform is not None:
            tp1, n = buffer.obs.shape[:2]
            flat = buffer.obs.reshape((tp1 * n,) + buffer.obs.shape[2:])
            buffer.obs = self.transform(flat, self.transform_rng).reshape(buffer.obs.shape)
            _recompute_behavior_stats(self.model, buffer)
        buffer.compute_advantages(hyper.gamma, hyper.gae_lambda)
        stats = update_policy(self.model, self.optimizer, buffer, hyper, self.update_rng)
        self.steps_done += buffer.steps
        self.last_update_stats = stats
        return stats

    def evaluate(self) -> RewardStats:
        return evaluate_zero_shot(
            greedy_policy(self.model),
            self.config.env,
            n_episodes=self.config.eval_episodes,
            rng=self.eval_rng,
        )

    def train_reward_mean(self) -> float:
        if not self.episode_window:
            return float("nan")
        return float(np.mean(self.episode_window))

    def metrics_record(self, stats: RewardStats, wall_clock: float) -> MetricsRecord:
        upd = self.last_update_stats
        return MetricsRecord(
            step=self.steps_done,
            train_reward_mean=self.train_reward_mean(),
            test_reward_mean=stats.mean,
            test_reward_median=stats.median,
            test_reward_q25=stats.q25,
            test_reward_q75=stats.q75,
            policy_loss=upd.get("policy_loss", float("nan")),
            value_loss=upd.get("value_loss", float("nan")),
            entropy=upd.get("entropy", float("nan")),
            approx_kl=upd.get("approx_kl", float("nan")),
            wall_clock=wall_clock,
        )

    # -- state for resumable runs ------------------------------------------

    def rng_states(self) -> dict:
        return {
            "rollout": self.rollout_rng.bit_generator.state,
            "update": self.update_rng.bit_generator.state,
            "eval": self.eval_rng.bit_generator.state,
            "transform": self.transform_rng.bit_generator.state,
        }

    def set_rng_states(self, states: dict) -> None:
        self.rollout_rng.bit_generator.state = states["rollout"]
        self.update_rng.bit_generator.state = states["update"]
        self.eval_rng.bit_generator.state = states["eval"]
        self.transform_rng.bit_generator.state = states["transform"]

    def env_states(self) -> list[dict]:
        return [
            {
                "seed": env.level.seed,
                "agent_cell": list(env.agent_cell),
                "steps": env.steps,
                "done": env.done,
            }
            for env in self.envs
        ]

    def set_env_states(self, states: list[dict]) -> None:
        for env, st in zip(self.envs, states):
            env.reset(st["seed"])
            env.agent_cell = tuple(st["agent_cell"])
            env.steps = st["steps"]
            env._done = st["done"]


def run_training(
    config: ExperimentConfig,
    seed: int,
    transform: Transform | None,
    on_eval: Callable[[MetricsRecord], None] | None = None,
    on_checkpoint: Callable[[PolicyTrainer], None] | None = None,
    trainer: PolicyTrainer | None = None,
) -> tuple[PolicyTrainer, list[MetricsRecord]]:
    """Drive a trainer to ``config.total_steps``, evaluating every
    ``config.eval_every`` steps and once more at the end."""
    trainer = trainer or PolicyTrainer(config, seed, transform)
    records: list[MetricsRecord] = []
    start = time.time()

    def next_eval_after(step: int) -> int:
        return (step // config.eval_every + 1) * config.eval_every

    next_eval = next_eval_after(trainer.steps_done)
    last_eval_step = trainer.steps_done if trainer.steps_done else -1
    while trainer.steps_done < config.total_steps:
        trainer.train_one_batch()
        if trainer.steps_done >= next_eval or trainer.steps_done >= config.total_steps:
            stats = trainer.evaluate()
            record = trainer.metrics_record(stats, time.time() - start)
            records.append(record)
            last_eval_step = trainer.steps_done
            if on_eval is not None:
                on_eval(record)
            if on_checkpoint is not None:
                on_checkpoint(trainer)
            next_eval = next_eval_after(trainer.steps_done)
    return trainer, records


def build_transform(
    config: ExperimentConfig, artifacts: BootstrapArtifacts | None
) -> Transform | None:
    """Map the configured augmentation selection onto a transform."""
    if config.augment == "thinker":
        if not config.pipeline.translate_enabled:
            return None
        if artifacts is None:
            raise StateError("translation requires bootstrap artifacts; run the bootstrap first")
        return make_translate_transform(artifacts, config.pipeline)
    if config.augment in ("cutout_color", "crop"):
        return make_augment_transform(config.augment)
    return None


def run_bootstrap(
    config: ExperimentConfig, seed: int
) -> tuple[BootstrapArtifacts, ObservationDataset]:
    """Initial-dataset collection plus cluster/translator fitting."""
    streams = np.random.SeedSequence([_ROOT_SALT, seed, 2]).spawn(1)
    rng = np.random.Generator(np.random.PCG64(streams[0]))
    train_seeds = train_level_seeds(config.env)
    envs = [ColorMaze(config.env) for _ in range(config.n_envs)]

    def sampler(r: np.random.Generator) -> int:
        return int(train_seeds[int(r.integers(len(train_seeds)))])

    dataset = collect_initial_dataset(envs, config.pipeline.init_dataset_size, rng, sampler)
    artifacts = bootstrap_setup(dataset, config.pipeline.n_clusters, config, seed)
    return artifacts, dataset
