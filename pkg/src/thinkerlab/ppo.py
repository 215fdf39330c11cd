"""PPO with GAE and a residual convolutional policy/value network.

The policy protocol is any ``nn.Module`` whose forward maps a prepared
observation tensor to ``(logits, values)``; the convolutional network here
is the default for image observations, and tests use small MLPs for
vector-observation MDPs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import PolicyNetConfig, PpoHyper


class ImpalaBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        h = self.conv1(F.relu(x))
        h = self.conv2(F.relu(h))
        return x + h


class ImpalaCnn(nn.Module):
    """Three stages of conv / max-pool / two residual blocks, then a dense
    layer feeding categorical-policy and value heads."""

    def __init__(self, action_count: int, obs_size: int, net: PolicyNetConfig | None = None):
        super().__init__()
        net = net or PolicyNetConfig()
        self.action_count = action_count
        self.obs_size = obs_size
        self.net_config = net
        stages: list[nn.Module] = []
        in_ch = 3
        size = obs_size
        for ch in net.channels:
            stages += [
                nn.Conv2d(in_ch, ch, 3, 1, 1),
                nn.MaxPool2d(3, stride=2, padding=1),
                ImpalaBlock(ch),
                ImpalaBlock(ch),
            ]
            in_ch = ch
            size = (size + 1) // 2
        self.torso = nn.Sequential(*stages)
        self.dense = nn.Linear(in_ch * size * size, net.dense)
        self.policy_head = nn.Linear(net.dense, action_count)
        self.value_head = nn.Linear(net.dense, 1)
        with torch.no_grad():
            self.policy_head.weight.mul_(0.01)
            self.policy_head.bias.zero_()

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        h = F.relu(self.torso(x))
        h = F.relu(self.dense(h.flatten(1)))
        return self.policy_head(h), self.value_head(h).squeeze(-1)


def obs_to_tensor(obs: np.ndarray) -> torch.Tensor:
    """Prepare raw observations for a policy forward pass.

    Byte images (N, H, W, 3) become unit-range NCHW float32; float vectors
    pass through as float32.
    """
    if obs.ndim == 4 and obs.shape[-1] == 3:
        if obs.dtype == np.uint8:
            arr = obs.astype(np.float32) / np.float32(255.0)
        else:
            arr = np.asarray(obs, dtype=np.float32)
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
    if obs.ndim == 2:
        return torch.from_numpy(np.ascontiguousarray(obs.astype(np.float32)))
    raise ValueError(f"unsupported observation batch shape {obs.shape}")


def policy_forward(model: nn.Module, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic logits and value estimates for a raw observation batch."""
    with torch.inference_mode():
        logits, values = model(obs_to_tensor(obs))
    return logits.numpy().copy(), values.numpy().copy()


def forward_in_chunks(
    model: nn.Module, obs: np.ndarray, chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    outs_l, outs_v = [], []
    for lo in range(0, len(obs), chunk):
        logits, values = policy_forward(model, obs[lo : lo + chunk])
        outs_l.append(logits)
        outs_v.append(values)
    return np.concatenate(outs_l), np.concatenate(outs_v)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: np.ndarray | float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation.

    delta_t = r_t + gamma * (1 - done_t) * V_{t+1} - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    returns = advantages + values

    Accepts (T,) or (T, N) arrays; ``bootstrap_value`` supplies V_T.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(
            f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lam must lie in [0, 1]")
    t_len = rewards.shape[0]
    next_values = np.concatenate(
        [values[1:], np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), rewards.shape[1:])[None]]
    )
    advantages = np.zeros_like(rewards)
    gae = np.zeros(rewards.shape[1:], dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * not_done * next_values[t] - values[t]
        gae = delta + gamma * lam * not_done * gae
        advantages[t] = gae
    return advantages, advantages + values


@dataclass
class RolloutBuffer:
    """Fragment-aligned rollout storage. ``obs`` holds T + 1 rows per env;
    the final row is the bootstrap observation."""

    obs: np.ndarray  # (T + 1, N, ...) raw observations
    actions: np.ndarray  # (T, N) int64
    rewards: np.ndarray  # (T, N) float32
    dones: np.ndarray  # (T, N) bool
    behavior_logprob: np.ndarray  # (T, N) float32
    value_estimate: np.ndarray  # (T + 1, N) float32, includes bootstrap row
    fragment: int
    episode_returns: list[float] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.actions.shape[0] * self.actions.shape[1]

    def compute_advantages(self, gamma: float, lam: float) -> None:
        adv, ret = compute_gae(
            self.rewards,
            self.value_estimate[:-1],
            self.dones,
            self.value_estimate[-1],
            gamma,
            lam,
        )
        self.advantages = adv.astype(np.float32)
        self.returns = ret.astype(np.float32)


def sample_actions(
    logits: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample one action per row from categorical logits; returns
    (actions, log-probabilities) computed in float64."""
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(len(p))
    cum = np.cumsum(p, axis=1)
    actions = (u[:, None] < cum).argmax(axis=1)
    logp = np.log(p[np.arange(len(p)), actions])
    return actions.astype(np.int64), logp


def collect_rollout(
    envs: list,
    model: nn.Module,
    steps_per_env: int,
    rng: np.random.Generator,
    seed_sampler,
    fragment: int = 256,
) -> RolloutBuffer:
    """Drive the environments for ``steps_per_env`` steps each, sampling
    actions from the policy. Episodes auto-reset on done with a fresh seed
    from ``seed_sampler(rng)``. Environments must already be reset; their
    current observation is read by one initial forward pass.
    """
    if steps_per_env % fragment != 0:
        raise ValueError(f"steps_per_env={steps_per_env} must be a multiple of fragment={fragment}")
    n = len(envs)
    current = np.stack([env.current_obs() for env in envs])
    obs = np.empty((steps_per_env + 1, n) + current.shape[1:], dtype=current.dtype)
    actions = np.empty((steps_per_env, n), dtype=np.int64)
    rewards = np.empty((steps_per_env, n), dtype=np.float32)
    dones = np.empty((steps_per_env, n), dtype=bool)
    logprobs = np.empty((steps_per_env, n), dtype=np.float32)
    values = np.empty((steps_per_env + 1, n), dtype=np.float32)
    episode_returns: list[float] = []
    running = np.zeros(n, dtype=np.float64)

    for t in range(steps_per_env):
        obs[t] = current
        logits, vals = policy_forward(model, current)
        acts, logp = sample_actions(logits, rng)
        actions[t] = acts
        logprobs[t] = logp
        values[t] = vals
        for i, env in enumerate(envs):
            nxt, r, done, _ = env.step(int(acts[i]))
            rewards[t, i] = r
            dones[t, i] = done
            running[i] += r
            if done:
                episode_returns.append(float(running[i]))
                running[i] = 0.0
                nxt = env.reset(int(seed_sampler(rng)))
            current[i] = nxt
    obs[steps_per_env] = current
    _, vals = policy_forward(model, current)
    values[steps_per_env] = vals

    return RolloutBuffer(
        obs=obs,
        actions=actions,
        rewards=rewards,
        dones=dones,
        behavior_logprob=logprobs,
        value_estimate=values,
        fragment=fragment,
        episode_returns=episode_returns,
    )


def ppo_loss(
    model: nn.Module, minibatch: dict[str, torch.Tensor], hyper: PpoHyper
) -> tuple[torch.Tensor, dict[str, float]]:
    """Clipped-surrogate policy loss + clipped value loss - entropy bonus.

    ``minibatch`` carries obs, actions, behavior_logprob, advantages
    (already normalized over the train batch), returns and value_old.
    """
    logits, values = model(minibatch["obs"])
    logp_all = F.log_softmax(logits, dim=-1)
    logp = logp_all.gather(1, minibatch["actions"].unsqueeze(1)).squeeze(1)
    ratio = torch.exp(logp - minibatch["behavior_logprob"])
    adv = minibatch["advantages"]

    unclipped = ratio * adv
    clipped = torch.clamp(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip) * adv
    policy_term = -torch.min(unclipped, clipped).mean()

    v_old = minibatch["value_old"]
    ret = minibatch["returns"]
    v_clip = v_old + torch.clamp(values - v_old, -hyper.vf_clip, hyper.vf_clip)
    value_term = torch.max((values - ret) ** 2, (v_clip - ret) ** 2).mean()

    probs = torch.exp(logp_all)
    entropy = -(probs * logp_all).sum(dim=-1).mean()

    loss = policy_term + hyper.vf_coeff * value_term - hyper.ent_coeff * entropy
    with torch.no_grad():
        approx_kl = (ratio - 1.0 - torch.log(ratio)).mean()
        clip_frac = ((ratio < 1.0 - hyper.clip) | (ratio > 1.0 + hyper.clip)).float().mean()
    stats = {
        "policy_loss": float(policy_term.detach()),
        "value_loss": float(value_term.detach()),
        "entropy": float(entropy.detach()),
        "approx_kl": float(approx_kl),
        "clip_frac": float(clip_frac),
        "ratio_mean": float(ratio.detach().mean()),
    }
    return loss, stats


def _flatten_buffer(buffer: RolloutBuffer) -> dict[str, np.ndarray]:
    t, n = buffer.actions.shape
    flat_obs = buffer.obs[:t].reshape((t * n,) + buffer.obs.shape[2:])
    return {
        "obs": flat_obs,
        "actions": buffer.actions.reshape(t * n),
        "behavior_logprob": buffer.behavior_logprob.reshape(t * n),
        "advantages": buffer.advantages.reshape(t * n),
        "returns": buffer.returns.reshape(t * n),
        "value_old": buffer.value_estimate[:t].reshape(t * n),
    }


def update_policy(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    buffer: RolloutBuffer,
    hyper: PpoHyper,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Shuffled minibatch epochs over one train batch, with global-norm
    gradient clipping and a target-KL early stop between epochs."""
    if buffer.advantages is None or buffer.returns is None:
        raise ValueError("compute_advantages() must run before update_policy()")
    flat = _flatten_buffer(buffer)
    adv = flat["advantages"].astype(np.float64)
    flat["advantages"] = ((adv - adv.mean()) / (adv.std() + 1e-8)).astype(np.float32)

    total = len(flat["actions"])
    agg: dict[str, float] = {}
    n_steps = 0
    stop = False
    for _ in range(hyper.epochs):
        perm = rng.permutation(total)
        epoch_kl = []
        for lo in range(0, total, hyper.minibatch):
            idx = perm[lo : lo + hyper.minibatch]
            minibatch = {
                "obs": obs_to_tensor(flat["obs"][idx]),
                "actions": torch.from_numpy(flat["actions"][idx]),
                "behavior_logprob": torch.from_numpy(flat["behavior_logprob"][idx]),
                "advantages": torch.from_numpy(flat["advantages"][idx]),
                "returns": torch.from_numpy(flat["returns"][idx]),
                "value_old": torch.from_numpy(flat["value_old"][idx]),
            }
            loss, stats = ppo_loss(model, minibatch, hyper)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), hyper.grad_clip)
            optimizer.step()
            n_steps += 1
            epoch_kl.append(stats["approx_kl"])
            for key, value in stats.items():
                agg[key] = agg.get(key, 0.0) + value
        if np.mean(epoch_kl) > hyper.target_kl:
            stop = True
            break
    out = {key: value / n_steps for key, value in agg.items()}
    out["sgd_steps"] = float(n_steps)
    out["kl_early_stop"] = float(stop)
    return out
