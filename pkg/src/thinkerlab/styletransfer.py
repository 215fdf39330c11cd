"""Multi-domain style translation between observation clusters.

One generator serves every cluster pair: the target cluster id is injected
as one-hot constant channels concatenated to the input image. A single
discriminator carries two heads, an unbounded per-patch realness map
(Wasserstein critic, no sigmoid) and an n-way cluster classifier.

Training objective, with lambda_cls = 1, lambda_rec = 10, lambda_gp = 10:

* critic:     -E[D_src(x)] + E[D_src(G(x,c))] + lambda_gp * GP
              + lambda_cls * CE(D_cls(x), c_src)
* generator:  -E[D_src(G(x,c))] + lambda_cls * CE(D_cls(G(x,c)), c_tgt)
              + lambda_rec * E| x - G(G(x,c), c_src) |

The gradient penalty regularizes only the critic; it is excluded from the
generator objective. All images are in the signed [-1, 1] convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .clustering import ClusterModel, extract_features_batch
from .config import GanConfig
from .errors import ConfigError, DataError, StateError
from .images import Convention, convert, infer_convention


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Label-conditioned image-to-image network with a residual path from
    the input, so a freshly initialized generator is close to identity."""

    def __init__(self, n_clusters: int, base_channels: int = 32, res_blocks: int = 6):
        super().__init__()
        self.n_clusters = n_clusters
        b = base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(3 + n_clusters, b, 7, 1, 3),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, 2, 1),
            nn.InstanceNorm2d(4 * b, affine=True),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(4 * b) for _ in range(res_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * b, 2 * b, 4, 2, 1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * b, b, 4, 2, 1),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
        ]
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(b, 3, 7, 1, 3)
        # small head: G(x, c) ~ tanh(x) at initialization
        with torch.no_grad():
            self.head.weight.mul_(0.01)
            self.head.bias.zero_()

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        onehot = F.one_hot(labels, num_classes=self.n_clusters).to(x.dtype)
        maps = onehot[:, :, None, None].expand(-1, -1, x.shape[2], x.shape[3])
        delta = self.head(self.body(torch.cat([x, maps], dim=1)))
        return torch.tanh(x + delta)


class Discriminator(nn.Module):
    """Strided conv stack with a 1-channel realness map head and an n-way
    global classification head. No normalization layers (the gradient
    penalty plays that role)."""

    def __init__(self, n_clusters: int, base_channels: int = 32):
        super().__init__()
        self.n_clusters = n_clusters
        b = base_channels
        self.features = nn.Sequential(
            nn.Conv2d(3, b, 4, 2, 1),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, 2, 1),
            nn.LeakyReLU(0.01, inplace=True),
        )
        self.src_head = nn.Conv2d(4 * b, 1, 3, 1, 1)
        self.cls_head = nn.Linear(4 * b, n_clusters)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.features(x)
        src = self.src_head(h)
        cls = self.cls_head(h.mean(dim=(2, 3)))
        return src, cls


@dataclass
class TranslatorModel:
    generator: Generator
    discriminator: Discriminator
    n_clusters: int
    config: GanConfig
    history: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class GanBatch:
    """Signed-convention image batch with source and target cluster labels."""

    x_real: torch.Tensor  # (B, 3, H, W)
    c_src: torch.Tensor  # (B,) long
    c_tgt: torch.Tensor  # (B,) long


def _check_labels(labels: torch.Tensor, n: int) -> None:
    if labels.numel() and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"cluster labels must lie in [0, {n})")


def generate(model: TranslatorModel, x: torch.Tensor, c_tgt: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, H, W) batch, got {tuple(x.shape)}")
    _check_labels(c_tgt, model.n_clusters)
    return model.generator(x, c_tgt)


def discriminate(model: TranslatorModel, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, H, W) batch, got {tuple(x.shape)}")
    return model.discriminator(x)


def gradient_penalty(
    critic: nn.Module,
    x_real: torch.Tensor,
    x_fake: torch.Tensor,
    rng: torch.Generator,
) -> torch.Tensor:
    """E[(||grad_xhat mean(D_src(xhat))||_2 - 1)^2] on real/fake interpolates."""
    if x_real.shape != x_fake.shape:
        raise ValueError(f"shape mismatch {tuple(x_real.shape)} vs {tuple(x_fake.shape)}")
    b = x_real.shape[0]
    eps = torch.rand(b, 1, 1, 1, generator=rng, dtype=x_real.dtype, device=x_real.device)
    # the interpolate's graph must exist even when a caller runs under
    # no_grad (e.g. loss evaluation loops)
    with torch.enable_grad():
        xhat = (eps * x_real + (1.0 - eps) * x_fake).detach().requires_grad_(True)
        src, _ = critic(xhat)
        per_sample = src.mean(dim=tuple(range(1, src.ndim)))
        if per_sample.requires_grad:
            grads = torch.autograd.grad(
                per_sample.sum(), xhat, create_graph=True, allow_unused=True
            )[0]
        else:  # critic ignores its input entirely
            grads = None
    if grads is None:
        grads = torch.zeros_like(xhat)
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def discriminator_loss(
    model: TranslatorModel, batch: GanBatch, rng: torch.Generator
) -> tuple[torch.Tensor, dict[str, float]]:
    """Critic objective; the generator is treated as frozen (fakes detached)."""
    _check_labels(batch.c_src, model.n_clusters)
    _check_labels(batch.c_tgt, model.n_clusters)
    cfg = model.config
    with torch.no_grad():
        x_fake = model.generator(batch.x_real, batch.c_tgt)
    src_real, cls_real = model.discriminator(batch.x_real)
    src_fake, _ = model.discriminator(x_fake)
    adv_real = src_real.mean()
    adv_fake = src_fake.mean()
    gp = gradient_penalty(model.discriminator, batch.x_real, x_fake, rng)
    cls_loss = F.cross_entropy(cls_real, batch.c_src)
    loss = -adv_real + adv_fake + cfg.lambda_gp * gp + cfg.lambda_cls * cls_loss
    stats = {
        "d_adv_real": float(adv_real.detach()),
        "d_adv_fake": float(adv_fake.detach()),
        "d_gp": float(gp.detach()),
        "d_cls_real": float(cls_loss.detach()),
        "d_total": float(loss.detach()),
    }
    return loss, stats


def generator_loss(
    model: TranslatorModel, batch: GanBatch
) -> tuple[torch.Tensor, dict[str, float]]:
    """Generator objective; the critic is frozen (its parameters receive no
    update from this loss), and the gradient penalty is excluded."""
    _check_labels(batch.c_src, model.n_clusters)
    _check_labels(batch.c_tgt, model.n_clusters)
    cfg = model.config
    x_fake = model.generator(batch.x_real, batch.c_tgt)
    src_fake, cls_fake = model.discriminator(x_fake)
    adv = -src_fake.mean()
    cls_loss = F.cross_entropy(cls_fake, batch.c_tgt)
    x_cycle = model.generator(x_fake, batch.c_src)
    rec = (batch.x_real - x_cycle).abs().mean()
    loss = adv + cfg.lambda_cls * cls_loss + cfg.lambda_rec * rec
    stats = {
        "g_adv": float(adv.detach()),
        "g_cls_fake": float(cls_loss.detach()),
        "g_rec": float(rec.detach()),
        "g_total": float(loss.detach()),
    }
    return loss, stats


def _balanced_pools(
    clusters: list[np.ndarray], balanced: bool, rng: np.random.Generator
) -> list[torch.Tensor]:
    sizes = [len(c) for c in clusters]
    cap = min(sizes) if balanced else None
    pools = []
    for arr in clusters:
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise ValueError(f"cluster arrays must be (N, H, W, 3), got {arr.shape}")
        signed = convert(arr, infer_convention(arr), Convention.SIGNED)
        if cap is not None and len(signed) > cap:
            keep = rng.choice(len(signed), size=cap, replace=False)
            signed = signed[keep]
        pools.append(torch.from_numpy(np.ascontiguousarray(signed.transpose(0, 3, 1, 2))))
    return pools


def train_translator(
    clusters: list[np.ndarray],
    config: GanConfig,
    seed: int,
    balanced: bool = True,
) -> TranslatorModel:
    """Adversarial training over labeled observation clusters.

    Each iteration samples one balanced batch with random target labels
    (always different from the source label), applies ``n_critic`` critic
    updates and then one generator update. Per-iteration loss terms are
    recorded in the returned model's history.
    """
    n = len(clusters)
    if n < 2:
        raise ConfigError(f"at least two clusters are required, got {n}")
    for k, arr in enumerate(clusters):
        if len(arr) == 0:
            raise DataError(f"cluster {k} is empty")
    config.validate()

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x57AA])))
    torch.manual_seed(seed)
    gen = Generator(n, config.base_channels, config.res_blocks)
    disc = Discriminator(n, config.base_channels)
    model = TranslatorModel(gen, disc, n, config)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    eps_rng = torch.Generator().manual_seed(seed ^ 0x5EED)

    pools = _balanced_pools(clusters, balanced, rng)
    history: dict[str, list[float]] = {}

    for _ in range(config.iterations):
        b = config.batch_size
        c_src = rng.integers(0, n, size=b)
        c_tgt = (c_src + 1 + rng.integers(0, n - 1, size=b)) % n
        x = torch.stack(
            [pools[c][int(rng.integers(len(pools[c])))] for c in c_src]
        )
        batch = GanBatch(x, torch.from_numpy(c_src), torch.from_numpy(c_tgt))

        for _ in range(config.n_critic):
            loss_d, d_stats = discriminator_loss(model, batch, eps_rng)
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()

        loss_g, g_stats = generator_loss(model, batch)
        opt_g.zero_grad(set_to_none=True)
        opt_d.zero_grad(set_to_none=True)  # discard critic grads from the generator pass
        loss_g.backward()
        opt_g.step()

        it_stats = {**d_stats, **g_stats}
        if not all(np.isfinite(v) for v in it_stats.values()):
            raise DataError(f"non-finite loss terms at iteration {len(history.get('g_rec', []))}: {it_stats}")
        for key, value in it_stats.items():
            history.setdefault(key, []).append(value)

    model.history = history
    return model


def translate_batch(
    model: TranslatorModel,
    cluster_model: ClusterModel,
    obs_batch: np.ndarray,
    rng: np.random.Generator,
    chunk: int = 256,
) -> np.ndarray:
    """Translate observations to a uniformly random *different* cluster.

    Accepts a (N, H, W, 3) batch in bytes or unit convention and returns the
    same shape and convention. Source clusters are inferred with the fitted
    mixture; target labels are drawn from the remaining n - 1 clusters.
    """
    if model.n_clusters < 2:
        raise StateError("translation requires at least two clusters")
    if cluster_model.n != model.n_clusters:
        raise StateError(
            f"cluster model has n={cluster_model.n} but translator was trained with "
            f"n={model.n_clusters}"
        )
    if obs_batch.ndim != 4 or obs_batch.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) batch, got {obs_batch.shape}")

    convention = infer_convention(obs_batch)
    feats = extract_features_batch(obs_batch)
    src = cluster_model.assign(feats)
    n = model.n_clusters
    tgt = (src + 1 + rng.integers(0, n - 1, size=len(src))) % n

    signed = convert(obs_batch, convention, Convention.SIGNED).transpose(0, 3, 1, 2)
    out = np.empty_like(signed)
    model.generator.eval()
    with torch.inference_mode():
        for lo in range(0, len(signed), chunk):
            hi = min(lo + chunk, len(signed))
            x = torch.from_numpy(np.ascontiguousarray(signed[lo:hi]))
            labels = torch.from_numpy(tgt[lo:hi].astype(np.int64))
            out[lo:hi] = model.generator(x, labels).numpy()
    translated = out.transpose(0, 2, 3, 1)
    return convert(translated, Convention.SIGNED, convention)
