"""Training loops: the conditional denoiser (jointly with the text encoder)
and the inversion network against a frozen denoiser."""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn.functional as F

from .config import GeneratorTrainConfig, InversionTrainConfig
from .generator import Generator
from .inversion import InversionModel, NoiseStats, kl_to_standard_normal, simulate_prev_recon
from .nets import ConditionalUNet, init_inversion_from_denoiser, make_denoiser_net, make_inversion_net
from .schedule import NoiseSchedule
from .text import MAX_TOKENS, TextEncoder, default_vocab
from .world import Scene, caption


class TrainingError(RuntimeError):
    pass


def param_checksum(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def caption_token_table(scenes: list[Scene]) -> tuple[torch.Tensor, torch.Tensor]:
    """(detailed_ids, short_ids), each (N, L) int64."""
    vocab = default_vocab()
    detailed = np.stack([vocab.tokenize(caption(s, "detailed"), MAX_TOKENS) for s in scenes])
    short = np.stack([vocab.tokenize(caption(s, "short"), MAX_TOKENS) for s in scenes])
    return torch.from_numpy(detailed), torch.from_numpy(short)


def _lr_at(step: int, base_lr: float, warmup: int, total: int) -> float:
    if step < warmup:
        return base_lr * (step + 1) / warmup
    frac = (step - warmup) / max(1, total - warmup)
    return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * frac)))


def _pick_captions(
    ids_detailed: torch.Tensor, ids_short: torch.Tensor, idx: torch.Tensor,
    short_fraction: float, rng: torch.Generator,
) -> torch.Tensor:
    use_short = torch.rand(len(idx), generator=rng) < short_fraction
    return torch.where(use_short[:, None], ids_short[idx], ids_detailed[idx])


def train_generator(
    images: np.ndarray,
    scenes: list[Scene],
    schedule: NoiseSchedule,
    config: GeneratorTrainConfig,
    net: ConditionalUNet | None = None,
    encoder: TextEncoder | None = None,
    progress: bool = False,
) -> tuple[ConditionalUNet, TextEncoder, list[float]]:
    """Noise-prediction training at the few-step grid timesteps, text encoder
    trained jointly. Returns the (to-be-frozen) nets and the loss history."""
    x0_all = torch.from_numpy(np.asarray(images, dtype=np.float32))
    ids_detailed, ids_short = caption_token_table(scenes)
    grid = torch.tensor(schedule.grid(config.grid_steps), dtype=torch.long)
    sqrt_ab = torch.sqrt(torch.from_numpy(schedule.alpha_bars.copy())).float()
    sqrt_1mab = torch.sqrt(1.0 - torch.from_numpy(schedule.alpha_bars.copy())).float()

    net = net or make_denoiser_net(base_width=config.base_width)
    encoder = encoder or TextEncoder()
    net.train()
    encoder.train()
    opt = torch.optim.Adam(list(net.parameters()) + list(encoder.parameters()), lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)

    history: list[float] = []
    for step in range(config.steps):
        for group in opt.param_groups:
            group["lr"] = _lr_at(step, config.lr, config.warmup_steps, config.steps)
        idx = torch.randint(len(x0_all), (config.batch_size,), generator=rng)
        x0 = x0_all[idx]
        ids = _pick_captions(ids_detailed, ids_short, idx, config.short_caption_fraction, rng)
        t = grid[torch.randint(len(grid), (config.batch_size,), generator=rng)]
        eps = torch.randn(x0.shape, generator=rng)
        x_t = sqrt_ab[t][:, None, None, None] * x0 + sqrt_1mab[t][:, None, None, None] * eps

        ctx = encoder(ids).per_token
        eps_hat, _ = net(x_t, ctx, t)
        loss = F.mse_loss(eps_hat, eps)
        if not torch.isfinite(loss):
            raise TrainingError(f"generator loss diverged at step {step}: {loss.item()} (recent: {history[-5:]})")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(list(net.parameters()) + list(encoder.parameters()), config.grad_clip)
        opt.step()
        history.append(float(loss))
        if progress and (step % config.log_every == 0 or step == config.steps - 1):
            print(f"[gen] step {step:5d} loss {float(loss):.5f}")

    net.eval()
    encoder.eval()
    return net, encoder, history


def train_inversion(
    images: np.ndarray,
    scenes: list[Scene],
    generator: Generator,
    encoder: TextEncoder,
    config: InversionTrainConfig,
    net: ConditionalUNet | None = None,
    progress: bool = False,
) -> tuple[ConditionalUNet, list[float]]:
    """Reconstruction + KL training of the inversion net; the generator and
    text encoder stay frozen (gradients flow through their activations only)."""
    for p in generator.net.parameters():
        p.requires_grad_(False)
    for p in encoder.parameters():
        p.requires_grad_(False)
    frozen_before = param_checksum(generator.net), param_checksum(encoder)

    x0_all = torch.from_numpy(np.asarray(images, dtype=np.float32))
    ids_detailed, ids_short = caption_token_table(scenes)
    grid = generator.schedule.grid(config.grid_steps)

    if net is None:
        net = make_inversion_net(base_width=config.base_width)
        if config.init_from_generator:
            init_inversion_from_denoiser(net, generator.net)
    inversion = InversionModel(net, generator.schedule, grid_steps=config.grid_steps)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)

    history: list[float] = []
    for step in range(config.steps):
        for group in opt.param_groups:
            group["lr"] = _lr_at(step, config.lr, config.warmup_steps, config.steps)
        idx = torch.randint(len(x0_all), (config.batch_size,), generator=rng)
        x0 = x0_all[idx]
        ids = _pick_captions(ids_detailed, ids_short, idx, config.short_caption_fraction, rng)
        t = grid[int(torch.randint(len(grid), (1,), generator=rng))]

        with torch.no_grad():
            embedding = encoder(ids)
            prev = simulate_prev_recon(x0, embedding, t, generator, rng, grid=grid)

        stats = inversion.predict_noise_stats(x0, prev, embedding, t)
        z = torch.randn(stats.mu.shape, generator=rng)
        eps = stats.mu + torch.exp(0.5 * stats.logvar) * z
        x_hat = generator.schedule.add_noise(prev, eps, t)
        recon = generator.generate_x0(x_hat, embedding, t)

        mse = F.mse_loss(recon, x0)
        kl = kl_to_standard_normal(NoiseStats(stats.mu, stats.logvar))
        loss = mse + config.lambda_kl * kl
        if not torch.isfinite(loss):
            raise TrainingError(f"inversion loss diverged at step {step}: {loss.item()} (recent: {history[-5:]})")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
        opt.step()
        history.append(float(loss))
        if progress and (step % config.log_every == 0 or step == config.steps - 1):
            print(f"[inv{config.grid_steps}] step {step:5d} mse {float(mse):.5f} kl {float(kl):.3f}")

    frozen_after = param_checksum(generator.net), param_checksum(encoder)
    if frozen_before != frozen_after:
        raise TrainingError("frozen generator or encoder changed during inversion training")
    net.eval()
    return net, history
