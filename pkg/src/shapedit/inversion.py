"""Inversion network: reparameterized per-pixel noise statistics conditioned
on the input image, the previous reconstruction, the prompt and the timestep.

The network predicts (mu, logvar) per pixel; injected noise is sampled via
the reparameterization trick and regularized toward a standard normal by a
closed-form KL term.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .generator import Generator, _Counted
from .nets import ConditionalUNet
from .schedule import NoiseSchedule
from .text import PromptEmbedding

LOGVAR_MIN = -10.0
LOGVAR_MAX = 4.0


@dataclass
class NoiseStats:
    """Per-pixel mean and log-variance, same shape as the image."""

    mu: torch.Tensor
    logvar: torch.Tensor


def sample_eps(stats: NoiseStats, rng: torch.Generator) -> torch.Tensor:
    """Reparameterized draw mu + exp(logvar/2) * z with z ~ N(0, 1)."""
    z = torch.randn(stats.mu.shape, generator=rng, dtype=stats.mu.dtype)
    return stats.mu + torch.exp(0.5 * stats.logvar) * z


def kl_to_standard_normal(stats: NoiseStats) -> torch.Tensor:
    """Closed-form KL(N(mu, exp(logvar)) || N(0, 1)), averaged over pixels."""
    return 0.5 * (stats.mu**2 + torch.exp(stats.logvar) - 1.0 - stats.logvar).mean()


class InversionModel(_Counted):
    def __init__(self, net: ConditionalUNet, schedule: NoiseSchedule, grid_steps: int = 4):
        super().__init__()
        self.net = net.eval()
        self.schedule = schedule
        self.grid_steps = grid_steps

    @property
    def grid(self) -> list[int]:
        return self.schedule.grid(self.grid_steps)

    def predict_noise_stats(
        self, x0: torch.Tensor, prev_recon: torch.Tensor, embedding: PromptEmbedding, t: int
    ) -> NoiseStats:
        """One forward pass; prev_recon is all-zeros at the first (largest) step."""
        if x0.shape != prev_recon.shape:
            raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs prev_recon {tuple(prev_recon.shape)}")
        squeeze = x0.dim() == 3
        stacked = torch.cat([x0, prev_recon], dim=-3)
        if squeeze:
            stacked = stacked.unsqueeze(0)
        ctx = embedding.per_token
        if ctx.dim() == 2:
            ctx = ctx.unsqueeze(0)
        if ctx.shape[0] == 1 and stacked.shape[0] > 1:
            ctx = ctx.expand(stacked.shape[0], -1, -1)
        tt = torch.full((stacked.shape[0],), int(t), dtype=torch.long)
        out, _ = self.net(stacked, ctx, tt)
        self._count()
        mu, logvar = out.chunk(2, dim=1)
        logvar = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)
        if squeeze:
            mu, logvar = mu.squeeze(0), logvar.squeeze(0)
        return NoiseStats(mu=mu, logvar=logvar)


def grid_predecessor(grid: list[int], t: int) -> int:
    """The preceding (noisier) grid step of t; errors off-grid."""
    if t not in grid:
        raise ValueError(f"timestep {t} not on grid {grid}")
    idx = grid.index(t)
    if idx == 0:
        raise ValueError(f"{t} is the first grid step and has no predecessor")
    return grid[idx - 1]


@torch.no_grad()
def simulate_prev_recon(
    x0: torch.Tensor,
    embedding: PromptEmbedding,
    t: int,
    generator: Generator,
    rng: torch.Generator,
    grid: list[int] | None = None,
) -> torch.Tensor:
    """Single-step noise-and-denoise stand-in for the previous step's
    reconstruction during training. The first grid step uses zeros."""
    grid = grid or generator.grid
    if t not in grid:
        raise ValueError(f"timestep {t} not on grid {grid}")
    if t == grid[0]:
        return torch.zeros_like(x0)
    t_prev = grid_predecessor(grid, t)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    x_noisy = generator.schedule.add_noise(x0, eps, t_prev)
    return generator.generate_x0(x_noisy, embedding, t_prev)
