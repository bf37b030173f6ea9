"""Frozen few-step conditional denoiser: noise prediction, clean-sample
conversion, plain few-step sampling, and instrumented NFE accounting."""

from __future__ import annotations

import threading

import torch

from .nets import ConditionalUNet, CrossAttentionRecord
from .schedule import NoiseSchedule
from .text import PromptEmbedding


class ModelStateError(RuntimeError):
    pass


class _Counted:
    """Thread-safe forward-pass counter shared by the model wrappers."""

    def __init__(self) -> None:
        self._nfe = 0
        self._nfe_lock = threading.Lock()

    def _count(self, n: int = 1) -> None:
        with self._nfe_lock:
            self._nfe += n

    @property
    def nfe(self) -> int:
        return self._nfe


class Generator(_Counted):
    def __init__(self, net: ConditionalUNet, schedule: NoiseSchedule, grid_steps: int = 4):
        super().__init__()
        if net is None:
            raise ModelStateError("generator weights not loaded")
        self.net = net.eval()
        self.schedule = schedule
        self.grid_steps = grid_steps

    @property
    def grid(self) -> list[int]:
        return self.schedule.grid(self.grid_steps)

    def _prepare(self, x_t: torch.Tensor, embedding: PromptEmbedding, t: int):
        squeeze = x_t.dim() == 3
        if squeeze:
            x_t = x_t.unsqueeze(0)
        ctx = embedding.per_token
        if ctx.dim() == 2:
            ctx = ctx.unsqueeze(0)
        if ctx.shape[0] == 1 and x_t.shape[0] > 1:
            ctx = ctx.expand(x_t.shape[0], -1, -1)
        if ctx.shape[0] != x_t.shape[0]:
            raise ValueError(f"batch mismatch: image {x_t.shape[0]} vs embedding {ctx.shape[0]}")
        tt = torch.full((x_t.shape[0],), int(t), dtype=torch.long)
        return x_t, ctx, tt, squeeze

    def denoise(
        self, x_t: torch.Tensor, embedding: PromptEmbedding, t: int, record: bool = False
    ) -> tuple[torch.Tensor, CrossAttentionRecord | None]:
        """Predict the injected noise. One call = one NFE."""
        x_t, ctx, tt, squeeze = self._prepare(x_t, embedding, t)
        self.schedule._check_t(t)
        eps_hat, probs = self.net(x_t, ctx, tt, record_attention=record)
        self._count()
        rec = None
        if record:
            rec = CrossAttentionRecord(probs.squeeze(0) if squeeze else probs)
        return (eps_hat.squeeze(0) if squeeze else eps_hat), rec

    def generate_x0(self, x_t: torch.Tensor, embedding: PromptEmbedding, t: int) -> torch.Tensor:
        """Clean-sample estimate via the sample-prediction rewrite, clamped
        to the image range."""
        eps_hat, _ = self.denoise(x_t, embedding, t)
        return self.schedule.predict_x0(x_t, eps_hat, t).clamp(-1.0, 1.0)

    @torch.no_grad()
    def sample(
        self,
        embedding: PromptEmbedding,
        seed: int,
        n_steps: int | None = None,
        resolution: int = 32,
    ) -> torch.Tensor:
        """Few-step generation: fresh Gaussian noise per grid step, previous
        clean estimate renoised each step. Exactly n_steps denoiser calls."""
        grid = self.schedule.grid(n_steps or self.grid_steps)
        gen = torch.Generator().manual_seed(int(seed))
        x_prev = torch.zeros(3, resolution, resolution)
        for t in grid:
            eps = torch.randn(x_prev.shape, generator=gen)
            x_hat = self.schedule.add_noise(x_prev, eps, t)
            x_prev = self.generate_x0(x_hat, embedding, t)
        return x_prev
