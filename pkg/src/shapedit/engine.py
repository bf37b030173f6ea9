"""Iterative inversion and iterative editing.

Inversion walks the grid from the noisiest step down, predicting and
freezing one noise map per step (2 NFE per step: inversion net + denoiser).
Editing replays the same frozen noise under a modified prompt embedding
(1 NFE per step), optionally blending outside a mask with the stored
inversion trajectory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .generator import Generator
from .inversion import InversionModel, sample_eps
from .text import PromptEmbedding, TextEncoder, interpolate


class IdenticalCaptionsError(ValueError):
    pass


@dataclass
class InversionSession:
    """Frozen output of iterative inversion: per-step noise maps and
    reconstruction trajectory, plus the source prompt embedding."""

    noise_maps: list[torch.Tensor]
    trajectory: list[torch.Tensor]
    source_caption: str
    source_embedding: PromptEmbedding
    grid: list[int]
    seed: int
    nfe_used: int
    source_image: torch.Tensor

    @property
    def reconstruction(self) -> torch.Tensor:
        return self.trajectory[-1]


@dataclass
class MaskPolicy:
    kind: str = "none"  # none | attention | manual
    threshold: float = 0.6
    manual: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("none", "attention", "manual"):
            raise ValueError(f"unknown mask policy {self.kind!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.kind == "manual" and self.manual is None:
            raise ValueError("manual mask policy requires a mask")


@dataclass
class EditSpec:
    target_caption: str | None = None
    target_embedding: PromptEmbedding | None = None
    strength: float = 1.0
    mask: MaskPolicy = field(default_factory=MaskPolicy)
    trajectory_source: str = "edited"  # edited | inversion (literal pseudocode reading)

    def __post_init__(self) -> None:
        if self.trajectory_source not in ("edited", "inversion"):
            raise ValueError(f"unknown trajectory_source {self.trajectory_source!r}")
        if self.target_caption is None and self.target_embedding is None:
            raise ValueError("EditSpec needs a target caption or embedding")


@dataclass
class EditResult:
    image: torch.Tensor
    applied_mask: torch.Tensor | None
    per_step: list[torch.Tensor]
    nfe_used: int
    latency_s: float


@torch.no_grad()
def invert(
    x0: torch.Tensor,
    caption: str,
    inversion: InversionModel,
    generator: Generator,
    encoder: TextEncoder,
    seed: int,
    noise_mode: str = "sample",
) -> InversionSession:
    """Iterative inversion: per grid step predict noise stats from
    (x0, previous reconstruction), draw the injected noise, renoise the
    previous reconstruction and decode a new one. Exactly 2 NFE per step."""
    if noise_mode not in ("sample", "mean"):
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    embedding = encoder.encode_caption(caption)
    grid = inversion.grid
    rng = torch.Generator().manual_seed(int(seed))
    nfe_before = generator.nfe + inversion.nfe

    x_prev = torch.zeros_like(x0)
    noise_maps: list[torch.Tensor] = []
    trajectory: list[torch.Tensor] = []
    for t in grid:
        stats = inversion.predict_noise_stats(x0, x_prev, embedding, t)
        eps = sample_eps(stats, rng) if noise_mode == "sample" else stats.mu
        x_hat = generator.schedule.add_noise(x_prev, eps, t)
        x_prev = generator.generate_x0(x_hat, embedding, t)
        noise_maps.append(eps)
        trajectory.append(x_prev)

    return InversionSession(
        noise_maps=noise_maps,
        trajectory=trajectory,
        source_caption=caption,
        source_embedding=embedding,
        grid=list(grid),
        seed=int(seed),
        nfe_used=generator.nfe + inversion.nfe - nfe_before,
        source_image=x0.clone(),
    )


@torch.no_grad()
def edit(
    session: InversionSession,
    spec: EditSpec,
    generator: Generator,
    encoder: TextEncoder,
) -> EditResult:
    """Iterative editing under the session's frozen noise maps. Exactly
    1 NFE per step (mask extraction, if requested, is accounted separately)."""
    e_tgt = spec.target_embedding
    if e_tgt is None:
        e_tgt = encoder.encode_caption(spec.target_caption)
    e_prime = interpolate(session.source_embedding, e_tgt, spec.strength)

    mask = None
    if spec.mask.kind == "manual":
        mask = _as_mask(spec.mask.manual, session.trajectory[0].shape[-2:])
    elif spec.mask.kind == "attention":
        _, binary = extract_attention_mask(session, e_tgt, generator, spec.mask.threshold)
        mask = binary.float()

    start = time.perf_counter()
    nfe_before = generator.nfe
    x_prev = torch.zeros_like(session.trajectory[0])
    per_step: list[torch.Tensor] = []
    for i, t in enumerate(session.grid):
        if spec.trajectory_source == "edited":
            base = x_prev
        else:
            base = session.trajectory[i - 1] if i > 0 else torch.zeros_like(x_prev)
        x_hat = generator.schedule.add_noise(base, session.noise_maps[i], t)
        x_edit = generator.generate_x0(x_hat, e_prime, t)
        if mask is not None:
            x_edit = mask * x_edit + (1.0 - mask) * session.trajectory[i]
        per_step.append(x_edit)
        x_prev = x_edit

    return EditResult(
        image=per_step[-1],
        applied_mask=mask,
        per_step=per_step,
        nfe_used=generator.nfe - nfe_before,
        latency_s=time.perf_counter() - start,
    )


def _as_mask(mask, hw) -> torch.Tensor:
    m = torch.as_tensor(mask).float()
    if m.dim() == 3 and m.shape[0] == 1:
        m = m.squeeze(0)
    if tuple(m.shape) != tuple(hw):
        raise ValueError(f"mask shape {tuple(m.shape)} does not match image {tuple(hw)}")
    return (m > 0.5).float()


def _gaussian_blur3(x: torch.Tensor) -> torch.Tensor:
    # 3x3 kernel, sigma 1
    g1 = torch.tensor([0.27406862, 0.45186276, 0.27406862])
    kernel = (g1[:, None] * g1[None, :]).view(1, 1, 3, 3)
    return F.conv2d(x.view(1, 1, *x.shape), kernel, padding=1).view(*x.shape)


@torch.no_grad()
def extract_attention_mask(
    session: InversionSession,
    target_embedding: PromptEmbedding,
    generator: Generator,
    threshold: float = 0.6,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Rough edit-region mask from cross-attention at the first grid step.

    Runs the first step once per prompt with recording, sums attention over
    heads and over token positions unique to one of the two captions,
    normalizes to max 1, blurs, resizes to image resolution and binarizes.
    Returns (continuous, binary)."""
    ids_src = [int(i) for i in session.source_embedding.token_ids if int(i) != 0]
    ids_tgt = [int(i) for i in target_embedding.token_ids if int(i) != 0]
    diff = set(ids_src).symmetric_difference(ids_tgt)
    if not diff:
        raise IdenticalCaptionsError("captions identical: no words to localize")

    t_first = session.grid[0]
    x_hat = generator.schedule.add_noise(
        torch.zeros_like(session.noise_maps[0]), session.noise_maps[0], t_first
    )
    maps = []
    for emb in (session.source_embedding, target_embedding):
        _, rec = generator.denoise(x_hat, emb, t_first, record=True)
        positions = [i for i, tok in enumerate(emb.token_ids.tolist()) if tok in diff]
        if not positions:
            continue
        # (heads, HW, L) -> sum over heads and selected token columns
        maps.append(rec.probs[:, :, positions].sum(dim=(0, 2)))
    summed = torch.stack(maps).mean(dim=0)
    side = int(summed.numel() ** 0.5)
    attn = summed.view(side, side)
    attn = attn / attn.max().clamp(min=1e-12)
    attn = _gaussian_blur3(attn)
    res = session.trajectory[0].shape[-1]
    cont = F.interpolate(attn.view(1, 1, side, side), size=(res, res), mode="bilinear", align_corners=False)
    cont = cont.view(res, res)
    cont = cont / cont.max().clamp(min=1e-12)
    binary = cont >= threshold
    return cont, binary
