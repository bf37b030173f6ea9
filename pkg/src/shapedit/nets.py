"""Small conditional U-Nets shared by the denoiser and the inversion network.

Two down / two up stages; a single cross-attention block at the coarsest
feature map (8x8 for 32px inputs) attends to per-token prompt embeddings
and can record its attention probabilities. Timesteps enter through
sinusoidal features and a two-layer MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1))
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


@dataclass
class CrossAttentionRecord:
    """Attention probabilities of one denoiser call: (heads, H*W, L),
    rows nonnegative and summing to 1."""

    probs: torch.Tensor


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(8, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    def __init__(self, channels: int, ctx_dim: int, n_heads: int):
        super().__init__()
        if channels % n_heads:
            raise ValueError("channels must divide evenly into heads")
        self.n_heads = n_heads
        self.head_dim = channels // n_heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(ctx_dim, channels)
        self.to_v = nn.Linear(ctx_dim, channels)
        self.to_out = nn.Linear(channels, channels)

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, record: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)  # (b, hw, c)
        q = self.to_q(tokens).view(b, -1, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.to_k(context).view(b, -1, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.to_v(context).view(b, -1, self.n_heads, self.head_dim).transpose(1, 2)
        probs = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(b, -1, c)
        out = x + self.to_out(out).transpose(1, 2).view(b, c, h, w)
        return out, (probs if record else None)


class ConditionalUNet(nn.Module):
    def __init__(
        self,
        in_channels: int = 3,
        out_channels: int = 3,
        base_width: int = 64,
        ctx_dim: int = 128,
        n_heads: int = 4,
        time_dim: int = 256,
    ):
        super().__init__()
        self.arch = {
            "in_channels": in_channels,
            "out_channels": out_channels,
            "base_width": base_width,
            "ctx_dim": ctx_dim,
            "n_heads": n_heads,
            "time_dim": time_dim,
        }
        w1, w2 = base_width, base_width * 2
        self.time_mlp = nn.Sequential(nn.Linear(128, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))
        self.conv_in = nn.Conv2d(in_channels, w1, 3, padding=1)
        self.down_block1 = ResidualBlock(w1, w1, time_dim)
        self.downsample1 = nn.Conv2d(w1, w1, 3, stride=2, padding=1)
        self.down_block2 = ResidualBlock(w1, w2, time_dim)
        self.downsample2 = nn.Conv2d(w2, w2, 3, stride=2, padding=1)
        self.mid_block1 = ResidualBlock(w2, w2, time_dim)
        self.cross_attention = CrossAttention(w2, ctx_dim, n_heads)
        self.mid_block2 = ResidualBlock(w2, w2, time_dim)
        self.upconv2 = nn.Conv2d(w2, w2, 3, padding=1)
        self.up_block2 = ResidualBlock(w2 + w2, w1, time_dim)
        self.upconv1 = nn.Conv2d(w1, w1, 3, padding=1)
        self.up_block1 = ResidualBlock(w1 + w1, w1, time_dim)
        self.norm_out = nn.GroupNorm(8, w1)
        self.conv_out = nn.Conv2d(w1, out_channels, 3, padding=1)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        t: torch.Tensor,
        record_attention: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """x (B,C,H,W), context (B,L,ctx_dim), t (B,) integer timesteps."""
        temb = self.time_mlp(sinusoidal_embedding(t, 128))
        h0 = self.down_block1(self.conv_in(x), temb)
        h1 = self.down_block2(self.downsample1(h0), temb)
        h = self.downsample2(h1)
        h = self.mid_block1(h, temb)
        h, attn = self.cross_attention(h, context, record=record_attention)
        h = self.mid_block2(h, temb)
        h = self.up_block2(torch.cat([self.upconv2(F.interpolate(h, scale_factor=2.0)), h1], dim=1), temb)
        h = self.up_block1(torch.cat([self.upconv1(F.interpolate(h, scale_factor=2.0)), h0], dim=1), temb)
        out = self.conv_out(F.silu(self.norm_out(h)))
        return out, attn

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def make_denoiser_net(base_width: int = 64, **kwargs) -> ConditionalUNet:
    return ConditionalUNet(in_channels=3, out_channels=3, base_width=base_width, **kwargs)


def make_inversion_net(base_width: int = 64, **kwargs) -> ConditionalUNet:
    # doubled inputs (x0 | previous reconstruction), doubled outputs (mu | logvar)
    return ConditionalUNet(in_channels=6, out_channels=6, base_width=base_width, **kwargs)


def init_inversion_from_denoiser(inv: ConditionalUNet, den: ConditionalUNet) -> None:
    """Copy denoiser weights into the inversion net where shapes permit.

    The widened input conv keeps the denoiser kernel on its first three
    channels (new channels zeroed); the widened output conv writes the
    denoiser's prediction head into the mu channels and zero-initializes
    the logvar channels, so initial draws start near N(mu, 1).
    """
    src = den.state_dict()
    dst = inv.state_dict()
    for name, tensor in src.items():
        if name not in dst:
            continue
        if dst[name].shape == tensor.shape:
            dst[name].copy_(tensor)
        elif name == "conv_in.weight":
            dst[name].zero_()
            dst[name][:, : tensor.shape[1]].copy_(tensor)
        elif name == "conv_out.weight":
            dst[name].zero_()
            dst[name][: tensor.shape[0]].copy_(tensor)
        elif name == "conv_out.bias":
            dst[name].zero_()
            dst[name][: tensor.shape[0]].copy_(tensor)
    inv.load_state_dict(dst)
