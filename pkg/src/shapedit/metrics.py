"""Image quality metrics for images in [-1, 1]: PSNR, MSE, SSIM, and their
background variants computed outside an edit mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

DATA_RANGE = 2.0  # images live in [-1, 1]
PSNR_CAP = 99.0
_MSE_FLOOR = 1e-10


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def mse(a, b) -> float:
    a, b = _to_numpy(a), _to_numpy(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def psnr_from_mse(err: float) -> float:
    if err < _MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(DATA_RANGE**2 / err)))


def _gaussian_window(size: int = 7, sigma: float = 1.5) -> torch.Tensor:
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=torch.float64) - half
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).view(1, 1, size, size)


def _ssim_map(a: torch.Tensor, b: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
    c = a.shape[1]
    w = window.repeat(c, 1, 1, 1)
    mu_a = F.conv2d(a, w, groups=c)
    mu_b = F.conv2d(b, w, groups=c)
    var_a = F.conv2d(a * a, w, groups=c) - mu_a**2
    var_b = F.conv2d(b * b, w, groups=c) - mu_b**2
    cov = F.conv2d(a * b, w, groups=c) - mu_a * mu_b
    c1 = (0.01 * DATA_RANGE) ** 2
    c2 = (0.03 * DATA_RANGE) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a, b) -> float:
    """SSIM with a 7x7 Gaussian window (sigma 1.5), averaged over channels
    and valid window positions."""
    an, bn = _to_numpy(a), _to_numpy(b)
    if an.shape != bn.shape:
        raise ValueError(f"shape mismatch: {an.shape} vs {bn.shape}")
    at = torch.from_numpy(an).unsqueeze(0)
    bt = torch.from_numpy(bn).unsqueeze(0)
    return float(_ssim_map(at, bt, _gaussian_window()).mean())


@dataclass
class MetricReport:
    psnr: float
    mse: float
    ssim: float
    background_psnr: float | None = None
    background_mse: float | None = None
    background_ssim: float | None = None
    alignment: dict[str, float] = field(default_factory=dict)
    nfe: int | None = None
    latency_s: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def full_metrics(edited, reference) -> MetricReport:
    err = mse(edited, reference)
    return MetricReport(psnr=psnr_from_mse(err), mse=err, ssim=ssim(edited, reference))


def background_metrics(edited, reference, mask) -> MetricReport:
    """Metrics over pixels outside the mask (mask = 1 marks the editable
    region). Background SSIM averages windows fully outside the mask."""
    e, r = _to_numpy(edited), _to_numpy(reference)
    m = _to_numpy(mask) > 0.5
    if e.shape != r.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {r.shape}")
    if m.shape != e.shape[-2:]:
        raise ValueError(f"mask shape {m.shape} does not match image {e.shape[-2:]}")
    bg = ~m
    if not bg.any():
        raise ValueError("empty background: mask covers every pixel")
    err = float(np.mean((e[..., bg] - r[..., bg]) ** 2))

    at = torch.from_numpy(e).unsqueeze(0)
    bt = torch.from_numpy(r).unsqueeze(0)
    smap = _ssim_map(at, bt, _gaussian_window())
    overlap = F.conv2d(
        torch.from_numpy(m.astype(np.float64)).view(1, 1, *m.shape),
        torch.ones(1, 1, 7, 7, dtype=torch.float64),
    )
    clean = (overlap == 0).expand_as(smap)
    bg_ssim = float(smap[clean].mean()) if clean.any() else float("nan")
    return MetricReport(
        psnr=psnr(edited, reference),
        mse=mse(edited, reference),
        ssim=ssim(edited, reference),
        background_psnr=psnr_from_mse(err),
        background_mse=err,
        background_ssim=bg_ssim,
    )
