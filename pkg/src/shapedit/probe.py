"""Attribute probe: a small convolutional classifier with one head per scene
attribute, the alignment oracle standing in for a text-image similarity model."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ProbeTrainConfig
from .world import ATTRIBUTES, Scene, build_dataset


class AttributeProbeNet(nn.Module):
    def __init__(self, resolution: int = 32):
        super().__init__()
        self.arch = {"resolution": resolution}
        self.backbone = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.GroupNorm(8, 32), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.GroupNorm(8, 64), nn.SiLU(),
            nn.Conv2d(64, 96, 3, stride=2, padding=1), nn.GroupNorm(8, 96), nn.SiLU(),
            nn.Conv2d(96, 128, 3, stride=2, padding=1), nn.GroupNorm(8, 128), nn.SiLU(),
        )
        feat = 128 * (resolution // 8) ** 2  # flattened, keeps spatial cues for position
        self.heads = nn.ModuleDict(
            {name: nn.Linear(feat, len(values)) for name, values in ATTRIBUTES.items()}
        )

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        h = self.backbone(x).flatten(1)
        return {name: head(h) for name, head in self.heads.items()}


@torch.no_grad()
def attribute_probe(image: torch.Tensor | np.ndarray, probe: AttributeProbeNet) -> dict[str, str]:
    """Argmax prediction per attribute for a single image."""
    x = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    logits = probe(x)
    return {name: ATTRIBUTES[name][int(lg.argmax(dim=-1)[0])] for name, lg in logits.items()}


@torch.no_grad()
def probe_predictions(images: torch.Tensor, probe: AttributeProbeNet) -> dict[str, torch.Tensor]:
    """Batched argmax class indices per attribute."""
    logits = probe(images)
    return {name: lg.argmax(dim=-1) for name, lg in logits.items()}


def attribute_targets(scenes: list[Scene]) -> dict[str, torch.Tensor]:
    return {
        name: torch.tensor([values.index(getattr(s, name)) for s in scenes])
        for name, values in ATTRIBUTES.items()
    }


def _blur3(x: torch.Tensor) -> torch.Tensor:
    g = torch.tensor([0.27406862, 0.45186276, 0.27406862])
    k = (g[:, None] * g[None, :]).view(1, 1, 3, 3).repeat(3, 1, 1, 1)
    return F.conv2d(x, k, padding=1, groups=3)


def train_probe(
    images: np.ndarray,
    scenes: list[Scene],
    config: ProbeTrainConfig,
    progress: bool = False,
) -> tuple[AttributeProbeNet, list[float]]:
    """Cross-entropy over all heads, with noise/blur augmentation so the
    probe stays reliable on softer generated images."""
    x_all = torch.from_numpy(np.asarray(images, dtype=np.float32))
    targets = attribute_targets(scenes)
    probe = AttributeProbeNet(resolution=x_all.shape[-1])
    probe.train()
    opt = torch.optim.Adam(probe.parameters(), lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)

    history: list[float] = []
    for step in range(config.steps):
        idx = torch.randint(len(x_all), (config.batch_size,), generator=rng)
        x = x_all[idx]
        if config.blur_prob > 0:
            blur = torch.rand(len(idx), generator=rng) < config.blur_prob
            if blur.any():
                x = x.clone()
                x[blur] = _blur3(x[blur])
        sigma = torch.rand(len(idx), 1, 1, 1, generator=rng) * config.noise_std
        x = x + sigma * torch.randn(x.shape, generator=rng)
        logits = probe(x)
        loss = sum(F.cross_entropy(logits[name], targets[name][idx]) for name in ATTRIBUTES)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss))
        if progress and (step % config.log_every == 0 or step == config.steps - 1):
            print(f"[probe] step {step:5d} loss {float(loss):.4f}")
    probe.eval()
    return probe, history


@torch.no_grad()
def probe_accuracy(
    probe: AttributeProbeNet, images: torch.Tensor, scenes: list[Scene]
) -> dict[str, float]:
    preds = probe_predictions(images, probe)
    targets = attribute_targets(scenes)
    return {name: float((preds[name] == targets[name]).float().mean()) for name in ATTRIBUTES}


def validate_probe(probe: AttributeProbeNet, seed: int = 991, count: int = 512, resolution: int = 32) -> dict[str, float]:
    images, scenes = build_dataset(seed, count, resolution)
    return probe_accuracy(probe, torch.from_numpy(images), scenes)
