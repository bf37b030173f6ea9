"""Weight checkpoints: a manifest JSON (kind, architecture hyperparameters,
schedule) plus one tensor blob per parameter, so checkpoints stay readable
without pickle and outside Python."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .blob import read_tensor, write_tensor
from .nets import ConditionalUNet
from .probe import AttributeProbeNet
from .schedule import NoiseSchedule
from .text import TextEncoder


def save_checkpoint(
    path: str | Path,
    module: torch.nn.Module,
    kind: str,
    schedule: NoiseSchedule | None = None,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    params_dir = path / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype(np.float32)
        fname = f"{name}.tbe"
        write_tensor(params_dir / fname, arr)
        entries[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "sha256": hashlib.sha256((params_dir / fname).read_bytes()).hexdigest(),
        }
    arch = getattr(module, "arch", None)
    if arch is None and isinstance(module, TextEncoder):
        arch = {
            "vocab_size": module.token_embedding.num_embeddings,
            "dim": module.dim,
            "length": module.length,
        }
    manifest = {
        "kind": kind,
        "arch": arch,
        "schedule": schedule.to_config() if schedule else None,
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def _build_module(kind: str, arch: dict) -> torch.nn.Module:
    if kind in ("generator", "inversion"):
        return ConditionalUNet(**arch)
    if kind == "text_encoder":
        return TextEncoder(**arch)
    if kind == "probe":
        return AttributeProbeNet(**arch)
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def load_checkpoint(path: str | Path) -> tuple[torch.nn.Module, dict]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    module = _build_module(manifest["kind"], manifest["arch"])
    state = {}
    expected = set(module.state_dict())
    for name in expected:
        fname = path / "params" / f"{name}.tbe"
        if not fname.exists():
            raise FileNotFoundError(f"checkpoint parameter missing: {fname}")
        state[name] = torch.from_numpy(read_tensor(fname))
    module.load_state_dict(state, strict=True)
    module.eval()
    return module, manifest


def load_schedule(manifest: dict) -> NoiseSchedule:
    cfg = manifest.get("schedule")
    return NoiseSchedule.from_config(cfg) if cfg else NoiseSchedule()
