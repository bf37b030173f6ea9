"""Dataclass configs for training runs and the edit service."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class GeneratorTrainConfig:
    steps: int = 3000
    batch_size: int = 32
    lr: float = 2e-3
    warmup_steps: int = 200
    seed: int = 0
    grid_steps: int = 4
    base_width: int = 64
    short_caption_fraction: float = 0.25
    grad_clip: float = 1.0
    log_every: int = 100


@dataclass
class InversionTrainConfig:
    steps: int = 1500
    batch_size: int = 32
    lr: float = 1e-3
    warmup_steps: int = 100
    seed: int = 1
    grid_steps: int = 4
    base_width: int = 64
    lambda_kl: float = 1e-6
    short_caption_fraction: float = 0.25
    grad_clip: float = 1.0
    log_every: int = 100
    init_from_generator: bool = True


@dataclass
class ProbeTrainConfig:
    steps: int = 2500
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 2
    noise_std: float = 0.12
    blur_prob: float = 0.5
    log_every: int = 200


@dataclass
class LlmConfig:
    enabled: bool = False
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 30.0
    base_instruction: str = (
        "please make the smallest change possible to the following sentence, "
        "but apply this edit instruction and answer with the new sentence only."
    )

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class ServiceConfig:
    generator_checkpoint: str = ""
    inversion_checkpoint: str = ""
    encoder_checkpoint: str = ""
    probe_checkpoint: str = ""
    sessions_dir: str = "sessions"
    resolution: int = 32
    grid_steps: int = 4
    default_threshold: float = 0.6
    port: int = 8000
    torch_threads: int = 0  # 0 = leave torch default
    llm: LlmConfig = field(default_factory=LlmConfig)

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text())
        llm = LlmConfig(**raw.pop("llm", {}))
        return cls(llm=llm, **raw)

    def save(self, path: str | Path) -> None:
        data = {k: v for k, v in self.__dict__.items() if k != "llm"}
        data["llm"] = dict(self.llm.__dict__)
        Path(path).write_text(json.dumps(data, indent=2))
