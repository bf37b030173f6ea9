"""Caption tokenizer and the trainable prompt encoder.

Captions come from the closed shapes-world grammar, so the tokenizer is a
plain whitespace split over a fixed vocabulary. The encoder is trained
jointly with the generator and frozen afterwards; prompt strength control
is a linear interpolation of two encoded prompts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

MAX_TOKENS = 24
EMBED_DIM = 128
PAD_TOKEN = "<pad>"

_VOCAB_PATH = Path(__file__).parent / "data" / "vocab.json"


class VocabularyError(ValueError):
    pass


class Vocabulary:
    def __init__(self, words: list[str]):
        if words[0] != PAD_TOKEN:
            raise ValueError("vocabulary must start with the pad token")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(words)}
        if len(self.index) != len(words):
            raise ValueError("vocabulary contains duplicates")

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def load(cls, path: str | Path = _VOCAB_PATH) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text()))

    def tokenize(self, caption: str, length: int = MAX_TOKENS) -> np.ndarray:
        """Deterministic ids, right-padded to the fixed length."""
        words = caption.strip().lower().split()
        unknown = [w for w in words if w not in self.index]
        if unknown:
            raise VocabularyError(f"words not in vocabulary: {unknown}")
        if len(words) > length:
            raise VocabularyError(f"caption longer than {length} tokens: {caption!r}")
        ids = np.zeros(length, dtype=np.int64)
        ids[: len(words)] = [self.index[w] for w in words]
        return ids

    def decode(self, ids) -> str:
        return " ".join(self.words[int(i)] for i in ids if int(i) != 0)


_default_vocab: Vocabulary | None = None


def default_vocab() -> Vocabulary:
    global _default_vocab
    if _default_vocab is None:
        _default_vocab = Vocabulary.load()
    return _default_vocab


def tokenize(caption: str) -> np.ndarray:
    return default_vocab().tokenize(caption)


@dataclass
class PromptEmbedding:
    """Per-token embedding matrix (..., L, d), its masked-mean pooled vector
    (..., d) and the token ids that produced it."""

    per_token: torch.Tensor
    pooled: torch.Tensor
    token_ids: torch.Tensor

    def unsqueeze(self) -> "PromptEmbedding":
        if self.per_token.dim() == 2:
            return PromptEmbedding(
                self.per_token.unsqueeze(0), self.pooled.unsqueeze(0), self.token_ids.unsqueeze(0)
            )
        return self

    def __getitem__(self, idx) -> "PromptEmbedding":
        return PromptEmbedding(self.per_token[idx], self.pooled[idx], self.token_ids[idx])


def interpolate(e_src: PromptEmbedding, e_tgt: PromptEmbedding, gamma: float) -> PromptEmbedding:
    """(1 - gamma) * src + gamma * tgt, elementwise; gamma may extrapolate
    outside [0, 1]. Token ids follow the target prompt."""
    if e_src.per_token.shape != e_tgt.per_token.shape:
        raise ValueError(
            f"shape mismatch: {tuple(e_src.per_token.shape)} vs {tuple(e_tgt.per_token.shape)}"
        )
    g = float(gamma)
    return PromptEmbedding(
        per_token=(1.0 - g) * e_src.per_token + g * e_tgt.per_token,
        pooled=(1.0 - g) * e_src.pooled + g * e_tgt.pooled,
        token_ids=e_tgt.token_ids,
    )


class TextEncoder(nn.Module):
    """Embedding table + learned positions, one self-attention block."""

    def __init__(self, vocab_size: int | None = None, dim: int = EMBED_DIM, length: int = MAX_TOKENS,
                 n_heads: int = 4):
        super().__init__()
        vocab_size = vocab_size or len(default_vocab())
        self.dim = dim
        self.length = length
        self.token_embedding = nn.Embedding(vocab_size, dim)
        self.position_embedding = nn.Parameter(torch.zeros(length, dim))
        nn.init.normal_(self.position_embedding, std=0.02)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))

    def embed_tokens(self, token_ids: torch.Tensor) -> torch.Tensor:
        """Pre-attention rows: table lookup plus positions. A one-word caption
        change only moves the affected rows here."""
        return self.token_embedding(token_ids) + self.position_embedding

    def forward(self, token_ids: torch.Tensor) -> PromptEmbedding:
        squeeze = token_ids.dim() == 1
        if squeeze:
            token_ids = token_ids.unsqueeze(0)
        h = self.embed_tokens(token_ids)
        a = self.norm1(h)
        h = h + self.attn(a, a, a, need_weights=False)[0]
        h = h + self.mlp(self.norm2(h))
        pad_mask = (token_ids != 0).float().unsqueeze(-1)
        pooled = (h * pad_mask).sum(dim=1) / pad_mask.sum(dim=1).clamp(min=1.0)
        if squeeze:
            h, pooled, token_ids = h.squeeze(0), pooled.squeeze(0), token_ids.squeeze(0)
        return PromptEmbedding(per_token=h, pooled=pooled, token_ids=token_ids)

    @torch.no_grad()
    def encode_caption(self, caption: str, vocab: Vocabulary | None = None) -> PromptEmbedding:
        vocab = vocab or default_vocab()
        ids = torch.from_numpy(vocab.tokenize(caption, self.length))
        return self(ids)
