"""Bidirectional transformer encoder exposing every block's hidden states.

Module and parameter names follow the common BERT checkpoint layout so that
pretrained tensors load by name.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from ..errors import IdOutOfRange, InvalidConfig, ShapeMismatch
from .vocab import MAX_LEN, TokenSequence, batch_tensors

LAYER_NORM_EPS = 1e-12


def default_dtype() -> torch.dtype:
    """Numeric precision from ``PIPELINE_PRECISION`` (32 or 64, default 64)."""
    prec = os.environ.get("PIPELINE_PRECISION", "64")
    if prec not in ("32", "64"):
        raise InvalidConfig(f"PIPELINE_PRECISION must be 32 or 64, got {prec!r}")
    return torch.float64 if prec == "64" else torch.float32


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    hidden_size: int = 16
    num_heads: int = 2
    vocab_size: int = 64
    intermediate_size: Optional[int] = None  # defaults to 4 * hidden_size
    max_len: int = MAX_LEN
    max_position: Optional[int] = None  # position table rows; defaults to max_len
    type_vocab_size: int = 2
    dropout_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise InvalidConfig("num_layers must be >= 1")
        if self.hidden_size < 1 or self.num_heads < 1 or self.hidden_size % self.num_heads:
            raise InvalidConfig(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.vocab_size < 4:
            raise InvalidConfig("vocab_size must hold the special tokens")
        if self.positions < self.max_len:
            raise InvalidConfig("position table shorter than max_len")

    @property
    def ffn_size(self) -> int:
        return self.intermediate_size or 4 * self.hidden_size

    @property
    def positions(self) -> int:
        return self.max_position or self.max_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


BASE_CONFIG = EncoderConfig(
    num_layers=12, hidden_size=768, num_heads=12, vocab_size=30522,
    intermediate_size=3072, max_position=512,
)


def parameter_count(cfg: EncoderConfig) -> int:
    """Closed-form parameter count of the architecture."""
    H, I = cfg.hidden_size, cfg.ffn_size
    embeddings = (cfg.vocab_size + cfg.positions + cfg.type_vocab_size) * H + 2 * H
    attention = 4 * (H * H + H) + 2 * H
    ffn = H * I + I + I * H + H + 2 * H
    return embeddings + cfg.num_layers * (attention + ffn)


class _Dense(nn.Module):
    def __init__(self, n_in, n_out, with_norm=False):
        super().__init__()
        self.dense = nn.Linear(n_in, n_out)
        if with_norm:
            self.LayerNorm = nn.LayerNorm(n_out, eps=LAYER_NORM_EPS)


class _SelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        H = cfg.hidden_size
        self.num_heads = cfg.num_heads
        self.query = nn.Linear(H, H)
        self.key = nn.Linear(H, H)
        self.value = nn.Linear(H, H)
        self.dropout = nn.Dropout(cfg.dropout_p)

    def _heads(self, x):
        B, S, H = x.shape
        return x.view(B, S, self.num_heads, H // self.num_heads).transpose(1, 2)

    def forward(self, x, key_mask):
        B, S, H = x.shape
        q, k, v = self._heads(self.query(x)), self._heads(self.key(x)), self._heads(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(H // self.num_heads)
        # -inf gives masked keys an exact zero weight, so padding cannot leak
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = self.dropout(torch.softmax(scores, dim=-1))
        return (probs @ v).transpose(1, 2).reshape(B, S, H)


class _Attention(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.self = _SelfAttention(cfg)
        self.output = _Dense(cfg.hidden_size, cfg.hidden_size, with_norm=True)
        self.dropout = nn.Dropout(cfg.dropout_p)

    def forward(self, x, key_mask):
        a = self.dropout(self.output.dense(self.self(x, key_mask)))
        return self.output.LayerNorm(x + a)


class TransformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attention = _Attention(cfg)
        self.intermediate = _Dense(cfg.hidden_size, cfg.ffn_size)
        self.output = _Dense(cfg.ffn_size, cfg.hidden_size, with_norm=True)
        self.dropout = nn.Dropout(cfg.dropout_p)

    def forward(self, x, key_mask):
        x = self.attention(x, key_mask)
        h = F.gelu(self.intermediate.dense(x))
        return self.output.LayerNorm(x + self.dropout(self.output.dense(h)))


class _Embeddings(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        H = cfg.hidden_size
        self.word_embeddings = nn.Embedding(cfg.vocab_size, H)
        self.position_embeddings = nn.Embedding(cfg.positions, H)
        self.token_type_embeddings = nn.Embedding(cfg.type_vocab_size, H)
        self.LayerNorm = nn.LayerNorm(H, eps=LAYER_NORM_EPS)
        self.dropout = nn.Dropout(cfg.dropout_p)

    def forward(self, ids):
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.word_embeddings(ids) + self.position_embeddings(pos)[None] + self.token_type_embeddings.weight[0]
        return self.dropout(self.LayerNorm(x))


class _Layers(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.layer = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.num_layers))


class TransformerEncoder(nn.Module):
    """Returns hidden states of shape (batch, num_layers, seq, hidden): one
    slice per transformer block, the embedding layer excluded."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.config = cfg
        self.embeddings = _Embeddings(cfg)
        self.encoder = _Layers(cfg)
        self.source: Optional[str] = None  # weights archive, when pretrained

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise IdOutOfRange(f"token ids must lie in [0, {self.config.vocab_size})")
        key_mask = attention_mask.bool()
        x = self.embeddings(ids)
        states = []
        for block in self.encoder.layer:
            x = block(x, key_mask)
            states.append(x)
        return torch.stack(states, dim=1)


def init_weights(model: TransformerEncoder, seed: int) -> None:
    """Truncated-normal(0.02) matrices, zero biases, unit LayerNorm gains."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "LayerNorm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                nn.init.trunc_normal_(p, std=0.02, a=-0.04, b=0.04, generator=gen)


def build_mini(cfg: EncoderConfig, dtype: Optional[torch.dtype] = None) -> TransformerEncoder:
    """Desk-scale encoder with deterministic initialization from ``cfg.seed``."""
    model = TransformerEncoder(cfg)
    init_weights(model, cfg.seed)
    return model.to(dtype or default_dtype()).eval()


def forward(batch: Sequence[TokenSequence], backend: TransformerEncoder) -> torch.Tensor:
    """Per-layer states (B, L, S, H) for a list of token sequences."""
    ids, mask = batch_tensors(batch)
    out = backend(ids, mask)
    L, H = backend.config.num_layers, backend.config.hidden_size
    if out.shape[1:] != (L, ids.shape[1], H):
        raise ShapeMismatch(f"backend returned {tuple(out.shape)}")
    return out
