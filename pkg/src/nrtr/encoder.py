"""Self-attention encoder: a stack of post-norm attention + feed-forward blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionMask, AttentionWeights, multi_head_attention
from .errors import ConfigError
from .tensor import Tensor

LN_EPS = 1e-6


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d_model: int, dtype=T.DEFAULT_DTYPE):
        return cls(T.parameter(np.ones(d_model), dtype=dtype), T.parameter(np.zeros(d_model), dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, LN_EPS)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


@dataclass
class FeedForward:
    w1: Tensor  # [d_model, d_ff]
    b1: Tensor
    w2: Tensor  # [d_ff, d_model]
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, d_ff: int, dtype=T.DEFAULT_DTYPE):
        return cls(
            T.parameter(T.glorot_uniform(rng, (d_model, d_ff), d_model, d_ff, dtype), dtype=dtype),
            T.parameter(np.zeros(d_ff), dtype=dtype),
            T.parameter(T.glorot_uniform(rng, (d_ff, d_model), d_ff, d_model, dtype), dtype=dtype),
            T.parameter(np.zeros(d_model), dtype=dtype),
        )

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.{k}", getattr(self, k)) for k in ("w1", "b1", "w2", "b2")]


def ffn(x: Tensor, p: FeedForward) -> Tensor:
    """``max(0, x W1 + b1) W2 + b2`` applied at every position."""
    hidden = T.relu(T.add(T.matmul(x, p.w1), p.b1))
    return T.add(T.matmul(hidden, p.w2), p.b2)


def sublayer(x: Tensor, f, norm: LayerNormParams, *, dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """``LayerNorm(x + Dropout(f(x)))``."""
    return norm(T.add(x, T.dropout(f(x), dropout, rng, training)))


@dataclass
class EncoderBlock:
    self_attn: AttentionWeights
    ffn: FeedForward
    norm1: LayerNormParams
    norm2: LayerNormParams

    @classmethod
    def init(cls, rng, d_model: int, heads: int, head_dim: int, d_ff: int, dtype=T.DEFAULT_DTYPE):
        return cls(
            AttentionWeights.init(rng, d_model, heads, head_dim, dtype),
            FeedForward.init(rng, d_model, d_ff, dtype),
            LayerNormParams.init(d_model, dtype),
            LayerNormParams.init(d_model, dtype),
        )

    def named_parameters(self, prefix: str):
        return (
            self.self_attn.named_parameters(f"{prefix}.self_attn")
            + self.ffn.named_parameters(f"{prefix}.ffn")
            + self.norm1.named_parameters(f"{prefix}.norm1")
            + self.norm2.named_parameters(f"{prefix}.norm2")
        )

    def __call__(self, x: Tensor, mask: AttentionMask | None, *, dropout=0.0, training=False, rng=None) -> Tensor:
        kw = dict(dropout=dropout, training=training, rng=rng)
        x = sublayer(x, lambda z: multi_head_attention(z, z, z, self.self_attn, mask), self.norm1, **kw)
        return sublayer(x, lambda z: ffn(z, self.ffn), self.norm2, **kw)


@dataclass
class Encoder:
    blocks: list[EncoderBlock]

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("encoder needs at least one block")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @classmethod
    def init(cls, rng, n_blocks: int, d_model: int, heads: int, head_dim: int, d_ff: int, dtype=T.DEFAULT_DTYPE):
        if n_blocks < 1:
            raise ConfigError("n_enc must be >= 1")
        return cls([EncoderBlock.init(rng, d_model, heads, head_dim, d_ff, dtype) for _ in range(n_blocks)])

    def named_parameters(self, prefix: str = "enc"):
        out = []
        for i, blk in enumerate(self.blocks):
            out += blk.named_parameters(f"{prefix}.{i}")
        return out


def encode(seq: Tensor, pad_mask: AttentionMask | None, encoder: Encoder, *,
           dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """Run every encoder block in order; padded keys get zero attention weight."""
    x = seq
    for blk in encoder.blocks:
        x = blk(x, pad_mask, dropout=dropout, training=training, rng=rng)
    return x
