"""Sinusoidal positional encoding and the learnable character embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class PositionalEncodingTable:
    max_len: int
    d_model: int
    table: np.ndarray  # float64 [max_len, d_model]

    def rows(self, n: int, dtype=T.DEFAULT_DTYPE) -> np.ndarray:
        if n > self.max_len:
            raise ShapeError(f"sequence length {n} exceeds positional table length {self.max_len}")
        return self.table[:n].astype(dtype)


def positional_encoding(max_len: int, d_model: int) -> PositionalEncodingTable:
    """Sin block over the first half of the features, cos block over the second.

    Column ``i < d/2`` holds ``sin(pos * w_i)``, column ``i + d/2`` holds
    ``cos(pos * w_i)``, with ``w_i = 10000^(-2i/d)``.
    """
    if d_model < 2 or d_model % 2:
        raise ConfigError(f"d_model must be a positive even number, got {d_model}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    half = d_model // 2
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-2.0 * np.arange(half, dtype=np.float64) / d_model)
    angle = pos * freq
    table = np.concatenate([np.sin(angle), np.cos(angle)], axis=1)
    table.setflags(write=False)
    return PositionalEncodingTable(max_len, d_model, table)


@dataclass
class CharEmbedding:
    matrix: Tensor  # [vocab_size, d_model]

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_model(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, d_model: int, dtype=T.DEFAULT_DTYPE):
        a = 1.0 / math.sqrt(d_model)
        return cls(T.parameter(rng.uniform(-a, a, size=(vocab_size, d_model)), dtype=dtype))

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.matrix", self.matrix)]


def embed_tokens(tokens, emb: CharEmbedding, pe: PositionalEncodingTable, *,
                 dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """Embedding rows plus positional rows, with residual dropout in training.

    ``tokens`` is ``[L]`` or ``[B, L]`` integer ids.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    x = T.embedding_lookup(emb.matrix, ids)
    x = T.add(x, Tensor(pe.rows(ids.shape[-1], emb.matrix.dtype)))
    return T.dropout(x, dropout, rng, training)
