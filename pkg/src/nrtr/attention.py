"""Scaled dot-product and multi-head attention, plus mask construction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import MaskError, ShapeError
from .tensor import Tensor


@dataclass
class AttentionMask:
    """Boolean pass pattern over ``[..., Lq, Lk]``; ``True`` means attend."""

    allowed: np.ndarray

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        dead = ~self.allowed.any(axis=-1)
        if dead.any():
            row = int(np.argwhere(dead)[0][-1])
            raise MaskError(f"attention mask blocks every key for query row {row}")

    @property
    def shape(self):
        return self.allowed.shape

    def additive(self, dtype) -> np.ndarray:
        return np.where(self.allowed, 0.0, -np.inf).astype(dtype)

    def __and__(self, other: AttentionMask) -> AttentionMask:
        return AttentionMask(self.allowed & other.allowed)


def make_causal_mask(length: int) -> AttentionMask:
    if length < 1:
        raise ShapeError(f"causal mask length must be >= 1, got {length}")
    return AttentionMask(np.tril(np.ones((length, length), dtype=bool)))


def make_padding_mask(valid_lengths, key_length: int, query_length: int = 1) -> AttentionMask:
    """Block key columns at or beyond each sequence's valid length.

    An int gives a ``[query_length, key_length]`` mask; a sequence of ints
    gives ``[B, query_length, key_length]``.
    """
    scalar = np.ndim(valid_lengths) == 0
    lengths = np.atleast_1d(np.asarray(valid_lengths, dtype=np.int64))
    if (lengths < 1).any() or (lengths > key_length).any():
        raise ShapeError(f"valid lengths must lie in [1, {key_length}], got {lengths.tolist()}")
    cols = np.arange(key_length) < lengths[:, None]
    allowed = np.broadcast_to(cols[:, None, :], (lengths.size, query_length, key_length))
    return AttentionMask(allowed[0] if scalar else allowed)


@dataclass
class AttentionWeights:
    """Per-head projections stored stacked by head.

    ``wq``, ``wk``: ``[h, d_model, d_k]``; ``wv``: ``[h, d_model, d_v]``;
    ``wo``: ``[h * d_v, d_model]``. Head ``i``'s matrices are ``wq.data[i]`` etc.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    def __post_init__(self):
        h, d, dq = self.wq.shape
        if self.wk.shape != (h, d, dq):
            raise ShapeError(f"query/key projections differ: {self.wq.shape} vs {self.wk.shape}")
        if self.wv.shape[:2] != (h, d):
            raise ShapeError(f"value projection {self.wv.shape} inconsistent with {self.wq.shape}")
        if self.wo.shape != (h * self.wv.shape[2], d):
            raise ShapeError(f"output projection {self.wo.shape} must be ({h * self.wv.shape[2]}, {d})")

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def d_model(self) -> int:
        return self.wq.shape[1]

    @property
    def d_k(self) -> int:
        return self.wq.shape[2]

    @property
    def d_v(self) -> int:
        return self.wv.shape[2]

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, heads: int, head_dim: int, dtype=T.DEFAULT_DTYPE):
        def proj():
            return T.parameter(T.glorot_uniform(rng, (heads, d_model, head_dim), d_model, head_dim, dtype), dtype=dtype)

        wq, wk, wv = proj(), proj(), proj()
        wo = T.parameter(T.glorot_uniform(rng, (heads * head_dim, d_model), heads * head_dim, d_model, dtype), dtype=dtype)
        return cls(wq, wk, wv, wo)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.{k}", getattr(self, k)) for k in ("wq", "wk", "wv", "wo")]


def _mask_bias(mask: AttentionMask | None, scores: np.ndarray):
    if mask is None:
        return None
    bias = mask.additive(scores.dtype)
    # masks carry [Lq, Lk] or [B, Lq, Lk]; scores may have a head axis in between
    if bias.ndim == 3 and scores.ndim == 4:
        bias = bias[:, None]
    return bias


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask | None = None,
                                 return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_k) + mask) v`` over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes inconsistent: q{q.shape} k{k.shape} v{v.shape}")
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    bias = _mask_bias(mask, scores.data)
    if bias is not None:
        scores = T.add(scores, Tensor(bias))
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


def multi_head_attention(qin: Tensor, kin: Tensor, vin: Tensor, w: AttentionWeights,
                         mask: AttentionMask | None = None) -> Tensor:
    """``Concat(head_1..head_h) W^O`` with ``head_i = SDPA(qin Wq_i, kin Wk_i, vin Wv_i)``.

    Inputs are ``[L, d_model]`` or ``[B, L, d_model]``. The concatenation is
    computed as the equivalent sum of per-head blocks of ``W^O``.
    """
    d = w.d_model
    for name, x in (("query", qin), ("key", kin), ("value", vin)):
        if x.shape[-1] != d:
            raise ShapeError(f"{name} input last dim {x.shape[-1]} != d_model {d}")
    if kin.shape[-2] != vin.shape[-2]:
        raise ShapeError(f"key length {kin.shape[-2]} != value length {vin.shape[-2]}")
    ax = qin.ndim - 2  # head axis position after inserting it before the length axis

    def project(x, wt):
        return T.matmul(T.reshape(x, x.shape[:-2] + (1,) + x.shape[-2:]), wt)

    heads = scaled_dot_product_attention(project(qin, w.wq), project(kin, w.wk), project(vin, w.wv), mask)
    wo = T.reshape(w.wo, (w.heads, w.d_v, d))
    return T.sum(T.matmul(heads, wo), axis=ax)
