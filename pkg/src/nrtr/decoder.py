"""Autoregressive decoder, output projection, greedy inference and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import charset
from . import tensor as T
from .attention import AttentionMask, AttentionWeights, make_causal_mask, multi_head_attention
from .embeddings import CharEmbedding, PositionalEncodingTable, embed_tokens
from .encoder import FeedForward, LayerNormParams, ffn, sublayer
from .errors import ConfigError, ShapeError
from .tensor import Tensor

IGNORE = -1


@dataclass
class DecoderBlock:
    self_attn: AttentionWeights
    cross_attn: AttentionWeights
    ffn: FeedForward
    norm1: LayerNormParams
    norm2: LayerNormParams
    norm3: LayerNormParams

    @classmethod
    def init(cls, rng, d_model: int, heads: int, head_dim: int, d_ff: int, dtype=T.DEFAULT_DTYPE):
        return cls(
            AttentionWeights.init(rng, d_model, heads, head_dim, dtype),
            AttentionWeights.init(rng, d_model, heads, head_dim, dtype),
            FeedForward.init(rng, d_model, d_ff, dtype),
            LayerNormParams.init(d_model, dtype),
            LayerNormParams.init(d_model, dtype),
            LayerNormParams.init(d_model, dtype),
        )

    def named_parameters(self, prefix: str):
        return (
            self.self_attn.named_parameters(f"{prefix}.self_attn")
            + self.cross_attn.named_parameters(f"{prefix}.cross_attn")
            + self.ffn.named_parameters(f"{prefix}.ffn")
            + self.norm1.named_parameters(f"{prefix}.norm1")
            + self.norm2.named_parameters(f"{prefix}.norm2")
            + self.norm3.named_parameters(f"{prefix}.norm3")
        )

    def __call__(self, y: Tensor, memory: Tensor, causal: AttentionMask, memory_mask: AttentionMask | None,
                 *, dropout=0.0, training=False, rng=None) -> Tensor:
        kw = dict(dropout=dropout, training=training, rng=rng)
        y = sublayer(y, lambda z: multi_head_attention(z, z, z, self.self_attn, causal), self.norm1, **kw)
        # queries from the decoder stream, keys and values from the encoder output
        y = sublayer(y, lambda z: multi_head_attention(z, memory, memory, self.cross_attn, memory_mask), self.norm2, **kw)
        return sublayer(y, lambda z: ffn(z, self.ffn), self.norm3, **kw)


@dataclass
class OutputProjection:
    w: Tensor  # [d_model, 38]
    b: Tensor  # [38]

    def __post_init__(self):
        if self.w.shape[1] != charset.NUM_CLASSES or self.b.shape != (charset.NUM_CLASSES,):
            raise ShapeError(f"output projection must have {charset.NUM_CLASSES} classes, got {self.w.shape}")

    @classmethod
    def init(cls, rng, d_model: int, dtype=T.DEFAULT_DTYPE):
        n = charset.NUM_CLASSES
        return cls(T.parameter(T.glorot_uniform(rng, (d_model, n), d_model, n, dtype), dtype=dtype),
                   T.parameter(np.zeros(n), dtype=dtype))

    def __call__(self, y: Tensor) -> Tensor:
        return T.add(T.matmul(y, self.w), self.b)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


@dataclass
class Decoder:
    embedding: CharEmbedding
    blocks: list[DecoderBlock]
    out: OutputProjection

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("decoder needs at least one block")

    @classmethod
    def init(cls, rng, n_blocks: int, d_model: int, heads: int, head_dim: int, d_ff: int, dtype=T.DEFAULT_DTYPE):
        if n_blocks < 1:
            raise ConfigError("n_dec must be >= 1")
        emb = CharEmbedding.init(rng, charset.VOCAB_SIZE, d_model, dtype)
        blocks = [DecoderBlock.init(rng, d_model, heads, head_dim, d_ff, dtype) for _ in range(n_blocks)]
        return cls(emb, blocks, OutputProjection.init(rng, d_model, dtype))

    def named_parameters(self, prefix: str = "dec"):
        out = self.embedding.named_parameters(f"{prefix}.embedding")
        for i, blk in enumerate(self.blocks):
            out += blk.named_parameters(f"{prefix}.{i}")
        return out + self.out.named_parameters(f"{prefix}.out")


def decode_step_batch(tgt_tokens, enc_out: Tensor, pad_mask: AttentionMask | None, decoder: Decoder,
                      pe: PositionalEncodingTable, *, dropout: float = 0.0, training: bool = False,
                      rng=None) -> Tensor:
    """Teacher-forced logits ``[..., T, 38]``; row ``t`` predicts target token ``t + 1``.

    ``tgt_tokens`` is ``[T]`` or ``[B, T]`` and starts with BOS.
    """
    ids = np.asarray(tgt_tokens, dtype=np.int64)
    if ids.ndim == 0 or ids.shape[-1] == 0:
        raise ShapeError("decoder input must contain at least the BOS token")
    y = embed_tokens(ids, decoder.embedding, pe, dropout=dropout, training=training, rng=rng)
    causal = make_causal_mask(ids.shape[-1])
    for blk in decoder.blocks:
        y = blk(y, enc_out, causal, pad_mask, dropout=dropout, training=training, rng=rng)
    return decoder.out(y)


def sequence_loss(logits: Tensor, targets) -> Tensor:
    """Mean teacher-forced cross-entropy; ``IGNORE`` targets are excluded."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != t.shape:
        raise ShapeError(f"logits {logits.shape} do not align with targets {t.shape}")
    return T.cross_entropy(logits, t, ignore_index=IGNORE)


@dataclass(frozen=True)
class DecodeResult:
    text: str
    tokens: tuple[int, ...]
    truncated: bool  # max_len reached without EOS


def greedy_decode(enc_out: Tensor, pad_mask: AttentionMask | None, decoder: Decoder,
                  pe: PositionalEncodingTable, max_len: int = charset.MAX_TEXT_LEN):
    """Argmax decoding from BOS until EOS or ``max_len`` characters.

    Returns one :class:`DecodeResult` for a ``[L, d]`` memory, a list for
    ``[B, L, d]``. Ties go to the lowest class id.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    single = enc_out.ndim == 2
    if single:
        enc_out = T.reshape(enc_out, (1,) + enc_out.shape)
    b = enc_out.shape[0]
    seqs = np.full((b, 1), charset.BOS, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    with T.no_grad():
        for _ in range(max_len + 1):
            logits = decode_step_batch(seqs, enc_out, pad_mask, decoder, pe).data
            nxt = np.argmax(logits[:, -1, :], axis=-1)
            nxt = np.where(done, charset.EOS, nxt)
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
            done |= nxt == charset.EOS
            if done.all():
                break
    results = []
    for row in seqs[:, 1:]:
        chars = []
        for t in row:
            if t == charset.EOS:
                break
            chars.append(int(t))
        truncated = len(chars) > max_len or charset.EOS not in row
        chars = chars[:max_len]
        results.append(DecodeResult(charset.detokenize(chars), tuple(chars), truncated))
    return results[0] if single else results
