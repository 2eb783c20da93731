"""The full recognizer: modality transform -> encoder -> decoder."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import charset
from . import tensor as T
from .attention import AttentionMask, AttentionWeights, make_padding_mask
from .decoder import Decoder, DecoderBlock, OutputProjection, decode_step_batch, greedy_decode, sequence_loss
from .embeddings import CharEmbedding, PositionalEncodingTable, positional_encoding
from .encoder import Encoder, EncoderBlock, FeedForward, LayerNormParams, encode
from .errors import ConfigError, ShapeError
from .modality import ConvStack, ConvStackConfig, modality_transform
from .tensor import Tensor

# Longest encoder sequence the positional table covers (image width / 2^n).
MAX_POSITIONS = 1024


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 2
    head_dim: int | None = None  # None -> d_model per head
    n_enc: int = 2
    n_dec: int = 2
    d_ff: int = 128
    conv_layers: int = 2
    conv_kernel: int = 3
    dropout: float = 0.1
    height: int = 32

    def __post_init__(self):
        for key in ("d_model", "heads", "n_enc", "n_dec", "d_ff"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.head_dim is not None and self.head_dim < 1:
            raise ConfigError("head_dim must be >= 1")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        self.conv  # validates the conv stack constraints

    @property
    def d_head(self) -> int:
        return self.d_model if self.head_dim is None else self.head_dim

    @property
    def conv(self) -> ConvStackConfig:
        return ConvStackConfig(self.d_model, self.conv_layers, self.conv_kernel, self.height)


class NRTR:
    """Parameters plus the forward passes for training and inference."""

    def __init__(self, config: ModelConfig, stack: ConvStack, encoder: Encoder, decoder: Decoder):
        self.config = config
        self.stack = stack
        self.encoder = encoder
        self.decoder = decoder
        self.pe: PositionalEncodingTable = positional_encoding(MAX_POSITIONS, config.d_model)

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE) -> NRTR:
        c = config
        stack = ConvStack.init(rng, c.conv, dtype)
        enc = Encoder.init(rng, c.n_enc, c.d_model, c.heads, c.d_head, c.d_ff, dtype)
        dec = Decoder.init(rng, c.n_dec, c.d_model, c.heads, c.d_head, c.d_ff, dtype)
        return cls(config, stack, enc, dec)

    # --------------------------------------------------------- parameters

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return (self.stack.named_parameters("conv") + self.encoder.named_parameters("enc")
                + self.decoder.named_parameters("dec"))

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> NRTR:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    @property
    def dtype(self):
        return self.stack.kernels[0].dtype

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray], dropout: float = 0.1) -> NRTR:
        """Rebuild a model whose architecture is implied by tensor names and shapes."""
        enc_ids = {int(m.group(1)) for k in state if (m := re.match(r"enc\.(\d+)\.", k))}
        dec_ids = {int(m.group(1)) for k in state if (m := re.match(r"dec\.(\d+)\.", k))}
        conv_ids = {int(m.group(1)) for k in state if (m := re.match(r"conv\.(\d+)\.", k))}
        if not enc_ids or not dec_ids or not conv_ids:
            raise ShapeError("state dict lacks encoder, decoder or conv tensors")
        heads, d_model, head_dim = np.shape(state["enc.0.self_attn.wq"])
        kernel = np.shape(state["conv.0.kernel"])[0]
        d_ff = np.shape(state["enc.0.ffn.w1"])[1]
        config = ModelConfig(d_model=d_model, heads=heads, head_dim=head_dim, n_enc=len(enc_ids),
                             n_dec=len(dec_ids), d_ff=d_ff, conv_layers=len(conv_ids), conv_kernel=kernel,
                             dropout=dropout)
        dtype = np.asarray(state["conv.0.kernel"]).dtype
        model = cls.init(config, np.random.default_rng(0), dtype)
        model.load_state_dict(state)
        return model

    # --------------------------------------------------------- forward

    def encode_images(self, images, widths=None, *, training: bool = False, rng=None):
        """Return ``(memory [B, L, d], padding mask, valid lengths)``."""
        rate = self.config.dropout
        seq, lengths = modality_transform(images, self.stack, self.pe, widths,
                                          dropout=rate, training=training, rng=rng)
        if seq.ndim == 2:
            seq = T.reshape(seq, (1,) + seq.shape)
        mask = make_padding_mask(lengths, seq.shape[1]) if (lengths < seq.shape[1]).any() else None
        memory = encode(seq, mask, self.encoder, dropout=rate, training=training, rng=rng)
        return memory, mask, lengths

    def logits(self, images, widths, decoder_in, *, training: bool = False, rng=None) -> Tensor:
        memory, mask, _ = self.encode_images(images, widths, training=training, rng=rng)
        return decode_step_batch(decoder_in, memory, mask, self.decoder, self.pe,
                                 dropout=self.config.dropout, training=training, rng=rng)

    def loss(self, batch, *, training: bool = True, rng=None) -> Tensor:
        logits = self.logits(batch.images, batch.widths, batch.decoder_in, training=training, rng=rng)
        return sequence_loss(logits, batch.targets)

    def recognize(self, images, widths=None, max_len: int = charset.MAX_TEXT_LEN):
        with T.no_grad():
            memory, mask, _ = self.encode_images(images, widths)
            results = greedy_decode(memory, mask, self.decoder, self.pe, max_len)
        return results[0] if np.ndim(images) == 2 else results


__all__ = [
    "ModelConfig", "NRTR", "AttentionMask", "AttentionWeights", "CharEmbedding", "ConvStack", "Decoder",
    "DecoderBlock", "Encoder", "EncoderBlock", "FeedForward", "LayerNormParams", "OutputProjection",
]
