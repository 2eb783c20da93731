"""Convolutional modality-transform front-end: image -> feature sequence.

Each stride-2 layer halves height and width and doubles the channel count,
so ``height * channels`` equals ``d_model`` after every layer. The final
``[h, w, c]`` map is read column by column, each column flattened
height-major into one ``d_model`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embeddings import PositionalEncodingTable
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ConvStackConfig:
    d_model: int
    n_layers: int = 2
    kernel: int = 3
    height: int = 32

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("conv_layers must be >= 1")
        if self.d_model % self.height:
            raise ConfigError(f"d_model={self.d_model} must be divisible by input height {self.height}")
        if self.height % (2 ** self.n_layers):
            raise ConfigError(f"input height {self.height} not divisible by 2^{self.n_layers}")
        if self.kernel < 1:
            raise ConfigError("conv kernel size must be >= 1")

    @property
    def reduction(self) -> int:
        return 2 ** self.n_layers

    def channels(self, n: int) -> int:
        """Channel count after layer ``n`` (``n = 0`` is the formula's base, not the input)."""
        return (self.d_model // self.height) * 2 ** n

    def padded_width(self, w0: int) -> int:
        r = self.reduction
        return -(-w0 // r) * r

    def layer_shapes(self, w0: int) -> list[tuple[int, int, int]]:
        """``(w, h, c)`` after each layer for an input of width ``w0``."""
        w = self.padded_width(w0)
        return [(w // 2 ** n, self.height // 2 ** n, self.channels(n)) for n in range(1, self.n_layers + 1)]

    def sequence_length(self, w0: int) -> int:
        return self.padded_width(w0) // self.reduction


@dataclass
class ConvStack:
    config: ConvStackConfig
    kernels: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    @classmethod
    def init(cls, rng: np.random.Generator, config: ConvStackConfig, dtype=T.DEFAULT_DTYPE):
        k = config.kernel
        kernels, biases = [], []
        cin = 1
        for n in range(1, config.n_layers + 1):
            cout = config.channels(n)
            w = T.glorot_uniform(rng, (k, k, cin, cout), k * k * cin, k * k * cout, dtype)
            kernels.append(T.parameter(w, dtype=dtype))
            biases.append(T.parameter(np.zeros(cout), dtype=dtype))
            cin = cout
        return cls(config, kernels, biases)

    def named_parameters(self, prefix: str):
        out = []
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            out += [(f"{prefix}.{i}.kernel", k), (f"{prefix}.{i}.bias", b)]
        return out


def _column_mask(widths: np.ndarray, total: int, dtype) -> np.ndarray:
    return (np.arange(total)[None, :] < widths[:, None]).astype(dtype)[:, None, :, None]


def modality_transform(images, stack: ConvStack, pe: PositionalEncodingTable, widths=None, *,
                       dropout: float = 0.0, training: bool = False, rng=None):
    """Map ``[B, H, W]`` images to ``([B, W/2^n, d_model] sequence, valid lengths)``.

    ``widths`` gives each image's true width; columns beyond it are zeroed
    before the first layer and beyond the corresponding extent after every
    layer, so padded content can never reach valid positions.
    """
    cfg = stack.config
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=stack.kernels[0].dtype))
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
    b, h, w = x.shape
    if h != cfg.height:
        raise ShapeError(f"image height must be {cfg.height}, got {h}")
    if w % cfg.reduction:
        raise ShapeError(f"image width {w} must be a multiple of {cfg.reduction}; pad it first")
    widths = np.full(b, w) if widths is None else np.asarray(widths, dtype=np.int64).reshape(b)
    if (widths < 1).any() or (widths > w).any():
        raise ShapeError(f"valid widths {widths.tolist()} outside [1, {w}]")
    padded = -(-widths // cfg.reduction) * cfg.reduction

    x = T.reshape(x, (b, h, w, 1))
    if (widths < w).any():
        x = T.mul(x, Tensor(_column_mask(widths, w, x.dtype)))
    for n, (k, bias) in enumerate(zip(stack.kernels, stack.biases), start=1):
        x = T.relu(T.conv2d(x, k, bias, stride=2))
        step = 2 ** n
        valid = padded // step
        if (valid < w // step).any():
            x = T.mul(x, Tensor(_column_mask(valid, w // step, x.dtype)))
        if x.shape[1] * x.shape[3] != cfg.d_model:
            raise ShapeError(f"layer {n}: height*channels = {x.shape[1] * x.shape[3]} != d_model {cfg.d_model}")
    _, hn, wn, cn = x.shape
    seq = T.reshape(T.transpose(x, 1, 2), (b, wn, hn * cn))
    seq = T.add(seq, Tensor(pe.rows(wn, seq.dtype)))
    seq = T.dropout(seq, dropout, rng, training)
    lengths = padded // cfg.reduction
    if single:
        seq = T.reshape(seq, seq.shape[1:])
    return seq, lengths
