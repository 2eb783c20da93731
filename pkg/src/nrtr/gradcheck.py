"""Central finite-difference verification of tape gradients.

Each component is run in float64 at the tiny configuration. For small
tensors every element is perturbed; for large ones a seeded sample of
coordinates is checked. The error metric per element is
``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import charset, rng as rngmod
from . import tensor as T
from .attention import AttentionWeights, make_causal_mask, make_padding_mask, multi_head_attention, scaled_dot_product_attention
from .data import CorpusSpec, collate, synth_corpus
from .embeddings import CharEmbedding, positional_encoding, embed_tokens
from .encoder import FeedForward, ffn
from .model import ModelConfig, NRTR
from .modality import ConvStack, ConvStackConfig, modality_transform

STEP = 1e-6
TOLERANCE = 1e-4
MAX_COORDS = 40


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if g_ad.size else 0.0


def check(fn, inputs: list[T.Tensor], gen: np.random.Generator, max_coords: int = MAX_COORDS, h: float = STEP) -> float:
    """Max relative error between tape and finite-difference gradients of scalar ``fn()``."""
    loss = fn()
    T.backward(loss, inputs)
    analytic = [p.grad.copy() for p in inputs]
    worst = 0.0
    for p, g in zip(inputs, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else gen.choice(n, size=max_coords, replace=False)
        fd = np.empty(len(coords))
        with T.no_grad():
            for j, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + h
                up = float(fn().data)
                flat[c] = orig - h
                down = float(fn().data)
                flat[c] = orig
                fd[j] = (up - down) / (2 * h)
        worst = max(worst, relative_error(g.reshape(-1)[coords], fd))
    return worst


def _param(gen, *shape, scale=1.0):
    return T.parameter(gen.normal(0.0, scale, size=shape), dtype=np.float64)


def _weighted_sum(x: T.Tensor, w: np.ndarray) -> T.Tensor:
    """A scalar whose gradient w.r.t. ``x`` is the fixed random ``w``."""
    return T.sum(T.mul(x, T.Tensor(w)))


def tiny_config() -> ModelConfig:
    return ModelConfig(d_model=64, heads=2, head_dim=32, n_enc=2, n_dec=2, d_ff=128, conv_layers=2)


def component_checks(seed: int) -> dict[str, float]:
    """Run every component check; returns ``{component: max relative error}``."""
    gen = rngmod.stream(seed, "gradcheck")
    cfg = tiny_config()
    d, hd, heads = cfg.d_model, cfg.d_head, cfg.heads
    results = {}

    # scaled dot-product attention with a causal mask
    q, k, v = _param(gen, 5, 8), _param(gen, 5, 8), _param(gen, 5, 6)
    wout = gen.normal(size=(5, 6))
    mask = make_causal_mask(5)
    results["attention"] = check(lambda: _weighted_sum(scaled_dot_product_attention(q, k, v, mask), wout),
                                 [q, k, v], gen)

    # multi-head attention, batched, with key padding
    x = _param(gen, 2, 6, d, scale=0.5)
    mem = _param(gen, 2, 7, d, scale=0.5)
    w = AttentionWeights.init(gen, d, heads, hd, np.float64)
    pad = make_padding_mask([7, 4], 7)
    wout = gen.normal(size=(2, 6, d))
    results["multi_head"] = check(lambda: _weighted_sum(multi_head_attention(x, mem, mem, w, pad), wout),
                                  [x, mem, w.wq, w.wk, w.wv, w.wo], gen)

    # position-wise feed-forward (biases offset so ReLU kinks stay away from eval points)
    f = FeedForward.init(gen, d, cfg.d_ff, np.float64)
    f.b1.data[:] = gen.normal(0.0, 0.5, size=cfg.d_ff)
    f.b2.data[:] = gen.normal(0.0, 0.5, size=d)
    xf = _param(gen, 5, d)
    wout = gen.normal(size=(5, d))
    results["ffn"] = check(lambda: _weighted_sum(ffn(xf, f), wout), [xf, f.w1, f.b1, f.w2, f.b2], gen)

    # layer norm
    xn, gain, bias = _param(gen, 4, d), _param(gen, d), _param(gen, d)
    wout = gen.normal(size=(4, d))
    results["layer_norm"] = check(lambda: _weighted_sum(T.layer_norm(xn, gain, bias, 1e-6), wout),
                                  [xn, gain, bias], gen)

    # convolutional modality transform on a padded batch
    ccfg = ConvStackConfig(d, cfg.conv_layers)
    stack = ConvStack.init(gen, ccfg, np.float64)
    for bparam in stack.biases:
        bparam.data[:] = gen.normal(0.0, 0.1, size=bparam.shape)
    pe = positional_encoding(64, d)
    img = _param(gen, 2, 32, 16, scale=0.5)
    wout = gen.normal(size=(2, 4, d))
    results["conv_stack"] = check(
        lambda: _weighted_sum(modality_transform(img, stack, pe, [16, 9])[0], wout),
        [img] + stack.kernels + stack.biases, gen)

    # character embedding + positional encoding, with dropout under a fixed mask
    emb = CharEmbedding.init(gen, charset.VOCAB_SIZE, d, np.float64)
    toks = np.array([[charset.BOS, 3, 7, 3], [charset.BOS, 30, charset.EOS, charset.EOS]])
    wout = gen.normal(size=(2, 4, d))
    results["embeddings"] = check(
        lambda: _weighted_sum(embed_tokens(toks, emb, pe, dropout=0.1, training=True,
                                           rng=rngmod.stream(seed, "gc-dropout")), wout),
        [emb.matrix], gen)

    # full encoder-decoder teacher-forced loss, training mode with fixed dropout masks
    model = NRTR.init(cfg, gen, np.float64)
    for bparam in model.stack.biases:  # zero biases on blank patches sit exactly on the ReLU kink
        bparam.data[:] = gen.normal(0.0, 0.1, size=bparam.shape)
    samples = synth_corpus(CorpusSpec(size=3, min_len=1, max_len=3), seed, split=7)
    batch = collate(samples, [0, 1, 2], 32)
    results["full_model"] = check(
        lambda: model.loss(batch, training=True, rng=rngmod.stream(seed, "gc-model")),
        model.parameters(), gen, max_coords=6)
    return results


@dataclass
class SuiteResult:
    seed: int
    errors: dict[str, float]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(e < TOLERANCE for e in self.errors.values())


def run_suite(seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    errs = component_checks(seed)
    return SuiteResult(seed, errs, time.perf_counter() - t0)
