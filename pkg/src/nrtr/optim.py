"""Adam with the warmup / inverse-square-root schedule, and checkpoint averaging."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import checkpoint
from .errors import ConfigError, IntegrityError

BETA1 = 0.9
BETA2 = 0.98
EPS = 1e-9


def lrate(n: int, d_model: int, warmup_n: int) -> float:
    """``d_model^-0.5 * min(n^-0.5, n * warmup_n^-1.5)``."""
    if n < 1:
        raise ConfigError(f"learning-rate step must be >= 1, got {n}")
    if warmup_n < 1:
        raise ConfigError(f"warmup_n must be >= 1, got {warmup_n}")
    return d_model ** -0.5 * min(n ** -0.5, n * warmup_n ** -1.5)


class Adam:
    """Bias-corrected Adam over named parameters.

    ``lr`` is either a constant or a callable of the (1-based) step number.
    """

    def __init__(self, named_params, lr, betas=(BETA1, BETA2), eps=EPS, clip_norm: float | None = None):
        self.params = OrderedDict(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def current_lr(self, n: int | None = None) -> float:
        n = self.step_count if n is None else n
        return float(self.lr(n)) if callable(self.lr) else float(self.lr)

    def step(self) -> float:
        """Apply one update from the populated ``.grad`` fields; returns the lr used."""
        for name, p in self.params.items():
            if p.grad is None:
                raise ConfigError(f"parameter {name!r} has no gradient")
        self.step_count += 1
        n = self.step_count
        lr = self.current_lr(n)
        scale = 1.0
        if self.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in self.params.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        c1 = 1.0 - self.beta1 ** n
        c2 = 1.0 - self.beta2 ** n
        for name, p in self.params.items():
            dt = p.data.dtype.type
            g = p.grad if scale == 1.0 else p.grad * dt(scale)
            m, v = self.m[name], self.v[name]
            m *= dt(self.beta1)
            m += dt(1.0 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1.0 - self.beta2) * (g * g)
            mhat = m / dt(c1)
            vhat = v / dt(c2)
            p.data = p.data - dt(lr) * (mhat / (np.sqrt(vhat) + dt(self.eps)))
        return lr

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        out = OrderedDict()
        out["adam.step"] = np.asarray(self.step_count, dtype=np.float32)
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
        for k in self.params:
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if "adam.step" not in state:
            raise IntegrityError("checkpoint carries no optimizer state")
        self.step_count = int(state["adam.step"])
        for k, p in self.params.items():
            self.m[k] = np.array(state[f"adam.m.{k}"], dtype=p.data.dtype)
            self.v[k] = np.array(state[f"adam.v.{k}"], dtype=p.data.dtype)


def average_checkpoints(sources) -> OrderedDict[str, np.ndarray]:
    """Elementwise mean of model parameters over several checkpoints.

    ``sources`` are paths or already-loaded tensor dicts. Optimizer state is
    dropped. Accumulation is in float64, so averaging identical inputs
    reproduces them exactly.
    """
    states = [checkpoint.model_tensors(checkpoint.load(s) if not isinstance(s, dict) else s) for s in sources]
    if not states:
        raise ConfigError("no checkpoints to average")
    ref = states[0]
    for i, st in enumerate(states[1:], start=1):
        diff = sorted(set(ref) ^ set(st))
        diff += sorted(k for k in set(ref) & set(st) if np.shape(ref[k]) != np.shape(st[k]))
        if diff:
            raise IntegrityError(f"checkpoint {i} manifest differs from checkpoint 0 in: {', '.join(diff)}")
    out = OrderedDict()
    for k in ref:
        acc = np.zeros(np.shape(ref[k]), dtype=np.float64)
        for st in states:
            acc += st[k]
        out[k] = (acc / len(states)).astype(np.float32)
    return out
