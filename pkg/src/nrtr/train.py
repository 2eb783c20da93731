"""Teacher-forced training loop, periodic checkpoints and evaluation."""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, rng as rngmod
from . import tensor as T
from .config import RunConfig
from .data import ImageSample, collate, batch_stream, load_manifest, make_buckets, synth_corpus
from .model import NRTR
from .optim import Adam, average_checkpoints, lrate

log = logging.getLogger(__name__)

AVERAGE_WINDOW = 10


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class EvalReport:
    n: int
    correct: int
    char_errors: int
    char_total: int
    predictions: list[str] = field(default_factory=list)

    @property
    def word_accuracy(self) -> float:
        return 100.0 * self.correct / self.n

    @property
    def char_error_rate(self) -> float:
        return self.char_errors / max(self.char_total, 1)

    def tsv(self) -> str:
        return f"n={self.n}\tword_accuracy={self.word_accuracy:.2f}\tchar_error_rate={self.char_error_rate:.4f}"


def score(predictions: list[str], labels: list[str]) -> EvalReport:
    """Exact-match word accuracy and per-character edit distance."""
    if not labels:
        raise ValueError("nothing to evaluate")
    correct = sum(p == t for p, t in zip(predictions, labels))
    errs = sum(edit_distance(p, t) for p, t in zip(predictions, labels))
    return EvalReport(len(labels), correct, errs, sum(len(t) for t in labels), list(predictions))


def predict(model: NRTR, samples: list[ImageSample], granularity: int = 32, batch_size: int = 64,
            max_len: int = 16) -> list[str]:
    """Greedy transcriptions, batched by width bucket, in input order."""
    out: list[str | None] = [None] * len(samples)
    plan = make_buckets([s.width for s in samples], granularity, batch_size, np.random.default_rng(0))
    for key, idx in sorted(plan):
        batch = collate(samples, idx, granularity, key, targets=False)
        for i, res in zip(idx, model.recognize(batch.images, batch.widths, max_len)):
            out[i] = res.text
    return out


def evaluate(model: NRTR, samples: list[ImageSample], granularity: int = 32) -> EvalReport:
    return score(predict(model, samples, granularity), [s.label for s in samples])


def load_datasets(cfg: RunConfig) -> tuple[list[ImageSample], list[ImageSample]]:
    if cfg.train_manifest:
        train = load_manifest(cfg.train_manifest)
    else:
        train = synth_corpus(cfg.corpus_spec(cfg.synth_train), cfg.seed, split=0)
    if cfg.test_manifest:
        test = load_manifest(cfg.test_manifest)
    elif cfg.synth_test:
        test = synth_corpus(cfg.corpus_spec(cfg.synth_test), cfg.seed, split=1)
    else:
        test = []
    return train, test


@dataclass
class TrainResult:
    model: NRTR
    optimizer: Adam
    log: list[tuple[int, float, float]]
    checkpoints: list[Path]
    average: Path | None
    evals: list[tuple[int, EvalReport]] = field(default_factory=list)


def train(cfg: RunConfig, resume=None, out=None, train_samples=None, test_samples=None) -> TrainResult:
    """Run training from scratch or from ``resume``; logs ``step\\tlrate\\tloss`` lines to ``out``."""
    cfg.validate()
    out = sys.stdout if out is None else out
    if train_samples is None:
        train_samples, loaded_test = load_datasets(cfg)
        test_samples = loaded_test if test_samples is None else test_samples
    test_samples = test_samples or []

    model = NRTR.init(cfg.model_config(), rngmod.stream(cfg.seed, rngmod.INIT))
    params = model.named_parameters()
    opt = Adam(params, lr=lambda n: lrate(n, cfg.d_model, cfg.warmup_steps), clip_norm=cfg.clip_norm)
    if resume is not None:
        state = checkpoint.load(resume)
        model.load_state_dict(checkpoint.model_tensors(state))
        opt.load_state_dict(state)
        log.info("resumed from %s at step %d", resume, opt.step_count)

    ckpt_dir = Path(cfg.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    stream = batch_stream(train_samples, cfg.bucket_width, cfg.batch_size, cfg.seed, skip=opt.step_count)
    plist = [p for _, p in params]
    history, saved, evals = [], [], []

    def save_step(n):
        path = ckpt_dir / f"step_{n:07d}.ckpt"
        checkpoint.save(path, {**model.state_dict(), **opt.state_dict()})
        saved.append(path)

    while opt.step_count < cfg.max_steps:
        batch = next(stream)
        n = opt.step_count + 1
        loss = model.loss(batch, training=True, rng=rngmod.stream(cfg.seed, rngmod.DROPOUT, n))
        T.backward(loss, plist)
        lr = opt.step()
        value = float(loss.data)
        history.append((n, lr, value))
        print(f"{n}\t{lr:.6e}\t{value:.6f}", file=out, flush=True)
        if n % cfg.checkpoint_every == 0:
            save_step(n)
        if cfg.eval_every and test_samples and n % cfg.eval_every == 0:
            rep = evaluate(model, test_samples, cfg.bucket_width)
            evals.append((n, rep))
            log.info("step %d eval %s", n, rep.tsv())
            if cfg.target_accuracy and rep.word_accuracy >= cfg.target_accuracy:
                break
    if history and (not saved or saved[-1].name != f"step_{opt.step_count:07d}.ckpt"):
        save_step(opt.step_count)

    avg_path = None
    window = sorted(ckpt_dir.glob("step_*.ckpt"))[-AVERAGE_WINDOW:]
    if window:
        avg_path = ckpt_dir / "final_avg.ckpt"
        checkpoint.save(avg_path, average_checkpoints(window))
    return TrainResult(model, opt, history, saved, avg_path, evals)


def load_model(path) -> NRTR:
    return NRTR.from_state_dict(checkpoint.model_tensors(checkpoint.load(path)))
