"""Seeded random streams.

All randomness (parameter init, dropout masks, shuffling, corpus synthesis)
is drawn from counter-based Philox generators keyed by the run seed plus a
stream label and index, so any single stream can be regenerated in
isolation (e.g. the dropout masks of step ``n`` after a resume).
"""

import zlib

import numpy as np

INIT = "init"
DROPOUT = "dropout"
SHUFFLE = "shuffle"
CORPUS = "corpus"


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode()), int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
