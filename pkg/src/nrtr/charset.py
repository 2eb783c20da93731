"""The 38-class recognizer alphabet.

====  =========
id    class
====  =========
0-25  ``a``-``z``
26-35 ``0``-``9``
36    space
37    EOS
38    BOS (decoder input only, never predicted)
====  =========
"""

from __future__ import annotations

import string

from .errors import CharsetError

CHARS = string.ascii_lowercase + string.digits + " "
EOS = len(CHARS)  # 37
NUM_CLASSES = EOS + 1  # 38
BOS = NUM_CLASSES  # 38
VOCAB_SIZE = BOS + 1  # embedding rows
MAX_TEXT_LEN = 16

_INDEX = {c: i for i, c in enumerate(CHARS)}


def normalize(text: str) -> str:
    """Fold case and reject characters outside the alphabet."""
    folded = text.lower()
    for pos, ch in enumerate(folded):
        if ch not in _INDEX:
            raise CharsetError(f"character {text[pos]!r} at position {pos} is not in the charset")
    return folded


def encode_chars(text: str) -> list[int]:
    return [_INDEX[c] for c in normalize(text)]


def tokenize(text: str) -> list[int]:
    """Label ids followed by EOS."""
    if not text:
        raise CharsetError("empty label")
    return encode_chars(text) + [EOS]


def detokenize(tokens) -> str:
    out = []
    for t in tokens:
        t = int(t)
        if t == EOS:
            break
        if t == BOS:
            continue
        if not 0 <= t < EOS:
            raise CharsetError(f"token id {t} has no character")
        out.append(CHARS[t])
    return "".join(out)
