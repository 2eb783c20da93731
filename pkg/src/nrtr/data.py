"""Synthetic text images, width-bucketed batching and PGM / manifest I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import charset, font, rng as rngmod
from .decoder import IGNORE
from .errors import CharsetError, ConfigError, ParseError, ShapeError

HEIGHT = 32


@dataclass
class ImageSample:
    pixels: np.ndarray  # [32, w] float32 in [0, 1]
    label: str = ""

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Style:
    scale: int = 4
    x_jitter: int = 0
    noise_level: float = 0.0
    invert: bool = False


def advance(scale: int) -> int:
    """Horizontal cell width of one character (glyph plus one blank column)."""
    return (font.GLYPH_W + 1) * scale


def render(text: str, style: Style = Style(), seed: int = 0) -> ImageSample:
    """Rasterise ``text`` with the built-in font onto a height-32 canvas.

    Glyphs are scaled by an integer factor, vertically centred, and placed
    in fixed-width cells; ``x_jitter`` shifts each glyph by up to that many
    pixels. Gaussian noise of std ``noise_level`` is added and clipped, then
    polarity is optionally inverted.
    """
    if not text:
        raise CharsetError("cannot render empty text")
    if len(text) > charset.MAX_TEXT_LEN:
        raise CharsetError(f"text longer than {charset.MAX_TEXT_LEN} characters")
    text = charset.normalize(text)
    s = int(style.scale)
    if s < 1 or font.GLYPH_H * s > HEIGHT:
        raise ConfigError(f"glyph scale {s} does not fit height {HEIGHT}")
    gen = rngmod.stream(seed, rngmod.CORPUS + ".render")
    cell = advance(s)
    width = cell * len(text)
    img = np.zeros((HEIGHT, width), dtype=np.float32)
    top = (HEIGHT - font.GLYPH_H * s) // 2
    gw = font.GLYPH_W * s
    for i, ch in enumerate(text):
        dx = int(gen.integers(-style.x_jitter, style.x_jitter + 1)) if style.x_jitter else 0
        x0 = min(max(i * cell + dx, 0), width - gw)
        block = np.kron(font.glyph(ch), np.ones((s, s), dtype=np.uint8))
        region = img[top:top + font.GLYPH_H * s, x0:x0 + gw]
        np.maximum(region, block, out=region)
    if style.noise_level > 0:
        img = np.clip(img + gen.normal(0.0, style.noise_level, img.shape), 0.0, 1.0).astype(np.float32)
    if style.invert:
        img = (1.0 - img).astype(np.float32)
    return ImageSample(img, text)


# ---------------------------------------------------------------- corpora


@dataclass(frozen=True)
class CorpusSpec:
    size: int
    min_len: int = 1
    max_len: int = 6
    alphabet: str = charset.CHARS
    scales: tuple[int, ...] = (3, 4)
    max_jitter: int = 1
    max_noise: float = 0.1
    invert_prob: float = 0.0


def random_text(gen: np.random.Generator, min_len: int, max_len: int, alphabet: str = charset.CHARS) -> str:
    """Uniform length, uniform characters; never a space at either end."""
    n = int(gen.integers(min_len, max_len + 1))
    edge = alphabet.replace(" ", "")
    chars = []
    for i in range(n):
        pool = edge if i in (0, n - 1) else alphabet
        chars.append(pool[int(gen.integers(len(pool)))])
    return "".join(chars)


def synth_corpus(spec: CorpusSpec, seed: int, split: int = 0) -> list[ImageSample]:
    """Deterministic corpus; ``split`` selects an independent stream (0 train, 1 test)."""
    gen = rngmod.stream(seed, rngmod.CORPUS, split)
    out = []
    for _ in range(spec.size):
        text = random_text(gen, spec.min_len, spec.max_len, spec.alphabet)
        style = Style(
            scale=int(spec.scales[int(gen.integers(len(spec.scales)))]),
            x_jitter=spec.max_jitter,
            noise_level=float(gen.uniform(0.0, spec.max_noise)),
            invert=bool(gen.random() < spec.invert_prob),
        )
        out.append(render(text, style, seed=int(gen.integers(2**31))))
    return out


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    images: np.ndarray  # [B, 32, W_max]
    widths: np.ndarray  # [B]
    decoder_in: np.ndarray  # [B, T]  BOS + label, EOS-padded
    targets: np.ndarray  # [B, T]  label + EOS, IGNORE-padded
    bucket_key: int
    indices: list[int] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)


def bucket_key(width: int, granularity: int) -> int:
    return -(-width // granularity)


def make_buckets(widths, granularity: int, batch_size: int, gen: np.random.Generator) -> list[tuple[int, list[int]]]:
    """One epoch's batch plan: ``(bucket_key, sample indices)`` per batch.

    Samples are grouped by ``ceil(width / granularity)``, shuffled within
    their bucket and chunked; the batch order is then shuffled.
    """
    if granularity < 1 or batch_size < 1:
        raise ConfigError("granularity and batch_size must be positive")
    buckets: dict[int, list[int]] = {}
    for i, w in enumerate(widths):
        buckets.setdefault(bucket_key(int(w), granularity), []).append(i)
    plan = []
    for key in sorted(buckets):
        idx = np.array(buckets[key])
        idx = idx[gen.permutation(idx.size)]
        plan += [(key, idx[j:j + batch_size].tolist()) for j in range(0, idx.size, batch_size)]
    order = gen.permutation(len(plan))
    return [plan[i] for i in order]


def collate(samples: list[ImageSample], indices, granularity: int, key: int | None = None,
            targets: bool = True) -> Batch:
    """Stack samples into a zero-padded batch of width ``key * granularity``.

    With ``targets=False`` labels are not tokenized (inference on unlabelled
    images) and the token arrays hold only BOS / IGNORE.
    """
    chosen = [samples[i] for i in indices]
    widths = np.array([s.width for s in chosen], dtype=np.int64)
    if key is None:
        key = bucket_key(int(widths.max()), granularity)
    w_max = key * granularity
    if widths.max() > w_max:
        raise ShapeError(f"sample width {widths.max()} exceeds bucket width {w_max}")
    images = np.zeros((len(chosen), HEIGHT, w_max), dtype=np.float32)
    for row, s in enumerate(chosen):
        images[row, :, :s.width] = s.pixels
    toks = [charset.tokenize(s.label) if targets else [charset.EOS] for s in chosen]
    t_max = max(len(t) for t in toks)
    dec_in = np.full((len(chosen), t_max), charset.EOS, dtype=np.int64)
    tgt = np.full((len(chosen), t_max), IGNORE, dtype=np.int64)
    for row, t in enumerate(toks):
        dec_in[row, 0] = charset.BOS
        dec_in[row, 1:len(t)] = t[:-1]
        if targets:
            tgt[row, :len(t)] = t
    return Batch(images, widths, dec_in, tgt, key, list(indices), [s.label for s in chosen])


def batch_stream(samples: list[ImageSample], granularity: int, batch_size: int, seed: int, skip: int = 0):
    """Endless batches, one seeded shuffle per epoch; the first ``skip`` are skipped cheaply."""
    widths = [s.width for s in samples]
    epoch = 0
    while True:
        plan = make_buckets(widths, granularity, batch_size, rngmod.stream(seed, rngmod.SHUFFLE, epoch))
        for key, idx in plan:
            if skip:
                skip -= 1
                continue
            yield collate(samples, idx, granularity, key)
        epoch += 1


# ---------------------------------------------------------------- PGM


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of PGM header", pos)
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> np.ndarray:
    """Decode a binary (P5) PGM with maxval 255 to float32 pixels in [0, 1]."""
    if buf[:2] != b"P5":
        raise ParseError("not a binary PGM (expected magic P5)", 0)
    pos = 2
    fields = []
    for _ in range(3):
        start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise ParseError(f"malformed PGM header field {tok!r}", start)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"unsupported PGM maxval {maxval}", pos)
    if width < 1 or height < 1:
        raise ParseError(f"invalid PGM size {width}x{height}", pos)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after PGM header", pos)
    pos += 1
    need = width * height
    if len(buf) - pos < need:
        raise ParseError(f"truncated PGM payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(height, width)
    return data.astype(np.float32) / np.float32(255.0)


def rescale_height(pixels: np.ndarray, height: int = HEIGHT) -> np.ndarray:
    """Nearest-neighbour resize to ``height`` rows, width scaled proportionally."""
    h, w = pixels.shape
    if h == height:
        return pixels
    new_w = max(1, int(round(w * height / h)))
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(np.int64), w - 1)
    return pixels[rows][:, cols]


def load_pgm(path, label: str = "") -> ImageSample:
    with open(path, "rb") as fh:
        buf = fh.read()
    return ImageSample(rescale_height(parse_pgm(buf)), label)


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    q = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode() + q.tobytes()


def save_pgm(img: ImageSample | np.ndarray, path) -> None:
    pixels = img.pixels if isinstance(img, ImageSample) else img
    with open(path, "wb") as fh:
        fh.write(encode_pgm(pixels))


# ---------------------------------------------------------------- manifests


def read_manifest(path) -> list[tuple[Path, str]]:
    """``relative_path<TAB>label`` lines, paths resolved against the manifest's directory."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError(f"{path}:{lineno}: expected relative_path<TAB>label")
            rel, label = line.split("\t", 1)
            records.append((base / rel, label))
    return records


def load_manifest(path) -> list[ImageSample]:
    return [load_pgm(p, label) for p, label in read_manifest(path)]


def write_corpus(samples: list[ImageSample], out_dir, manifest: str = "manifest.tsv", prefix: str = "img") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = f"{prefix}_{i:05d}.pgm"
        save_pgm(s, out / name)
        lines.append(f"{name}\t{s.label}\n")
    mpath = out / manifest
    with open(mpath, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return mpath


def quantize(sample: ImageSample) -> ImageSample:
    """Round pixels to the 8-bit grid so a PGM round trip is lossless."""
    q = np.rint(sample.pixels.astype(np.float64) * 255.0).astype(np.uint8)
    return ImageSample(q.astype(np.float32) / np.float32(255.0), sample.label)

