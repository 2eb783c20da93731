"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are errors.
Shipped presets live in ``nrtr/presets`` and can be referenced by name
(``tiny``, ``base``, ``big``).
"""

from __future__ import annotations

import dataclasses
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .data import CorpusSpec
from .errors import ConfigError
from .model import ModelConfig

ALPHABETS = {
    "full": string.ascii_lowercase + string.digits + " ",
    "digits": string.digits,
    "letters": string.ascii_lowercase,
}


@dataclass
class RunConfig:
    # architecture
    d_model: int = 64
    h: int = 2
    head_dim: int | None = 32  # None: d_model per head
    n_enc: int = 2
    n_dec: int = 2
    d_ff: int = 128
    conv_layers: int = 2
    dropout: float = 0.1
    # optimisation
    warmup_steps: int = 400
    batch_size: int = 32
    max_steps: int = 2000
    checkpoint_every: int = 200
    clip_norm: float | None = None
    seed: int = 0
    # data
    train_manifest: str = ""  # empty: synthesize
    test_manifest: str = ""
    synth_train: int = 2000
    synth_test: int = 200
    synth_min_len: int = 1
    synth_max_len: int = 6
    synth_alphabet: str = "full"
    bucket_width: int = 32
    # output
    ckpt_dir: str = "checkpoints"
    eval_every: int = 0  # 0: never evaluate during training
    target_accuracy: float = 0.0  # stop early once held-out accuracy reaches this (0: off)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, heads=self.h, head_dim=self.head_dim, n_enc=self.n_enc,
                           n_dec=self.n_dec, d_ff=self.d_ff, conv_layers=self.conv_layers, dropout=self.dropout)

    def corpus_spec(self, size: int) -> CorpusSpec:
        return CorpusSpec(size=size, min_len=self.synth_min_len, max_len=self.synth_max_len,
                          alphabet=ALPHABETS[self.synth_alphabet])

    def validate(self) -> RunConfig:
        self.model_config()
        for key in ("warmup_steps", "batch_size", "max_steps", "checkpoint_every", "bucket_width"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.bucket_width % (2 ** self.conv_layers):
            raise ConfigError(f"bucket_width must be a multiple of 2^conv_layers = {2 ** self.conv_layers}")
        if self.synth_alphabet not in ALPHABETS:
            raise ConfigError(f"synth_alphabet must be one of {sorted(ALPHABETS)}")
        if not 1 <= self.synth_min_len <= self.synth_max_len <= 16:
            raise ConfigError("need 1 <= synth_min_len <= synth_max_len <= 16")
        return self

    def with_overrides(self, pairs: dict[str, str]) -> RunConfig:
        cfg = dataclasses.replace(self)
        for key, raw in pairs.items():
            setattr(cfg, key, _coerce(key, raw))
        return cfg.validate()

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    f = _FIELDS[key]
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    raw = raw.strip()
    try:
        if "None" in kind and raw.lower() in ("none", ""):
            return None
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for config key {key!r}") from exc


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values).validate()


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("nrtr.presets").iterdir() if p.name.endswith(".cfg"))


def load_config(path_or_name) -> RunConfig:
    path = Path(path_or_name)
    if path.exists():
        return parse_config(path.read_text(encoding="utf-8"), str(path))
    name = str(path_or_name)
    if name in preset_names():
        res = resources.files("nrtr.presets") / f"{name}.cfg"
        return parse_config(res.read_text(encoding="utf-8"), f"preset:{name}")
    raise FileNotFoundError(path_or_name)
