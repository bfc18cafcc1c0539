"""Run configuration: line-oriented ``key = value`` text with ``#`` comments.

Defaults are the published hyperparameters (8 attention heads of hidden
size 8, 64-dim entity embeddings, LeakyReLU slope 0.2, margin 1, decoder
hidden 256, coverage weight 1, 128-dim text embeddings, Adam at 0.001) plus
the artifact knobs: 3 init hops, 3 per-step hops, beam 4, truncation 120,
OOV floor 5, similarity threshold 0.95, seed, stop-word path. Missing keys
take defaults; unknown keys are rejected.
"""

import hashlib
import os
from dataclasses import asdict, dataclass, fields

ENV_CONFIG = "KGWRITER_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    heads: int = 8
    head_hidden: int = 8
    entity_emb: int = 64
    leaky_relu_alpha: float = 0.2
    margin: float = 1.0
    context_hidden: int = 32
    decoder_hidden: int = 256
    attn_hidden: int = 256
    coverage_lambda: float = 1.0
    text_emb: int = 128
    learning_rate: float = 0.001
    optimizer: str = "adam"
    init_hops: int = 3
    step_hops: int = 3
    beam: int = 4
    max_len: int = 120
    oov_floor: int = 5
    similarity_threshold: float = 0.95
    seed: int = 13
    stopword_path: str = ""

    def validate(self):
        if self.heads * self.head_hidden != self.entity_emb:
            raise ConfigError(
                f"entity_emb must equal heads*head_hidden "
                f"({self.heads}*{self.head_hidden} != {self.entity_emb})")
        if self.decoder_hidden % 2:
            raise ConfigError("decoder_hidden must be even")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ConfigError("similarity_threshold must be in (0, 1]")
        for key in ("beam", "max_len", "oov_floor"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        return self

    def digest(self):
        canon = ";".join(f"{k}={v}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _coerce(key, kind, raw):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text):
    """Parse config text; returns (Config, {overridden key: value})."""
    types = {f.name: f.type for f in fields(Config)}
    kinds = {"int": int, "float": float, "str": str}
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = kinds[types[key]] if isinstance(types[key], str) else types[key]
        overrides[key] = _coerce(key, kind, value)
    cfg = Config(**overrides)
    cfg.validate()
    return cfg, overrides


def load_config(path=None):
    """Load config from ``path``, the env override, or pure defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is None:
        return Config().validate(), {}
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
