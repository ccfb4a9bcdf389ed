"""Run configuration: flat key=value files, profiles, and run manifests.

Defaults mirror the reference training setup (hidden 300, embeddings 300,
classifier lr 1e-4 with 0.8 decay every 10 epochs, generator lr 1e-3,
dropout 0.1, batch 128, positive weight 5). The desk profile shrinks the
model to laptop scale. Unknown keys fail fast, naming the offender.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Raised for malformed configuration files."""


@dataclass
class RunConfig:
    hidden_size: int = 300      # k
    embed_dim: int = 300
    latent_dim: int = 64        # d_z
    lr: float = 1e-4
    ved_lr: float = 1e-3
    e2e_lr: float = 0.0         # 0 = inherit lr; phase-5 steps (and the
                                # resumed baseline) may want a gentler rate
    decay_factor: float = 0.8
    decay_every: int = 10
    beta: float = 5.0
    p: float = 0.3
    dropout: float = 0.1
    batch_size: int = 128
    clf_epochs: int = 3
    ved_epochs: int = 5
    e2e_epochs: int = 2
    kl_anneal_epochs: int = 5
    triple_cap: int = 10
    beam_size: int = 4
    gen_max_len: int = 12
    max_title_len: int = 16
    max_query_len: int = 8
    min_count: int = 1
    seed: int = 0
    precision: str = "f32"      # f32 | f64
    split_train: float = 0.7
    split_val: float = 0.15
    split_test: float = 0.15

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"switch probability must be in [0, 1), got {self.p}")
        if self.beta < 1.0:
            raise ConfigError(f"positive weight must be >= 1, got {self.beta}")

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    raw = raw.strip()
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw.strip()!r}")
    if base is not None:
        return base.replace(**values)
    return RunConfig(**values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base=base)


def desk_profile(**overrides) -> RunConfig:
    """Laptop-scale profile: small model, small batches, quick epochs."""
    cfg = RunConfig(hidden_size=64, embed_dim=64, batch_size=32,
                    lr=1e-3, clf_epochs=3, ved_epochs=5, e2e_epochs=2)
    return cfg.replace(**overrides) if overrides else cfg


def paper_profile(**overrides) -> RunConfig:
    cfg = RunConfig()
    return cfg.replace(**overrides) if overrides else cfg


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


@dataclass
class RunManifest:
    """Reproducibility record: same inputs regenerate the same metrics."""
    config_hash: str = ""
    seed: int = 0
    datasets: dict = field(default_factory=dict)      # path -> content hash
    phases: dict = field(default_factory=dict)        # name -> {checkpoint, seconds}
    created: str = ""

    def record_phase(self, name: str, checkpoint: str, seconds: float) -> None:
        self.phases[name] = {"checkpoint": checkpoint, "seconds": round(seconds, 3)}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    @classmethod
    def start(cls, cfg: RunConfig) -> "RunManifest":
        return cls(config_hash=cfg.hash(), seed=cfg.seed,
                   created=time.strftime("%Y-%m-%dT%H:%M:%S"))
