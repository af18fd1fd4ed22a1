"""Run configuration and its ``key = value`` file format.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Keys are the field names of :class:`TrainConfig`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class TrainConfig:
    # objective
    lambda1: float = 0.1
    lambda2: float = -0.005
    # optimisation
    lr: float = 0.001
    batch: int = 512
    epochs: int = 30
    dropout: float = 0.5
    clip_norm: float = 5.0
    seed: int = 0
    # architecture
    d: int = 100
    d_h: int = 16
    d_ff: int = 0           # 0 means 4 * d
    heads: int = 1
    layers: int = 1
    alpha: float = 1.5
    membership_alpha: float = 0.0  # 0 means reuse alpha
    K: int = 4
    epsilon: float = 1e-6
    positional: bool = False
    recon_target: str = "pooled"
    use_gmm: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch < 2:
            raise ConfigError("batch must be at least 2 (GMM estimation needs N >= 2)")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 1.0 <= self.alpha <= 2.0:
            raise ConfigError("alpha must lie in [1, 2]")
        if self.membership_alpha and not 1.0 <= self.membership_alpha <= 2.0:
            raise ConfigError("membership_alpha must lie in [1, 2]")
        if not 1 <= self.K <= 16:
            raise ConfigError("K must lie in 1..16")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if self.d < 1 or self.d_h < 1 or self.layers < 1 or self.d_ff < 0:
            raise ConfigError("dimensions must be positive")
        if self.recon_target not in ("pooled", "per_position"):
            raise ConfigError(f"recon_target must be pooled or per_position, not {self.recon_target!r}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")

    @property
    def ffn_dim(self) -> int:
        return self.d_ff or 4 * self.d

    @property
    def gate_alpha(self) -> float:
        return self.membership_alpha or self.alpha

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**data)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    @classmethod
    def loads(cls, text: str, source: str = "<config>") -> "TrainConfig":
        return cls.from_dict(parse_pairs(text, source))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"), str(path))


def coerce(name: str, raw: str):
    """Convert a string to the type of the named TrainConfig field."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name} ({kind})") from None


def parse_pairs(text: str, source: str = "<config>") -> dict:
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out
