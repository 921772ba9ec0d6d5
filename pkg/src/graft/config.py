"""
Run configuration: flat ``key = value`` files with ``include`` lines,
``GRAFT_<KEY>`` environment overrides, and command-line overrides on top.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import SWITCH_CODES
from .training import HORIZONS

ENV_PREFIX = "GRAFT_"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    source_switch: int = 123
    horizon: str = "stlf"
    # model
    d_model: int = 16
    d_ff: int = 32
    n_heads: int = 2
    e_layers: int = 1
    seg_len: int = 12
    pool_k: int = 4
    dropout: float = 0.1
    alpha: float = 1.5
    t_in_days: int = 7
    lambda_tau: float = 0.1
    lambda_gamma: float = 0.01
    # training
    lr: float = 3e-3
    batch_size: int = 32
    epochs: int = 30
    clip_threshold: float = 1.0
    # data
    train_end: str = ""  # last forecast-end day of the train split (YYYY-MM-DD); empty: 60% of the days
    val_end: str = ""  # empty: 70% of the days
    text_dim: int = 16
    # synthetic testbed
    n_days: int = 180
    n_events: int = 20
    regions: str = "R1"
    sparse: bool = True

    def __post_init__(self):
        if self.source_switch not in SWITCH_CODES:
            raise ConfigError(f"source_switch must be one of {sorted(SWITCH_CODES)}, got {self.source_switch}")
        if self.horizon not in HORIZONS:
            raise ConfigError(f"horizon must be one of {sorted(HORIZONS)}, got {self.horizon!r}")
        for name in ("d_model", "d_ff", "n_heads", "e_layers", "seg_len", "pool_k", "t_in_days", "text_dim",
                     "n_days", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be ≥ 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.n_events < 0:
            raise ConfigError("n_events must be ≥ 0")

    @property
    def region_list(self) -> tuple:
        return tuple(r.strip() for r in self.regions.split(",") if r.strip())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw, where: str):
    if key not in _FIELDS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    kind = type(getattr(RunConfig, key))
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{where}: {key}={text!r} is not a valid {kind.__name__}") from None


def read_config_file(path, _seen=None) -> dict:
    """Parse ``key = value`` lines; ``include other.cfg`` pulls a file in at that point.

    Later lines win. Include paths are relative to the including file. Lines
    starting with ``#`` are comments.
    """
    path = Path(path)
    _seen = set() if _seen is None else _seen
    real = path.resolve()
    if real in _seen:
        raise ConfigError(f"{path}: include cycle")
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    _seen = _seen | {real}
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{n}"
        if line.startswith("include"):
            target = line[len("include"):].strip().lstrip("=").strip()
            if not target:
                raise ConfigError(f"{where}: include needs a path")
            out.update(read_config_file(path.parent / target, _seen))
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{where}: expected key = value")
        key = key.strip()
        out[key] = _coerce(key, value, where)
    return out


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    """Defaults < file < environment < overrides (None values ignored)."""
    values = {}
    if path is not None:
        values.update(read_config_file(path))
    env = os.environ if env is None else env
    for key in _FIELDS:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = _coerce(key, env[name], f"environment {name}")
    for key, v in (overrides or {}).items():
        if v is not None:
            values[key] = _coerce(key, v, "command line")
    return RunConfig(**values)
