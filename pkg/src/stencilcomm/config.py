"""Run configuration: a TOML file plus command-line overrides.

Top-level keys map onto :class:`RunConfig` fields; a ``[physics]`` table maps
onto :class:`~stencilcomm.mhd.MhdParams`.  Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .mhd import BENCHMARK_DT, MhdParams
from .perfmodel import BENCHMARK_PARAMS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # grid and ranks
    grid: tuple[int, ...] = (32, 32, 32)
    ranks: int = 1
    device_grid: tuple[int, ...] | None = None
    ranks_per_node: int | None = None
    mapping: str = "zorder"
    order: int = 6
    corners: bool = False
    # time stepping
    dt: float = BENCHMARK_DT
    steps: int = 1
    warmup: int = 0
    seed: int = 0
    schedule: str = "roundrobin"
    # outputs
    output_dir: str = "."
    snapshot: str = "snapshot.bin"
    timings: str = "timings.csv"
    table: str = "decomposition.csv"
    curve: str = "scaling.csv"
    topology: str = "topology.csv"
    # decompose / predict
    counts: tuple[int, ...] = tuple(range(1, 65))
    level: str = "inter"
    periodic: bool = True
    min_extent: int = 1
    pi_inv: float = BENCHMARK_PARAMS.pi_inv
    beta_inv: float = BENCHMARK_PARAMS.beta_inv
    tau0: float = BENCHMARK_PARAMS.tau0
    weak: bool = False
    # verify
    threshold: float = 2.0
    model: str | None = None
    candidate: str | None = None
    physics: MhdParams = field(default_factory=MhdParams)

    @property
    def radius(self) -> int:
        return self.order // 2

    def output_path(self, name: str) -> Path:
        return Path(self.output_dir) / name

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    def fingerprint(self) -> str:
        """Hash of every setting that can change results; output locations are left out."""
        d = {k: v for k, v in self.to_dict().items() if k not in _OUTPUT_KEYS}
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def comment(self) -> str:
        return f"config-sha256={self.fingerprint()}"


_OUTPUT_KEYS = frozenset({"output_dir", "snapshot", "timings", "table", "curve", "topology"})

_CHOICES = {
    "mapping": ("zorder", "rowwise"),
    "level": ("inter", "intra"),
    "schedule": ("roundrobin", "random", "threads"),
}


def _parse_counts(v) -> tuple[int, ...]:
    """A list of integers or an inclusive range string ``"a..b"``."""
    if isinstance(v, str):
        try:
            lo, hi = (int(x) for x in v.split(".."))
        except ValueError:
            raise ConfigError(f"counts range must look like '1..64', got {v!r}") from None
        return tuple(range(lo, hi + 1))
    if isinstance(v, int):
        return (v,)
    return tuple(int(x) for x in v)


def _coerce(name: str, value: Any, default: Any):
    if name == "counts":
        out = _parse_counts(value)
        if not out or min(out) < 1:
            raise ConfigError("counts must be positive integers")
        return out
    if name in ("grid", "device_grid"):
        if value is None:
            return None
        out = tuple(int(x) for x in value)
        if len(out) != 3 or min(out) < 1:
            raise ConfigError(f"{name} must be three positive integers, got {value!r}")
        return out
    if name in _CHOICES and value not in _CHOICES[name]:
        raise ConfigError(f"{name} must be one of {_CHOICES[name]}, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) or name == "ranks_per_node":
        if isinstance(value, bool) or int(value) != value:
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _apply(cfg: RunConfig, values: dict) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "physics":
            if not isinstance(value, dict):
                raise ConfigError("physics must be a table")
            pnames = {f.name for f in fields(MhdParams)}
            bad = sorted(set(value) - pnames)
            if bad:
                raise ConfigError(f"unknown physics keys {bad}")
            try:
                updates[key] = dataclasses.replace(cfg.physics, **value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
            continue
        try:
            updates[key] = _coerce(key, value, getattr(cfg, key))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return dataclasses.replace(cfg, **updates)


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.order not in (2, 4, 6, 8):
        raise ConfigError(f"order must be 2, 4, 6 or 8, got {cfg.order}")
    if cfg.ranks < 1:
        raise ConfigError("ranks must be positive")
    if cfg.ranks_per_node is not None and cfg.ranks_per_node < 1:
        raise ConfigError("ranks_per_node must be a positive integer")
    if cfg.steps < 0 or cfg.warmup < 0:
        raise ConfigError("steps and warmup must be non-negative")
    if cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    if cfg.threshold < 0:
        raise ConfigError("threshold must be non-negative")
    if cfg.device_grid is not None and cfg.device_grid[0] * cfg.device_grid[1] * cfg.device_grid[2] != cfg.ranks:
        raise ConfigError(f"device_grid {cfg.device_grid} does not hold {cfg.ranks} ranks")
    return cfg


def parse_override(item: str) -> tuple[str, Any]:
    """``key=value`` where value is read as a TOML value, falling back to a bare string."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    if "." in key:
        table, sub = key.split(".", 1)
        return table, {sub: value}
    return key, value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = _apply(cfg, data)
        given = set(data)
    else:
        given = set()
    if overrides:
        cfg = _apply(cfg, overrides)
        given |= set(overrides)
    if cfg.device_grid is not None and "ranks" not in given:
        g = cfg.device_grid
        cfg = dataclasses.replace(cfg, ranks=g[0] * g[1] * g[2])
    return validate(cfg)
