"""Experiment configuration: INI-style ``key = value`` files with sections.

Shared settings live in ``[experiment]``; each subcommand may have its own
section whose keys override the shared ones. Example::

    [experiment]
    hurst = 0.7
    family = geometric
    master_seed = 12345
    env_replicates = 100000
    output_dir = results

    [tail-extinction]
    horizons = 2^4..2^12

Integer lists are whitespace/comma separated; ``2^a..2^b`` expands to every
power of two between the bounds.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, fields
from typing import List, Optional, Tuple

from .env_gen import validate_hurst
from .errors import ConfigError, DomainError
from .offspring import parse_family
from .rng import MAX_SEED

__all__ = ["ExperimentConfig", "SUBCOMMANDS", "load_config", "parse_int_list"]

SUBCOMMANDS = ("sample-env", "tail-extinction", "tail-max", "tail-total", "persistence", "verify")

# not part of the experiment identity
RUNTIME_KEYS = ("output_dir",)

_POW2_RANGE = re.compile(r"^2\^(\d+)\.\.2\^(\d+)$")
_POW2 = re.compile(r"^2\^(\d+)$")


def parse_int_list(text: str) -> List[int]:
    out: List[int] = []
    for tok in re.split(r"[,\s]+", text.strip()):
        if not tok:
            continue
        m = _POW2_RANGE.match(tok)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise ConfigError(f"empty range {tok!r}")
            out.extend(2**k for k in range(lo, hi + 1))
            continue
        m = _POW2.match(tok)
        try:
            out.append(2 ** int(m.group(1)) if m else int(tok))
        except ValueError:
            raise ConfigError(f"not an integer: {tok!r}") from None
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    hurst: float = 0.5
    family: str = "geometric"
    master_seed: int = 1
    env_replicates: int = 100_000
    output_dir: str = "bpce-out"
    horizons: Tuple[int, ...] = tuple(2**k for k in range(4, 13))
    thresholds: Tuple[int, ...] = tuple(2**k for k in range(1, 21))
    traj_per_env: int = 1
    lengths: Tuple[int, ...] = tuple(2**k for k in range(6, 15))
    level: float = 0.0
    length: int = 1024
    trajectories: int = 20_000
    plot: bool = False

    def items(self, identity: bool = True) -> List[Tuple[str, str]]:
        """Ordered ``(key, value)`` pairs, as embedded in output headers.

        With ``identity`` set, keys that only say where results go are left
        out, so moving a run elsewhere does not change its bytes.
        """
        out = []
        for f in fields(self):
            if identity and f.name in RUNTIME_KEYS:
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append((f.name, str(v)))
        return out

    def as_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name in RUNTIME_KEYS:
                continue
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    def validate(self) -> "ExperimentConfig":
        if self.mode not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.mode!r}")
        try:
            validate_hurst(self.hurst, correlated=self.mode != "sample-env")
            parse_family(self.family)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 <= self.master_seed <= MAX_SEED:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.env_replicates < 1:
            raise ConfigError("env_replicates must be positive")
        if self.mode == "tail-extinction" and self.env_replicates < 100:
            raise ConfigError("tail-extinction needs env_replicates >= 100")
        checks = {
            "tail-extinction": ("horizons", 1),
            "tail-max": ("thresholds", 0),
            "tail-total": ("thresholds", 0),
            "persistence": ("lengths", 1),
        }
        if self.mode in checks:
            name, lo = checks[self.mode]
            vals = getattr(self, name)
            if not vals or any(b <= a for a, b in zip(vals, vals[1:])) or vals[0] < lo:
                raise ConfigError(f"{name} must be nonempty, strictly ascending and >= {lo}")
        if self.traj_per_env < 1:
            raise ConfigError("traj_per_env must be >= 1")
        if self.length < 1 or self.trajectories < 2:
            raise ConfigError("length must be >= 1 and trajectories >= 2")
        if not math.isfinite(self.level):
            raise ConfigError("level must be finite")
        return self


_CONVERTERS = {
    "hurst": float,
    "family": str,
    "master_seed": int,
    "env_replicates": int,
    "output_dir": str,
    "horizons": lambda s: tuple(parse_int_list(s)),
    "thresholds": lambda s: tuple(parse_int_list(s)),
    "traj_per_env": int,
    "lengths": lambda s: tuple(parse_int_list(s)),
    "level": float,
    "length": int,
    "trajectories": int,
    "plot": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def load_config(mode: str, path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read ``[experiment]`` then ``[<mode>]`` from ``path`` and apply overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = {}
    for section in ("experiment", mode):
        if parser.has_section(section):
            values.update(parser.items(section))
    values.update(overrides or {})
    kwargs = {}
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key not in _CONVERTERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs[key] = _CONVERTERS[key](str(raw))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    return ExperimentConfig(mode=mode, **kwargs).validate()


def default_config_text() -> str:
    """Config file reproducing the built-in defaults."""
    cfg = ExperimentConfig(mode="verify")
    lines = ["[experiment]"]
    lines += [f"{k} = {v}" for k, v in cfg.items(identity=False) if k != "mode"]
    return "\n".join(lines) + "\n"

