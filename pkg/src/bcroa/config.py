"""Run configuration: defaults, ``key = value`` files and validation."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields

from .errors import BcroaError


class ConfigError(BcroaError):
    """Bad configuration value or file."""


@dataclass
class RunConfig:
    """Every knob of the episode loop.

    ``V`` is the Lyapunov candidate as expression text over the state names;
    ``c0`` fixes the initial sublevel set ``{V <= c0}`` that each estimate is
    compared against, while step 1 bisects over ``(0, c_max]``.
    """

    system: str = ""
    V: str = ""
    c0: float = 0.1
    c_max: float = 10.0
    step1_tol: float = 1e-3
    cheb_degree: int = 4
    mean_degree: int = 2
    signal_variance: float = math.exp(0.1)
    length_scale: float = math.exp(0.2)
    noise_sigma_n: float | None = None
    prior_weight_variance: float = 1.0
    beta: float = 4.0
    rkhs_bound_B: float | None = None
    learn_outputs: list[int] | None = None
    episodes: int = 3
    eps: float = 1e-2
    max_rounds: int = 10
    barrier_degree: int = 4
    mult_degree: int = 2
    origin_margin: float = 1e-3
    trace_cap: float = 1e4
    contain: bool = True
    initial_start: list[float] = field(default_factory=list)
    horizon: float = 10.0
    dt: float = 1e-3
    stride: int = 10
    score_stride: int = 100
    candidates_per_axis: int = 15
    validation_grid: int | None = None
    seed: int = 0
    output_dir: str = "out"
    jobs: int = 1

    def validate(self) -> "RunConfig":
        checks = [
            (self.c0 > 0, "c0 must be positive"),
            (self.c_max > 0, "c_max must be positive"),
            (0 < self.step1_tol < 1, "step1_tol must lie in (0, 1)"),
            (1 <= self.cheb_degree <= 30, "cheb_degree must lie in [1, 30]"),
            (self.mean_degree >= 1, "mean_degree must be >= 1"),
            (self.signal_variance > 0 and self.length_scale > 0, "kernel parameters must be positive"),
            (self.noise_sigma_n is None or self.noise_sigma_n > 0, "noise_sigma_n must be positive"),
            (self.beta > 0, "beta must be positive"),
            (self.episodes >= 0, "episodes must be >= 0"),
            (self.eps >= 0, "eps must be >= 0"),
            (self.max_rounds >= 1, "max_rounds must be >= 1"),
            (self.barrier_degree >= 2 and self.barrier_degree % 2 == 0, "barrier_degree must be even and >= 2"),
            (self.mult_degree >= 0, "mult_degree must be >= 0"),
            (self.horizon >= self.dt > 0, "need horizon >= dt > 0"),
            (self.stride >= 1 and self.score_stride >= 1, "strides must be >= 1"),
            (self.candidates_per_axis >= 1, "candidates_per_axis must be >= 1"),
            (self.validation_grid is None or self.validation_grid >= 2, "validation_grid must be >= 2"),
            (self.jobs >= 1, "jobs must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.system and not os.path.exists(self.system):
            raise ConfigError(f"system file not found: {self.system}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _convert(name: str, tp: str, raw: str):
    raw = raw.strip()
    try:
        if raw.lower() in ("none", "") and "None" in tp:
            return None
        if tp.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp.startswith("int"):
            return int(raw)
        if tp.startswith("float"):
            return float(raw)
        if tp.startswith("list[int]"):
            return [int(t) for t in raw.replace(",", " ").split()]
        if tp.startswith("list[float]"):
            return [float(t) for t in raw.replace(",", " ").split()]
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


_TYPES = {f.name: str(f.type) for f in fields(RunConfig)}


def parse_overrides(pairs: dict[str, str]) -> dict:
    out = {}
    for k, v in pairs.items():
        if k not in _TYPES:
            raise ConfigError(f"unknown configuration key {k!r}")
        out[k] = _convert(k, _TYPES[k], v)
    return out


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Relative ``system`` paths resolve against the file's directory.
    """
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
    vals = parse_overrides(pairs)
    if vals.get("system") and not os.path.isabs(vals["system"]):
        vals["system"] = os.path.join(os.path.dirname(os.path.abspath(path)), vals["system"])
    return vals


def load_config(path=None, **overrides) -> RunConfig:
    vals = read_config_file(path) if path else {}
    vals.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**vals)
