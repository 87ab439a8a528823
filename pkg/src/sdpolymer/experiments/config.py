"""Flat ``key = value`` experiment configuration with a typed schema.

Blank lines and ``#`` comments are ignored. Lists are comma separated; integer
lists also accept inclusive ranges ``a..b``. Unknown keys, malformed values
and out-of-range values raise :class:`ConfigError` naming the line.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from ..model import DisorderSpec, ModelParams

# critical site-percolation thresholds on Z^d (external constants, not computed here)
PERCOLATION_THRESHOLDS = {2: 0.5927, 3: 0.3116}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


def _int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"empty range {part}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


@dataclass(frozen=True)
class _Key:
    kind: Callable[[str], Any]
    units: str
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""


def _pos(v) -> bool:
    return v > 0


def _nonneg(v) -> bool:
    return v >= 0


SCHEMA: dict[str, _Key] = {
    "d": _Key(int, "lattice dimension", lambda v: 1 <= v <= 4, "1 <= d <= 4"),
    "lam": _Key(float, "killing rate per step", _pos, "> 0"),
    "beta": _Key(float, "inverse temperature", _nonneg, ">= 0"),
    "beta_grid": _Key(_float_list, "inverse temperatures", lambda v: len(v) >= 2 and all(b > 0 for b in v), "at least 2 positive values"),
    "law": _Key(str, "bernoulli | exponential | gamma | point_masses",
                lambda v: v in ("bernoulli", "exponential", "gamma", "point_masses"), "known law"),
    "p": _Key(float, "probability of the nonzero value", lambda v: 0 < v < 1, "in (0, 1)"),
    "a": _Key(float, "nonzero value of the two-point law", _pos, "> 0"),
    "rate": _Key(float, "exponential rate", _pos, "> 0"),
    "shape": _Key(float, "gamma shape", _pos, "> 0"),
    "scale": _Key(float, "gamma scale", _pos, "> 0"),
    "values": _Key(_float_list, "point-mass locations", lambda v: all(x >= 0 for x in v), "nonnegative"),
    "probs": _Key(_float_list, "point-mass weights", lambda v: all(x >= 0 for x in v), "nonnegative"),
    "L": _Key(int, "levels (block span or target level)", _pos, ">= 1"),
    "L_list": _Key(_int_list, "levels", lambda v: len(v) >= 1 and all(x >= 1 for x in v), "positive levels"),
    "L_max": _Key(int, "levels", _pos, ">= 1"),
    "W": _Key(int, "transverse radius in sites, 0 = automatic", _nonneg, ">= 0"),
    "D": _Key(int, "lower truncation depth in levels, 0 = bridge", _nonneg, ">= 0"),
    "replicas": _Key(int, "disorder replicas", lambda v: v >= 2, ">= 2"),
    "replica": _Key(int, "replica id for single solves", _nonneg, ">= 0"),
    "seed": _Key(int, "master seed", lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
    "tol": _Key(float, "solver tolerance", lambda v: 0 < v < 1, "in (0, 1)"),
    "gamma": _Key(float, "fractional moment exponent", lambda v: 0 < v < 1, "in (0, 1)"),
    "N": _Key(int, "coarse blocks", _pos, ">= 1"),
    "C1": _Key(float, "skeleton landing box width / sqrt(L)", _pos, "> 0"),
    "C2": _Key(float, "starting box radius / sqrt(L)", _pos, "> 0"),
    "C3": _Key(float, "observation box radius / sqrt(L)", _pos, "> 0"),
    "C4": _Key(float, "kernel cone constant", _pos, "> 0"),
    "C5": _Key(float, "auxiliary constant", _pos, "> 0"),
    "K1": _Key(float, "penalty height", _pos, "> 0"),
    "K2": _Key(_float_list, "log thresholds", lambda v: len(v) >= 1, "at least one value"),
    "annealed": _Key(str, "auto | oracle | monte_carlo", lambda v: v in ("auto", "oracle", "monte_carlo"), "known mode"),
    "normalization": _Key(str, "log_mean | slope_fit", lambda v: v in ("log_mean", "slope_fit"), "known method"),
    "L_cut": _Key(int, "largest tabulated block span", _pos, ">= 1"),
    "n_blocks": _Key(int, "sampled renewal blocks", _pos, ">= 1"),
    "output_dir": _Key(str, "output directory"),
    "workers": _Key(int, "worker processes, 0 = environment default", _nonneg, ">= 0"),
}


@dataclass
class ExperimentConfig:
    d: int = 2
    lam: float = 0.5
    beta: float = 0.5
    beta_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0])
    law: str = "bernoulli"
    p: float = 0.5
    a: float = 1.0
    rate: float = 1.0
    shape: float = 1.0
    scale: float = 1.0
    values: list[float] = field(default_factory=list)
    probs: list[float] = field(default_factory=list)
    L: int = 8
    L_list: list[int] = field(default_factory=lambda: list(range(4, 25)))
    L_max: int = 16
    W: int = 0
    D: int = 0
    replicas: int = 200
    replica: int = 0
    seed: int = 0
    tol: float = 1e-10
    gamma: float = 0.5
    N: int = 4
    C1: float = 1.0
    C2: float = 2.0
    C3: float = 4.0
    C4: float = 1.0
    C5: float = 1.0
    K1: float = 1.0
    K2: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    annealed: str = "auto"
    normalization: str = "log_mean"
    L_cut: int = 8
    n_blocks: int = 100_000
    output_dir: str = "out"
    workers: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self, source: str = "<config>", lines: Optional[dict[str, int]] = None) -> None:
        lines = lines or {}
        for f in fields(self):
            key = SCHEMA[f.name]
            if not key.check(getattr(self, f.name)):
                raise ConfigError(f"{f.name} = {getattr(self, f.name)!r} violates {key.rule}", lines.get(f.name), source)
        if self.law == "point_masses":
            if len(self.values) != len(self.probs) or len(self.values) < 2:
                raise ConfigError("values and probs need equal length >= 2", lines.get("probs"), source)
            if abs(math.fsum(self.probs) - 1.0) > 1e-12:
                raise ConfigError("probs must sum to 1", lines.get("probs"), source)
        try:
            self.spec()
        except ValueError as e:
            raise ConfigError(str(e), lines.get("law"), source) from None

    def spec(self) -> DisorderSpec:
        if self.law == "bernoulli":
            return DisorderSpec.bernoulli(self.p, self.a)
        if self.law == "exponential":
            return DisorderSpec.exponential(self.rate)
        if self.law == "gamma":
            return DisorderSpec.gamma(self.shape, self.scale)
        return DisorderSpec.point_masses(self.values, self.probs)

    def params(self, beta: Optional[float] = None) -> ModelParams:
        return ModelParams.for_spec(self.d, self.lam, self.beta if beta is None else beta, self.spec())

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, excluding output location and worker count."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_updates(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig(**{**self.to_dict(), **kw})


def _parse_value(key: str, raw: str, line: Optional[int], source: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}", line, source)
    try:
        return SCHEMA[key].kind(raw.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for {key} ({SCHEMA[key].units}): {raw.strip()!r} ({e})", line, source) from None


def parse_config(text: str, source: str = "<config>", overrides: Sequence[str] = ()) -> ExperimentConfig:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", n, source)
        k, v = (t.strip() for t in s.split("=", 1))
        if k in values:
            raise ConfigError(f"duplicate key {k!r} (first on line {lines[k]})", n, source)
        values[k] = _parse_value(k, v, n, source)
        lines[k] = n
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value", None, "--set")
        k, v = (t.strip() for t in ov.split("=", 1))
        values[k] = _parse_value(k, v, None, "--set")
        lines.pop(k, None)
    cfg = ExperimentConfig.__new__(ExperimentConfig)
    for f in fields(ExperimentConfig):
        default = f.default_factory() if f.default is MISSING else f.default  # type: ignore[misc]
        setattr(cfg, f.name, values.get(f.name, default))
    cfg.validate(source, lines)
    return cfg


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", None, str(p)) from None
    return parse_config(text, str(p), overrides)


def format_config(cfg: ExperimentConfig) -> str:
    """Render a config in the file syntax; ``parse_config`` inverts it."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ", ".join(repr(x) for x in v)
        out.append(f"{f.name} = {v}  # {SCHEMA[f.name].units}")
    return "\n".join(out) + "\n"
