"""Run configuration: JSON schema checks with field paths, group loading."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .congruence import is_prime
from .moebius import SchottkyGroup, example_group, validate_schottky

CACHE_ENV = "SCHOTTKY_ZETA_CACHE"

STAGES = ("validate", "dimension", "girth", "zeta", "resonances", "counts", "trace-check")


class ConfigError(ValueError):
    """Schema or validation failure; the message starts with the field path."""


@dataclass
class RunConfig:
    group: str = "example"
    qs: list[int] = field(default_factory=lambda: [1, 3])
    M: int = 12
    n_max: int = 8
    h: float = 0.125
    rectangles: list[list[float]] = field(default_factory=lambda: [[-0.126, 0.224, -4.0, 4.0]])
    tol: float = 1e-9
    step: float = 0.05
    workers: int = 1
    cache_dir: str | None = None
    output_dir: str = "results"
    seed: int = 0
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    zeta_grid: list[float] = field(default_factory=lambda: [0.2, 1.0, -3.0, 3.0])
    zeta_grid_shape: list[int] = field(default_factory=lambda: [5, 13])
    girth_depth: int = 6
    r_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5])
    support: list[float] | None = None
    trace_floor: float = -1.2
    trace_T_max: float = 100.0
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_group(self) -> SchottkyGroup:
        if self.group == "example":
            return example_group()
        return load_group_file(self.resolve(self.group))

    def cache_path(self) -> Path | None:
        env = os.environ.get(CACHE_ENV)
        if env:
            return Path(env)
        return self.resolve(self.cache_dir) if self.cache_dir else None


_TYPES = {
    "group": str,
    "qs": list,
    "M": int,
    "n_max": int,
    "h": (int, float),
    "rectangles": list,
    "tol": (int, float),
    "step": (int, float),
    "workers": int,
    "cache_dir": (str, type(None)),
    "output_dir": str,
    "seed": int,
    "stages": list,
    "zeta_grid": list,
    "zeta_grid_shape": list,
    "girth_depth": int,
    "r_grid": list,
    "support": (list, type(None)),
    "trace_floor": (int, float),
    "trace_T_max": (int, float),
}


def _check_group(data: dict, where: str) -> None:
    """Schema errors in an inline or file group definition, with index paths."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in ("p", "generators", "discs"):
        if key not in data:
            raise ConfigError(f"{where}.{key}: missing")
    p = data["p"]
    if not isinstance(p, int) or p < 1:
        raise ConfigError(f"{where}.p: expected a positive integer")
    gens = data["generators"]
    if not isinstance(gens, list) or len(gens) != p:
        raise ConfigError(f"{where}.generators: expected {p} matrices")
    for i, m in enumerate(gens):
        ok = isinstance(m, list) and len(m) == 2 and all(isinstance(r, list) and len(r) == 2 for r in m)
        if not ok or not all(isinstance(x, int) for r in m for x in r):
            raise ConfigError(f"{where}.generators[{i}]: expected a 2x2 integer matrix")
        if m[0][0] * m[1][1] - m[0][1] * m[1][0] != 1:
            raise ConfigError(f"{where}.generators[{i}]: determinant is not 1")
    discs = data["discs"]
    if not isinstance(discs, list):
        raise ConfigError(f"{where}.discs: expected a list")
    for k in range(2 * p):
        if k >= len(discs):
            raise ConfigError(f"{where}.discs[{k}]: missing disc")
        d = discs[k]
        for key in ("center", "radius"):
            if not isinstance(d, dict) or key not in d:
                raise ConfigError(f"{where}.discs[{k}].{key}: missing")
    if len(discs) > 2 * p:
        raise ConfigError(f"{where}.discs[{2 * p}]: unexpected extra disc")


def load_group_file(path) -> SchottkyGroup:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"group: file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"group: {path} is not valid JSON ({e})") from None
    _check_group(data, "group")
    try:
        g = SchottkyGroup.from_dict(data, name=path.stem)
    except ValueError as e:
        raise ConfigError(f"group: {e}") from None
    rep = validate_schottky(g)
    if not rep.ok:
        raise ConfigError("group: " + "; ".join(rep.messages))
    return g


def config_from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected an object")
    unknown = sorted(set(data) - set(_TYPES))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    for key, val in data.items():
        typ = _TYPES[key]
        if isinstance(val, bool) or not isinstance(val, typ):
            raise ConfigError(f"{key}: wrong type {type(val).__name__}")
    cfg = RunConfig(**data, base_dir=base_dir)
    for i, q in enumerate(cfg.qs):
        if not isinstance(q, int) or isinstance(q, bool):
            raise ConfigError(f"qs[{i}]: expected an integer")
        if q != 1 and not is_prime(q):
            raise ConfigError(f"qs[{i}]: q = {q}: q must be prime")
    if cfg.M < 4:
        raise ConfigError(f"M: {cfg.M} < 4")
    if cfg.n_max < 2:
        raise ConfigError(f"n_max: {cfg.n_max} < 2")
    for key in ("h", "tol", "step"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(f"{key}: must be > 0")
    for i, r in enumerate(cfg.rectangles):
        if not (isinstance(r, list) and len(r) == 4 and all(isinstance(x, (int, float)) for x in r)):
            raise ConfigError(f"rectangles[{i}]: expected [sigma_min, sigma_max, t_min, t_max]")
        if not (r[0] < r[1] and r[2] < r[3]):
            raise ConfigError(f"rectangles[{i}]: empty rectangle")
    for i, st in enumerate(cfg.stages):
        if st not in STAGES:
            raise ConfigError(f"stages[{i}]: unknown stage {st!r}")
    if len(cfg.zeta_grid) != 4 or len(cfg.zeta_grid_shape) != 2:
        raise ConfigError("zeta_grid: expected [re_min, re_max, im_min, im_max] and a 2-element shape")
    if cfg.support is not None and not (len(cfg.support) == 2 and 0 < cfg.support[0] < cfg.support[1]):
        raise ConfigError("support: expected [a, b] with 0 < a < b")
    if any(r <= 0 for r in cfg.r_grid):
        raise ConfigError("r_grid: radii must be > 0")
    if cfg.group != "example":
        load_group_file(cfg.resolve(cfg.group))
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run configuration; the group is validated too."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"<root>: config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"<root>: not valid JSON ({e})") from None
    return config_from_dict(data, base_dir=str(path.parent))
