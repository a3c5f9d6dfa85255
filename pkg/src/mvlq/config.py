"""Experiment configuration: a line-oriented ``section.key = value`` format.

Values are JSON literals (numbers, bracketed lists, quoted strings) or bare
words.  Matrices are written row-major as nested lists, ``[[1, 0], [0, 1]]``;
a bare number stands for a 1x1 matrix.  ``#`` starts a comment.

Example::

    model.A = [[0.2]]
    model.B = [[1.0]]
    grids.particles = 2000
    seeds.base = 7
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .model import LQModel
from .verify import CHECKS, Sizes

SECTIONS = ("model", "grids", "seeds", "initial", "checks", "output")
REQUIRED = ("A", "B", "Q", "R", "G", "T")
MATRIX_KEYS = ("A", "Abar", "B", "C", "Cbar", "D", "Q", "Qbar", "R", "G", "Gbar")
SCALAR_KEYS = ("beta", "T")
CHECK_NAMES = CHECKS
# config key -> Sizes field, for the grid entries that are spelled differently
_GRID_ALIASES = {"sde_steps": "steps"}


class ConfigError(ValueError):
    """The configuration could not be parsed or failed validation."""


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_lines(lines, source: str = "<config>") -> dict[str, dict]:
    raw: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        set_entry(raw, line, f"{source}:{lineno}")
    return raw


def set_entry(raw: dict[str, dict], assignment: str, where: str = "--set") -> None:
    if "=" not in assignment:
        raise ConfigError(f"{where}: expected 'section.key = value', got {assignment!r}")
    lhs, rhs = assignment.split("=", 1)
    lhs = lhs.strip()
    if "." not in lhs:
        raise ConfigError(f"{where}: key {lhs!r} lacks a section prefix")
    section, key = lhs.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"{where}: unknown section {section!r} (expected one of {', '.join(SECTIONS)})")
    raw.setdefault(section, {})[key] = parse_value(rhs)


def _matrix(name: str, v) -> np.ndarray:
    if isinstance(v, bool) or not isinstance(v, (int, float, list)):
        raise ConfigError(f"model.{name}: expected a number or a bracketed matrix, got {v!r}")
    try:
        a = np.array(v, dtype=float)
    except ValueError:
        raise ConfigError(f"model.{name}: ragged or non-numeric matrix rows") from None
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, None] if name in ("B", "D") else a[None, :]
    if a.ndim != 2:
        raise ConfigError(f"model.{name}: expected a 2-d matrix")
    return a


def build_model(section: dict) -> LQModel:
    for key in REQUIRED:
        if key not in section:
            raise ConfigError(f"missing required field model.{key}")
    unknown = set(section) - set(MATRIX_KEYS) - set(SCALAR_KEYS)
    if unknown:
        raise ConfigError(f"unknown model field(s): {', '.join(sorted('model.' + u for u in unknown))}")
    kw = {k: _matrix(k, v) for k, v in section.items() if k in MATRIX_KEYS}
    for k in SCALAR_KEYS:
        if k in section:
            try:
                kw[k] = float(section[k])
            except (TypeError, ValueError):
                raise ConfigError(f"model.{k}: expected a number, got {section[k]!r}") from None
    try:
        return LQModel(**kw)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _positive_int(where: str, v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or v <= 0:
        raise ConfigError(f"{where}: expected a positive integer, got {v!r}")
    return int(v)


@dataclass
class ExperimentConfig:
    model: LQModel
    sizes: Sizes
    seed: int = 0
    initial_loc: float = 0.5
    initial_scale: float = 1.0
    initial_file: str | None = None
    checks: tuple[str, ...] = CHECK_NAMES
    out_dir: Path = Path("out")
    raw: dict = field(default_factory=dict)

    @property
    def riccati_steps(self) -> int:
        return self.sizes.riccati_steps


def build_config(raw: dict[str, dict]) -> ExperimentConfig:
    model = build_model(raw.get("model", {}))
    size_fields = {f.name for f in fields(Sizes)}
    kw = {}
    for key, v in raw.get("grids", {}).items():
        name = _GRID_ALIASES.get(key, key)
        if name not in size_fields:
            raise ConfigError(f"unknown grid field grids.{key}")
        if isinstance(v, list):
            kw[name] = tuple(_positive_int(f"grids.{key}", x) if name != "eps_levels" else float(x)
                             for x in v)
        else:
            kw[name] = _positive_int(f"grids.{key}", v)
    sizes = Sizes(**kw)

    seeds = raw.get("seeds", {})
    seed = seeds.get("base", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seeds.base: expected an unsigned integer, got {seed!r}")

    init = raw.get("initial", {})
    try:
        loc = float(init.get("loc", 0.5))
        scale = float(init.get("scale", 1.0))
    except (TypeError, ValueError):
        raise ConfigError("initial.loc and initial.scale must be numbers") from None
    if scale < 0:
        raise ConfigError("initial.scale must be non-negative")
    file = init.get("file")

    sel = raw.get("checks", {}).get("select", "all")
    if sel == "all":
        checks = CHECK_NAMES
    else:
        checks = tuple(s.strip() for s in (sel if isinstance(sel, list) else str(sel).split(",")))
        bad = [c for c in checks if c not in CHECK_NAMES]
        if bad:
            raise ConfigError(f"checks.select: unknown check(s) {bad}; known: {', '.join(CHECK_NAMES)}")
    out = raw.get("output", {}).get("dir", "out")
    return ExperimentConfig(model, sizes, seed, loc, scale, file, checks, Path(str(out)), raw)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    """Read ``path`` (the shipped default when None), then apply ``section.key=value`` overrides."""
    if path is None:
        text = resources.files("mvlq").joinpath("data/default.cfg").read_text()
        source = "default.cfg"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        source = str(path)
    raw = parse_lines(text.splitlines(), source)
    for item in overrides:
        set_entry(raw, item)
    return build_config(raw)


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly view of the resolved configuration, for the run manifest."""
    m = cfg.model
    model = {k: getattr(m, k).tolist() for k in MATRIX_KEYS}
    model.update(beta=m.beta, T=m.T)
    return {"model": model,
            "grids": {f.name: getattr(cfg.sizes, f.name) for f in fields(Sizes)},
            "seeds": {"base": cfg.seed},
            "initial": {"loc": cfg.initial_loc, "scale": cfg.initial_scale, "file": cfg.initial_file},
            "checks": {"select": list(cfg.checks)},
            "output": {"dir": str(cfg.out_dir)}}
