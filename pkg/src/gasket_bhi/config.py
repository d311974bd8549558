"""Plain-text ``key = value`` experiment configuration.

Lines starting with ``#`` are comments.  Every key has a type and a
default; unknown keys, malformed values and constraint violations raise
:class:`ConfigError` with the offending line.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

from .geometry import F_MINUS, F_PLUS, Cell, ExactPoint


class ConfigError(ValueError):
    pass


WINDOWS = {
    "F+": (F_PLUS,),
    "F-": (F_MINUS,),
    "F+F-": (F_PLUS, F_MINUS),
}


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _fracs(s: str) -> tuple[Fraction, ...]:
    return tuple(Fraction(x.strip()) for x in s.split(",") if x.strip())


def _point(s: str) -> ExactPoint:
    a, b = s.split(",")
    return ExactPoint(Fraction(a.strip()), Fraction(b.strip()))


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, ExactPoint):
        return f"{v.a},{v.b}"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key: (parser, default, help)
SCHEMA = {
    "alphas": (_floats, (0.3, 0.5, 0.7, 0.9), "stability indices, comma separated"),
    "level": (int, 7, "graph level of the main battery"),
    "level_fine": (int, 8, "refined level for the stability comparison"),
    "window": (str, "F+", "ambient window: F+, F- or F+F-"),
    "x0": (_point, ExactPoint(Fraction(1, 2), 0), "common vertex of the two B cells, as a,b for (a, b*sqrt3)"),
    "b_order": (int, 3, "order of the two cells forming B; B' uses the next order"),
    "target_order": (int, 3, "order of the target cells E1, E2"),
    "target1": (_point, ExactPoint(0, 0), "corner of target cell E1"),
    "target2": (_point, ExactPoint(Fraction(7, 8), 0), "corner of target cell E2"),
    "d_family": (str, "cells", "random D generator: cells, vertices or slit"),
    "d_level": (int, 5, "cell order used by the D generator"),
    "density": (float, 0.5, "inclusion probability per cell (cells) or vertex (vertices)"),
    "slit_path": (str, "3", "sub-cell of the first B cell removed by the slit family"),
    "instances": (int, 100, "random D instances per alpha"),
    "seed": (int, 20240917, "master seed"),
    "p1_sq": (Fraction, Fraction(1, 4), "squared inner radius p1 (in units of the B cell side)"),
    "p2_sq": (Fraction, Fraction(1), "squared escape radius p2"),
    "p3_sq": (_fracs, (Fraction(1, 4), Fraction(3, 8), Fraction(9, 16)), "squared radii p3 for the upper-bound sweep"),
    "p5_sq": (Fraction, Fraction(3, 4), "squared outer radius p5"),
    "boundary": (str, "absorbing", "rim treatment: absorbing or reflecting"),
    "mode": (str, "spectral", "operator construction: spectral or series"),
    "series_terms": (int, 100000, "number of binomial terms in series mode"),
    "exploratory": (_bool, False, "allow alpha >= 1 (flagged, never part of acceptance)"),
    "scaling_window": (str, "F+F-", "window for the exit-time exponent fit"),
    "scaling_level": (int, 6, "graph level for the exit-time exponent fit"),
    "scaling_center": (_point, ExactPoint(0, 0), "ball centre for the exponent fit"),
    "scaling_radii_sq": (_fracs, (Fraction(1, 4), Fraction(1, 16), Fraction(1, 64)), "squared ball radii"),
    "walk_level": (int, 6, "graph level for the base-walk dimension fit"),
    "walk_orders": (_ints, (1, 2, 3, 4), "orders j of the vertex stars exited by the base walk"),
    "walk_paths": (int, 100000, "Monte Carlo paths per star"),
    "tol_level": (float, 0.2, "relative tolerance for max R between levels"),
    "tol_scale": (float, 0.25, "relative tolerance for lemma constants across a dilation"),
    "tol_exponent": (float, 0.1, "absolute tolerance of exponent fits"),
    "max_excluded": (float, 0.05, "maximal fraction of flagged instances"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    alphas: tuple = SCHEMA["alphas"][1]
    level: int = SCHEMA["level"][1]
    level_fine: int = SCHEMA["level_fine"][1]
    window: str = SCHEMA["window"][1]
    x0: ExactPoint = SCHEMA["x0"][1]
    b_order: int = SCHEMA["b_order"][1]
    target_order: int = SCHEMA["target_order"][1]
    target1: ExactPoint = SCHEMA["target1"][1]
    target2: ExactPoint = SCHEMA["target2"][1]
    d_family: str = SCHEMA["d_family"][1]
    d_level: int = SCHEMA["d_level"][1]
    density: float = SCHEMA["density"][1]
    slit_path: str = SCHEMA["slit_path"][1]
    instances: int = SCHEMA["instances"][1]
    seed: int = SCHEMA["seed"][1]
    p1_sq: Fraction = SCHEMA["p1_sq"][1]
    p2_sq: Fraction = SCHEMA["p2_sq"][1]
    p3_sq: tuple = SCHEMA["p3_sq"][1]
    p5_sq: Fraction = SCHEMA["p5_sq"][1]
    boundary: str = SCHEMA["boundary"][1]
    mode: str = SCHEMA["mode"][1]
    series_terms: int = SCHEMA["series_terms"][1]
    exploratory: bool = SCHEMA["exploratory"][1]
    scaling_window: str = SCHEMA["scaling_window"][1]
    scaling_level: int = SCHEMA["scaling_level"][1]
    scaling_center: ExactPoint = SCHEMA["scaling_center"][1]
    scaling_radii_sq: tuple = SCHEMA["scaling_radii_sq"][1]
    walk_level: int = SCHEMA["walk_level"][1]
    walk_orders: tuple = SCHEMA["walk_orders"][1]
    walk_paths: int = SCHEMA["walk_paths"][1]
    tol_level: float = SCHEMA["tol_level"][1]
    tol_scale: float = SCHEMA["tol_scale"][1]
    tol_exponent: float = SCHEMA["tol_exponent"][1]
    max_excluded: float = SCHEMA["max_excluded"][1]

    def text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def window_cells(self) -> tuple[Cell, ...]:
        return WINDOWS[self.window]

    def scaling_cells(self) -> tuple[Cell, ...]:
        return WINDOWS[self.scaling_window]

    def with_(self, **kw) -> "ExperimentConfig":
        return validate(replace(self, **kw))


def validate(cfg: ExperimentConfig, battery: str | None = None) -> ExperimentConfig:
    if cfg.window not in WINDOWS or cfg.scaling_window not in WINDOWS:
        raise ConfigError(f"window must be one of {sorted(WINDOWS)}")
    if cfg.d_family not in ("cells", "vertices", "slit"):
        raise ConfigError(f"d_family must be cells, vertices or slit, got {cfg.d_family!r}")
    if cfg.boundary not in ("absorbing", "reflecting"):
        raise ConfigError("boundary must be absorbing or reflecting")
    if cfg.mode not in ("spectral", "series"):
        raise ConfigError("mode must be spectral or series")
    if not cfg.alphas:
        raise ConfigError("alphas must not be empty")
    for a in cfg.alphas:
        if not 0 < a < 2.3219280948873622:
            raise ConfigError(f"alpha={a} outside (0, d_w)")
    if battery in ("bhi", "lemmas") and not cfg.exploratory:
        bad = [a for a in cfg.alphas if not 0 < a < 1]
        if bad:
            raise ConfigError(
                f"alpha={bad[0]} violates the hypothesis 0 < alpha < 1 of the boundary Harnack "
                "inequality; set exploratory = true to run it anyway (results are flagged)")
    if not cfg.b_order < cfg.d_level <= cfg.level:
        raise ConfigError("need b_order < d_level <= level")
    if cfg.level_fine < cfg.level:
        raise ConfigError("level_fine must not be below level")
    if not 0 < cfg.density <= 1:
        raise ConfigError("density must lie in (0, 1]")
    if cfg.instances < 1:
        raise ConfigError("instances must be positive")
    if not (0 < cfg.p1_sq < cfg.p2_sq and cfg.p1_sq < cfg.p5_sq):
        raise ConfigError("need 0 < p1 < p2 and p1 < p5")
    if any(not cfg.p1_sq <= p < cfg.p5_sq for p in cfg.p3_sq):
        raise ConfigError("each p3 must lie in [p1, p5)")
    if any(c not in "123" for c in cfg.slit_path) or not cfg.slit_path:
        raise ConfigError("slit_path must be a non-empty word over 1, 2, 3")
    if len(cfg.scaling_radii_sq) < 2 or len(cfg.walk_orders) < 2:
        raise ConfigError("exponent fits need at least two radii")
    return cfg


def _parse_values(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_one(key, val, f"line {lineno}")
    return values


def _parse_one(key: str, val: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return SCHEMA[key][0](str(val))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse_config_text(text: str, battery: str | None = None) -> ExperimentConfig:
    return validate(ExperimentConfig(**_parse_values(text)), battery)


def parse_config(path: str | Path | None = None, overrides: dict | None = None,
                 battery: str | None = None) -> ExperimentConfig:
    """Read a config file (or defaults) and apply ``--set key=value`` overrides."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values = _parse_values(text)
    for k, v in (overrides or {}).items():
        values[k] = _parse_one(k, v, "override")
    return validate(ExperimentConfig(**values), battery)


def describe() -> str:
    """Schema with defaults, one commented line per key."""
    cfg = ExperimentConfig()
    lines = []
    for f in fields(cfg):
        lines.append(f"# {SCHEMA[f.name][2]}")
        lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"
