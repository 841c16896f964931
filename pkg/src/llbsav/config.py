"""Flat ``key = value`` run configuration with named presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .convergence import NORMS, Coupling, StudySpec
from .fem import Coefficients, FieldFunction
from .stepper import BDF2_INITS, SCHEMES, SchemeConfig

TWO_PI = 2.0 * np.pi


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the problem."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key = key
        self.line = line


def _zeros_grad(x, y):
    return np.zeros(np.shape(x) + (3, 2))


def _sim1_value(x, y):
    return np.stack([np.cos(TWO_PI * y), np.zeros_like(x), np.sin(TWO_PI * x)], axis=-1)


def _sim1_grad(x, y):
    g = _zeros_grad(x, y)
    g[..., 0, 1] = -TWO_PI * np.sin(TWO_PI * y)
    g[..., 2, 0] = TWO_PI * np.cos(TWO_PI * x)
    return g


def _sim2_value(x, y):
    return np.stack([-y, x, np.cos(TWO_PI * x)], axis=-1)


def _sim2_grad(x, y):
    g = _zeros_grad(x, y)
    g[..., 0, 1] = -1.0
    g[..., 1, 0] = 1.0
    g[..., 2, 0] = -TWO_PI * np.sin(TWO_PI * x)
    return g


def constant_field(c) -> FieldFunction:
    c = np.asarray(c, dtype=float)
    if c.shape != (3,):
        raise ValueError("a constant field needs three components")
    return FieldFunction(lambda x, y: np.broadcast_to(c, np.shape(x) + (3,)).copy(), _zeros_grad,
                         name="constant:" + ",".join(repr(float(v)) for v in c))


INITIAL_FIELDS = {
    "simulation1": FieldFunction(_sim1_value, _sim1_grad, "simulation1"),
    "simulation2": FieldFunction(_sim2_value, _sim2_grad, "simulation2"),
}


def initial_field(selector: str) -> FieldFunction:
    """``simulation1``, ``simulation2`` or ``constant:cx,cy,cz``."""
    if selector in INITIAL_FIELDS:
        return INITIAL_FIELDS[selector]
    kind, _, rest = selector.partition(":")
    if kind == "constant" and rest:
        try:
            return constant_field([float(v) for v in rest.split(",")])
        except ValueError as exc:
            raise ValueError(f"bad constant field {selector!r}: {exc}") from None
    raise ValueError(f"unknown initial field {selector!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed for a run or a study.

    Time step ``k`` is used for single runs and for ``fixed`` coupling;
    ``coupling = proportional:<c>`` sets ``k = c h`` per study level.
    """

    gamma: float = 1.0
    alpha: float = 1.0
    sigma: float = 1.0
    kappa: float = 1.0
    mu: float = 1.0
    u0: str = "simulation1"
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
    n: int = 16
    k: float = 1e-3
    T: float = 1e-2
    scheme: str = "euler"
    bdf2_init: str = "euler_substeps"
    solver: str = "auto"
    tol: float = 1e-10
    levels: int = 3
    coupling: str = "fixed"
    norms: tuple[str, ...] = NORMS
    stride: int = 1
    out: str = "out"
    energy_csv: bool = True
    vtk_stride: int = 0
    rate_csv: bool = True
    preset: str = ""

    def __post_init__(self):
        for key in ("gamma", "alpha", "sigma", "kappa", "mu"):
            v = getattr(self, key)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"coefficient must be positive, got {v}", key)
        if not (self.k > 0 and self.k <= self.T):
            raise ConfigError(f"time step must satisfy 0 < k <= T (k={self.k}, T={self.T})", "k")
        for key, choices in (("scheme", SCHEMES), ("bdf2_init", BDF2_INITS),
                             ("solver", ("auto", "lu", "gmres"))):
            if getattr(self, key) not in choices:
                raise ConfigError(f"must be one of {choices}", key)
        if self.n < 1:
            raise ConfigError("must be a positive integer", "n")
        if self.levels < 2:
            raise ConfigError("a study needs at least two levels", "levels")
        if self.stride < 1:
            raise ConfigError("must be >= 1", "stride")
        if self.vtk_stride < 0:
            raise ConfigError("must be >= 0", "vtk_stride")
        if not self.tol > 0:
            raise ConfigError("must be positive", "tol")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("degenerate rectangle", "domain")
        for key, check in (("u0", initial_field), ("coupling", self.parsed_coupling)):
            try:
                check(getattr(self, key))
            except ValueError as exc:
                raise ConfigError(str(exc), key) from None
        bad = [s for s in self.norms if s not in NORMS]
        if bad:
            raise ConfigError(f"unknown norms {bad}", "norms")

    def coefficients(self) -> Coefficients:
        return Coefficients(self.gamma, self.alpha, self.sigma, self.kappa, self.mu)

    def parsed_coupling(self, text: str | None = None) -> Coupling:
        return Coupling.parse(self.coupling if text is None else text, self.k)

    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(self.coefficients(), self.k, self.T, scheme=self.scheme,
                            bdf2_init=self.bdf2_init, solver=self.solver, tol=self.tol)

    def study_spec(self) -> StudySpec:
        return StudySpec(self.n, self.levels, self.parsed_coupling(), self.T, self.coefficients(),
                         initial_field(self.u0), scheme=self.scheme, norms=self.norms,
                         domain=self.domain, stride=self.stride, bdf2_init=self.bdf2_init,
                         solver=self.solver, tol=self.tol)


PRESETS: dict[str, dict[str, object]] = {
    "simulation1": dict(gamma=50.0, alpha=0.5, sigma=0.5, kappa=1.0, mu=1.0, u0="simulation1"),
    "simulation2": dict(gamma=100.0, alpha=0.1, sigma=0.1, kappa=2.0, mu=1.0, u0="simulation2"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str, line: int | None):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected true/false")
        if key == "domain":
            vals = tuple(float(v) for v in raw.split(","))
            if len(vals) != 4:
                raise ValueError("expected x_min,x_max,y_min,y_max")
            return vals
        if key == "norms":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot read {raw!r}: {exc}", key, line) from None


def build_config(values: dict[str, str], lines: dict[str, int] | None = None) -> RunConfig:
    """Expand ``preset`` first, then apply the remaining string values."""
    lines = lines or {}
    kwargs: dict[str, object] = {}
    preset = values.get("preset", "")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}", "preset",
                              lines.get("preset"))
        kwargs.update(PRESETS[preset])
        kwargs["preset"] = preset
    for key, raw in values.items():
        if key == "preset":
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError("unknown key", key, lines.get(key))
        kwargs[key] = _convert(key, raw, lines.get(key))
    try:
        return RunConfig(**kwargs)
    except ConfigError as exc:
        if exc.key is not None and exc.line is None and exc.key in lines:
            raise ConfigError(str(exc).rsplit(" (", 1)[0], exc.key, lines[exc.key]) from None
        raise


def read_values(text: str) -> tuple[dict[str, str], dict[str, int]]:
    """Raw ``key -> value`` strings and their line numbers; ``#`` starts a comment."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", line=no)
        if key in values:
            raise ConfigError("duplicate key", key, no)
        values[key] = value
        lines[key] = no
    return values, lines


def parse_config(text: str) -> RunConfig:
    """Parse a flat ``key = value`` document into a validated config."""
    return build_config(*read_values(text))


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Apply non-``None`` overrides (e.g. from command-line flags)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return replace(cfg, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
