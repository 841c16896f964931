"""Refinement studies with errors measured between consecutive nested levels.

No exact solution is needed: at level ``h`` the error is
``e_h = u_h - P u_2h`` with ``P`` the exact embedding of the coarser P1
space, and ``rate = log2(max_t |e_2h| / max_t |e_h|)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import energy_gap, norms
from .fem import Coefficients, FemOperators, FieldFunction, assemble_mass_stiffness
from .mesh import Mesh, build_structured, prolong, refine
from .stepper import SchemeConfig, State, num_steps, run

NORMS = ("l2", "h1", "linf")
_NORM_INDEX = {name: i for i, name in enumerate(NORMS)}


@dataclass(frozen=True)
class Coupling:
    """Time step per level: ``fixed`` uses ``value`` everywhere,
    ``proportional`` uses ``k = value * h``."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "proportional"):
            raise ValueError(f"coupling must be 'fixed' or 'proportional', got {self.kind!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise ValueError("coupling constant must be positive")

    def step(self, h: float) -> float:
        return self.value if self.kind == "fixed" else self.value * h

    @classmethod
    def parse(cls, text: str, k: float | None = None) -> "Coupling":
        """``"fixed"`` (needs ``k``) or ``"proportional:<c>"``."""
        text = text.strip()
        if text == "fixed":
            if k is None:
                raise ValueError("fixed coupling needs a time step k")
            return cls("fixed", float(k))
        kind, sep, c = text.partition(":")
        if kind == "proportional" and sep:
            return cls("proportional", float(c))
        if kind == "fixed" and sep:
            return cls("fixed", float(c))
        raise ValueError(f"cannot parse coupling {text!r}; use fixed or proportional:<c>")


@dataclass(frozen=True)
class StudySpec:
    base_n: int
    levels: int
    coupling: Coupling
    T: float
    coeff: Coefficients
    u0: FieldFunction
    scheme: str = "euler"
    norms: tuple[str, ...] = NORMS
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
    stride: int = 1
    bdf2_init: str = "euler_substeps"
    solver: str = "auto"
    tol: float = 1e-10

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("a study needs at least two levels")
        if self.base_n < 1:
            raise ValueError("base_n must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        bad = [s for s in self.norms if s not in _NORM_INDEX]
        if bad:
            raise ValueError(f"unknown norms {bad}; choose from {NORMS}")

    def meshes(self) -> list[Mesh]:
        m = build_structured(self.domain, self.base_n)
        out = [m]
        for _ in range(self.levels - 1):
            m = refine(m)
            out.append(m)
        return out

    def scheme_config(self, mesh: Mesh) -> SchemeConfig:
        return SchemeConfig(self.coeff, self.coupling.step(mesh.h), self.T, scheme=self.scheme,
                            bdf2_init=self.bdf2_init, solver=self.solver, tol=self.tol)


@dataclass
class RateReport:
    """Errors per consecutive level pair and the rates between pairs.

    ``errors[norm][p]`` is the max-over-times error of pair ``p`` (levels
    ``p`` and ``p + 1``); ``rates[norm][p]`` compares pairs ``p`` and
    ``p + 1``; ``headline`` is the rate involving the finest pair.
    """

    n: list[int]
    h: list[float]
    k: list[float]
    errors: dict[str, list[float]]
    rates: dict[str, list[float]] = field(default_factory=dict)
    energy_gap: list[float] = field(default_factory=list)

    @property
    def headline(self) -> dict[str, float]:
        return {s: (r[-1] if r else float("nan")) for s, r in self.rates.items()}

    def summary(self) -> str:
        lines = []
        for p in range(len(self.n) - 1):
            errs = "  ".join(f"{s}={self.errors[s][p]:.4e}" for s in self.errors)
            lines.append(f"n={self.n[p]:>4}->{self.n[p + 1]:<4} k={self.k[p + 1]:.3e}  {errs}")
        for s, r in self.rates.items():
            lines.append(f"rate {s}: " + ", ".join(f"{v:.3f}" for v in r))
        if self.energy_gap:
            lines.append("max energy gap: " + ", ".join(f"{g:.3e}" for g in self.energy_gap))
        return "\n".join(lines)


def rates_from_errors(errors) -> list[float]:
    """``log2`` of successive error ratios."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return [float(v) for v in np.log2(e[:-1] / e[1:])]


def common_steps(k_coarse: float, k_fine: float, T: float,
                 stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Step indices ``(coarse, fine)`` of the shared time levels ``t > 0``.

    The fine grid must refine the coarse one by an integer factor.
    """
    q = k_coarse / k_fine
    ratio = round(q)
    if ratio < 1 or not math.isclose(q, ratio, rel_tol=1e-9):
        raise ValueError(f"time grids are not nested (k ratio {q!r})")
    n_c = num_steps(T, k_coarse)
    coarse = np.arange(stride, n_c + 1, stride)
    if len(coarse) == 0:
        raise ValueError("no common comparison times")
    return coarse, ratio * coarse


def sample_times(spec: StudySpec) -> list[np.ndarray]:
    """Comparison times for each consecutive level pair."""
    ks = [spec.coupling.step(m.h) for m in spec.meshes()]
    out = []
    for kc, kf in zip(ks[:-1], ks[1:]):
        idx, _ = common_steps(kc, kf, spec.T, spec.stride)
        out.append(idx * kc)
    return out


def pair_errors(coarse: Mesh, fine: Mesh, ops_fine: FemOperators, coarse_states: list[State],
                fine_states: list[State], names=NORMS) -> dict[str, float]:
    """Max over paired states of ``|u_fine - P u_coarse|`` in each norm."""
    if len(coarse_states) != len(fine_states):
        raise ValueError("coarse and fine state lists differ in length")
    worst = np.zeros(len(NORMS))
    for sc, sf in zip(coarse_states, fine_states):
        e = np.asarray(sf.u) - prolong(coarse, fine, sc.u)
        worst = np.maximum(worst, norms(e, ops_fine))
    return {s: float(worst[_NORM_INDEX[s]]) for s in names}


@dataclass
class _LevelResult:
    mesh: Mesh
    ops: FemOperators
    k: float
    states: dict[int, State]
    gap: float


def _run_level(spec: StudySpec, mesh: Mesh, wanted: set[int]) -> _LevelResult:
    ops = assemble_mass_stiffness(mesh)
    cfg = spec.scheme_config(mesh)
    kept: dict[int, State] = {}
    gap = [0.0]

    def watch(state, diag, prev):
        if state.step_index in wanted:
            kept[state.step_index] = state
        p = prev if spec.scheme == "bdf2" and state.step_index > 0 else None
        gap[0] = max(gap[0], energy_gap(state, spec.coeff, ops, prev=p))

    run(spec.u0, ops, cfg, callback=watch, keep=lambda n: False)
    return _LevelResult(mesh, ops, cfg.k, kept, gap[0])


def run_study(spec: StudySpec, workers: int = 1) -> RateReport:
    """Run every level and reduce to errors and rates (ordered by level)."""
    meshes = spec.meshes()
    ks = [spec.coupling.step(m.h) for m in meshes]
    pairs = [common_steps(kc, kf, spec.T, spec.stride) for kc, kf in zip(ks[:-1], ks[1:])]
    wanted = [set() for _ in meshes]
    for p, (ic, jf) in enumerate(pairs):
        wanted[p].update(ic.tolist())
        wanted[p + 1].update(jf.tolist())

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda a: _run_level(spec, *a), zip(meshes, wanted)))
    else:
        results = [_run_level(spec, m, w) for m, w in zip(meshes, wanted)]

    errors = {s: [] for s in spec.norms}
    for p, (ic, jf) in enumerate(pairs):
        c, f = results[p], results[p + 1]
        e = pair_errors(c.mesh, f.mesh, f.ops, [c.states[i] for i in ic],
                        [f.states[j] for j in jf], spec.norms)
        for s in spec.norms:
            errors[s].append(e[s])
    report = RateReport([m.n for m in meshes], [m.h for m in meshes], ks, errors,
                        energy_gap=[r.gap for r in results])
    report.rates = {s: rates_from_errors(v) for s, v in errors.items()}
    return report
