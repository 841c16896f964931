"""Linear SAV time stepping for the LLB equation.

Each step solves one sparse system in ``(u, H)`` bordered by the scalar
auxiliary variable ``r``::

    M u + k' (gamma C(w) - alpha M) H                 = M u*
    (sigma K + kappa mu M) u + M H + (G / sqrt F) r   = 0
    -(G . u) / (2 sqrt F)                       + r   = r* - (G . u*) / (2 sqrt F)

with ``G, F`` the load vector and quartic energy evaluated at the
linearisation point ``w``. Semi-implicit Euler uses ``k' = k``,
``u* = u^{n-1}``, ``w = u^{n-1}``; BDF2 uses ``k' = 2k/3``,
``u* = (4u^{n-1} - u^{n-2})/3`` and ``w = 2u^{n-1} - u^{n-2}``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import (Coefficients, FemOperators, FieldFunction, cross_matrix, ritz_project,
                  sav_load_vector)
from .linalg import (DEFAULT_TOL, BorderedSystem, ReusableSolver, SolverError, solve_bordered,
                     solve_spd)

log = logging.getLogger(__name__)

SCHEMES = ("euler", "bdf2")
BDF2_INITS = ("euler_substeps", "implicit")


@dataclass(frozen=True)
class State:
    """Nodal field ``u`` (``(N_v, 3)``), SAV scalar ``r`` and time."""

    u: np.ndarray
    r: float
    t: float
    step_index: int


@dataclass(frozen=True)
class StepDiagnostics:
    H: np.ndarray
    schur_denominator: float
    linear_residual: float


@dataclass(frozen=True)
class SchemeConfig:
    coeff: Coefficients
    k: float
    T: float
    scheme: str = "euler"
    bdf2_init: str = "euler_substeps"
    solver: str = "auto"
    tol: float = DEFAULT_TOL
    max_substeps: int = 10**6

    def __post_init__(self):
        if not (self.k > 0 and self.k <= self.T):
            raise ValueError(f"time step must satisfy 0 < k <= T (k={self.k!r}, T={self.T!r})")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.bdf2_init not in BDF2_INITS:
            raise ValueError(f"bdf2_init must be one of {BDF2_INITS}, got {self.bdf2_init!r}")
        if not self.tol > 0:
            raise ValueError("solver tolerance must be positive")

    @property
    def num_steps(self) -> int:
        return num_steps(self.T, self.k)


class StepError(RuntimeError):
    """A time step failed; carries the index of the step being computed."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"step {step_index} failed: {cause}")
        self.step_index = step_index
        self.cause = cause


def num_steps(T: float, k: float) -> int:
    """``floor(T / k)``, robust to the quotient landing just below an integer."""
    q = T / k
    n = math.floor(q)
    if math.isclose(q, n + 1, rel_tol=1e-9, abs_tol=0.0):
        n += 1
    return int(n)


def stepping_system(ops: FemOperators, coeff: Coefficients, w: np.ndarray, k_eff: float,
                    u_star: np.ndarray, r_star: float) -> BorderedSystem:
    """Assemble the bordered linear system of one linearised SAV step."""
    G, F = sav_load_vector(w, coeff, ops)
    sF = math.sqrt(F)
    M3, K3 = ops.M3, ops.K3
    C = cross_matrix(w, ops)
    # first row multiplied by k' so both block rows have comparable scale
    A = sp.bmat([
        [M3, k_eff * (coeff.gamma * C - coeff.alpha * M3)],
        [coeff.sigma * K3 + (coeff.kappa * coeff.mu) * M3, M3],
    ], format="csc")
    n3 = M3.shape[0]
    us = np.ravel(u_star)
    zeros = np.zeros(n3)
    b_col = np.concatenate([zeros, G / sF])
    b_row = np.concatenate([-G / (2.0 * sF), zeros])
    rhs = np.concatenate([M3 @ us, zeros, [r_star - (G @ us) / (2.0 * sF)]])
    return BorderedSystem(A, b_col, b_row, 1.0, rhs)


def step_ordering(ops: FemOperators) -> np.ndarray:
    """Permutation of the ``[u; H]`` unknowns grouping the six dofs of a node."""
    nodes = ops.node_ordering
    n3 = 3 * ops.num_nodes
    base = 3 * nodes[:, None] + np.arange(3)
    return np.hstack([base, base + n3]).ravel()


def make_solver(ops: FemOperators, cfg: SchemeConfig) -> ReusableSolver:
    """Core solver shared by the steps of one trajectory."""
    return ReusableSolver(method=cfg.solver, tol=cfg.tol, perm=step_ordering(ops))


def _solve_step(ops, coeff, w, k_eff, u_star, r_star, cfg, solver):
    system = stepping_system(ops, coeff, w, k_eff, u_star, r_star)
    if solver is None:
        solver = make_solver(ops, cfg)
    sol = solve_bordered(system, tol=cfg.tol, core_solver=solver)
    n = ops.num_nodes
    u = sol.core[: 3 * n].reshape(n, 3)
    H = sol.core[3 * n:].reshape(n, 3)
    return u, sol.scalar, StepDiagnostics(H, sol.denominator, sol.residual)


def init_euler(u0: FieldFunction, ops: FemOperators, coeff: Coefficients) -> State:
    """Start from the Ritz projection with ``r = sqrt(F[u])``."""
    u = ritz_project(u0, ops)
    _, F = sav_load_vector(u, coeff, ops)
    return State(u, math.sqrt(F), 0.0, 0)


def effective_field(state: State, ops: FemOperators, coeff: Coefficients,
                    w: np.ndarray | None = None) -> np.ndarray:
    """``H`` of a given state, linearised at ``w`` (defaults to ``u``)."""
    G, F = sav_load_vector(state.u if w is None else w, coeff, ops)
    rhs = -(coeff.sigma * (ops.K @ state.u) + coeff.kappa * coeff.mu * (ops.M @ state.u))
    rhs = rhs - (state.r / math.sqrt(F)) * G.reshape(-1, 3)
    return solve_spd(ops.M, rhs, tol=1e-12)


def euler_step(state: State, ops: FemOperators, cfg: SchemeConfig, k: float | None = None,
               t_new: float | None = None,
               solver: ReusableSolver | None = None) -> tuple[State, StepDiagnostics]:
    """One semi-implicit Euler SAV step (``k`` overrides ``cfg.k``).

    Passing the same ``solver`` across steps lets its factorisation be
    reused as a preconditioner.
    """
    k = cfg.k if k is None else k
    try:
        u, r, diag = _solve_step(ops, cfg.coeff, state.u, k, state.u, state.r, cfg, solver)
    except SolverError as exc:
        raise StepError(state.step_index + 1, exc) from exc
    t = state.t + k if t_new is None else t_new
    return State(u, r, t, state.step_index + 1), diag


def bdf2_step(prev2: State, prev1: State, ops: FemOperators, cfg: SchemeConfig,
              solver: ReusableSolver | None = None) -> tuple[State, StepDiagnostics]:
    """One linearly extrapolated BDF2 SAV step."""
    k = cfg.k
    if not math.isclose(prev1.t - prev2.t, k, rel_tol=1e-9, abs_tol=1e-15 * max(1.0, prev1.t)):
        raise ValueError(f"states are {prev1.t - prev2.t!r} apart, expected k={k!r}")
    w = 2.0 * prev1.u - prev2.u
    u_star = (4.0 * prev1.u - prev2.u) / 3.0
    r_star = (4.0 * prev1.r - prev2.r) / 3.0
    n = prev1.step_index + 1
    try:
        u, r, diag = _solve_step(ops, cfg.coeff, w, 2.0 * k / 3.0, u_star, r_star, cfg, solver)
    except SolverError as exc:
        raise StepError(n, exc) from exc
    return State(u, r, n * k, n), diag


def substep_plan(k: float, max_substeps: int = 10**6) -> list[float]:
    """Substep sizes reaching ``t = k`` with steps of ``k^2``.

    ``ceil(1/k)`` substeps, the last one shortened to land exactly on ``k``;
    above ``max_substeps`` the interval is split uniformly instead.
    """
    full = num_steps(1.0, k)
    rest = k - full * k * k
    if rest <= 1e-9 * k * k:
        rest = 0.0
    count = full + (1 if rest > 0 else 0)
    if count > max_substeps:
        warnings.warn(
            f"BDF2 start-up needs {count} substeps; capping at {max_substeps}",
            RuntimeWarning, stacklevel=2,
        )
        return [k / max_substeps] * max_substeps
    return [k * k] * full + ([rest] if rest > 0 else [])


def bdf2_init(u0: FieldFunction, ops: FemOperators, cfg: SchemeConfig) -> tuple[State, State]:
    """States at ``t = 0`` and ``t = k`` for starting the two-step scheme.

    ``euler_substeps`` takes ``~1/k`` semi-implicit Euler steps of size
    ``k^2``; ``implicit`` takes one fully implicit SAV Euler step, solved by
    fixed-point iteration on the linearisation point.
    """
    s0 = init_euler(u0, ops, cfg.coeff)
    s1, _ = start_bdf2(s0, ops, cfg)
    return s0, s1


def start_bdf2(s0: State, ops: FemOperators, cfg: SchemeConfig,
               solver: ReusableSolver | None = None) -> tuple[State, StepDiagnostics]:
    """Advance ``s0`` to ``t = k`` with the configured start-up procedure."""
    k = cfg.k
    solver = solver or make_solver(ops, cfg)
    if cfg.bdf2_init == "implicit":
        return _implicit_first_step(s0, ops, cfg, solver)
    s = s0
    diag = None
    t = 0.0
    for dk in substep_plan(k, cfg.max_substeps):
        t += dk
        s, diag = euler_step(s, ops, cfg, k=dk, t_new=t, solver=solver)
    return State(s.u, s.r, k, 1), diag


def _implicit_first_step(s0: State, ops, cfg: SchemeConfig, solver, maxiter: int = 100,
                         rtol: float = 1e-12) -> tuple[State, StepDiagnostics]:
    w = s0.u
    scale = max(np.max(np.abs(s0.u)), 1.0)
    for it in range(maxiter):
        try:
            u, r, diag = _solve_step(ops, cfg.coeff, w, cfg.k, s0.u, s0.r, cfg, solver)
        except SolverError as exc:
            raise StepError(1, exc) from exc
        change = np.max(np.abs(u - w))
        w = u
        if change <= rtol * scale:
            break
    else:
        raise StepError(1, SolverError(f"fixed-point start-up did not converge ({change:.2e})"))
    log.debug("implicit start-up converged in %d iterations", it + 1)
    return State(u, r, cfg.k, 1), diag


@dataclass
class Trajectory:
    """States kept at the requested stride plus per-step diagnostics.

    ``states[j]`` pairs with ``diagnostics[j]``; for BDF2 ``previous[j]`` is
    the state one step before ``states[j]`` (needed for its modified energy).
    """

    config: SchemeConfig
    states: list[State] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    previous: list[State | None] = field(default_factory=list)

    @property
    def final(self) -> State:
        return self.states[-1]

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def run(u0: FieldFunction, ops: FemOperators, cfg: SchemeConfig, stride: int = 1,
        callback: Callable[[State, StepDiagnostics, State | None], None] | None = None,
        keep: Callable[[int], bool] | None = None) -> Trajectory:
    """Integrate ``N = floor(T/k)`` steps.

    States with ``step_index % stride == 0`` (or for which ``keep`` returns
    true) are stored, together with the final state. ``callback`` sees every
    step.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    N = cfg.num_steps
    traj = Trajectory(cfg)
    if keep is None:
        keep = lambda n: n % stride == 0 or n == N  # noqa: E731

    def emit(state, diag, prev):
        if keep(state.step_index):
            traj.states.append(state)
            traj.diagnostics.append(diag)
            traj.previous.append(prev)
        if callback is not None:
            callback(state, diag, prev)

    solver = make_solver(ops, cfg)
    s0 = init_euler(u0, ops, cfg.coeff)
    emit(s0, StepDiagnostics(effective_field(s0, ops, cfg.coeff), float("nan"), 0.0), None)
    if N == 0:
        return traj

    if cfg.scheme == "euler":
        s = s0
        for _ in range(N):
            prev = s
            s, diag = euler_step(s, ops, cfg, solver=solver)
            s = replace(s, t=s.step_index * cfg.k)
            emit(s, diag, prev)
        return traj

    s1, diag = start_bdf2(s0, ops, cfg, solver)
    emit(s1, diag, s0)
    a, b = s0, s1
    for _ in range(N - 1):
        c, diag = bdf2_step(a, b, ops, cfg, solver)
        emit(c, diag, b)
        a, b = b, c
    return traj
