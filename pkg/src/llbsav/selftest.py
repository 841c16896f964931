"""Quick invariant checks run by ``llbsav check``."""

from __future__ import annotations

import math
from math import factorial
from typing import Callable, NamedTuple

import numpy as np

from .config import constant_field
from .fem import (Coefficients, FieldFunction, assemble_mass_stiffness, cross_matrix, l2_project,
                  ritz_project)
from .linalg import solve_bordered
from .mesh import build_structured
from .quadrature import DEFAULT_RULE
from .stepper import SchemeConfig, run, stepping_system


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _mass_spd():
    ops = assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 4))
    M = ops.M.toarray()
    lam = np.linalg.eigvalsh(M)
    sym = np.abs(M - M.T).max()
    return lam.min() > 0 and sym < 1e-15, f"min eigenvalue {lam.min():.3e}, asymmetry {sym:.1e}"


def _stiffness_kernel():
    ops = assemble_mass_stiffness(build_structured((0, 2, -1, 3), 5))
    v = np.abs(ops.K @ np.ones(ops.num_nodes)).max()
    return v < 1e-12, f"|K 1| = {v:.1e}"


def _cross_skew():
    ops = assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 4))
    w = np.random.default_rng(0).normal(size=(ops.num_nodes, 3))
    C = cross_matrix(w, ops)
    v = abs(C + C.T).max()
    return v < 1e-12, f"|C + C^T| = {v:.1e}"


def _projections():
    ops = assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 4))
    f = l2_project(lambda x, y: np.stack([np.sin(x), x * y, np.cos(y)], -1), ops)
    idem = np.abs(l2_project(f, ops) - f).max()
    a = np.array([[1.0, 2.0], [-0.5, 0.3], [0.0, -1.0]])
    lin = FieldFunction(lambda x, y: np.stack([x, y], -1) @ a.T + 0.25,
                        lambda x, y: np.broadcast_to(a, np.shape(x) + (3, 2)))
    x, y = ops.mesh.nodes.T
    exact = np.stack([x, y], -1) @ a.T + 0.25
    rit = np.abs(ritz_project(lin, ops) - exact).max()
    ok = idem < 1e-10 and rit < 1e-10
    return ok, f"projection idempotence {idem:.1e}, Ritz on linears {rit:.1e}"


def _quadrature():
    rule = DEFAULT_RULE
    worst = 0.0
    for a in range(5):
        for b in range(5 - a):
            approx = np.dot(rule.weights, rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            # int over the unit-area-normalised triangle: 2 a! b! / (a+b+2)!
            exact = 2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
            worst = max(worst, abs(approx - exact))
    return worst < 1e-14, f"max monomial error {worst:.1e}"


def _bordered_vs_dense():
    ops = assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 1))
    coeff = Coefficients(50.0, 0.5, 0.5, 1.0, 1.0)
    rng = np.random.default_rng(1)
    w = rng.normal(size=(4, 3))
    sysm = stepping_system(ops, coeff, w, 1e-2, rng.normal(size=(4, 3)), 1.3)
    sol = solve_bordered(sysm, tol=1e-12)
    dense = np.linalg.solve(sysm.monolithic().toarray(), sysm.rhs)
    diff = max(np.abs(sol.core - dense[:-1]).max(), abs(sol.scalar - dense[-1]))
    return diff < 1e-10, f"max difference {diff:.1e}"


def _constant_oracle():
    coeff = Coefficients(50.0, 0.5, 0.5, 1.0, 1.0)
    c = np.array([0.7, 0.0, 0.0])
    ops = assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 4))
    traj = run(constant_field(c), ops, SchemeConfig(coeff, 1e-3, 5e-2))
    area = 4.0
    u, r = c.copy(), math.sqrt(0.25 * coeff.kappa * ((c @ c) ** 2 + 1.0) * area)
    worst = spread = 0.0
    for s in traj.states[1:]:
        u, r = _ode_euler(u, r, 1e-3, coeff, area)
        worst = max(worst, np.abs(s.u - u).max(), abs(s.r - r))
        spread = max(spread, np.abs(s.u - s.u[0]).max())
    return worst < 1e-9 and spread < 1e-10, f"oracle mismatch {worst:.1e}, spread {spread:.1e}"


def _ode_euler(u, r, k, coeff, area):
    g = coeff.kappa * (u @ u) * u
    sF = math.sqrt(0.25 * coeff.kappa * ((u @ u) ** 2 + 1.0) * area)
    W = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    A = np.zeros((7, 7))
    A[:3, :3] = np.eye(3) / k
    A[:3, 3:6] = coeff.gamma * W - coeff.alpha * np.eye(3)
    A[3:6, :3] = coeff.kappa * coeff.mu * np.eye(3)
    A[3:6, 3:6] = np.eye(3)
    A[3:6, 6] = g / sF
    A[6, :3] = -area * g / (2 * sF)
    A[6, 6] = 1.0
    b = np.concatenate([u / k, np.zeros(3), [r - area * (g @ u) / (2 * sF)]])
    x = np.linalg.solve(A, b)
    return x[:3], x[6]


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "mass matrix SPD": _mass_spd,
    "stiffness annihilates constants": _stiffness_kernel,
    "cross matrix skew-symmetric": _cross_skew,
    "L2/Ritz projections": _projections,
    "quadrature exact to degree 4": _quadrature,
    "bordered solve equals dense solve": _bordered_vs_dense,
    "constant-field Euler oracle": _constant_oracle,
}


def run_checks() -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
