"""Energies, norms and SAV consistency measures along trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import Coefficients, FemOperators, sav_load_vector
from .stepper import State, Trajectory


@dataclass(frozen=True)
class EnergyRecord:
    """Per-step energy diagnostics.

    ``E_hat`` is ``None`` for Euler trajectories and for the initial BDF2
    state, which has no predecessor.
    """

    step: int
    t: float
    E: float
    E_tilde: float
    E_hat: float | None
    H_norm_sq: float
    r: float
    r_drift: float

    @property
    def E_modified(self) -> float:
        """The energy the scheme dissipates (``E_hat`` when defined)."""
        return self.E_tilde if self.E_hat is None else self.E_hat


def _quadratic(u: np.ndarray, coeff: Coefficients, ops: FemOperators) -> float:
    u = np.asarray(u, dtype=float).reshape(ops.num_nodes, 3)
    return (0.5 * coeff.sigma * ops.stiffness_inner(u, u)
            + 0.5 * coeff.kappa * coeff.mu * ops.mass_inner(u, u))


def quartic_energy(u: np.ndarray, coeff: Coefficients, ops: FemOperators) -> float:
    """``F[u] = int kappa/4 (|u|^4 + 1)``."""
    return sav_load_vector(u, coeff, ops)[1]


def true_energy(u: np.ndarray, coeff: Coefficients, ops: FemOperators) -> float:
    """``(sigma/2)|grad u|^2 + (kappa mu/2)|u|^2 + F[u]``."""
    return _quadratic(u, coeff, ops) + quartic_energy(u, coeff, ops)


def true_energy_by_quadrature(u: np.ndarray, coeff: Coefficients, ops: FemOperators) -> float:
    """The same energy summed element by element at the quadrature points.

    Independent of the assembled matrices; used as a cross-check.
    """
    u = np.asarray(u, dtype=float).reshape(ops.num_nodes, 3)
    uq = ops.at_quad(u)
    # elementwise constant gradients: grads[e, i, d] of the local basis
    gu = np.einsum("eid,eia->ead", ops.grads, u[ops.mesh.triangles])
    s = np.einsum("ead,ead->e", gu, gu) * ops.areas
    m2 = np.einsum("eqa,eqa->eq", uq, uq)
    dens = 0.5 * coeff.kappa * coeff.mu * m2 + 0.25 * coeff.kappa * (m2 * m2 + 1.0)
    return float(0.5 * coeff.sigma * s.sum() + np.sum(ops.quad_weights * dens))


def modified_energy_euler(state: State, coeff: Coefficients, ops: FemOperators) -> float:
    return _quadratic(state.u, coeff, ops) + state.r ** 2


def modified_energy_bdf2(curr: State, prev: State, coeff: Coefficients, ops: FemOperators) -> float:
    """Two-level energy dissipated by the BDF2 scheme.

    Close to ``2 E`` for smooth trajectories (each half approximates ``E``).
    """
    ext = 2.0 * np.asarray(curr.u) - np.asarray(prev.u)
    r_ext = 2.0 * curr.r - prev.r
    return modified_energy_euler(curr, coeff, ops) + _quadratic(ext, coeff, ops) + r_ext ** 2


def norms(u: np.ndarray, ops: FemOperators) -> tuple[float, float, float]:
    """``(L2, H1, Linf)`` norms of a nodal field; ``Linf`` uses nodal values."""
    u = np.asarray(u, dtype=float).reshape(ops.num_nodes, 3)
    m = max(ops.mass_inner(u, u), 0.0)
    a = max(ops.stiffness_inner(u, u), 0.0)
    linf = float(np.max(np.linalg.norm(u, axis=1))) if len(u) else 0.0
    return math.sqrt(m), math.sqrt(m + a), linf


def energy_gap(state: State, coeff: Coefficients, ops: FemOperators,
               prev: State | None = None) -> float:
    """Distance between the scheme's modified energy and the true energy.

    With ``prev`` given the BDF2 energy is used, halved so that it is
    compared with ``E`` on the same scale.
    """
    E = true_energy(state.u, coeff, ops)
    if prev is None:
        return abs(modified_energy_euler(state, coeff, ops) - E)
    return abs(0.5 * modified_energy_bdf2(state, prev, coeff, ops) - E)


def h_norm_sq(H: np.ndarray, ops: FemOperators) -> float:
    return ops.mass_inner(H, H)


def energy_record(state: State, diag, coeff: Coefficients, ops: FemOperators,
                  prev: State | None = None) -> EnergyRecord:
    """Record for one state; pass ``prev`` to include the BDF2 energy."""
    F = quartic_energy(state.u, coeff, ops)
    E = _quadratic(state.u, coeff, ops) + F
    E_hat = modified_energy_bdf2(state, prev, coeff, ops) if prev is not None else None
    return EnergyRecord(state.step_index, state.t, E, modified_energy_euler(state, coeff, ops),
                        E_hat, h_norm_sq(diag.H, ops), state.r, abs(state.r - math.sqrt(F)))


def energy_records(traj: Trajectory, coeff: Coefficients, ops: FemOperators) -> list[EnergyRecord]:
    """One record per stored state of a trajectory."""
    bdf2 = traj.config.scheme == "bdf2"
    return [energy_record(s, d, coeff, ops, p if bdf2 else None)
            for s, d, p in zip(traj.states, traj.diagnostics, traj.previous)]
