"""P1 finite element operators on a structured triangulation.

Vector fields are stored as ``(N_v, 3)`` arrays; their flattened form is the
interleaved layout ``3 * node + component`` used by all 3N-sized operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linalg import Factorization, solve_spd
from .mesh import Mesh, nested_dissection
from .quadrature import DEFAULT_RULE, TriangleRule

PROJECTION_TOL = 1e-12


@dataclass(frozen=True)
class Coefficients:
    """Material coefficients of the LLB system.

    gamma: gyromagnetic ratio, alpha: damping, sigma: exchange weight,
    kappa: inverse longitudinal susceptibility (times 1/2), mu: equilibrium
    magnitude parameter.
    """

    gamma: float
    alpha: float
    sigma: float = 1.0
    kappa: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "alpha", "sigma", "kappa", "mu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"coefficient {name} must be positive, got {v!r}")


@dataclass(frozen=True)
class FieldFunction:
    """A vector field given analytically, with its Jacobian.

    ``value(x, y)`` returns ``(..., 3)``; ``grad(x, y)`` returns
    ``(..., 3, 2)`` with ``[..., a, d] = d u_a / d x_d``.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __call__(self, x, y):
        return self.value(x, y)


class _Scatter:
    """Fixed COO pattern summed into CSR, reusable for new values."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        key = rows.astype(np.int64) * shape[1] + cols
        uniq, self._inv = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, shape[1])
        self._indices = c.astype(np.int32)
        self._indptr = np.zeros(shape[0] + 1, dtype=np.int32)
        np.cumsum(np.bincount(r, minlength=shape[0]), out=self._indptr[1:])
        self.shape = shape
        self.nnz = len(uniq)

    def __call__(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._inv, weights=values, minlength=self.nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=self.shape)


# nonzero Levi-Civita entries eps[a, g, b]: (w x e_b)_a = eps[a, g, b] w_g
_CROSS_TERMS = (
    (0, 1, 2, 1.0), (0, 2, 1, -1.0),
    (1, 0, 2, -1.0), (1, 2, 0, 1.0),
    (2, 0, 1, 1.0), (2, 1, 0, -1.0),
)


class FemOperators:
    """Assembled scalar mass/stiffness matrices and quadrature data of one mesh.

    ``M3``/``K3`` act on interleaved 3-vector fields. The object is meant to
    be treated as read-only once built.
    """

    def __init__(self, mesh: Mesh, M: sp.csr_matrix, K: sp.csr_matrix, quad: TriangleRule,
                 areas: np.ndarray, grads: np.ndarray):
        self.mesh = mesh
        self.M = M
        self.K = K
        self.quad = quad
        self.areas = areas
        self.grads = grads

    @property
    def mesh_ref(self) -> Mesh:
        return self.mesh

    @property
    def num_nodes(self) -> int:
        return self.mesh.num_nodes

    @cached_property
    def M3(self) -> sp.csr_matrix:
        return sp.kron(self.M, sp.identity(3), format="csr")

    @cached_property
    def K3(self) -> sp.csr_matrix:
        return sp.kron(self.K, sp.identity(3), format="csr")

    @cached_property
    def node_ordering(self) -> np.ndarray:
        """Fill-reducing node permutation for direct solves."""
        return nested_dissection(self.mesh)

    @cached_property
    def lumped(self) -> np.ndarray:
        """Integrals of the hat functions."""
        return np.asarray(self.M.sum(axis=1)).ravel()

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Physical quadrature points, ``(N_t, N_q, 2)``."""
        p = self.mesh.nodes[self.mesh.triangles]
        return np.einsum("qm,emd->eqd", self.quad.points, p)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Physical quadrature weights, ``(N_t, N_q)``."""
        return self.areas[:, None] * self.quad.weights[None, :]

    @cached_property
    def triple_product(self) -> np.ndarray:
        """``T[m, i, j] = |K|^-1 * int_K phi_m phi_i phi_j`` on any triangle."""
        lam = self.quad.points
        return np.einsum("q,qm,qi,qj->mij", self.quad.weights, lam, lam, lam)

    @cached_property
    def _cross_scatter(self) -> _Scatter:
        tri = self.mesh.triangles
        rows, cols = [], []
        for a, _, b, _ in _CROSS_TERMS:
            rows.append(3 * tri[:, :, None] + a + 0 * tri[:, None, :])
            cols.append(3 * tri[:, None, :] + b + 0 * tri[:, :, None])
        n3 = 3 * self.num_nodes
        return _Scatter(np.concatenate([r.ravel() for r in rows]),
                        np.concatenate([c.ravel() for c in cols]), (n3, n3))

    def at_quad(self, values: np.ndarray) -> np.ndarray:
        """Evaluate a nodal field's P1 interpolant at the quadrature points."""
        values = np.asarray(values, dtype=float)
        return np.einsum("qm,em...->eq...", self.quad.points, values[self.mesh.triangles])

    def integrate(self, f_quad: np.ndarray) -> np.ndarray:
        """Integrate values sampled at quadrature points over the domain."""
        return np.einsum("eq,eq...->...", self.quad_weights, f_quad)

    def load(self, f_quad: np.ndarray) -> np.ndarray:
        """``b[i, ...] = int f phi_i`` for ``f`` sampled at quadrature points."""
        local = np.einsum("eq,qi,eq...->ei...", self.quad_weights, self.quad.points, f_quad)
        out = np.zeros((self.num_nodes,) + local.shape[2:])
        np.add.at(out, self.mesh.triangles, local)
        return out

    def mass_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """L2 inner product of two nodal vector fields."""
        return float(np.sum(np.asarray(u) * (self.M @ np.asarray(v))))

    def stiffness_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(np.asarray(u) * (self.K @ np.asarray(v))))


def assemble_mass_stiffness(mesh: Mesh, quad: TriangleRule = DEFAULT_RULE) -> FemOperators:
    """Consistent mass and stiffness matrices of the scalar P1 space."""
    tri = mesh.triangles
    p = mesh.nodes[tri]
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise ValueError("mesh has non-positive triangle areas")
    # gradients of barycentric coordinates, (N_t, 3, 2)
    x, y = p[..., 0], p[..., 1]
    grads = np.stack([
        np.stack([y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]], axis=-1),
        np.stack([y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]], axis=-1),
        np.stack([y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]], axis=-1),
    ], axis=1) / (2.0 * areas[:, None, None])

    lam = quad.points
    ref_mass = np.einsum("q,qi,qj->ij", quad.weights, lam, lam)
    m_loc = areas[:, None, None] * ref_mass[None]
    k_loc = areas[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)

    rows = np.broadcast_to(tri[:, :, None], (len(tri), 3, 3)).ravel()
    cols = np.broadcast_to(tri[:, None, :], (len(tri), 3, 3)).ravel()
    shape = (mesh.num_nodes, mesh.num_nodes)
    scatter = _Scatter(rows, cols, shape)
    M = scatter(m_loc.ravel())
    K = scatter(k_loc.ravel())
    return FemOperators(mesh, M, K, quad, areas, grads)


def element_mass(area: float, quad: TriangleRule = DEFAULT_RULE) -> np.ndarray:
    lam = quad.points
    return area * np.einsum("q,qi,qj->ij", quad.weights, lam, lam)


def _as_field(w: np.ndarray, ops: FemOperators) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size != 3 * ops.num_nodes:
        raise ValueError(f"field has {w.size} entries, mesh needs {3 * ops.num_nodes}")
    return w.reshape(ops.num_nodes, 3)


def cross_matrix(w: np.ndarray, ops: FemOperators) -> sp.csr_matrix:
    """Matrix of ``v -> <w x v, phi>`` on the interleaved vector space.

    ``C[3i+a, 3j+b] = int (w x phi_j e_b) . phi_i e_a``; skew-symmetric.
    """
    w = _as_field(w, ops)
    # W[e, g, i, j] = int_K w_g phi_i phi_j, exact via the triple-product table
    W = ops.areas[:, None, None, None] * np.einsum(
        "emg,mij->egij", w[ops.mesh.triangles], ops.triple_product
    )
    vals = [sign * W[:, g] for _, g, _, sign in _CROSS_TERMS]
    return ops._cross_scatter(np.concatenate([v.ravel() for v in vals]))


def sav_load_vector(w: np.ndarray, coeff: Coefficients, ops: FemOperators):
    """Return ``(G, F)`` with ``G = <kappa |w|^2 w, phi>`` and ``F[w]``.

    ``G`` is the flat interleaved 3N vector; both are integrated from the P1
    interpolant at quadrature points.
    """
    w = _as_field(w, ops)
    wq = ops.at_quad(w)
    s = np.sum(wq * wq, axis=-1)
    G = ops.load(coeff.kappa * s[..., None] * wq).ravel()
    F = float(ops.integrate(0.25 * coeff.kappa * (s * s + 1.0)))
    return G, F


def _sample(f, ops: FemOperators) -> np.ndarray:
    q = ops.quad_points
    out = np.asarray(f(q[..., 0], q[..., 1]), dtype=float)
    if out.shape != q.shape[:2] + (3,):
        out = np.broadcast_to(out, q.shape[:2] + (3,))
    return out


def l2_project(f, ops: FemOperators, tol: float = PROJECTION_TOL) -> np.ndarray:
    """Orthogonal L2 projection onto P1 vector fields.

    ``f`` is a callable ``f(x, y) -> (..., 3)``, an array of values at the
    quadrature points, or a nodal field (projected exactly onto itself).
    """
    if callable(f):
        b = ops.load(_sample(f, ops))
    else:
        f = np.asarray(f, dtype=float)
        if f.shape == ops.quad_points.shape[:2] + (3,):
            b = ops.load(f)
        else:
            b = ops.M @ _as_field(f, ops)
    return solve_spd(ops.M, b, tol=tol)


def ritz_project(v: FieldFunction, ops: FemOperators, tol: float = PROJECTION_TOL) -> np.ndarray:
    """Ritz (H1) projection with the mean of each component preserved."""
    if v.grad is None:
        raise ValueError("Ritz projection needs the field's gradient")
    q = ops.quad_points
    gq = np.asarray(v.grad(q[..., 0], q[..., 1]), dtype=float)
    gq = np.broadcast_to(gq, q.shape[:2] + (3, 2))
    # b[i, a] = int grad v_a . grad phi_i
    local = np.einsum("eq,eqad,eid->eia", ops.quad_weights, gq, ops.grads)
    b = np.zeros((ops.num_nodes, 3))
    np.add.at(b, ops.mesh.triangles, local)
    means = ops.integrate(_sample(v.value, ops))

    m = ops.lumped
    A = sp.bmat([[ops.K, m[:, None]], [m[None, :], None]], format="csc")
    rhs = np.vstack([b, means[None, :]])
    x = Factorization(A, method="lu", tol=tol).solve(rhs)
    return x[:-1]


def discrete_laplacian_apply(v: np.ndarray, ops: FemOperators, tol: float = PROJECTION_TOL) -> np.ndarray:
    """Return ``w`` in P1 with ``<w, chi> = -<grad v, grad chi>`` for all ``chi``."""
    v = _as_field(v, ops)
    return solve_spd(ops.M, -(ops.K @ v), tol=tol)


def interpolate(f, mesh: Mesh) -> np.ndarray:
    """Nodal interpolant of ``f(x, y) -> (..., 3)``."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return np.broadcast_to(np.asarray(f(x, y), dtype=float), (mesh.num_nodes, 3)).copy()
