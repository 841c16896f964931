"""Sparse solvers and the scalar-bordered block elimination used per time step.

Matrices are ``scipy.sparse`` CSR/CSC objects; residuals are always checked
after a solve and reported as ``||b - A x|| / ||b||``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-10
LU_SIZE_LIMIT = 6 * 20_000


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class NonConvergenceError(SolverError):
    """Krylov iteration hit its cap or stagnated above the tolerance."""


class SingularMatrixError(SolverError):
    """Factorisation detected an exactly singular matrix."""


class BorderedBreakdownError(SolverError):
    """Scalar Schur denominator vanished."""

    def __init__(self, message: str, denominator: float):
        super().__init__(message)
        self.denominator = denominator


def relative_residual(A, x: np.ndarray, b: np.ndarray) -> float:
    r = b - A @ x
    nb = np.linalg.norm(b)
    nr = np.linalg.norm(r)
    return float(nr / nb) if nb > 0 else float(nr)


def solve_spd(A, b: np.ndarray, tol: float = DEFAULT_TOL, maxiter: int | None = None) -> np.ndarray:
    """Conjugate gradients with a Jacobi preconditioner.

    ``b`` may be a matrix; columns are solved independently.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if b.ndim == 2:
        return np.column_stack([solve_spd(A, b[:, j], tol, maxiter) for j in range(b.shape[1])])
    if not np.any(b):
        return np.zeros_like(b)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a non-positive diagonal; not SPD")
    P = sp.diags(1.0 / d)
    maxiter = maxiter or 10 * A.shape[0] + 100
    # target slightly below tol so the true residual check below passes
    x, info = spla.cg(A, b, rtol=0.1 * tol, atol=0.0, maxiter=maxiter, M=P)
    res = relative_residual(A, x, b)
    if res > tol:
        raise NonConvergenceError(
            f"CG stopped (info={info}) with relative residual {res:.3e} > {tol:.1e}", res
        )
    return x


class Factorization:
    """Solver for one nonsymmetric matrix: sparse LU or ILU-preconditioned GMRES.

    ``perm`` is an optional symmetric fill-reducing permutation. With it the
    LU keeps that ordering and prefers diagonal pivots; should the residual
    then fail the check, the matrix is refactored with SuperLU's own
    ordering and partial pivoting.
    """

    def __init__(self, A, method: str = "auto", tol: float = DEFAULT_TOL,
                 perm: np.ndarray | None = None, restart: int = 50, maxiter: int = 200):
        self.A = sp.csc_matrix(A)
        n = self.A.shape[0]
        if method == "auto":
            method = "lu" if n <= LU_SIZE_LIMIT else "gmres"
        if method not in ("lu", "gmres"):
            raise ValueError(f"unknown solver method {method!r}")
        self.method = method
        self.tol = tol
        self.restart = restart
        self.maxiter = maxiter
        self._plu = None
        self._perm = None if perm is None else np.asarray(perm)
        if self._perm is not None and len(self._perm) != n:
            raise ValueError("permutation length does not match the matrix")
        self._factor()

    def _factor(self, robust: bool = False) -> None:
        try:
            if self.method == "gmres":
                self._ilu = spla.spilu(self.A, drop_tol=1e-5, fill_factor=20)
            elif self._perm is None or robust:
                self._plu = None
                self._lu = spla.splu(self.A)
            else:
                p = self._perm
                self._plu = spla.splu(self.A[p][:, p].tocsc(), permc_spec="NATURAL",
                                      diag_pivot_thresh=0.0)
                self._inv = np.empty_like(p)
                self._inv[p] = np.arange(len(p))
        except RuntimeError as exc:
            raise SingularMatrixError(f"factorisation failed: {exc}") from exc

    def _lu_solve(self, b: np.ndarray) -> np.ndarray:
        if self._plu is not None:
            p = self._perm
            return self._plu.solve(b[p])[self._inv]
        return self._lu.solve(b)

    def apply(self, b: np.ndarray) -> np.ndarray:
        """One application of the factorisation, without residual checks."""
        if self.method == "lu":
            return self._lu_solve(np.asarray(b, dtype=float))
        return self._ilu.solve(np.asarray(b, dtype=float))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            if self.method == "lu":
                return self._refine(self._lu_solve(b), b)
            return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])
        if not np.any(b):
            return np.zeros_like(b)
        if self.method == "lu":
            return self._refine(self._lu_solve(b), b)
        return self.krylov(self.A, b)

    def krylov(self, A, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        """GMRES on ``A`` preconditioned by this factorisation."""
        P = spla.LinearOperator(self.A.shape, self.apply)
        x, info = spla.gmres(A, b, x0=x0, rtol=0.1 * self.tol, atol=0.0, restart=self.restart,
                             maxiter=self.maxiter, M=P)
        res = relative_residual(A, x, b)
        if res > self.tol:
            raise NonConvergenceError(
                f"GMRES stagnated (info={info}) at relative residual {res:.3e}", res
            )
        return x

    def _refine(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        for attempt in range(2):
            ok = np.all(np.isfinite(x))
            res = _columns_residual(self.A, x, b) if ok else np.inf
            for _ in range(3):
                if res <= self.tol:
                    return x
                x = x + self._lu_solve(b - self.A @ x)
                res = _columns_residual(self.A, x, b)
            if res <= self.tol:
                return x
            if attempt == 0 and self._plu is not None:
                self._factor(robust=True)
                x = self._lu_solve(b)
            else:
                break
        raise NonConvergenceError(f"LU residual {res:.3e} above {self.tol:.1e} after refinement",
                                  res)


def _columns_residual(A, x: np.ndarray, b: np.ndarray) -> float:
    if b.ndim == 1:
        return relative_residual(A, x, b)
    return max(relative_residual(A, x[:, j], b[:, j]) for j in range(b.shape[1]))


class ReusableSolver:
    """Solve a sequence of nearby matrices, refactoring only when needed.

    The last factorisation serves as a preconditioner (defect correction for
    LU, GMRES for ILU) for the next matrix; when that fails to reach the
    target residual within a few sweeps a fresh factorisation is made.
    Every returned solution meets ``tol``.
    """

    def __init__(self, method: str = "auto", tol: float = DEFAULT_TOL,
                 perm: np.ndarray | None = None, sweeps: int = 8):
        self.method = method
        self.tol = tol
        self.perm = perm
        self.sweeps = sweeps
        self.factorizations = 0
        self._fac: Factorization | None = None

    def __call__(self, A, B: np.ndarray) -> np.ndarray:
        A = sp.csc_matrix(A)
        fac = self._fac
        if fac is not None and fac.A.shape == A.shape:
            X = self._reuse(fac, A, B)
            if X is not None:
                return X
        self._fac = Factorization(A, method=self.method, tol=self.tol, perm=self.perm)
        self.factorizations += 1
        return self._fac.solve(B)

    def _reuse(self, fac: Factorization, A, B: np.ndarray):
        if fac.method == "gmres":
            try:
                return np.column_stack([fac.krylov(A, B[:, j]) for j in range(B.shape[1])])
            except NonConvergenceError:
                return None
        # stay well inside tol so reuse never becomes the accuracy bottleneck
        target = 0.01 * self.tol
        X = fac.apply(B)
        res = _columns_residual(A, X, B)
        if not res < 0.5:
            return None
        for _ in range(self.sweeps):
            if res <= target:
                return X
            X = X + fac.apply(B - A @ X)
            new = _columns_residual(A, X, B)
            if not np.isfinite(new) or new > 0.5 * res:
                return None
            res = new
        return X if res <= target else None


def solve_general(A, b: np.ndarray, tol: float = DEFAULT_TOL, method: str = "auto") -> np.ndarray:
    """Solve a nonsingular (possibly nonsymmetric) sparse system."""
    return Factorization(A, method=method, tol=tol).solve(b)


@dataclass(frozen=True)
class BorderedSystem:
    """``[[A, b_col], [b_row^T, corner]] [x; s] = rhs``."""

    A: sp.spmatrix
    b_col: np.ndarray
    b_row: np.ndarray
    corner: float
    rhs: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("core block must be square")
        if self.b_col.shape != (n,) or self.b_row.shape != (n,) or self.rhs.shape != (n + 1,):
            raise ValueError("border or right-hand side has inconsistent length")

    def monolithic(self) -> sp.csr_matrix:
        return sp.bmat([
            [self.A, self.b_col[:, None]],
            [self.b_row[None, :], np.array([[self.corner]])],
        ], format="csr")


class BorderedSolution(NamedTuple):
    core: np.ndarray
    scalar: float
    denominator: float
    residual: float


def solve_bordered(system: BorderedSystem, tol: float = DEFAULT_TOL, method: str = "auto",
                   core_solver=None, min_denominator: float = 1e-14) -> BorderedSolution:
    """Eliminate the scalar unknown by its Schur complement.

    Solves ``A y1 = rhs_core`` and ``A y2 = b_col`` with one factorisation,
    then ``s = (rhs_s - b_row.y1) / (corner - b_row.y2)`` and
    ``x = y1 - s y2``. ``core_solver(A, B)`` may replace the default
    factorisation (e.g. a :class:`ReusableSolver`). The returned
    ``residual`` is that of the full bordered system.
    """
    n = system.A.shape[0]
    rhs_core, rhs_s = system.rhs[:n], system.rhs[n]
    if core_solver is None:
        core_solver = Factorization(system.A, method=method, tol=tol).solve
        y = core_solver(np.column_stack([rhs_core, system.b_col]))
    else:
        y = core_solver(system.A, np.column_stack([rhs_core, system.b_col]))
    y1, y2 = y[:, 0], y[:, 1]
    denom = system.corner - system.b_row @ y2
    scale = abs(system.corner) + np.linalg.norm(system.b_row) * np.linalg.norm(y2)
    if not np.isfinite(denom) or abs(denom) <= min_denominator * max(scale, 1.0):
        raise BorderedBreakdownError(f"Schur denominator {denom:.3e} is numerically zero", denom)
    s = (rhs_s - system.b_row @ y1) / denom
    x = y1 - s * y2

    full = system.A @ x + s * system.b_col
    r = np.append(rhs_core - full, rhs_s - system.b_row @ x - system.corner * s)
    nb = np.linalg.norm(system.rhs)
    res = float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))
    if res > tol:
        raise NonConvergenceError(f"bordered solve residual {res:.3e} above {tol:.1e}", res)
    return BorderedSolution(x, float(s), float(denom), res)


def export_matrix(path, A, comment: str = "") -> None:
    """Write a sparse matrix as MatrixMarket text."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def import_matrix(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))
