"""Structured triangulations of rectangles with nested uniform refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of an axis-aligned rectangle.

    Nodes are ordered lexicographically by (y, x); every grid square is
    split along its south-west to north-east diagonal, so triangles are
    counterclockwise.

    Attributes
    ----------
    nodes : (N_v, 2) float array
    triangles : (N_t, 3) int array
    h : float
        Maximal edge length (the cell diagonal).
    level : int
        Number of refinements applied to the initial mesh.
    domain : tuple
        ``(x_min, x_max, y_min, y_max)``.
    n : int
        Cells per side.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    h: float
    level: int
    domain: tuple[float, float, float, float]
    n: int

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_structured(domain, n: int, level: int = 0) -> Mesh:
    """Split an ``n`` x ``n`` grid of the rectangle into ``2 n^2`` triangles."""
    x0, x1, y0, y1 = (float(v) for v in domain)
    if int(n) != n or n < 1:
        raise ValueError(f"cells per side must be a positive integer, got {n!r}")
    n = int(n)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain!r}")

    xs = _grid(x0, x1, n)
    ys = _grid(y0, y1, n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    sw = (j * (n + 1) + i).ravel()
    se = sw + 1
    nw = sw + (n + 1)
    ne = nw + 1
    lower = np.column_stack([sw, se, ne])
    upper = np.column_stack([sw, ne, nw])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    nodes.setflags(write=False)
    triangles.setflags(write=False)
    h = float(np.hypot((x1 - x0) / n, (y1 - y0) / n))
    return Mesh(nodes, triangles, h, level, (x0, x1, y0, y1), n)


def _grid(a: float, b: float, n: int) -> np.ndarray:
    # (2i)/(2n) rounds to the same double as i/n, so coarse coordinates are
    # reproduced bit-for-bit after refinement
    i = np.arange(n + 1, dtype=float)
    return a + (b - a) * (i / n)


def refine(mesh: Mesh) -> Mesh:
    """Return the structured mesh with twice as many cells per side."""
    fine = build_structured(mesh.domain, 2 * mesh.n, level=mesh.level + 1)
    idx = coarse_node_indices(mesh, fine)
    if not np.array_equal(fine.nodes[idx], mesh.nodes):
        raise RuntimeError("refined mesh is not nested")
    return fine


def coarse_node_indices(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Indices of the coarse nodes within the fine node list."""
    _check_pair(coarse, fine)
    n = coarse.n
    j, i = np.divmod(np.arange(coarse.num_nodes), n + 1)
    return (2 * j) * (2 * n + 1) + 2 * i


def _check_pair(coarse: Mesh, fine: Mesh) -> None:
    if fine.n != 2 * coarse.n or fine.domain != coarse.domain:
        raise ValueError(
            f"fine mesh (n={fine.n}) is not the refinement of coarse mesh (n={coarse.n})"
        )


def prolong(coarse: Mesh, fine: Mesh, values: np.ndarray) -> np.ndarray:
    """Inject a coarse P1 field into the refined P1 space.

    ``values`` has one row per coarse node (any trailing shape). Shared
    nodes copy, new nodes on coarse edges (including each square's
    diagonal) take the mean of the edge endpoints.
    """
    _check_pair(coarse, fine)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != coarse.num_nodes:
        raise ValueError(
            f"expected {coarse.num_nodes} coarse values, got {values.shape[0]}"
        )
    n = coarse.n
    c = values.reshape((n + 1, n + 1) + values.shape[1:])
    out = np.empty((2 * n + 1, 2 * n + 1) + values.shape[1:])
    out[0::2, 0::2] = c
    out[0::2, 1::2] = 0.5 * (c[:, :-1] + c[:, 1:])
    out[1::2, 0::2] = 0.5 * (c[:-1, :] + c[1:, :])
    # centre of each square lies on its SW-NE diagonal
    out[1::2, 1::2] = 0.5 * (c[:-1, :-1] + c[1:, 1:])
    return out.reshape((fine.num_nodes,) + values.shape[1:])


def edges(mesh: Mesh) -> np.ndarray:
    """Unique undirected edges as sorted node pairs."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def write_mesh_vtk(mesh: Mesh, path, point_data: dict | None = None) -> None:
    """Write the mesh (and optional nodal 3-vectors) as legacy ASCII VTK."""
    from .io import write_vtk

    write_vtk(path, mesh, point_data or {})


def nested_dissection(mesh: Mesh, leaf: int = 8) -> np.ndarray:
    """Fill-reducing node ordering for the structured grid.

    Recursively splits the node lattice along its middle grid line, ordering
    both halves before the separator.
    """
    n = mesh.n
    parts = []

    def split(i0, i1, j0, j1):
        w, h = i1 - i0 + 1, j1 - j0 + 1
        if w * h <= leaf * leaf or (w < 3 and h < 3):
            jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij")
            parts.append((jj * (n + 1) + ii).ravel())
        elif w >= h:
            m = (i0 + i1) // 2
            split(i0, m - 1, j0, j1)
            split(m + 1, i1, j0, j1)
            parts.append(np.arange(j0, j1 + 1) * (n + 1) + m)
        else:
            m = (j0 + j1) // 2
            split(i0, i1, j0, m - 1)
            split(i0, i1, m + 1, j1)
            parts.append(m * (n + 1) + np.arange(i0, i1 + 1))

    split(0, n, 0, n)
    return np.concatenate(parts)
