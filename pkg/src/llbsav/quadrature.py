"""Symmetric quadrature on triangles in barycentric coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature rule on a triangle.

    ``points`` are barycentric coordinates (rows sum to one) and
    ``weights`` sum to one, so that ``area * weights @ f(points)``
    approximates the integral over any triangle.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)


def _orbit_s21(a: float) -> np.ndarray:
    b = 1.0 - 2.0 * a
    return np.array([[b, a, a], [a, b, a], [a, a, b]])


def dunavant6() -> TriangleRule:
    """Six-point rule exact for polynomials of total degree 4."""
    a1, w1 = 0.445948490915964886318329253883, 0.223381589678011465944827806159
    a2, w2 = 0.091576213509770743459571463402, 0.109951743655321867388505527175
    points = np.vstack([_orbit_s21(a1), _orbit_s21(a2)])
    weights = np.array([w1] * 3 + [w2] * 3)
    return TriangleRule(points, weights, 4)


DEFAULT_RULE = dunavant6()
