"""Triangle and edge quadrature rules.

Triangle rules are tensor Gauss-Legendre rules collapsed onto the reference
triangle {x, y >= 0, x + y <= 1} (Duffy transform). They exist for every degree,
have positive weights, and need no tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

from lsfem.exceptions import QuadratureError

MAX_TRIANGLE_DEGREE = 24
MAX_EDGE_DEGREE = 40

# Reference triangle vertices; barycentric coordinate i belongs to vertex i.
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """A quadrature rule in barycentric coordinates.

    Attributes:
        points: Barycentric coordinates, shape (nq, 3) on triangles and (nq, 2)
            on edges
        weights: Positive weights summing to the reference measure (1/2 on the
            triangle, 1 on the unit interval)
        degree: Polynomial degree integrated exactly
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def coords(self) -> np.ndarray:
        """Reference coordinates: (nq, 2) points on triangles, (nq,) on edges."""
        if self.points.shape[1] == 3:
            return self.points[:, 1:]
        return self.points[:, 1]


def _gauss01(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = legendre.leggauss(npoints)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials up to ``degree``.

    Raises:
        QuadratureError: If degree is outside 0..40
    """
    if not 0 <= degree <= MAX_EDGE_DEGREE:
        raise QuadratureError(
            f"edge quadrature degree must be in 0..{MAX_EDGE_DEGREE}, got {degree}"
        )
    t, w = _gauss01(degree // 2 + 1)
    points = np.column_stack([1.0 - t, t])
    return QuadratureRule(_frozen(points), _frozen(w), degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle exact up to ``degree``.

    The square [0,1]² is mapped by (s, t) -> (s, t(1 - s)); the Jacobian factor
    (1 - s) raises the degree in s by one, hence (degree + 3) // 2 points per
    direction.

    Raises:
        QuadratureError: If degree is outside 0..24
    """
    if not 0 <= degree <= MAX_TRIANGLE_DEGREE:
        raise QuadratureError(
            f"triangle quadrature degree must be in 0..{MAX_TRIANGLE_DEGREE}, "
            f"got {degree}"
        )
    npoints = (degree + 3) // 2
    s, ws = _gauss01(npoints)
    t, wt = _gauss01(npoints)
    S, T = np.meshgrid(s, t, indexing="ij")
    x = S.ravel()
    y = (T * (1.0 - S)).ravel()
    weights = (np.outer(ws, wt) * (1.0 - S)).ravel()
    points = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(_frozen(points), _frozen(weights), degree)


def _split_reference(triangles: list[np.ndarray]) -> list[np.ndarray]:
    children = []
    for a, b, c in triangles:
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        children.extend(
            [
                np.array([a, ab, ca]),
                np.array([ab, b, bc]),
                np.array([ca, bc, c]),
                np.array([bc, ca, ab]),
            ]
        )
    return children


@lru_cache(maxsize=None)
def refined_triangle_rule(degree: int, levels: int) -> QuadratureRule:
    """Composite rule: ``triangle_rule(degree)`` on 4**levels congruent subtriangles.

    Used where an integrand is only piecewise smooth at element scale, e.g. for
    elements touching the line of a singular exact solution.
    """
    base = triangle_rule(degree)
    if levels <= 0:
        return base
    cells = [REFERENCE_VERTICES.copy()]
    for _ in range(levels):
        cells = _split_reference(cells)
    scale = 0.25**levels
    xy = []
    for a, b, c in cells:
        jac = np.column_stack([b - a, c - a])
        xy.append(a + base.coords @ jac.T)
    coords = np.concatenate(xy)
    weights = np.tile(base.weights * scale, len(cells))
    points = np.column_stack([1.0 - coords[:, 0] - coords[:, 1], coords])
    return QuadratureRule(_frozen(points), _frozen(weights), degree)
