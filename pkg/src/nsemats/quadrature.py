"""Quadrature rules on the reference triangle and the unit interval."""

from dataclasses import dataclass

import numpy as np

__all__ = ["QuadratureRule", "triangle_rule", "gauss_interval",
           "p2_basis", "p2_basis_grad"]


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights summing to the
    reference-triangle area 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def triangle_rule() -> QuadratureRule:
    """Symmetric 7-point rule, exact for polynomials of degree 5."""
    r15 = np.sqrt(15.0)
    a1 = (6.0 - r15) / 21.0
    a2 = (6.0 + r15) / 21.0
    w1 = (155.0 - r15) / 1200.0
    w2 = (155.0 + r15) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w] * 3
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 5)


def gauss_interval(npts=3):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def p2_basis(lam):
    """P2 shape functions at barycentric points, shape (..., 6).

    Order: vertices 0, 1, 2, then midpoints of edges (1,2), (2,0), (0,1).
    """
    lam = np.asarray(lam, float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ], axis=-1)


def p2_basis_grad(lam):
    """Derivatives with respect to the barycentric coordinates, (..., 6, 3)."""
    lam = np.asarray(lam, float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    z = np.zeros_like(l0)
    rows = [
        (4 * l0 - 1, z, z),
        (z, 4 * l1 - 1, z),
        (z, z, 4 * l2 - 1),
        (z, 4 * l2, 4 * l1),
        (4 * l2, z, 4 * l0),
        (4 * l1, 4 * l0, z),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
