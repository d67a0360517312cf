"""Symmetric 7-point triangle rule and the P1/P2 Lagrange bases in barycentric form."""

import numpy as np

_s15 = np.sqrt(15.0)
_a1 = (6.0 - _s15) / 21.0
_a2 = (6.0 + _s15) / 21.0
_w1 = (155.0 - _s15) / 1200.0
_w2 = (155.0 + _s15) / 1200.0

# barycentric points; weights sum to 1 (multiply by the triangle area)
QUAD_POINTS = np.array([
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [_a1, _a1, 1.0 - 2.0 * _a1],
    [_a1, 1.0 - 2.0 * _a1, _a1],
    [1.0 - 2.0 * _a1, _a1, _a1],
    [_a2, _a2, 1.0 - 2.0 * _a2],
    [_a2, 1.0 - 2.0 * _a2, _a2],
    [1.0 - 2.0 * _a2, _a2, _a2],
])
QUAD_WEIGHTS = np.array([9.0 / 40.0, _w1, _w1, _w1, _w2, _w2, _w2])
QUAD_DEGREE = 5

# local P2 node order: three vertices, then midpoints of edges (0,1), (1,2), (2,0)
P2_EDGES = ((0, 1), (1, 2), (2, 0))


def p1_values(lam):
    """P1 shape functions at barycentric points ``lam`` of shape (..., 3)."""
    return np.asarray(lam, dtype=float).copy()


def p2_values(lam):
    lam = np.asarray(lam, dtype=float)
    out = np.empty(lam.shape[:-1] + (6,))
    for i in range(3):
        out[..., i] = lam[..., i] * (2.0 * lam[..., i] - 1.0)
    for k, (i, j) in enumerate(P2_EDGES):
        out[..., 3 + k] = 4.0 * lam[..., i] * lam[..., j]
    return out


def p2_barycentric_derivatives(lam):
    """Derivatives of the six P2 functions with respect to each barycentric coordinate.

    Returns an array of shape (..., 6, 3).
    """
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape[:-1] + (6, 3))
    for i in range(3):
        out[..., i, i] = 4.0 * lam[..., i] - 1.0
    for k, (i, j) in enumerate(P2_EDGES):
        out[..., 3 + k, i] = 4.0 * lam[..., j]
        out[..., 3 + k, j] = 4.0 * lam[..., i]
    return out


def barycentric_gradients(p):
    """Constant gradients of the barycentric coordinates on triangles ``p`` (T, 3, 2).

    Returns (T, 3, 2) and the signed areas (T,).
    """
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g = np.empty((len(p), 3, 2))
    g[:, 1, 0] = e2[:, 1] / det
    g[:, 1, 1] = -e2[:, 0] / det
    g[:, 2, 0] = -e1[:, 1] / det
    g[:, 2, 1] = e1[:, 0] / det
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g, 0.5 * det


def integrate(f, p):
    """Integrate ``f(x, y)`` over each triangle in ``p`` (T, 3, 2); returns (T,)."""
    g, area = barycentric_gradients(p)
    x = np.einsum("qk,tkd->tqd", QUAD_POINTS, p)
    vals = f(x[..., 0], x[..., 1])
    return area * (vals @ QUAD_WEIGHTS)
