"""Structured triangulations of the unit square."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError

BOUNDARY_TOL = 1e-12

LID = 1
WALL = 2
INTERIOR = 0


@dataclass(frozen=True)
class TriMesh:
    """Uniform triangulation of [0,1]^2 with every cell cut along the same diagonal.

    Triangles are stored counter-clockwise. Edges are unique sorted vertex pairs.
    Boundary tags are ``LID`` for entities on ``y = 1`` (corners included) and
    ``WALL`` for the rest of the boundary.
    """

    nx: int
    ny: int
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_midpoints: np.ndarray
    triangle_edges: np.ndarray
    boundary_vertex: np.ndarray
    boundary_edge: np.ndarray
    vertex_tag: np.ndarray
    edge_tag: np.ndarray
    _areas: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    def signed_areas(self) -> np.ndarray:
        return self._areas

    def descriptor(self) -> str:
        return f"uniform-{self.nx}x{self.ny}-diag-ll-ur"

    def to_csv(self, directory) -> tuple[Path, Path]:
        """Write ``vertices.csv`` and ``triangles.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        vpath = directory / "vertices.csv"
        tpath = directory / "triangles.csv"
        with open(vpath, "w") as fh:
            fh.write("index,x,y,boundary,tag\n")
            for k, (x, y) in enumerate(self.vertices):
                fh.write(f"{k},{x:.17g},{y:.17g},{int(self.boundary_vertex[k])},"
                         f"{_tag_name(self.vertex_tag[k])}\n")
        with open(tpath, "w") as fh:
            fh.write("index,v0,v1,v2\n")
            for k, (a, b, c) in enumerate(self.triangles):
                fh.write(f"{k},{a},{b},{c}\n")
        return vpath, tpath


def _tag_name(tag: int) -> str:
    return {INTERIOR: "interior", LID: "lid", WALL: "wall"}[int(tag)]


def _classify(points: np.ndarray):
    x, y = points[:, 0], points[:, 1]
    on_lid = np.abs(y - 1.0) <= BOUNDARY_TOL
    on_bnd = (
        (np.abs(x) <= BOUNDARY_TOL) | (np.abs(x - 1.0) <= BOUNDARY_TOL)
        | (np.abs(y) <= BOUNDARY_TOL) | on_lid
    )
    tag = np.where(on_lid, LID, np.where(on_bnd, WALL, INTERIOR))
    return on_bnd, tag


def build_uniform(nx: int, ny: int) -> TriMesh:
    """Triangulate the unit square with ``nx * ny`` vertices.

    Each of the ``(nx-1)(ny-1)`` cells is split along its lower-left to
    upper-right diagonal.
    """
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ConfigurationError(f"mesh needs nx, ny >= 2 (got {nx}, {ny})")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    i, j = i.ravel(), j.ravel()
    a = j * nx + i
    b = a + 1
    c = a + nx + 1
    d = a + nx
    # cell-major ordering: lower triangle then upper triangle of each cell
    triangles = np.empty((2 * len(a), 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    local = np.array([[0, 1], [1, 2], [2, 0]])
    all_edges = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    triangle_edges = inverse.reshape(-1, 3)
    edge_midpoints = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])

    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    areas = 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                   - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))

    bv, vtag = _classify(vertices)
    be, etag = _classify(edge_midpoints)
    return TriMesh(nx, ny, vertices, triangles, edges, edge_midpoints,
                   triangle_edges, bv, be, vtag, etag, areas)


def barycentric(m: TriMesh, tri: int, x) -> np.ndarray:
    p = m.vertices[m.triangles[tri]]
    T = np.array([[p[1, 0] - p[0, 0], p[2, 0] - p[0, 0]],
                  [p[1, 1] - p[0, 1], p[2, 1] - p[0, 1]]])
    l12 = np.linalg.solve(T, np.asarray(x, dtype=float) - p[0])
    return np.array([1.0 - l12.sum(), l12[0], l12[1]])


def locate_point(m: TriMesh, x) -> tuple[int, np.ndarray]:
    """Return the index of a triangle containing ``x`` and its barycentric coordinates."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise DomainError(f"not a 2D point: {x!r}")
    if np.any(x < -BOUNDARY_TOL) or np.any(x > 1.0 + BOUNDARY_TOL):
        raise DomainError(f"point {tuple(x)} lies outside the unit square")
    sx = min(max(x[0], 0.0), 1.0) * (m.nx - 1)
    sy = min(max(x[1], 0.0), 1.0) * (m.ny - 1)
    i = min(int(np.floor(sx)), m.nx - 2)
    j = min(int(np.floor(sy)), m.ny - 2)
    cell = j * (m.nx - 1) + i
    tri = 2 * cell if (sx - i) >= (sy - j) else 2 * cell + 1
    lam = barycentric(m, tri, x)
    if lam.min() < 0.0:
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum()
    return tri, lam


def inside(x, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Mask of points (..., 2) in the closed unit square."""
    x = np.asarray(x, dtype=float)
    return np.all((x >= -tol) & (x <= 1.0 + tol), axis=-1)


def locate_points(m: TriMesh, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``locate_point`` for (k, 2) points; all must lie in the square."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    if not np.all(inside(x)):
        raise DomainError("some points lie outside the unit square")
    sx = np.clip(x[:, 0], 0.0, 1.0) * (m.nx - 1)
    sy = np.clip(x[:, 1], 0.0, 1.0) * (m.ny - 1)
    i = np.minimum(np.floor(sx).astype(int), m.nx - 2)
    j = np.minimum(np.floor(sy).astype(int), m.ny - 2)
    cell = j * (m.nx - 1) + i
    tri = 2 * cell + ((sx - i) < (sy - j))
    p = m.vertices[m.triangles[tri]]                      # (k, 3, 2)
    e1, e2, d = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], x - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e2[:, 0] * e1[:, 1]
    l1 = (d[:, 0] * e2[:, 1] - e2[:, 0] * d[:, 1]) / det
    l2 = (e1[:, 0] * d[:, 1] - d[:, 0] * e1[:, 1]) / det
    lam = np.clip(np.stack([1.0 - l1 - l2, l1, l2], axis=1), 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    return tri, lam
