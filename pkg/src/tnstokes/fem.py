"""Taylor-Hood (P2 velocity / P1 pressure) gradient discretisation on a TriMesh.

The discrete operators are realised as sparse matrices that map a full
velocity coefficient vector (boundary nodes included) to values at the
quadrature points:

* ``Pi``   rows ``2*pt + c``       -> component ``c`` of the velocity,
* ``Grad`` rows ``4*pt + 2*i + j`` -> ``d v_i / d x_j``,
* ``Chi``  rows ``pt``             -> pressure.

``pt = t * Q + q`` enumerates quadrature point ``q`` of triangle ``t``.
Velocity coefficients are component-blocked: ``dof = c * n_nodes + node``.
Because the element is conforming, gradient, symmetric gradient and divergence
are exact derivatives of the reconstructed velocity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import quadrature as qr
from .errors import DataError
from .mesh import TriMesh, locate_point, locate_points


@dataclass(frozen=True)
class FieldExpr:
    """Closed-form vector field on the unit square.

    ``value(x, y)`` returns a pair of arrays broadcast against ``x``;
    ``gradient(x, y)``, when given, returns ``[[du/dx, du/dy], [dv/dx, dv/dy]]``.
    """

    value: Callable
    gradient: Optional[Callable] = None
    name: str = "field"

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u, v = self.value(x, y)
        shape = np.broadcast_shapes(x.shape, y.shape)
        return np.stack([np.broadcast_to(u, shape), np.broadcast_to(v, shape)], axis=-1)

    def grad(self, x, y) -> np.ndarray:
        if self.gradient is None:
            raise DataError(f"{self.name}: no closed-form gradient")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        G = self.gradient(x, y)
        return np.stack([np.stack([np.broadcast_to(G[i][j], shape) for j in range(2)], -1)
                         for i in range(2)], -2)


def zero_field() -> FieldExpr:
    return FieldExpr(lambda x, y: (0.0 * x, 0.0 * y),
                     lambda x, y: ((0.0 * x, 0.0 * x), (0.0 * x, 0.0 * x)), name="zero")


class GradientDiscretisation:
    """Taylor-Hood realisation of the tuple (X_0, Y, grad, eps, chi, div, Pi)."""

    n_quad = len(qr.QUAD_WEIGHTS)

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        nv = mesh.n_vertices
        self.n_nodes = nv + mesh.n_edges
        self.node_coords = np.vstack([mesh.vertices, mesh.edge_midpoints])
        self.node_boundary = np.concatenate([mesh.boundary_vertex, mesh.boundary_edge])
        self.node_tag = np.concatenate([mesh.vertex_tag, mesh.edge_tag])
        self.tri_nodes = np.hstack([mesh.triangles, nv + mesh.triangle_edges])

        self.n_full = 2 * self.n_nodes
        bnd = np.concatenate([self.node_boundary, self.node_boundary])
        self.free_dofs = np.flatnonzero(~bnd)
        self.constrained_dofs = np.flatnonzero(bnd)
        self.full_to_free = np.full(self.n_full, -1, dtype=np.int64)
        self.full_to_free[self.free_dofs] = np.arange(len(self.free_dofs))
        self.dim_X0 = len(self.free_dofs)
        self.dim_Y = nv

        # velocity dof map: 12 full dofs per triangle, component-major
        self.velocity_dof_map = np.hstack([self.tri_nodes, self.n_nodes + self.tri_nodes])
        self.pressure_dof_map = mesh.triangles.copy()

        p = mesh.vertices[mesh.triangles]
        self._dlam, self.areas = qr.barycentric_gradients(p)
        T, Q = mesh.n_triangles, self.n_quad
        self.quad_x = np.einsum("qk,tkd->tqd", qr.QUAD_POINTS, p)
        self.quad_w = self.areas[:, None] * qr.QUAD_WEIGHTS[None, :]
        self.n_points = T * Q
        self.phi = qr.p2_values(qr.QUAD_POINTS)                # (Q, 6)
        self.psi = qr.p1_values(qr.QUAD_POINTS)                # (Q, 3)
        dlam = qr.p2_barycentric_derivatives(qr.QUAD_POINTS)   # (Q, 6, 3)
        self.dphi = np.einsum("qak,tkd->tqad", dlam, self._dlam)  # (T, Q, 6, 2)
        self._build_operators()

    def _build_operators(self):
        T, Q = self.mesh.n_triangles, self.n_quad
        nn, P = self.n_nodes, self.n_points
        pt = (np.arange(T)[:, None] * Q + np.arange(Q)[None, :])          # (T, Q)
        nodes = self.tri_nodes                                             # (T, 6)

        rows, cols, vals = [], [], []
        for c in range(2):
            rows.append(np.broadcast_to((2 * pt + c)[:, :, None], (T, Q, 6)))
            cols.append(np.broadcast_to((c * nn + nodes)[:, None, :], (T, Q, 6)))
            vals.append(np.broadcast_to(self.phi[None], (T, Q, 6)))
        self.Pi = _coo(rows, cols, vals, (2 * P, self.n_full))

        rows, cols, vals = [], [], []
        for i in range(2):
            for j in range(2):
                rows.append(np.broadcast_to((4 * pt + 2 * i + j)[:, :, None], (T, Q, 6)))
                cols.append(np.broadcast_to((i * nn + nodes)[:, None, :], (T, Q, 6)))
                vals.append(self.dphi[..., j])
        self.Grad = _coo(rows, cols, vals, (4 * P, self.n_full))

        rows = np.broadcast_to(pt[:, :, None], (T, Q, 3))
        cols = np.broadcast_to(self.mesh.triangles[:, None, :], (T, Q, 3))
        vals = np.broadcast_to(self.psi[None], (T, Q, 3))
        self.Chi = _coo([rows], [cols], [vals], (P, self.dim_Y))

        # trace of the gradient and its symmetric part, as maps on 4-vectors
        tr = sp.csr_matrix(np.array([[1.0, 0.0, 0.0, 1.0]]))
        sym = sp.csr_matrix(np.array([[1.0, 0, 0, 0], [0, 0.5, 0.5, 0],
                                      [0, 0.5, 0.5, 0], [0, 0, 0, 1.0]]))
        eye = sp.identity(P, format="csr")
        self.Div = (sp.kron(eye, tr, format="csr") @ self.Grad).tocsr()
        self.Eps = (sp.kron(eye, sym, format="csr") @ self.Grad).tocsr()

        w = self.quad_w.ravel()
        self.W1 = sp.diags(w)
        self.W2 = sp.diags(np.repeat(w, 2))
        self.W4 = sp.diags(np.repeat(w, 4))

        f = self.free_dofs
        self.Pi_free = self.Pi[:, f].tocsr()
        self.Grad_free = self.Grad[:, f].tocsr()
        self.Eps_free = self.Eps[:, f].tocsr()
        self.Div_free = self.Div[:, f].tocsr()

    # ----------------------------------------------------------------- vectors
    def full(self, v_free, g_full=None) -> np.ndarray:
        """Embed free coefficients into a full vector, adding ``g_full`` if given."""
        out = np.zeros(self.n_full) if g_full is None else np.array(g_full, dtype=float)
        out[self.free_dofs] += v_free
        return out

    def restrict(self, v_full) -> np.ndarray:
        return np.asarray(v_full)[self.free_dofs].copy()

    # -------------------------------------------------------- reconstructions
    def _shape(self, values, comps):
        T, Q = self.mesh.n_triangles, self.n_quad
        return values.reshape((T, Q) + comps)

    def pi_at_quad(self, v_full) -> np.ndarray:
        """Reconstructed velocity at all quadrature points, shape (T, Q, 2)."""
        return self._shape(self.Pi @ v_full, (2,))

    def grad_at_quad(self, v_full) -> np.ndarray:
        return self._shape(self.Grad @ v_full, (2, 2))

    def eps_at_quad(self, v_full) -> np.ndarray:
        return self._shape(self.Eps @ v_full, (2, 2))

    def div_at_quad(self, v_full) -> np.ndarray:
        return self._shape(self.Div @ v_full, ())

    def chi_at_quad(self, q) -> np.ndarray:
        return self._shape(self.Chi @ q, ())

    def reconstruct_velocity(self, v_free, quad_point) -> np.ndarray:
        t, q = quad_point
        return self.pi_at_quad(self.full(v_free))[t, q]

    def reconstruct_gradient(self, v_free, quad_point) -> np.ndarray:
        t, q = quad_point
        return self.grad_at_quad(self.full(v_free))[t, q]

    def symmetric_gradient(self, v_free, quad_point) -> np.ndarray:
        t, q = quad_point
        return self.eps_at_quad(self.full(v_free))[t, q]

    def divergence(self, v_free, quad_point) -> float:
        t, q = quad_point
        return float(self.div_at_quad(self.full(v_free))[t, q])

    def evaluate(self, v_full, x) -> np.ndarray:
        """Velocity reconstruction at an arbitrary point of the square."""
        tri, lam = locate_point(self.mesh, x)
        phi = qr.p2_values(lam)
        nodes = self.tri_nodes[tri]
        v_full = np.asarray(v_full)
        return np.array([phi @ v_full[nodes], phi @ v_full[self.n_nodes + nodes]])

    def evaluate_many(self, v_full, points) -> np.ndarray:
        """Vectorised ``evaluate`` for (k, 2) points; returns (k, 2)."""
        tri, lam = locate_points(self.mesh, points)
        phi = qr.p2_values(lam)                                   # (k, 6)
        nodes = self.tri_nodes[tri]
        v_full = np.asarray(v_full)
        return np.stack([np.einsum("ki,ki->k", phi, v_full[nodes]),
                         np.einsum("ki,ki->k", phi, v_full[self.n_nodes + nodes])], axis=1)

    # ---------------------------------------------------------- interpolation
    def interpolate(self, f: FieldExpr, constrained: bool = False) -> np.ndarray:
        """Nodal P2 interpolant of ``f``.

        With ``constrained=True`` the full vector (boundary values included) is
        returned; otherwise only the free coefficients.
        """
        x, y = self.node_coords[:, 0], self.node_coords[:, 1]
        vals = f(x, y)
        full = np.concatenate([vals[:, 0], vals[:, 1]])
        return full if constrained else full[self.free_dofs]

    def quad_values(self, f: FieldExpr) -> np.ndarray:
        """``f`` at all quadrature points, flattened point-major (2 * n_points,)."""
        try:
            vals = f(self.quad_x[..., 0], self.quad_x[..., 1])
        except Exception as exc:  # noqa: BLE001
            raise DataError(f"cannot evaluate {f.name} at quadrature points: {exc}") from exc
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise DataError(f"{f.name} is not finite at some quadrature point")
        return vals.reshape(-1)

    # ------------------------------------------------------------ Gram forms
    @cached_property
    def mass(self) -> sp.csr_matrix:
        """(Pi u, Pi v) on free dofs."""
        return (self.Pi_free.T @ self.W2 @ self.Pi_free).tocsr()

    @cached_property
    def mass_full(self) -> sp.csr_matrix:
        return (self.Pi.T @ self.W2 @ self.Pi).tocsr()

    @cached_property
    def eps_gram(self) -> sp.csr_matrix:
        """(eps u, eps v) on free dofs: the p = 2 viscous stiffness."""
        return (self.Eps_free.T @ self.W4 @ self.Eps_free).tocsr()

    @cached_property
    def grad_gram(self) -> sp.csr_matrix:
        return (self.Grad_free.T @ self.W4 @ self.Grad_free).tocsr()

    @cached_property
    def div_gram(self) -> sp.csr_matrix:
        return (self.Div_free.T @ self.W1 @ self.Div_free).tocsr()

    @cached_property
    def divergence_matrix(self) -> sp.csr_matrix:
        """B with ``(B v)_k = (chi phi_k, div v)``, shape (dim_Y, dim_X0)."""
        return (self.Chi.T @ self.W1 @ self.Div_free).tocsr()

    @cached_property
    def divergence_matrix_full(self) -> sp.csr_matrix:
        return (self.Chi.T @ self.W1 @ self.Div).tocsr()

    @cached_property
    def pressure_mass(self) -> sp.csr_matrix:
        return (self.Chi.T @ self.W1 @ self.Chi).tocsr()

    @cached_property
    def pressure_mean(self) -> np.ndarray:
        """Vector m with ``m @ q = integral of chi q``."""
        return self.Chi.T @ self.quad_w.ravel()

    # -------------------------------------------------------------- helpers
    def energy(self, v_free) -> float:
        """Kinetic energy 0.5 * ||Pi v||^2."""
        return 0.5 * float(v_free @ (self.mass @ v_free))

    def l2_norm_field(self, f: FieldExpr) -> float:
        vals = self.quad_values(f).reshape(-1, 2)
        return float(np.sqrt(np.sum(self.quad_w.ravel() * np.sum(vals ** 2, axis=1))))

    def node_values(self, v_full) -> np.ndarray:
        """Velocity at the P2 nodes, shape (n_nodes, 2)."""
        v_full = np.asarray(v_full)
        return np.column_stack([v_full[: self.n_nodes], v_full[self.n_nodes:]])

    def write_field_csv(self, path, v_full, extra=None) -> Path:
        """CSV with columns x, y, u_x, u_y sampled at the P2 nodes."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        vals = self.node_values(v_full)
        extra = extra or {}
        header = ["x", "y", "u_x", "u_y", *extra.keys()]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(self.n_nodes):
                row = [*self.node_coords[k], *vals[k], *(e[k] for e in extra.values())]
                fh.write(",".join(f"{r:.17g}" for r in row) + "\n")
        return path

    def write_vtk(self, path, v_full, title="velocity") -> Path:
        """Legacy ASCII VTK of the velocity on the linear sub-triangulation of P1 vertices."""
        path = Path(path)
        m = self.mesh
        vals = self.node_values(v_full)[: m.n_vertices]
        lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
                 f"POINTS {m.n_vertices} double"]
        lines += [f"{x:.17g} {y:.17g} 0" for x, y in m.vertices]
        lines.append(f"CELLS {m.n_triangles} {4 * m.n_triangles}")
        lines += [f"3 {a} {b} {c}" for a, b, c in m.triangles]
        lines.append(f"CELL_TYPES {m.n_triangles}")
        lines += ["5"] * m.n_triangles
        lines.append(f"POINT_DATA {m.n_vertices}")
        lines.append("VECTORS velocity double")
        lines += [f"{u:.17g} {v:.17g} 0" for u, v in vals]
        path.write_text("\n".join(lines) + "\n")
        return path


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    r = np.concatenate([np.ravel(a) for a in rows])
    c = np.concatenate([np.ravel(a) for a in cols])
    v = np.concatenate([np.ravel(a) for a in vals])
    return sp.csr_matrix((v, (r, c)), shape=shape)
