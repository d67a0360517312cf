"""Discrete forms of the Crank-Nicolson scheme on a Taylor-Hood discretisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FieldExpr, GradientDiscretisation
from .rheology import RheologyParams, derivative_coefficients, stress, dissipation_density


@dataclass
class AssembledForms:
    """Time-independent matrices and vectors of the scheme (free velocity dofs).

    Bsigma[i, j] = B^sigma(phi_j, phi_i), so ``Bsigma @ w`` tested with phi_i
    gives B^sigma(w, phi_i). It is skew by construction.
    """

    M: sp.csr_matrix
    B: sp.csr_matrix
    Bsigma: sp.csr_matrix
    F_load: np.ndarray
    g_noise: np.ndarray
    g_div: np.ndarray
    g_full: np.ndarray
    pressure_mean: np.ndarray
    eps_g: np.ndarray  # symmetric gradient of g at quadrature points, (4 * n_points,)

    @property
    def has_boundary_data(self) -> bool:
        return bool(np.any(self.g_full))


def _transport_operator(gd: GradientDiscretisation, sigma_q: np.ndarray) -> sp.bsr_matrix:
    """Sparse map from gradient 4-vectors to ``(sigma . grad) v`` 2-vectors per point."""
    P = gd.n_points
    s = sigma_q.reshape(P, 2)
    blocks = np.zeros((P, 2, 4))
    blocks[:, 0, 0] = s[:, 0]
    blocks[:, 0, 1] = s[:, 1]
    blocks[:, 1, 2] = s[:, 0]
    blocks[:, 1, 3] = s[:, 1]
    idx = np.arange(P)
    return sp.bsr_matrix((blocks, idx, np.arange(P + 1)), shape=(2 * P, 4 * P))


def transport_matrix(gd: GradientDiscretisation, sigma: FieldExpr, full: bool = False):
    """C[i, j] = ((sigma . grad) phi_j, Pi phi_i); rows free dofs, columns free or full."""
    sig = _transport_operator(gd, gd.quad_values(sigma))
    cols = gd.Grad if full else gd.Grad_free
    return (gd.Pi_free.T @ gd.W2 @ (sig @ cols)).tocsr()


def assemble_static(gd: GradientDiscretisation, sigma: FieldExpr, g_full, F: FieldExpr) -> AssembledForms:
    """Assemble every time-independent ingredient of the scheme."""
    g_full = np.zeros(gd.n_full) if g_full is None else np.asarray(g_full, dtype=float)
    sig = _transport_operator(gd, gd.quad_values(sigma))
    C = (gd.Pi_free.T @ gd.W2 @ (sig @ gd.Grad_free)).tocsr()
    Bsigma = (0.5 * (C - C.T)).tocsr()
    Bsigma.eliminate_zeros()

    F_load = gd.Pi_free.T @ (gd.W2 @ gd.quad_values(F))
    g_noise = gd.Pi_free.T @ (gd.W2 @ (sig @ (gd.Grad @ g_full)))
    g_div = gd.Chi.T @ (gd.W1 @ (gd.Div @ g_full))
    return AssembledForms(
        M=gd.mass,
        B=gd.divergence_matrix,
        Bsigma=Bsigma,
        F_load=np.asarray(F_load),
        g_noise=np.asarray(g_noise),
        g_div=np.asarray(g_div),
        g_full=g_full,
        pressure_mean=gd.pressure_mean,
        eps_g=gd.Eps @ g_full,
    )


def _strain(gd, w, g_full):
    eps = gd.Eps_free @ w
    if g_full is not None:
        eps = eps + gd.Eps @ g_full
    return eps.reshape(-1, 2, 2)


def viscous_residual(gd: GradientDiscretisation, params: RheologyParams, w, g_full=None) -> np.ndarray:
    """r_i = (S(eps w + eps g), eps phi_i) for every free dof i."""
    A = _strain(gd, w, g_full)
    S = stress(params, A).reshape(-1)
    return gd.Eps_free.T @ (gd.W4 @ S)


class ElementJacobian:
    """Element-by-element assembly of the viscous Jacobian on free dofs.

    ``local`` returns the (T, 12, 12) element matrices; ``scatter`` sums them
    into any compressed pattern that contains the free-free coupling, in a
    fixed order, so repeated assemblies are bitwise reproducible.
    """

    def __init__(self, gd: GradientDiscretisation):
        self.gd = gd
        d = gd.dphi                                   # (T, Q, 6, 2)
        T, Q = d.shape[:2]
        E = np.zeros((T, Q, 4, 12))
        E[:, :, 0, :6] = d[..., 0]
        E[:, :, 1, :6] = 0.5 * d[..., 1]
        E[:, :, 2, :6] = 0.5 * d[..., 1]
        E[:, :, 1, 6:] = 0.5 * d[..., 0]
        E[:, :, 2, 6:] = 0.5 * d[..., 0]
        E[:, :, 3, 6:] = d[..., 1]
        self.E = E
        self.dofs = gd.full_to_free[gd.velocity_dof_map]          # (T, 12), -1 if constrained
        rows = np.broadcast_to(self.dofs[:, :, None], (T, 12, 12))
        cols = np.broadcast_to(self.dofs[:, None, :], (T, 12, 12))
        self.mask = ((rows >= 0) & (cols >= 0)).ravel()
        self.rows = rows.ravel()[self.mask]
        self.cols = cols.ravel()[self.mask]
        self._linear = None

    def local(self, params: RheologyParams, w, g_full=None) -> np.ndarray:
        gd = self.gd
        wq = gd.quad_w
        if params.linear:
            if self._linear is None:
                self._linear = np.einsum("tq,tqki,tqkj->tij", wq, self.E, self.E)
            return self._linear
        A = _strain(gd, w, g_full).reshape(wq.shape + (4,))
        a, b = derivative_coefficients(params, A.reshape(wq.shape + (2, 2)))
        T, Q = wq.shape
        E = self.E
        AE = np.matmul(A[:, :, None, :], E)[:, :, 0, :]            # (T, Q, 12)
        # batched Gram products; a > 0 always, b may be negative
        Es = (E * np.sqrt(wq * a)[:, :, None, None]).reshape(T, Q * 4, 12)
        Et = Es.transpose(0, 2, 1)
        return Et @ Es + (AE * (wq * b)[:, :, None]).transpose(0, 2, 1) @ AE

    def positions(self, pattern: sp.csc_matrix) -> np.ndarray:
        """Index into ``pattern.data`` of every retained local entry."""
        return _pattern_positions(pattern, self.rows, self.cols)

    def scatter(self, local: np.ndarray, positions: np.ndarray, nnz: int) -> np.ndarray:
        return np.bincount(positions, weights=local.ravel()[self.mask], minlength=nnz)

    def matrix(self, params, w, g_full=None) -> sp.csr_matrix:
        n = self.gd.dim_X0
        vals = self.local(params, w, g_full).ravel()[self.mask]
        return sp.csr_matrix((vals, (self.rows, self.cols)), shape=(n, n))


def _pattern_positions(pattern: sp.csc_matrix, rows, cols) -> np.ndarray:
    pattern = sp.csc_matrix(pattern)
    pattern.sort_indices()
    n_rows = pattern.shape[0]
    col_of = np.repeat(np.arange(pattern.shape[1]), np.diff(pattern.indptr))
    keys = col_of.astype(np.int64) * n_rows + pattern.indices
    want = np.asarray(cols, dtype=np.int64) * n_rows + np.asarray(rows)
    pos = np.searchsorted(keys, want)
    if np.any(pos >= len(keys)) or np.any(keys[np.minimum(pos, len(keys) - 1)] != want):
        raise ValueError("entries outside the sparsity pattern")
    return pos


def viscous_jacobian(gd: GradientDiscretisation, params: RheologyParams, w, g_full=None) -> sp.csr_matrix:
    """J_ij = (DS(eps w + eps g)[eps phi_j], eps phi_i)."""
    if params.linear:
        return gd.eps_gram
    A = _strain(gd, w, g_full)
    a, b = derivative_coefficients(params, A)
    P = len(A)
    wq = gd.quad_w.ravel()
    Af = A.reshape(P, 4)
    blocks = (wq * b)[:, None, None] * Af[:, :, None] * Af[:, None, :]
    blocks[:, np.arange(4), np.arange(4)] += (wq * a)[:, None]
    D = sp.bsr_matrix((blocks, np.arange(P), np.arange(P + 1)), shape=(4 * P, 4 * P))
    return (gd.Eps_free.T @ (D @ gd.Eps_free)).tocsr()


def dissipation(gd: GradientDiscretisation, params: RheologyParams, w, g_full=None) -> float:
    """(S(eps w + eps g), eps w + eps g) = ||V(eps w + eps g)||^2."""
    A = _strain(gd, w, g_full)
    return float(gd.quad_w.ravel() @ dissipation_density(params, A))


def v_tensor_field(gd: GradientDiscretisation, params: RheologyParams, w, g_full=None) -> np.ndarray:
    from .rheology import v_tensor
    return v_tensor(params, _strain(gd, w, g_full))


def l2_sq_tensor(gd: GradientDiscretisation, T) -> float:
    """Squared L2 norm of a tensor field given at quadrature points (n_points, 2, 2)."""
    return float(gd.quad_w.ravel() @ np.einsum("pij,pij->p", T, T))
