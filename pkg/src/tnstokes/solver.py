"""Sparse saddle-point solves and a damped Newton method."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NonConvergenceError, SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_iter: int = 50
    damping: float = 0.5
    max_halvings: int = 20
    min_iter: int = 1

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ConfigurationError("Newton tolerances must be positive")
        if self.max_iter < 1 or not (0.0 < self.damping < 1.0):
            raise ConfigurationError("invalid Newton iteration/damping settings")


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    initial_residual_norm: float


def saddle_matrix(A, B, m=None) -> sp.csc_matrix:
    """[[A, B^T, 0], [B, 0, m], [0, m^T, 0]]; the last row/column only when ``m`` is given."""
    nq = B.shape[0]
    if m is None:
        return sp.bmat([[A, B.T], [B, None]], format="csc")
    m = sp.csr_matrix(np.asarray(m).reshape(-1, 1))
    Z = sp.csr_matrix((nq, nq))
    return sp.bmat([[A, B.T, None], [B, Z, m], [None, m.T, None]], format="csc")


def factorize(K: sp.spmatrix):
    try:
        return spla.splu(sp.csc_matrix(K))
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}", shape=K.shape,
                          nnz=K.nnz) from exc


class SaddleSolver:
    """Factorized saddle system, reusable for many right-hand sides.

    Solves ``A v + B^T q = f`` and ``(B v - r, q') = 0`` for all ``q'`` with
    ``m . q' = 0``; with ``mean_zero`` the pressure satisfies ``m . q = 0``.
    """

    def __init__(self, A, B, m=None, mean_zero=True, abs_tol=1e-8, rel_tol=1e-8):
        if mean_zero and m is None:
            raise ConfigurationError("mean-zero constraint needs the pressure mean vector")
        self.A = sp.csr_matrix(A)
        self.B = sp.csr_matrix(B)
        self.m = np.asarray(m) if mean_zero else None
        self.nv, self.nq = A.shape[0], B.shape[0]
        self.abs_tol, self.rel_tol = abs_tol, rel_tol
        self.K = saddle_matrix(self.A, self.B, self.m)
        self.lu = factorize(self.K)

    def solve(self, rhs_v, rhs_q, check=True):
        rhs = np.concatenate([rhs_v, rhs_q, [0.0] if self.m is not None else []])
        sol = self.lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("saddle solve produced non-finite values")
        v, q = sol[: self.nv], sol[self.nv: self.nv + self.nq]
        lam = sol[-1] if self.m is not None else 0.0
        if check:
            self.check(v, q, lam, rhs_v, rhs_q)
        return v, q

    def check(self, v, q, lam, rhs_v, rhs_q):
        r1 = self.A @ v + self.B.T @ q - rhs_v
        r2 = self.B @ v - rhs_q
        if self.m is not None:
            r2 = r2 + lam * self.m
        scale = np.linalg.norm(np.concatenate([rhs_v, rhs_q]))
        bound = max(self.abs_tol, self.rel_tol * scale)
        n1, n2 = np.linalg.norm(r1), np.linalg.norm(r2)
        if n1 > bound or n2 > bound:
            raise SolverError("saddle residual exceeds tolerance", momentum=n1,
                              constraint=n2, bound=bound)
        return n1, n2


def solve_saddle(A, B, rhs_v, rhs_q, mean_zero=True, m=None, abs_tol=1e-8, rel_tol=1e-8):
    """One-shot saddle solve; returns ``(velocity, pressure)``."""
    return SaddleSolver(A, B, m, mean_zero, abs_tol, rel_tol).solve(rhs_v, rhs_q)


def newton_solve(residual_fn: Callable, jacobian_fn: Callable, x0, cfg: Optional[NewtonConfig] = None,
                 linear_solve: Optional[Callable] = None) -> NewtonResult:
    """Damped Newton iteration for ``residual_fn(x) = 0``.

    ``jacobian_fn(x)`` returns a sparse matrix; ``linear_solve(J, r)`` may
    replace the default LU solve. A step is accepted once the residual norm
    decreases; otherwise it is halved up to ``cfg.max_halvings`` times.
    """
    cfg = cfg or NewtonConfig()
    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    r0 = rn = float(np.linalg.norm(r))
    target = max(cfg.abs_tol, cfg.rel_tol * r0)
    it = 0
    while it < cfg.min_iter or rn > target:
        if it >= cfg.max_iter:
            raise NonConvergenceError(f"Newton did not converge in {cfg.max_iter} iterations",
                                      residual_norm=rn, iterations=it)
        J = jacobian_fn(x)
        dx = linear_solve(J, r) if linear_solve else factorize(J).solve(r)
        if not np.all(np.isfinite(dx)):
            raise NonConvergenceError("Newton update is not finite", residual_norm=rn, iterations=it)
        alpha = 1.0
        for _ in range(cfg.max_halvings + 1):
            x_new = x - alpha * dx
            r_new = residual_fn(x_new)
            rn_new = float(np.linalg.norm(r_new))
            if rn_new < rn or rn_new <= target:
                break
            alpha *= cfg.damping
        else:
            if rn <= target:
                break
            raise NonConvergenceError("line search failed to decrease the residual",
                                      residual_norm=rn, iterations=it)
        x, r, rn = x_new, r_new, rn_new
        it += 1
    log.debug("newton: %d iterations, residual %.3e (initial %.3e)", it, rn, r0)
    return NewtonResult(x, it, rn, r0)
