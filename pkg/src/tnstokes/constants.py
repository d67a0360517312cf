"""Numerical estimates of the p = 2 compatibility constants of the discretisation.

Every constant is a generalised Rayleigh quotient, so it is computed with
power iteration (largest eigenvalue) or inverse iteration (smallest) on
sparse factorizations. Iterations stop once successive Rayleigh quotients
agree to ``rtol``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NonConvergenceError
from .fem import GradientDiscretisation
from .solver import SaddleSolver, factorize

MAX_ITER = 10_000
RTOL = 1e-8


@dataclass
class ConstantsP2:
    coercivity: float            # C_D(2), sum of the three individual suprema
    coercivity_lower: float      # sqrt of the largest eigenvalue of the summed Gram forms
    coercivity_parts: dict       # sup ||Pi v||, ||div v||, ||grad v|| over ||eps v||
    inf_sup: float               # beta_D(2)
    inverse: float               # B_D(2)
    iterations: dict
    mesh: str = ""


def power_max(A, B, rtol: float = RTOL, max_iter: int = MAX_ITER, seed: int = 0) -> tuple[float, int]:
    """Largest eigenvalue of ``A x = lam B x`` (A symmetric PSD, B SPD)."""
    lu = factorize(sp.csc_matrix(B))
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    lam_old = None
    for it in range(1, max_iter + 1):
        y = lu.solve(A @ x)
        x = y / np.sqrt(y @ (B @ y))
        lam = float(x @ (A @ x))
        if lam_old is not None and abs(lam - lam_old) <= rtol * abs(lam):
            return lam, it
        lam_old = lam
    raise NonConvergenceError(f"power iteration did not reach rtol={rtol} in {max_iter} steps",
                              residual_norm=abs(lam - lam_old) / abs(lam), iterations=max_iter)


def schur_min(gd: GradientDiscretisation, rtol: float = RTOL, max_iter: int = MAX_ITER,
              seed: int = 0) -> tuple[float, int]:
    """Smallest eigenvalue of B K^{-1} B^T against the pressure mass on mean-zero pressures.

    K is the symmetric-gradient Gram matrix. Mean-zero pressures are exactly
    the Mp-orthogonal complement of the constants, which span the kernel.
    """
    K, B, Mp, m = gd.eps_gram, gd.divergence_matrix, gd.pressure_mass, gd.pressure_mean
    saddle = SaddleSolver(K, B, m, mean_zero=True)
    Klu = factorize(sp.csc_matrix(K))

    def schur(q):
        return B @ Klu.solve(B.T @ q)

    x = np.random.default_rng(seed).standard_normal(B.shape[0])
    x -= (m @ x) / m.sum()
    lam_old = None
    for it in range(1, max_iter + 1):
        # K u + B^T z = 0, B u = -Mp x  gives  S z = Mp x with m . z = 0
        _, z = saddle.solve(np.zeros(K.shape[0]), -(Mp @ x), check=False)
        x = z / np.sqrt(z @ (Mp @ z))
        lam = float(x @ schur(x))
        if lam_old is not None and abs(lam - lam_old) <= rtol * abs(lam):
            return lam, it
        lam_old = lam
    raise NonConvergenceError(f"inverse iteration did not reach rtol={rtol} in {max_iter} steps",
                              residual_norm=abs(lam - lam_old) / abs(lam), iterations=max_iter)


def estimate_constants_p2(gd: GradientDiscretisation, rtol: float = RTOL,
                          max_iter: int = MAX_ITER) -> ConstantsP2:
    """Coercivity, inf-sup and inverse-estimate constants for p = 2."""
    K = gd.eps_gram
    parts, iters = {}, {}
    for name, G in (("pi", gd.mass), ("div", gd.div_gram), ("grad", gd.grad_gram)):
        lam, iters[name] = power_max(G, K, rtol, max_iter)
        parts[name] = float(np.sqrt(lam))
    lam, iters["sum"] = power_max(gd.mass + gd.div_gram + gd.grad_gram, K, rtol, max_iter)
    lower = float(np.sqrt(lam))
    mu, iters["inf_sup"] = schur_min(gd, rtol, max_iter)
    # the inf-sup denominator carries ||eps v|| twice (p = p' = 2)
    beta = 0.5 * float(np.sqrt(mu))
    lam, iters["inverse"] = power_max(K, gd.mass, rtol, max_iter)
    return ConstantsP2(sum(parts.values()), lower, parts, beta, float(np.sqrt(lam)), iters,
                       gd.mesh.descriptor())
