"""Power-law stress ``S(A) = (kappa + |A|^2)^((p-2)/2) A`` and its companions.

All functions act on single 2x2 matrices or on stacks of shape ``(..., 2, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SingularityError


@dataclass(frozen=True)
class RheologyParams:
    p: float = 2.0
    kappa: float = 0.1

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 1.0:
            raise ConfigurationError(f"growth exponent p must exceed 1 (got {self.p})")
        if not np.isfinite(self.kappa) or self.kappa < 0.0:
            raise ConfigurationError(f"kappa must be >= 0 (got {self.kappa})")

    @property
    def linear(self) -> bool:
        return self.p == 2.0


def _sqnorm(A):
    return np.einsum("...ij,...ij->...", A, A)


def _base(params: RheologyParams, A):
    base = params.kappa + _sqnorm(A)
    if params.p < 2.0 and np.any(base == 0.0):
        raise SingularityError("S(0) is undefined for p < 2 and kappa = 0")
    return base


def stress(params: RheologyParams, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if params.linear:
        return A.copy()
    base = _base(params, A)
    return (base ** ((params.p - 2.0) / 2.0))[..., None, None] * A


def v_tensor(params: RheologyParams, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if params.linear:
        return A.copy()
    base = _base(params, A)
    return (base ** ((params.p - 2.0) / 4.0))[..., None, None] * A


def stress_derivative(params: RheologyParams, A, H) -> np.ndarray:
    """Directional derivative DS(A)[H]."""
    A = np.asarray(A, dtype=float)
    H = np.asarray(H, dtype=float)
    if params.linear:
        return np.broadcast_to(H, np.broadcast_shapes(A.shape, H.shape)).copy()
    a, b = derivative_coefficients(params, A)
    AH = np.einsum("...ij,...ij->...", A, H)
    return a[..., None, None] * H + (b * AH)[..., None, None] * A


def derivative_coefficients(params: RheologyParams, A):
    """Scalars ``(a, b)`` with ``DS(A)[H] = a H + b (A:H) A``."""
    A = np.asarray(A, dtype=float)
    if params.linear:
        shape = A.shape[:-2]
        return np.ones(shape), np.zeros(shape)
    base = _base(params, A)
    a = base ** ((params.p - 2.0) / 2.0)
    b = (params.p - 2.0) * base ** ((params.p - 4.0) / 2.0)
    return a, b


def dissipation_density(params: RheologyParams, A) -> np.ndarray:
    """Pointwise ``S(A):A``, which equals ``|V(A)|^2``."""
    A = np.asarray(A, dtype=float)
    if params.linear:
        return _sqnorm(A)
    base = _base(params, A)
    return base ** ((params.p - 2.0) / 2.0) * _sqnorm(A)
