"""Closed-form data of the two experiments (EXP-1 and EXP-2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fem import FieldExpr, zero_field
from .mesh import BOUNDARY_TOL

VORTEX_SCALE = 1e3
FORCE_SCALE = 1e2


def bump(t):
    """f(t) = t^2 (1 - t)^2."""
    return t ** 2 * (1.0 - t) ** 2


def dbump(t):
    """f'(t) = 2t(1 - t)(1 - 2t) = (2 - 6t + 4t^2) t."""
    return (2.0 - 6.0 * t + 4.0 * t ** 2) * t


def ddbump(t):
    return 2.0 - 12.0 * t + 12.0 * t ** 2


def vortex(scale: float = VORTEX_SCALE, name: str = "vortex") -> FieldExpr:
    """scale * (f(x) f'(y), -f(y) f'(x)); solenoidal and zero on the boundary."""

    def value(x, y):
        return scale * bump(x) * dbump(y), -scale * bump(y) * dbump(x)

    def gradient(x, y):
        return ((scale * dbump(x) * dbump(y), scale * bump(x) * ddbump(y)),
                (-scale * bump(y) * ddbump(x), -scale * dbump(y) * dbump(x)))

    return FieldExpr(value, gradient, name)


def cellular_force(scale: float = FORCE_SCALE) -> FieldExpr:
    tp = 2.0 * np.pi

    def value(x, y):
        return (scale * np.sin(tp * x) * np.sin(2 * tp * y),
                -scale * np.sin(2 * tp * x) * np.sin(tp * y))

    def gradient(x, y):
        return ((scale * tp * np.cos(tp * x) * np.sin(2 * tp * y),
                 scale * 2 * tp * np.sin(tp * x) * np.cos(2 * tp * y)),
                (-scale * 2 * tp * np.cos(2 * tp * x) * np.sin(tp * y),
                 -scale * tp * np.sin(2 * tp * x) * np.cos(tp * y)))

    return FieldExpr(value, gradient, "force")


def lid_indicator() -> FieldExpr:
    """(1, 0) on the lid y = 1 (corners included), zero elsewhere."""

    def value(x, y):
        on_lid = np.abs(np.asarray(y, dtype=float) - 1.0) <= BOUNDARY_TOL
        return np.where(on_lid, 1.0, 0.0) + 0.0 * x, 0.0 * x + 0.0 * y

    return FieldExpr(value, None, "lid")


@dataclass(frozen=True)
class PresetFields:
    v_in: FieldExpr
    sigma: FieldExpr
    g: FieldExpr
    F: FieldExpr
    has_boundary_data: bool


def preset_fields(preset: str, stochastic: bool = True) -> PresetFields:
    """Initial velocity, noise coefficient, boundary data and force of a preset."""
    if preset == "exp1":
        sigma = vortex(name="sigma") if stochastic else zero_field()
        return PresetFields(vortex(name="v_in"), sigma, zero_field(), cellular_force(), False)
    if preset == "exp2":
        sigma = vortex(name="sigma") if stochastic else zero_field()
        return PresetFields(zero_field(), sigma, lid_indicator(), zero_field(), True)
    raise ConfigurationError(f"unknown preset {preset!r} (expected exp1 or exp2)")
