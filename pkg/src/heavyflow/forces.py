"""Analytic force presets for reproducible runs and studies."""

from __future__ import annotations

import numpy as np

from .field import GridSpec, ScalarField, VectorField, gradient, lp_norm

PRESETS = ("vortex", "shear", "gradient")


def make_force(grid: GridSpec, preset: str, amplitude=1.0, p_norm=None) -> VectorField:
    """Build a named force field.

    vortex    rotational field curl(psi) of the compactly modulated bump
              psi = sin^2(pi x/Lx) sin^2(pi y/Ly); wall-compatible
    shear     unidirectional x-force varying across the channel
    gradient  exact discrete gradient of a smooth cell potential, so the
              incompressible response is zero to solver precision

    With ``p_norm`` set, the field is rescaled so ||f||_p = amplitude.
    """
    if preset == "vortex":
        kx, ky = np.pi / grid.Lx, np.pi / grid.Ly
        f = VectorField.from_functions(
            grid,
            lambda x, y: ky * np.sin(kx * x) ** 2 * np.sin(2 * ky * y),
            lambda x, y: -kx * np.sin(2 * kx * x) * np.sin(ky * y) ** 2,
            enforce_walls=True)
    elif preset == "shear":
        f = VectorField.from_functions(
            grid, lambda x, y: np.sin(2 * np.pi * y / grid.Ly),
            lambda x, y: 0.0 * y)
    elif preset == "gradient":
        pot = ScalarField.from_function(
            grid, lambda x, y: np.cos(np.pi * x / grid.Lx) * np.cos(np.pi * y / grid.Ly))
        f = gradient(pot)
    else:
        raise ValueError(f"unknown force preset {preset!r}; choose from {PRESETS}")

    if p_norm is not None:
        base = lp_norm(f, p_norm)
        if base > 0:
            f = (amplitude / base) * f
    else:
        f = amplitude * f
    return f
