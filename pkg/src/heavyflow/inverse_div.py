"""Right inverse of the divergence on mean-zero scalars.

B[r] is the gradient of the zero-flux Neumann potential of r, so that
div B[r] = r to solver precision and B[r].n = 0 exactly on the walls.
This is weaker than the classical construction (the tangential trace of
B[r] need not vanish), but every use in the density estimates only needs
the divergence identity and the L2 bounds; the tangential trace is kept
visible as a diagnostic.
"""

from __future__ import annotations

import numpy as np

from .field import ScalarField, VectorField, grad_seminorm, lp_norm
from .helmholtz import WallFlux, grad_with_flux, neumann_poisson_solve


def bogovskii(r: ScalarField) -> VectorField:
    """B[r] with div B[r] = r and B[r].n = 0; input must be mean-zero."""
    if abs(r.integral()) > 1e-10 * (lp_norm(r, 1) + 1e-300):
        raise ValueError(
            f"bogovskii needs mean-zero input, integral is {r.integral():.3e}")
    phi = neumann_poisson_solve(r, WallFlux())
    return grad_with_flux(phi, WallFlux())


def bogovskii_bound_check(r: ScalarField) -> float:
    """Stability ratio ||grad B[r]||_2 / ||r||_2 (scale invariant)."""
    rnorm = lp_norm(r, 2)
    if rnorm == 0.0:
        raise ValueError("bound check undefined for zero input")
    return grad_seminorm(bogovskii(r), 2) / rnorm


def tangential_wall_norm(v: VectorField) -> float:
    """L2 norm of the tangential components in the first layer off the walls.

    Diagnostic for how far B[r] is from the full-trace-free construction.
    """
    g = v.grid
    total = (float(np.sum(v.xcomp[:, 0] ** 2)) + float(np.sum(v.xcomp[:, -1] ** 2))) * g.hx
    if not g.periodic_x:
        total += (float(np.sum(v.ycomp[0, :] ** 2)) + float(np.sum(v.ycomp[-1, :] ** 2))) * g.hy
    return float(np.sqrt(total))
