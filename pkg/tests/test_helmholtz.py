import numpy as np
import pytest

from heavyflow.field import (ScalarField, VectorField, divergence,
                             gradient, inner_faces, lp_norm, mean_zero_project,
                             random_scalar, random_vector)
from heavyflow.helmholtz import (IncompatibleDataError, WallFlux,
                                 neumann_poisson_solve, project,
                                 solve_dirichlet_nodes)


# ---------------------------------------------------------------------------
# Neumann Poisson solve
# ---------------------------------------------------------------------------

def test_zero_rhs_gives_zero(grid):
    phi = neumann_poisson_solve(ScalarField.zeros(grid), WallFlux())
    assert np.max(np.abs(phi.values)) < 1e-14


def test_cosine_eigenfunction(grid):
    k = np.pi / grid.Lx
    rhs = ScalarField.from_function(grid, lambda x, y: np.cos(k * x) * k**2)
    phi = neumann_poisson_solve(rhs, WallFlux())
    expected = ScalarField.from_function(grid, lambda x, y: -np.cos(k * x))
    err = np.max(np.abs(phi.values - mean_zero_project(expected).values))
    assert err < 2.0 * grid.hx**2


def test_discrete_eigenfunction_exact(grid):
    # cos(pi x / Lx) sampled at centers is an exact eigenvector of the
    # discrete Neumann Laplacian with eigenvalue -(2/h^2)(1 - cos(pi h / Lx))
    lam = (2.0 / grid.hx**2) * (1.0 - np.cos(np.pi * grid.hx / grid.Lx))
    mode = ScalarField.from_function(grid, lambda x, y: np.cos(np.pi * x / grid.Lx))
    phi = neumann_poisson_solve(lam * mode, WallFlux())
    assert np.max(np.abs(phi.values + mode.values)) < 1e-11


def test_incompatible_rhs_raises(grid):
    rhs = ScalarField(grid, np.full((grid.nx, grid.ny), 1.0))
    with pytest.raises(IncompatibleDataError):
        neumann_poisson_solve(rhs, WallFlux())


def test_nonzero_flux_compatibility(grid):
    # rhs integrating to the boundary flux is accepted and solved
    rhs = ScalarField(grid, np.full((grid.nx, grid.ny), 1.0))
    flux = WallFlux(east=np.full(grid.ny, grid.area / grid.Ly))
    phi = neumann_poisson_solve(rhs, flux)
    assert abs(phi.mean()) < 1e-12


def test_residual_certificate(grid, rng):
    r = random_scalar(grid, rng, mean_zero=True)
    phi = neumann_poisson_solve(r, WallFlux())
    from heavyflow.helmholtz import grad_with_flux
    res = divergence(grad_with_flux(phi, WallFlux())) - r
    assert lp_norm(res, 2) <= 1e-10 * lp_norm(r, 2)


def test_periodic_channel_solve(channel_grid, rng):
    r = random_scalar(channel_grid, rng, mean_zero=True)
    phi = neumann_poisson_solve(r, WallFlux())
    from heavyflow.helmholtz import grad_with_flux
    res = divergence(grad_with_flux(phi, WallFlux())) - r
    assert lp_norm(res, 2) <= 1e-10 * lp_norm(r, 2)


# ---------------------------------------------------------------------------
# Helmholtz projection
# ---------------------------------------------------------------------------

def test_project_pure_gradient(grid, rng):
    s = random_scalar(grid, rng)
    split = project(gradient(s))
    assert lp_norm(split.solenoidal, 2) <= 1e-10 * (lp_norm(gradient(s), 2) + 1e-30)
    err = np.max(np.abs(split.potential.values - mean_zero_project(s).values))
    assert err < 1e-10


def test_project_pure_solenoid(grid):
    # div-free wall-compatible field built from a streamfunction
    psi = np.sin(np.pi * np.linspace(0, 1, grid.nx + 1))[:, None] * \
        np.sin(np.pi * np.linspace(0, 1, grid.ny + 1))[None, :]
    psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
    u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    v = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    g = VectorField(grid, u, v, wall_compatible=True)
    assert lp_norm(divergence(g), 2) < 1e-12
    split = project(g)
    assert lp_norm(split.potential, 2) <= 1e-10 * lp_norm(g, 2)
    assert np.max(np.abs(split.solenoidal.xcomp - g.xcomp)) < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_round_trip_properties(grid, seed):
    rng = np.random.default_rng(seed)
    g = random_vector(grid, rng)
    split = project(g)
    gnorm = lp_norm(g, 2)
    rec = VectorField(grid,
                      split.solenoidal.xcomp + split.potential_grad.xcomp - g.xcomp,
                      split.solenoidal.ycomp + split.potential_grad.ycomp - g.ycomp)
    assert lp_norm(rec, 2) <= 1e-10 * gnorm
    assert lp_norm(divergence(split.solenoidal), 2) <= 1e-10 * gnorm
    assert split.solenoidal.check_wall_compatible()
    assert abs(inner_faces(split.solenoidal, split.potential_grad)) <= 1e-10 * gnorm**2


def test_projection_linearity(grid, rng):
    g1 = random_vector(grid, rng)
    g2 = random_vector(grid, rng)
    a, b = 2.5, -1.25
    combo = project(a * g1 + b * g2)
    p1 = project(g1)
    p2 = project(g2)
    lin = a * p1.potential.values + b * p2.potential.values
    scale = lp_norm(g1, 2) + lp_norm(g2, 2)
    assert np.max(np.abs(combo.potential.values - lin)) <= 1e-10 * scale


def test_projection_idempotent(grid, rng):
    g = random_vector(grid, rng)
    split = project(g)
    again = project(split.solenoidal)
    assert lp_norm(again.potential_grad, 2) <= 1e-9 * (lp_norm(g, 2) + 1e-30)


def test_laplacian_of_potential_is_divergence(grid, rng):
    g = random_vector(grid, rng)
    split = project(g)
    assert lp_norm(divergence(split.potential_grad) - divergence(g), 2) \
        <= 1e-10 * lp_norm(g, 2)


# ---------------------------------------------------------------------------
# node Dirichlet solve
# ---------------------------------------------------------------------------

def test_dirichlet_nodes_manufactured(grid):
    x = np.linspace(0, grid.Lx, grid.nx + 1)[:, None]
    y = np.linspace(0, grid.Ly, grid.ny + 1)[None, :]
    w_exact = x * (grid.Lx - x) * np.sin(np.pi * y / grid.Ly)
    # discrete rhs: apply the 5-point node Laplacian to the exact samples
    rhs = np.zeros_like(w_exact)
    rhs[1:-1, 1:-1] = ((w_exact[2:, 1:-1] - 2 * w_exact[1:-1, 1:-1] + w_exact[:-2, 1:-1]) / grid.hx**2
                       + (w_exact[1:-1, 2:] - 2 * w_exact[1:-1, 1:-1] + w_exact[1:-1, :-2]) / grid.hy**2)
    w = solve_dirichlet_nodes(grid, rhs, boundary_nodes=w_exact)
    assert np.max(np.abs(w - w_exact)) < 1e-11
