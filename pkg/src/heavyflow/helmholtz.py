"""Discrete Helmholtz decomposition and the Poisson solves behind it.

The splitting g = solenoidal + grad(potential) is computed from a single
cell-centered Poisson solve with Neumann data g.n on the walls.  The
Laplacian is exactly div o grad with the package's staggered operators, so
the split reproduces g to solver precision, the solenoidal part has zero
discrete divergence, and its normal trace vanishes identically on walls.

Factorizations are cached per grid and shared; each solve only performs
triangular substitutions, which keeps the thousands of solves inside the
fixed-point loops cheap.  A sparse direct factorization (not FFT) is used
in both wall modes for determinism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field import (GridSpec, ScalarField, VectorField, divergence, gradient,
                    lp_norm)


class IncompatibleDataError(ValueError):
    """Neumann data violates the discrete compatibility condition."""


class PoissonSolveError(RuntimeError):
    """Linear solver failed to reach the requested residual."""


_CACHE = {}


def clear_cache():
    _CACHE.clear()


def neumann_laplacian(grid: GridSpec) -> sp.csr_matrix:
    """Cell-centered Laplacian div(grad .) with zero-flux walls (singular)."""
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy

    def lap1d(n, h, periodic):
        main = np.full(n, -2.0)
        if not periodic:
            main[0] = -1.0
            main[-1] = -1.0
        off = np.ones(n - 1)
        m = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if periodic:
            m[0, -1] = 1.0
            m[-1, 0] = 1.0
        return (m / h**2).tocsr()

    lx = lap1d(nx, hx, grid.periodic_x)
    ly = lap1d(ny, hy, False)
    return (sp.kron(lx, sp.identity(ny)) + sp.kron(sp.identity(nx), ly)).tocsr()


def _neumann_factor(grid):
    key = (grid, "neumann")
    if key not in _CACHE:
        lap = neumann_laplacian(grid)
        n = lap.shape[0]
        ones_col = np.ones((n, 1))
        area_row = np.full((1, n), grid.cell_area)
        aug = sp.bmat([[lap, ones_col], [area_row, None]], format="csc")
        _CACHE[key] = (spla.splu(aug), lap)
    return _CACHE[key]


@dataclass(frozen=True)
class WallFlux:
    """Outward normal derivative data on the walls (arrays or scalars)."""

    west: np.ndarray | float = 0.0
    east: np.ndarray | float = 0.0
    south: np.ndarray | float = 0.0
    north: np.ndarray | float = 0.0

    def boundary_integral(self, grid):
        total = (np.sum(self.south * np.ones(grid.nx))
                 + np.sum(self.north * np.ones(grid.nx))) * grid.hx
        if not grid.periodic_x:
            total += (np.sum(self.west * np.ones(grid.ny))
                      + np.sum(self.east * np.ones(grid.ny))) * grid.hy
        return float(total)

    def abs_sum(self, grid):
        total = (np.sum(np.abs(self.south * np.ones(grid.nx)))
                 + np.sum(np.abs(self.north * np.ones(grid.nx)))) * grid.hx
        if not grid.periodic_x:
            total += (np.sum(np.abs(self.west * np.ones(grid.ny)))
                      + np.sum(np.abs(self.east * np.ones(grid.ny)))) * grid.hy
        return float(total)


def neumann_poisson_solve(rhs: ScalarField, flux_bc: WallFlux | None = None,
                          tol=1e-10) -> ScalarField:
    """Solve lap(phi) = rhs with grad(phi).n = flux_bc, mean(phi) = 0.

    Raises IncompatibleDataError unless the discrete divergence theorem
    holds for the data, and PoissonSolveError if the factored solve (plus
    one step of iterative refinement) cannot certify the residual.
    """
    grid = rhs.grid
    flux = flux_bc or WallFlux()
    vol = rhs.integral()
    bnd = flux.boundary_integral(grid)
    scale = lp_norm(rhs, 2) * np.sqrt(grid.area) + flux.abs_sum(grid) + 1e-300
    if abs(vol - bnd) > 1e-10 * scale:
        raise IncompatibleDataError(
            f"integral(rhs)={vol:.3e} differs from boundary flux {bnd:.3e} "
            f"(tolerance {1e-10 * scale:.3e})")

    rhs_eff = rhs.values.copy()
    if not grid.periodic_x:
        rhs_eff[0, :] -= np.asarray(flux.west) * np.ones(grid.ny) / grid.hx
        rhs_eff[-1, :] -= np.asarray(flux.east) * np.ones(grid.ny) / grid.hx
    rhs_eff[:, 0] -= np.asarray(flux.south) * np.ones(grid.nx) / grid.hy
    rhs_eff[:, -1] -= np.asarray(flux.north) * np.ones(grid.nx) / grid.hy

    lu, lap = _neumann_factor(grid)
    b = np.concatenate([rhs_eff.ravel(), [0.0]])
    sol = lu.solve(b)
    phi = sol[:-1]

    rhs_norm = np.linalg.norm(rhs_eff) + 1e-300
    res = rhs_eff.ravel() - lap @ phi
    resn = np.linalg.norm(res - res.mean())
    if resn > tol * rhs_norm:
        corr = lu.solve(np.concatenate([res, [0.0]]))[:-1]
        phi = phi + corr
        res = rhs_eff.ravel() - lap @ phi
        resn = np.linalg.norm(res - res.mean())
        if resn > tol * rhs_norm:
            raise PoissonSolveError(
                f"poisson residual {resn:.3e} above {tol:.1e} * {rhs_norm:.3e}")

    phi = phi.reshape(grid.nx, grid.ny)
    phi = phi - phi.sum() / phi.size
    return ScalarField(grid, phi)


@dataclass(frozen=True)
class HelmholtzSplit:
    """g = solenoidal + potential_grad with div-free, wall-tangent solenoidal."""

    solenoidal: VectorField
    potential: ScalarField
    potential_grad: VectorField


def grad_with_flux(p: ScalarField, flux: WallFlux) -> VectorField:
    """Face gradient of p whose wall-normal faces carry the Neumann data."""
    g = gradient(p)
    grid = p.grid
    gx = np.array(g.xcomp)
    gy = np.array(g.ycomp)
    if not grid.periodic_x:
        gx[0, :] = -np.asarray(flux.west) * np.ones(grid.ny)
        gx[-1, :] = np.asarray(flux.east) * np.ones(grid.ny)
    gy[:, 0] = -np.asarray(flux.south) * np.ones(grid.nx)
    gy[:, -1] = np.asarray(flux.north) * np.ones(grid.nx)
    return VectorField(grid, gx, gy)


def project(g: VectorField) -> HelmholtzSplit:
    """Helmholtz decomposition via the Neumann problem lap(p) = div g."""
    grid = g.grid
    if grid.periodic_x:
        flux = WallFlux(south=-np.array(g.ycomp[:, 0]), north=np.array(g.ycomp[:, -1]))
    else:
        flux = WallFlux(west=-np.array(g.xcomp[0, :]), east=np.array(g.xcomp[-1, :]),
                        south=-np.array(g.ycomp[:, 0]), north=np.array(g.ycomp[:, -1]))
    p = neumann_poisson_solve(divergence(g), flux)
    pgrad = grad_with_flux(p, flux)
    sol = VectorField(grid, g.xcomp - pgrad.xcomp, g.ycomp - pgrad.ycomp,
                      wall_compatible=True)
    return HelmholtzSplit(sol, p, pgrad)


# ---------------------------------------------------------------------------
# node-centered Dirichlet Laplacian (vorticity and streamfunction problems)
# ---------------------------------------------------------------------------

def _dirichlet_node_factor(grid):
    if grid.periodic_x:
        raise NotImplementedError("node Dirichlet solve requires slip walls")
    key = (grid, "dirichlet-nodes")
    if key not in _CACHE:
        nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
        mi, mj = nx - 1, ny - 1  # interior node counts

        def lap1d(n, h):
            main = np.full(n, -2.0)
            off = np.ones(n - 1)
            return (sp.diags([off, main, off], [-1, 0, 1]) / h**2).tocsr()

        lap = (sp.kron(lap1d(mi, hx), sp.identity(mj))
               + sp.kron(sp.identity(mi), lap1d(mj, hy))).tocsc()
        _CACHE[key] = spla.splu(lap)
    return _CACHE[key]


def solve_dirichlet_nodes(grid: GridSpec, rhs_nodes: np.ndarray,
                          boundary_nodes: np.ndarray | None = None) -> np.ndarray:
    """Solve lap(w) = rhs on interior nodes with Dirichlet wall values.

    ``rhs_nodes`` and ``boundary_nodes`` are full (nx+1, ny+1) arrays; only
    interior entries of the former and wall entries of the latter are read.
    Returns the full node array with the wall values in place.
    """
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    lu = _dirichlet_node_factor(grid)
    b = rhs_nodes[1:-1, 1:-1].astype(float).copy()
    if boundary_nodes is not None:
        b[0, :] -= boundary_nodes[0, 1:-1] / hx**2
        b[-1, :] -= boundary_nodes[-1, 1:-1] / hx**2
        b[:, 0] -= boundary_nodes[1:-1, 0] / hy**2
        b[:, -1] -= boundary_nodes[1:-1, -1] / hy**2
    w = np.zeros((nx + 1, ny + 1))
    w[1:-1, 1:-1] = lu.solve(b.ravel()).reshape(nx - 1, ny - 1)
    if boundary_nodes is not None:
        w[0, :] = boundary_nodes[0, :]
        w[-1, :] = boundary_nodes[-1, :]
        w[:, 0] = boundary_nodes[:, 0]
        w[:, -1] = boundary_nodes[:, -1]
    return w
