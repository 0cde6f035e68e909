"""Staggered fields on a 2D rectangle and their discrete calculus.

Grid layout (MAC staggering, array index [i, j] maps to [x, y]):

    scalar values   (nx, ny)       at cell centers ((i+1/2)hx, (j+1/2)hy)
    x components    (nx+1, ny)     at x-normal faces (i hx, (j+1/2)hy)
    y components    (nx, ny+1)     at y-normal faces ((i+1/2)hx, j hy)
    node quantities (nx+1, ny+1)   at corners (i hx, j hy)

Two wall modes: "slip" closes all four walls with impermeable slip walls,
"periodic-x" wraps the x direction (x components then have shape (nx, ny),
face nx coinciding with face 0) and keeps slip walls at y = 0, Ly.

Operator conventions that the rest of the package leans on:

* divergence and gradient are exact adjoints: <div v, s> + <v, grad s> = 0
  to machine precision whenever v has zero normal components on the walls.
  To get this, ``gradient`` leaves wall-normal faces at exactly zero (the
  impermeability convention); Sobolev norms use their own one-sided
  differences at walls instead of the face gradient.
* ``curl2d`` evaluates vorticity at interior nodes by exact staggered
  differences and extrapolates to wall nodes, so curl(grad s) vanishes
  identically, then averages nodes to cells.
* trace(sym_grad(v)) coincides with divergence(v) exactly because the
  diagonal of the deformation tensor is built from the same face stencil.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels

WALL_MODES = ("slip", "periodic-x")


class GridMismatchError(ValueError):
    """Two fields from different grids were combined."""


@dataclass(frozen=True)
class GridSpec:
    """Cell counts, edge lengths and wall mode of the rectangle."""

    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0
    wall_mode: str = "slip"

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"need at least 8 cells per axis, got {self.nx}x{self.ny}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain edge lengths must be positive")
        if self.wall_mode not in WALL_MODES:
            raise ValueError(f"wall_mode must be one of {WALL_MODES}")

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def area(self):
        return self.Lx * self.Ly

    @property
    def periodic_x(self):
        return self.wall_mode == "periodic-x"

    @property
    def nxf(self):
        """Number of distinct x-face columns."""
        return self.nx if self.periodic_x else self.nx + 1

    def xc(self):
        return (np.arange(self.nx) + 0.5) * self.hx

    def yc(self):
        return (np.arange(self.ny) + 0.5) * self.hy

    def xf(self):
        return np.arange(self.nxf) * self.hx

    def yf(self):
        return np.arange(self.ny + 1) * self.hy

    def fingerprint(self):
        return f"grid:{self.nx}x{self.ny}:{self.Lx:.17g}x{self.Ly:.17g}:{self.wall_mode}"


def _freeze(arr):
    a = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("field contains non-finite entries")
    view = a.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class ScalarField:
    """Cell-centered scalar data; immutable after construction."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = _freeze(self.values)
        if vals.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"scalar shape {vals.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def from_function(cls, grid, fn):
        x, y = np.meshgrid(grid.xc(), grid.yc(), indexing="ij")
        return cls(grid, fn(x, y))

    def integral(self):
        return float(self.values.sum() * self.grid.cell_area)

    def mean(self):
        return self.integral() / self.grid.area

    def __add__(self, other):
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    """Face-staggered vector data; immutable after construction.

    ``wall_compatible=True`` asserts that the normal component vanishes
    exactly on every slip wall (u.n = 0), which the constructor verifies.
    """

    grid: GridSpec
    xcomp: np.ndarray
    ycomp: np.ndarray
    wall_compatible: bool = dc_field(default=False)

    def __post_init__(self):
        xc = _freeze(self.xcomp)
        yc = _freeze(self.ycomp)
        g = self.grid
        if xc.shape != (g.nxf, g.ny) or yc.shape != (g.nx, g.ny + 1):
            raise ValueError(
                f"vector shapes {xc.shape}/{yc.shape} do not match grid "
                f"({g.nxf}, {g.ny})/({g.nx}, {g.ny + 1})")
        object.__setattr__(self, "xcomp", xc)
        object.__setattr__(self, "ycomp", yc)
        if self.wall_compatible and not self.check_wall_compatible():
            raise ValueError("field flagged wall-compatible but u.n != 0 on a wall")

    def check_wall_compatible(self):
        g = self.grid
        ok = np.all(self.ycomp[:, 0] == 0.0) and np.all(self.ycomp[:, -1] == 0.0)
        if not g.periodic_x:
            ok = ok and np.all(self.xcomp[0, :] == 0.0) and np.all(self.xcomp[-1, :] == 0.0)
        return bool(ok)

    @classmethod
    def zeros(cls, grid, wall_compatible=True):
        return cls(grid, np.zeros((grid.nxf, grid.ny)),
                   np.zeros((grid.nx, grid.ny + 1)), wall_compatible)

    @classmethod
    def from_functions(cls, grid, fx, fy, enforce_walls=False):
        xx, xy = np.meshgrid(grid.xf(), grid.yc(), indexing="ij")
        yx, yy = np.meshgrid(grid.xc(), grid.yf(), indexing="ij")
        u = fx(xx, xy)
        v = fy(yx, yy)
        if enforce_walls:
            v = v.copy()
            v[:, 0] = 0.0
            v[:, -1] = 0.0
            if not grid.periodic_x:
                u = u.copy()
                u[0, :] = 0.0
                u[-1, :] = 0.0
        return cls(grid, u, v, wall_compatible=enforce_walls)

    def __add__(self, other):
        _check_same_grid(self.grid, other.grid)
        return VectorField(self.grid, self.xcomp + other.xcomp,
                           self.ycomp + other.ycomp,
                           self.wall_compatible and other.wall_compatible)

    def __sub__(self, other):
        _check_same_grid(self.grid, other.grid)
        return VectorField(self.grid, self.xcomp - other.xcomp,
                           self.ycomp - other.ycomp,
                           self.wall_compatible and other.wall_compatible)

    def __mul__(self, c):
        return VectorField(self.grid, self.xcomp * float(c), self.ycomp * float(c),
                           self.wall_compatible)

    __rmul__ = __mul__


def _check_same_grid(g1, g2):
    if g1 != g2:
        raise GridMismatchError(f"grid mismatch: {g1} vs {g2}")


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------

def divergence(v: VectorField) -> ScalarField:
    """Conservative cell divergence; exact on componentwise-linear fields."""
    g = v.grid
    if g.periodic_x:
        vals = _kernels.div_periodic(v.xcomp, v.ycomp, g.hx, g.hy)
    else:
        vals = _kernels.div_slip(v.xcomp, v.ycomp, g.hx, g.hy)
    return ScalarField(g, vals)


def gradient(s: ScalarField) -> VectorField:
    """Face gradient; wall-normal faces carry exactly zero (slip convention)."""
    g = s.grid
    if g.periodic_x:
        gx, gy = _kernels.grad_periodic(s.values, g.hx, g.hy)
    else:
        gx, gy = _kernels.grad_slip(s.values, g.hx, g.hy)
    return VectorField(g, gx, gy, wall_compatible=True)


def curl_nodes(v: VectorField) -> np.ndarray:
    """Vorticity dv/dx - du/dy on nodes; wall rows/columns extrapolated."""
    g = v.grid
    if g.periodic_x:
        w = _kernels.curl_nodes_periodic(v.xcomp, v.ycomp, g.hx, g.hy)
    else:
        w = _kernels.curl_nodes_slip(v.xcomp, v.ycomp, g.hx, g.hy)
        w[0, 1:-1] = 3 * w[1, 1:-1] - 3 * w[2, 1:-1] + w[3, 1:-1]
        w[-1, 1:-1] = 3 * w[-2, 1:-1] - 3 * w[-3, 1:-1] + w[-4, 1:-1]
    w[:, 0] = 3 * w[:, 1] - 3 * w[:, 2] + w[:, 3]
    w[:, -1] = 3 * w[:, -2] - 3 * w[:, -3] + w[:, -4]
    return w


def nodes_to_cells(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_x:
        wr = np.roll(w, -1, axis=0)
        return 0.25 * (w[:, :-1] + w[:, 1:] + wr[:, :-1] + wr[:, 1:])
    return 0.25 * (w[:-1, :-1] + w[1:, :-1] + w[:-1, 1:] + w[1:, 1:])


def curl2d(v: VectorField) -> ScalarField:
    """Node-to-cell averaged scalar vorticity dv/dx - du/dy."""
    return ScalarField(v.grid, nodes_to_cells(curl_nodes(v), v.grid))


def sym_grad(v: VectorField):
    """Cell-centered deformation tensor D(v) = (grad v + grad v^T)/2.

    Returns (dxx, dxy, dyy) cell arrays.  dxx + dyy equals divergence(v)
    exactly; the off-diagonal is node-sampled and averaged to cells with
    one-sided differences on wall nodes.
    """
    g = v.grid
    u, w = v.xcomp, v.ycomp
    if g.periodic_x:
        dxx = (np.roll(u, -1, axis=0) - u) / g.hx
    else:
        dxx = (u[1:, :] - u[:-1, :]) / g.hx
    dyy = (w[:, 1:] - w[:, :-1]) / g.hy

    # off-diagonal at nodes: 1/2 (du/dy + dv/dx), then averaged to cells
    nxn = g.nx if g.periodic_x else g.nx + 1
    dudy = np.zeros((nxn, g.ny + 1))
    dudy[:, 1:-1] = (u[:, 1:] - u[:, :-1]) / g.hy
    dudy[:, 0] = (-2.0 * u[:, 0] + 3.0 * u[:, 1] - u[:, 2]) / g.hy
    dudy[:, -1] = (2.0 * u[:, -1] - 3.0 * u[:, -2] + u[:, -3]) / g.hy

    dvdx = np.zeros((nxn, g.ny + 1))
    if g.periodic_x:
        dvdx = (w - np.roll(w, 1, axis=0)) / g.hx
    else:
        dvdx[1:-1, :] = (w[1:, :] - w[:-1, :]) / g.hx
        dvdx[0, :] = (-2.0 * w[0, :] + 3.0 * w[1, :] - w[2, :]) / g.hx
        dvdx[-1, :] = (2.0 * w[-1, :] - 3.0 * w[-2, :] + w[-3, :]) / g.hx

    dxy = nodes_to_cells(0.5 * (dudy + dvdx), g)
    return dxx, dxy, dyy


# wall-node one-sided weights used above: derivative at the wall from the
# first three samples at distances h/2, 3h/2, 5h/2 is (-2 f0 + 3 f1 - f2)/h
# ... checked against linears and quadratics in the test suite.


# ---------------------------------------------------------------------------
# quadrature, norms, projections
# ---------------------------------------------------------------------------

def _face_weights(grid):
    """Quadrature weights for x- and y-face samples (sum to |Omega| each)."""
    a = grid.cell_area
    wx = np.full((grid.nxf, grid.ny), a)
    if not grid.periodic_x:
        wx[0, :] *= 0.5
        wx[-1, :] *= 0.5
    wy = np.full((grid.nx, grid.ny + 1), a)
    wy[:, 0] *= 0.5
    wy[:, -1] *= 0.5
    return wx, wy


def lp_norm(f, p):
    """Discrete L^p norm with cell-area quadrature; max norm for p = inf."""
    if p != np.inf and p < 1:
        raise ValueError(f"norm exponent must be >= 1 or inf, got {p}")
    if isinstance(f, ScalarField):
        if p == np.inf:
            return float(np.max(np.abs(f.values))) if f.values.size else 0.0
        return float((np.abs(f.values) ** p).sum() * f.grid.cell_area) ** (1.0 / p)
    if isinstance(f, VectorField):
        if p == np.inf:
            return float(max(np.max(np.abs(f.xcomp)), np.max(np.abs(f.ycomp))))
        wx, wy = _face_weights(f.grid)
        total = (np.abs(f.xcomp) ** p * wx).sum() + (np.abs(f.ycomp) ** p * wy).sum()
        return float(total) ** (1.0 / p)
    raise TypeError(f"unsupported field type {type(f)!r}")


def inner_cells(a: ScalarField, b: ScalarField):
    _check_same_grid(a.grid, b.grid)
    return float((a.values * b.values).sum() * a.grid.cell_area)


def inner_faces(a: VectorField, b: VectorField):
    _check_same_grid(a.grid, b.grid)
    s = (a.xcomp * b.xcomp).sum() + (a.ycomp * b.ycomp).sum()
    return float(s * a.grid.cell_area)


def array_derivative(arr, axis, h, order=1, periodic=False):
    """Derivative of a uniformly sampled array along one axis.

    Centered differences inside, second-order one-sided stencils at the
    ends (wall treatment for Sobolev norms); periodic axes wrap instead.
    """
    a = np.asarray(arr, dtype=float)
    if axis == 1:
        return array_derivative(a.T, 0, h, order, periodic).T
    if periodic:
        if order == 1:
            return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2 * h)
        return (np.roll(a, -1, axis=0) - 2 * a + np.roll(a, 1, axis=0)) / h**2
    out = np.empty_like(a)
    if order == 1:
        out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
        out[0] = (-3 * a[0] + 4 * a[1] - a[2]) / (2 * h)
        out[-1] = (3 * a[-1] - 4 * a[-2] + a[-3]) / (2 * h)
    elif order == 2:
        out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / h**2
        out[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / h**2
        out[-1] = (2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]) / h**2
    else:
        raise ValueError("order must be 1 or 2")
    return out


def _component_derivatives(arr, grid, k, periodic_x):
    """All derivative arrays of one component up to order k."""
    hx, hy = grid.hx, grid.hy
    dx = array_derivative(arr, 0, hx, 1, periodic_x)
    dy = array_derivative(arr, 1, hy, 1, False)
    out = [[arr], [dx, dy]]
    if k >= 2:
        dxx = array_derivative(arr, 0, hx, 2, periodic_x)
        dyy = array_derivative(arr, 1, hy, 2, False)
        dxy = array_derivative(dx, 1, hy, 1, False)
        out.append([dxx, dxy, dyy])
    return out


def _combine_lp(arrays_and_weights, p):
    if p == np.inf:
        return max(float(np.max(np.abs(a))) for a, _ in arrays_and_weights)
    total = 0.0
    for a, w in arrays_and_weights:
        total += float((np.abs(a) ** p * w).sum())
    return total ** (1.0 / p)


def sobolev_norm(f, k, p):
    """Discrete W^{k,p} norm, (sum_{|a|<=k} ||D^a f||_p^p)^{1/p}.

    Derivatives at walls use one-sided differences; they are independent
    of the face-gradient operator on purpose (see module docstring).
    """
    if k not in (1, 2):
        raise ValueError(f"unsupported derivative order k={k}")
    if p != np.inf and p < 1:
        raise ValueError(f"norm exponent must be >= 1 or inf, got {p}")
    g = f.grid
    a = g.cell_area
    if isinstance(f, ScalarField):
        groups = _component_derivatives(f.values, g, k, g.periodic_x)
        items = [(arr, a) for lvl in groups for arr in lvl]
        return _combine_lp(items, p)
    if isinstance(f, VectorField):
        items = []
        for arr in (f.xcomp, f.ycomp):
            groups = _component_derivatives(arr, g, k, g.periodic_x)
            items.extend((d, a) for lvl in groups for d in lvl)
        return _combine_lp(items, p)
    raise TypeError(f"unsupported field type {type(f)!r}")


def grad_seminorm(v: VectorField, p):
    """||grad v||_p over the four first-derivative arrays of v."""
    g = v.grid
    items = []
    for arr in (v.xcomp, v.ycomp):
        items.append((array_derivative(arr, 0, g.hx, 1, g.periodic_x), g.cell_area))
        items.append((array_derivative(arr, 1, g.hy, 1, False), g.cell_area))
    return _combine_lp(items, p)


def hess_seminorm(v: VectorField, p):
    """||grad^2 v||_p over the second-derivative arrays of v."""
    g = v.grid
    items = []
    for arr in (v.xcomp, v.ycomp):
        dx = array_derivative(arr, 0, g.hx, 1, g.periodic_x)
        items.append((array_derivative(arr, 0, g.hx, 2, g.periodic_x), g.cell_area))
        items.append((array_derivative(dx, 1, g.hy, 1, False), g.cell_area))
        items.append((array_derivative(arr, 1, g.hy, 2, False), g.cell_area))
    return _combine_lp(items, p)


def mean_zero_project(s: ScalarField) -> ScalarField:
    """Remove the mean; output integrates to below 1e-13 * ||s||_1."""
    return ScalarField(s.grid, s.values - s.mean())


# ---------------------------------------------------------------------------
# random smooth fields (shared by property tests and the verify command)
# ---------------------------------------------------------------------------

def random_scalar(grid, rng, amplitude=1.0, modes=3, mean_zero=False):
    x, y = np.meshgrid(grid.xc() / grid.Lx, grid.yc() / grid.Ly, indexing="ij")
    vals = _random_modes(x, y, rng, modes) * amplitude
    s = ScalarField(grid, vals)
    return mean_zero_project(s) if mean_zero else s


def random_vector(grid, rng, amplitude=1.0, modes=3, wall_compatible=False):
    xx, xy = np.meshgrid(grid.xf() / grid.Lx, grid.yc() / grid.Ly, indexing="ij")
    yx, yy = np.meshgrid(grid.xc() / grid.Lx, grid.yf() / grid.Ly, indexing="ij")
    u = _random_modes(xx, xy, rng, modes) * amplitude
    v = _random_modes(yx, yy, rng, modes) * amplitude
    if wall_compatible:
        v[:, 0] = 0.0
        v[:, -1] = 0.0
        if not grid.periodic_x:
            u[0, :] = 0.0
            u[-1, :] = 0.0
    return VectorField(grid, u, v, wall_compatible=wall_compatible)


def _random_modes(x, y, rng, modes):
    out = np.zeros_like(x)
    for _ in range(modes):
        kx, ky = rng.integers(1, 4, size=2)
        a, b = rng.normal(size=2)
        out += a * np.cos(np.pi * kx * x) * np.cos(np.pi * ky * y)
        out += b * np.sin(np.pi * kx * x) * np.sin(np.pi * ky * y)
    return out


# ---------------------------------------------------------------------------
# binary dump ("HVF1") and CSV export
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sqqdd4s")
_KINDS = {("scalar", False): b"SCLS", ("scalar", True): b"SCLP",
          ("vector", False): b"VECS", ("vector", True): b"VECP"}


def dump_field(f, path):
    """Write a field in the HVF1 little-endian binary format."""
    g = f.grid
    kind = _KINDS[("scalar" if isinstance(f, ScalarField) else "vector", g.periodic_x)]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"HVF1", g.nx, g.ny, g.Lx, g.Ly, kind))
        if isinstance(f, ScalarField):
            fh.write(f.values.astype("<f8").tobytes(order="C"))
        else:
            fh.write(f.xcomp.astype("<f8").tobytes(order="C"))
            fh.write(f.ycomp.astype("<f8").tobytes(order="C"))


def load_field(path):
    """Read a field written by :func:`dump_field`."""
    with open(path, "rb") as fh:
        magic, nx, ny, Lx, Ly, kind = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != b"HVF1":
            raise ValueError(f"{path}: not an HVF1 field dump")
        periodic = kind in (b"SCLP", b"VECP")
        grid = GridSpec(nx, ny, Lx, Ly, "periodic-x" if periodic else "slip")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if kind in (b"SCLS", b"SCLP"):
        return ScalarField(grid, payload.reshape(nx, ny))
    nxf = grid.nxf
    split = nxf * ny
    u = payload[:split].reshape(nxf, ny)
    v = payload[split:].reshape(nx, ny + 1)
    return VectorField(grid, u, v)


def to_csv(f, path):
    """Cell-centered CSV export: x, y, value (two value columns for vectors)."""
    g = f.grid
    x, y = np.meshgrid(g.xc(), g.yc(), indexing="ij")
    with open(path, "w") as fh:
        if isinstance(f, ScalarField):
            fh.write("x,y,value\n")
            for xi, yi, vi in zip(x.ravel(), y.ravel(), f.values.ravel()):
                fh.write(f"{float(xi)!r},{float(yi)!r},{float(vi)!r}\n")
        else:
            if g.periodic_x:
                uc = 0.5 * (f.xcomp + np.roll(f.xcomp, -1, axis=0))
            else:
                uc = 0.5 * (f.xcomp[1:, :] + f.xcomp[:-1, :])
            vc = 0.5 * (f.ycomp[:, 1:] + f.ycomp[:, :-1])
            fh.write("x,y,value_x,value_y\n")
            for xi, yi, ui, vi in zip(x.ravel(), y.ravel(), uc.ravel(), vc.ravel()):
                fh.write(f"{float(xi)!r},{float(yi)!r},{float(ui)!r},{float(vi)!r}\n")
