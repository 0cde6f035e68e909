"""Hot stencil kernels with numba-jitted and pure-numpy implementations.

Every kernel exists in two variants that produce bit-identical results on
the same input.  The numba path is used when numba imports cleanly and the
environment variable HEAVYFLOW_NUMBA is not "0"; otherwise the numpy path
is bound.  Both variants stay importable so tests and benchmarks can call
them side by side.

Array conventions (slip-wall MAC grid, indexing [i, j] = [x, y]):
    cells  (nx, ny)        centers ((i+1/2)hx, (j+1/2)hy)
    xfaces (nx+1, ny)      x-normal faces (i*hx, (j+1/2)hy)
    yfaces (nx, ny+1)      y-normal faces ((i+1/2)hx, j*hy)
    nodes  (nx+1, ny+1)    corners (i*hx, j*hy)

Periodic-x variants store xfaces as (nx, ny) (face nx coincides with 0).
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("HEAVYFLOW_NUMBA", "1") != "0"


def _njit(func):
    if HAS_NUMBA:
        return numba.njit(cache=True)(func)
    return func


# ---------------------------------------------------------------------------
# divergence: faces -> cells
# ---------------------------------------------------------------------------

def div_slip_numpy(u, v, hx, hy):
    return (u[1:, :] - u[:-1, :]) / hx + (v[:, 1:] - v[:, :-1]) / hy


@_njit
def div_slip_numba(u, v, hx, hy):
    nx = u.shape[0] - 1
    ny = u.shape[1]
    out = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            out[i, j] = (u[i + 1, j] - u[i, j]) / hx + (v[i, j + 1] - v[i, j]) / hy
    return out


def div_periodic_numpy(u, v, hx, hy):
    return (np.roll(u, -1, axis=0) - u) / hx + (v[:, 1:] - v[:, :-1]) / hy


@_njit
def div_periodic_numba(u, v, hx, hy):
    nx, ny = u.shape
    out = np.empty((nx, ny))
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        for j in range(ny):
            out[i, j] = (u[ip, j] - u[i, j]) / hx + (v[i, j + 1] - v[i, j]) / hy
    return out


# ---------------------------------------------------------------------------
# gradient: cells -> faces (slip: wall-normal faces carry zero)
# ---------------------------------------------------------------------------

def grad_slip_numpy(s, hx, hy):
    nx, ny = s.shape
    gx = np.zeros((nx + 1, ny))
    gy = np.zeros((nx, ny + 1))
    gx[1:-1, :] = (s[1:, :] - s[:-1, :]) / hx
    gy[:, 1:-1] = (s[:, 1:] - s[:, :-1]) / hy
    return gx, gy


@_njit
def grad_slip_numba(s, hx, hy):
    nx, ny = s.shape
    gx = np.zeros((nx + 1, ny))
    gy = np.zeros((nx, ny + 1))
    for i in range(1, nx):
        for j in range(ny):
            gx[i, j] = (s[i, j] - s[i - 1, j]) / hx
    for i in range(nx):
        for j in range(1, ny):
            gy[i, j] = (s[i, j] - s[i, j - 1]) / hy
    return gx, gy


def grad_periodic_numpy(s, hx, hy):
    nx, ny = s.shape
    gx = (s - np.roll(s, 1, axis=0)) / hx
    gy = np.zeros((nx, ny + 1))
    gy[:, 1:-1] = (s[:, 1:] - s[:, :-1]) / hy
    return gx, gy


@_njit
def grad_periodic_numba(s, hx, hy):
    nx, ny = s.shape
    gx = np.empty((nx, ny))
    gy = np.zeros((nx, ny + 1))
    for i in range(nx):
        im = i - 1 if i > 0 else nx - 1
        for j in range(ny):
            gx[i, j] = (s[i, j] - s[im, j]) / hx
    for i in range(nx):
        for j in range(1, ny):
            gy[i, j] = (s[i, j] - s[i, j - 1]) / hy
    return gx, gy


# ---------------------------------------------------------------------------
# vorticity at interior nodes: omega = dv/dx - du/dy
# ---------------------------------------------------------------------------

def curl_nodes_slip_numpy(u, v, hx, hy):
    nx = u.shape[0] - 1
    ny = v.shape[1] - 1
    w = np.zeros((nx + 1, ny + 1))
    w[1:-1, 1:-1] = (v[1:, 1:-1] - v[:-1, 1:-1]) / hx - (u[1:-1, 1:] - u[1:-1, :-1]) / hy
    return w


@_njit
def curl_nodes_slip_numba(u, v, hx, hy):
    nx = u.shape[0] - 1
    ny = v.shape[1] - 1
    w = np.zeros((nx + 1, ny + 1))
    for i in range(1, nx):
        for j in range(1, ny):
            w[i, j] = (v[i, j] - v[i - 1, j]) / hx - (u[i, j] - u[i, j - 1]) / hy
    return w


def curl_nodes_periodic_numpy(u, v, hx, hy):
    nx = u.shape[0]
    ny = v.shape[1] - 1
    w = np.zeros((nx, ny + 1))
    w[:, 1:-1] = (v[:, 1:-1] - np.roll(v, 1, axis=0)[:, 1:-1]) / hx \
        - (u[:, 1:] - u[:, :-1]) / hy
    return w


@_njit
def curl_nodes_periodic_numba(u, v, hx, hy):
    nx = u.shape[0]
    ny = v.shape[1] - 1
    w = np.zeros((nx, ny + 1))
    for i in range(nx):
        im = i - 1 if i > 0 else nx - 1
        for j in range(1, ny):
            w[i, j] = (v[i, j] - v[im, j]) / hx - (u[i, j] - u[i, j - 1]) / hy
    return w


# ---------------------------------------------------------------------------
# transport flux: cells -> cells, r |-> div(avg_face(r) * uf)   (slip walls)
# ---------------------------------------------------------------------------

def transport_apply_numpy(r, ufx, ufy, hx, hy):
    nx, ny = r.shape
    fx = np.zeros((nx + 1, ny))
    fy = np.zeros((nx, ny + 1))
    fx[1:-1, :] = 0.5 * (r[1:, :] + r[:-1, :]) * ufx[1:-1, :]
    fy[:, 1:-1] = 0.5 * (r[:, 1:] + r[:, :-1]) * ufy[:, 1:-1]
    return (fx[1:, :] - fx[:-1, :]) / hx + (fy[:, 1:] - fy[:, :-1]) / hy


@_njit
def transport_apply_numba(r, ufx, ufy, hx, hy):
    nx, ny = r.shape
    out = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            fe = 0.5 * (r[i + 1, j] + r[i, j]) * ufx[i + 1, j] if i + 1 < nx else 0.0
            fw = 0.5 * (r[i, j] + r[i - 1, j]) * ufx[i, j] if i > 0 else 0.0
            fn = 0.5 * (r[i, j + 1] + r[i, j]) * ufy[i, j + 1] if j + 1 < ny else 0.0
            fs = 0.5 * (r[i, j] + r[i, j - 1]) * ufy[i, j] if j > 0 else 0.0
            out[i, j] = (fe - fw) / hx + (fn - fs) / hy
    return out


# ---------------------------------------------------------------------------
# convective transport of a MAC velocity by a mass flux (advective form).
#
# For the x component at interior x-faces:
#   C_x = avg_x[ Fxc * dx(u) ] + avg_y[ Fyn * dy(u) ]
# with Fxc the x-flux averaged to cells and Fyn the y-flux averaged to nodes
# (zero on wall nodes since the flux is wall-compatible).  This form tested
# against u telescopes to -1/2 sum(div F |u|^2) exactly.
# ---------------------------------------------------------------------------

def advect_u_numpy(u, fx, fy, hx, hy):
    nx = u.shape[0] - 1
    ny = u.shape[1]
    fxc = 0.5 * (fx[1:, :] + fx[:-1, :])                  # cells
    dxu = (u[1:, :] - u[:-1, :]) / hx                     # cells
    fyn = np.zeros((nx + 1, ny + 1))                      # nodes
    fyn[1:-1, :] = 0.5 * (fy[1:, :] + fy[:-1, :])
    dyu = np.zeros((nx + 1, ny + 1))
    dyu[:, 1:-1] = (u[:, 1:] - u[:, :-1]) / hy
    out = np.zeros((nx + 1, ny))
    out[1:-1, :] = 0.5 * (fxc[1:, :] * dxu[1:, :] + fxc[:-1, :] * dxu[:-1, :])
    out[1:-1, :] += 0.5 * (fyn[1:-1, 1:] * dyu[1:-1, 1:] + fyn[1:-1, :-1] * dyu[1:-1, :-1])
    return out


@_njit
def advect_u_numba(u, fx, fy, hx, hy):
    nx = u.shape[0] - 1
    ny = u.shape[1]
    out = np.zeros((nx + 1, ny))
    for i in range(1, nx):
        for j in range(ny):
            fxc_e = 0.5 * (fx[i + 1, j] + fx[i, j])
            fxc_w = 0.5 * (fx[i, j] + fx[i - 1, j])
            dxu_e = (u[i + 1, j] - u[i, j]) / hx
            dxu_w = (u[i, j] - u[i - 1, j]) / hx
            acc = 0.5 * (fxc_e * dxu_e + fxc_w * dxu_w)
            if j + 1 < ny:
                fyn_n = 0.5 * (fy[i, j + 1] + fy[i - 1, j + 1])
                dyu_n = (u[i, j + 1] - u[i, j]) / hy
                acc += 0.5 * fyn_n * dyu_n
            if j > 0:
                fyn_s = 0.5 * (fy[i, j] + fy[i - 1, j])
                dyu_s = (u[i, j] - u[i, j - 1]) / hy
                acc += 0.5 * fyn_s * dyu_s
            out[i, j] = acc
    return out


def advect_v_numpy(v, fx, fy, hx, hy):
    nx = v.shape[0]
    ny = v.shape[1] - 1
    fyc = 0.5 * (fy[:, 1:] + fy[:, :-1])                  # cells
    dyv = (v[:, 1:] - v[:, :-1]) / hy                     # cells
    fxn = np.zeros((nx + 1, ny + 1))                      # nodes
    fxn[:, 1:-1] = 0.5 * (fx[:, 1:] + fx[:, :-1])
    dxv = np.zeros((nx + 1, ny + 1))
    dxv[1:-1, :] = (v[1:, :] - v[:-1, :]) / hx
    out = np.zeros((nx, ny + 1))
    out[:, 1:-1] = 0.5 * (fyc[:, 1:] * dyv[:, 1:] + fyc[:, :-1] * dyv[:, :-1])
    out[:, 1:-1] += 0.5 * (fxn[1:, 1:-1] * dxv[1:, 1:-1] + fxn[:-1, 1:-1] * dxv[:-1, 1:-1])
    return out


@_njit
def advect_v_numba(v, fx, fy, hx, hy):
    nx = v.shape[0]
    ny = v.shape[1] - 1
    out = np.zeros((nx, ny + 1))
    for i in range(nx):
        for j in range(1, ny):
            fyc_n = 0.5 * (fy[i, j + 1] + fy[i, j])
            fyc_s = 0.5 * (fy[i, j] + fy[i, j - 1])
            dyv_n = (v[i, j + 1] - v[i, j]) / hy
            dyv_s = (v[i, j] - v[i, j - 1]) / hy
            acc = 0.5 * (fyc_n * dyv_n + fyc_s * dyv_s)
            if i + 1 < nx:
                fxn_e = 0.5 * (fx[i + 1, j] + fx[i + 1, j - 1])
                dxv_e = (v[i + 1, j] - v[i, j]) / hx
                acc += 0.5 * fxn_e * dxv_e
            if i > 0:
                fxn_w = 0.5 * (fx[i, j] + fx[i, j - 1])
                dxv_w = (v[i, j] - v[i - 1, j]) / hx
                acc += 0.5 * fxn_w * dxv_w
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch table
# ---------------------------------------------------------------------------

_VARIANTS = {
    "div_slip": (div_slip_numpy, div_slip_numba),
    "div_periodic": (div_periodic_numpy, div_periodic_numba),
    "grad_slip": (grad_slip_numpy, grad_slip_numba),
    "grad_periodic": (grad_periodic_numpy, grad_periodic_numba),
    "curl_nodes_slip": (curl_nodes_slip_numpy, curl_nodes_slip_numba),
    "curl_nodes_periodic": (curl_nodes_periodic_numpy, curl_nodes_periodic_numba),
    "transport_apply": (transport_apply_numpy, transport_apply_numba),
    "advect_u": (advect_u_numpy, advect_u_numba),
    "advect_v": (advect_v_numpy, advect_v_numba),
}


def get_kernel(name, use_numba=None):
    """Return the bound implementation of a kernel by name."""
    np_impl, nb_impl = _VARIANTS[name]
    if use_numba is None:
        use_numba = USE_NUMBA
    return nb_impl if use_numba else np_impl


div_slip = get_kernel("div_slip")
div_periodic = get_kernel("div_periodic")
grad_slip = get_kernel("grad_slip")
grad_periodic = get_kernel("grad_periodic")
curl_nodes_slip = get_kernel("curl_nodes_slip")
curl_nodes_periodic = get_kernel("curl_nodes_periodic")
transport_apply = get_kernel("transport_apply")
advect_u = get_kernel("advect_u")
advect_v = get_kernel("advect_v")


def warm_up():
    """Trigger JIT compilation of all bound kernels on tiny inputs."""
    if not USE_NUMBA:
        return
    u = np.zeros((9, 8))
    v = np.zeros((8, 9))
    s = np.zeros((8, 8))
    up = np.zeros((8, 8))
    div_slip(u, v, 1.0, 1.0)
    div_periodic(up, v, 1.0, 1.0)
    grad_slip(s, 1.0, 1.0)
    grad_periodic(s, 1.0, 1.0)
    curl_nodes_slip(u, v, 1.0, 1.0)
    curl_nodes_periodic(up, v, 1.0, 1.0)
    transport_apply(s, u, v, 1.0, 1.0)
    advect_u(u, u, v, 1.0, 1.0)
    advect_v(v, u, v, 1.0, 1.0)
