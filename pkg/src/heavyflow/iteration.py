"""Nested fixed-point construction of the steady compressible flow.

Three loop levels, innermost first:

1. ``inner_banach``: the viscosity-linearization map.  With the density
   offset rt and the convective velocity ub frozen, iterate u_tilde -> u
   where u solves the linearized system whose data carries the split-off
   variable-viscosity terms of u_tilde,
       G  = div(2 rt D(u~)) + grad R_m(rt) + (m + rt) f,
       h  = -n . 2 rt D(u~) . tau,
   so the fixed point solves the momentum equation with the full
   coefficient 2(m + rt) and the homogeneous slip law.  Contracts with a
   measured ratio that shrinks like 1/m.

2. ``density_loop``: replace rt by the density just computed and repeat,
   also advancing the transport velocity to the latest u so the converged
   pair obeys continuity with its own velocity.

3. ``outer_loop``: damped Picard realization of the velocity-coefficient
   map T(ub) = u, with automatic damping when the ratio history stalls.
   Applied to zero force, every level is exact after a single pass.

Admissibility of each iterate against the configured bound set is
measured and recorded; violations warn by default and raise under
``strict`` (large forces at moderate mean density routinely leave the
provable regime yet still converge, which is itself worth observing).
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (ScalarField, VectorField, divergence, grad_seminorm,
                    gradient, hess_seminorm, lp_norm, sobolev_norm,
                    array_derivative)
from .linsolve import (LinearizedProblem, MonolithicOperator, WallStress,
                       convective_apply, face_mass_flux, slip_closure_stress,
                       solve_monolithic, stress_divergence,
                       tangential_stress_wall_values)
from .model import ModelParams


class BelowConstructiveRegimeError(RuntimeError):
    """The configured bounds fail the largeness gate for this m."""


class LoopConvergenceError(RuntimeError):
    """A fixed-point level exhausted its iteration budget."""


@dataclass(frozen=True)
class AdmissibleBounds:
    """Configured a priori constants: solution-size bound C_f, kinetic
    energy bound E, transport smallness alpha."""

    C_f: float
    E: float
    alpha: float = 0.1

    def gate_margin(self, params: ModelParams) -> float:
        """Largeness-gate ratio; > 1 means inside the constructive regime.

        min(m, m^((gamma-1)/4)) / (1/alpha + 15) must dominate the worst
        combination of the configured constants (the non-constructive
        absolute constants are taken as 1).
        """
        lhs = min(params.m, params.m ** ((params.gamma - 1.0) / 4.0)) \
            / (1.0 / self.alpha + 15.0)
        rhs = max(self.C_f, self.C_f**2, self.C_f * self.E**2,
                  self.C_f**2 * self.E**2)
        return lhs / rhs

    def passes_gate(self, params: ModelParams) -> bool:
        return self.gate_margin(params) > 1.0


def calibrate_bounds(params: ModelParams, alpha=0.1, energy_factor=1.0) -> AdmissibleBounds:
    """Bounds from the force norms: E proxies the energy estimate, C_f the
    a priori solution-size bound (its functional form in ||f||, E)."""
    p = params.p_exp
    f_p = lp_norm(params.force, p)
    f_65 = lp_norm(params.force, 1.2)
    E = energy_factor * (1.0 + f_65)
    C_f = 1.0 + f_p + f_65 ** ((2 * p + 6) / (6 - p)) * E ** (3 * p / (6 - p))
    return AdmissibleBounds(C_f=C_f, E=E, alpha=alpha)


# ---------------------------------------------------------------------------
# iterate certificates and set membership
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationState:
    r: ScalarField
    u: VectorField
    certificates: dict


def measure_certificates(r: ScalarField, u: VectorField, params: ModelParams) -> dict:
    g = r.grid
    m, gamma, p = params.m, params.gamma, params.p_exp
    dx = array_derivative(r.values, 0, g.hx, 1)
    dy = array_derivative(r.values, 1, g.hy, 1)
    grad_r_p = float((np.abs(dx) ** p + np.abs(dy) ** p).sum() * g.cell_area) ** (1 / p)
    return {
        "density": m ** (gamma - 2.0) * (lp_norm(r, np.inf) + grad_r_p),
        "energy": grad_seminorm(u, 2),
        "regularity": grad_seminorm(u, np.inf) + lp_norm(u, np.inf)
        + hess_seminorm(u, p),
        "div": m ** (gamma - 1.0) * lp_norm(divergence(u), p),
        "mass": abs(r.integral()),
    }


@dataclass(frozen=True)
class AdmissibilityReport:
    constraints: dict          # name -> (measured, bound, ok)
    ok: bool


def check_admissible(state: IterationState, bounds: AdmissibleBounds,
                     params: ModelParams) -> AdmissibilityReport:
    """Membership of (r, u) in the discrete admissible sets; never mutates."""
    c = state.certificates or measure_certificates(state.r, state.u, params)
    # the mass constraint is about the total mass integral(rho) = |Omega| m,
    # so "relative" is relative to m |Omega|
    mass_scale = params.m * state.r.grid.area
    checks = {
        "mass_zero_mean": (c["mass"], 1e-12 * mass_scale, c["mass"] <= 1e-12 * mass_scale),
        "density_size": (c["density"], bounds.C_f, c["density"] <= bounds.C_f),
        "kinetic_energy": (c["energy"], bounds.E, c["energy"] <= bounds.E),
        "velocity_regularity": (c["regularity"], bounds.C_f,
                                c["regularity"] <= bounds.C_f),
        "divergence_size": (c["div"], 2.0 * bounds.C_f**2,
                            c["div"] <= 2.0 * bounds.C_f**2),
    }
    return AdmissibilityReport(checks, all(v[2] for v in checks.values()))


# ---------------------------------------------------------------------------
# loop reporting
# ---------------------------------------------------------------------------

@dataclass
class LoopReport:
    level: str
    iterates: int = 0
    errors_per_iterate: list = dc_field(default_factory=list)
    contraction_ratios: list = dc_field(default_factory=list)
    converged: bool = False
    final_residual: dict | None = None
    admissibility_failures: int = 0
    inner_reports: list = dc_field(default_factory=list)
    damping_history: list = dc_field(default_factory=list)

    def record(self, err, noise_floor=0.0):
        prev = self.errors_per_iterate[-1] if self.errors_per_iterate else None
        self.errors_per_iterate.append(err)
        self.iterates += 1
        if prev is not None and prev > noise_floor and err > noise_floor:
            self.contraction_ratios.append(err / prev)

    def geometric_rate(self):
        """Fitted decay rate of the error sequence (None if too short)."""
        errs = [e for e in self.errors_per_iterate if e > 0.0]
        if len(errs) < 2:
            return None
        return float(np.exp(np.polyfit(np.arange(len(errs)), np.log(errs), 1)[0]))

    def mean_ratio(self):
        if not self.contraction_ratios:
            return None
        return float(np.mean(self.contraction_ratios))


# ---------------------------------------------------------------------------
# Taylor remainder of the pressure
# ---------------------------------------------------------------------------

def taylor_remainder(rt: ScalarField, params: ModelParams):
    """R_m(rt) = (m + rt)^gamma - gamma m^(gamma-1) rt - m^gamma, exactly,
    and its chain-rule gradient on faces.

    Requires m + rt > 0 pointwise.  Evaluated in the cancellation-free form
    m^gamma (expm1(gamma log1p(rt/m)) - gamma rt/m): the naive difference
    loses eps * m^gamma absolutely, which at large m swamps the O(m^(g-2) rt^2)
    remainder itself.  The face gradient uses the averaged coefficient
    gamma((m+rt)^(gamma-1) - m^(gamma-1)); at gamma = 2 this coincides with
    the exact difference of rt^2.
    """
    m, gamma = params.m, params.gamma
    grid = rt.grid
    if np.any(m + rt.values <= 0.0):
        raise ValueError("density m + rt must stay positive")
    x = rt.values / m
    if gamma == 2.0:
        vals = rt.values**2
    else:
        vals = m**gamma * (np.expm1(gamma * np.log1p(x)) - gamma * x)
    coeff = gamma * m ** (gamma - 1.0) * np.expm1((gamma - 1.0) * np.log1p(x))
    gr = gradient(rt)
    gx = np.zeros_like(gr.xcomp)
    gy = np.zeros_like(gr.ycomp)
    gx[1:-1, :] = 0.5 * (coeff[1:, :] + coeff[:-1, :]) * gr.xcomp[1:-1, :]
    gy[:, 1:-1] = 0.5 * (coeff[:, 1:] + coeff[:, :-1]) * gr.ycomp[:, 1:-1]
    return ScalarField(grid, vals), VectorField(grid, gx, gy, wall_compatible=True)


# ---------------------------------------------------------------------------
# inner Banach loop (viscosity linearization)
# ---------------------------------------------------------------------------

def _split_viscosity_data(params, rt: ScalarField, u_tilde: VectorField,
                          rm_grad: VectorField, rho_force):
    """Data (G, h) of the linearized solve for the map input u_tilde."""
    grid = rt.grid
    sig = tangential_stress_wall_values(grid, rt.values, u_tilde)
    sx, sy = stress_divergence(grid, rt.values, u_tilde, wall_sigma=sig)
    Gx = sx + rm_grad.xcomp + rho_force[0]
    Gy = sy + rm_grad.ycomp + rho_force[1]
    s, n, w, e = sig
    h = WallStress(s, -n, w, -e)
    return VectorField(grid, Gx, Gy), h


def inner_banach(ub: VectorField, rt: ScalarField, params: ModelParams,
                 bounds: AdmissibleBounds, *, transport: VectorField | None = None,
                 warm_start: VectorField | None = None, tol=1e-10, max_iter=60,
                 strict=False, op: MonolithicOperator | None = None):
    """Fixed point of the viscosity-linearization map u_tilde -> u.

    Returns (r, u, LoopReport).  The coefficient matrix is factorized once
    (transport, convection and rt are frozen here); only the data (G, h)
    moves with the iterate.
    """
    grid = params.grid
    transport = transport if transport is not None else ub
    op = op or MonolithicOperator(params, transport, ub, rt)
    rho = params.m + rt.values
    fcx, fcy = face_mass_flux(grid, rho, params.force)
    _, rm_grad = taylor_remainder(rt, params)

    u_tilde = warm_start if warm_start is not None else VectorField.zeros(grid)
    report = LoopReport("inner")
    r = ScalarField.zeros(grid)
    u = u_tilde
    for _ in range(max_iter):
        G, h = _split_viscosity_data(params, rt, u_tilde, rm_grad, (fcx, fcy))
        prob = LinearizedProblem(params, transport, ub, rt, G, h,
                                 alpha=bounds.alpha, check_smallness=False)
        sol = solve_monolithic(prob, op=op)
        r, u = sol.r, sol.u
        diff = grad_seminorm(u - u_tilde, 2)
        scale = grad_seminorm(u, 2) + 1e-300
        report.record(diff, noise_floor=10.0 * np.finfo(float).eps * scale)
        u_tilde = u
        if diff <= tol * scale or diff == 0.0:
            report.converged = True
            break
    if not report.converged:
        raise LoopConvergenceError(
            f"inner loop stalled after {max_iter} iterations; last diffs "
            f"{report.errors_per_iterate[-3:]}")
    state = IterationState(r, u, measure_certificates(r, u, params))
    adm = check_admissible(state, bounds, params)
    if not adm.ok:
        report.admissibility_failures += 1
        _admissibility_signal(adm, params, strict, "inner")
    report.final_residual = sol.residuals
    return r, u, report


def _admissibility_signal(adm: AdmissibilityReport, params, strict, level):
    failed = {k: v[:2] for k, v in adm.constraints.items() if not v[2]}
    msg = (f"{level} iterate left the admissible set at m={params.m:g}: {failed} "
           f"(expected when m is below the constructive regime)")
    if strict:
        raise BelowConstructiveRegimeError(msg)
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# density linearization loop
# ---------------------------------------------------------------------------

def density_loop(ub: VectorField, params: ModelParams, bounds: AdmissibleBounds, *,
                 warm_r: ScalarField | None = None, warm_u: VectorField | None = None,
                 tol=1e-9, max_iter=40, tol_inner=1e-10, strict=False):
    """Banach loop S(r_n) = r_(n+1) eliminating the density linearization.

    Each step solves the rt = r_n problem through ``inner_banach``; the
    transport velocity advances with the iterate so the converged pair
    satisfies continuity with its own velocity.
    """
    grid = params.grid
    rt = warm_r if warm_r is not None else ScalarField.zeros(grid)
    u_prev = warm_u if warm_u is not None else VectorField.zeros(grid)
    report = LoopReport("density")
    r, u = rt, u_prev
    # density diffs are judged against the size of r the momentum balance
    # can sustain (m^(2-gamma)||f||/gamma), not just ||r||: for solenoidal
    # forces r is far smaller than u and a pure-||r|| scale would demand
    # more than the inner solves resolve
    data_scale = params.m ** (2.0 - params.gamma) / params.gamma \
        * lp_norm(params.force, 2)
    for _ in range(max_iter):
        r, u, inner_rep = inner_banach(ub, rt, params, bounds, transport=u_prev,
                                       warm_start=u_prev, tol=tol_inner,
                                       strict=strict)
        report.inner_reports.append(inner_rep)
        diff = lp_norm(r - rt, 2)
        scale = lp_norm(r, 2) + data_scale + 1e-300
        report.record(diff, noise_floor=10.0 * np.finfo(float).eps * scale)
        rt, u_prev = r, u
        if diff <= tol * scale or diff == 0.0:
            report.converged = True
            break
    if not report.converged:
        raise LoopConvergenceError(
            f"density loop stalled after {max_iter} iterations; last diffs "
            f"{report.errors_per_iterate[-3:]}")
    report.final_residual = report.inner_reports[-1].final_residual
    return r, u, report


# ---------------------------------------------------------------------------
# outer Picard loop (velocity-coefficient map)
# ---------------------------------------------------------------------------

def outer_loop(params: ModelParams, bounds: AdmissibleBounds | None = None, *,
               tol=1e-8, max_outer=40, tol_density=1e-9, tol_inner=1e-10,
               tol_residual=1e-7, theta=1.0,
               warm_start: IterationState | None = None,
               strict=False, checkpoint_dir=None):
    """Damped Picard iteration on the map T(ub) = u.

    Existence theory guarantees a fixed point, not that Picard reaches it;
    non-convergence is reported with the full ratio history rather than
    masked.  With zero force every level is exact in one pass.  The
    residual of the original nonlinear system is evaluated on the final
    state and checked against tol_residual times the forcing scale.
    """
    bounds = bounds or calibrate_bounds(params)
    grid = params.grid
    if not bounds.passes_gate(params):
        msg = (f"largeness gate fails at m={params.m:g} "
               f"(margin {bounds.gate_margin(params):.3e}); the constructive "
               f"estimates do not cover this run")
        if strict:
            raise BelowConstructiveRegimeError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    ub = warm_start.u if warm_start is not None else VectorField.zeros(grid)
    r_prev = warm_start.r if warm_start is not None else ScalarField.zeros(grid)
    u_prev = ub
    report = LoopReport("outer")
    r, u = r_prev, ub
    for k in range(max_outer):
        r, u, dens_rep = density_loop(ub, params, bounds, warm_r=r_prev,
                                      warm_u=u_prev, tol=tol_density,
                                      tol_inner=tol_inner, strict=strict)
        report.inner_reports.append(dens_rep)
        diff = sobolev_norm(u - ub, 1, 2)
        scale = sobolev_norm(u, 1, 2) + 1e-300
        report.record(diff, noise_floor=10.0 * np.finfo(float).eps * scale)
        if report.contraction_ratios and report.contraction_ratios[-1] > 0.95 \
                and theta > 1.0 / 16.0:
            theta = 0.5 * theta
        report.damping_history.append(theta)
        ub = VectorField(grid, (1 - theta) * ub.xcomp + theta * u.xcomp,
                         (1 - theta) * ub.ycomp + theta * u.ycomp,
                         wall_compatible=True)
        r_prev, u_prev = r, u
        if checkpoint_dir is not None:
            _write_checkpoint(checkpoint_dir, k, r, u, params, report)
        if diff <= tol * scale or diff == 0.0:
            report.converged = True
            break
    state = IterationState(r, u, measure_certificates(r, u, params))
    resid = nonlinear_residual(state, params)
    report.final_residual = resid
    if report.converged and max(resid["mass"], resid["momentum"]) \
            > tol_residual * resid["momentum_scale"]:
        warnings.warn(
            f"converged state misses the residual target: momentum "
            f"{resid['momentum']:.3e}, mass {resid['mass']:.3e} vs "
            f"{tol_residual:g} * {resid['momentum_scale']:.3e}",
            RuntimeWarning, stacklevel=2)
    if not report.converged:
        exc = LoopConvergenceError(
            f"outer Picard loop not converged after {max_outer} iterations "
            f"(the fixed point exists but Picard may cycle); ratio history "
            f"{[f'{x:.3g}' for x in report.contraction_ratios]}")
        exc.state = state
        exc.report = report
        raise exc
    adm = check_admissible(state, bounds, params)
    if not adm.ok:
        report.admissibility_failures += 1
        _admissibility_signal(adm, params, strict, "outer")
    return state, report


def _write_checkpoint(directory, k, r, u, params, report):
    from .field import dump_field
    os.makedirs(directory, exist_ok=True)
    dump_field(r, os.path.join(directory, f"iter{k:03d}_r.hvf"))
    dump_field(u, os.path.join(directory, f"iter{k:03d}_u.hvf"))
    certs = measure_certificates(r, u, params)
    lines = ["[certificates]"]
    lines += [f"{key} = {val!r}" for key, val in sorted(certs.items())]
    lines.append("[ratios]")
    lines.append("errors = " + ",".join(repr(e) for e in report.errors_per_iterate))
    lines.append("ratios = " + ",".join(repr(e) for e in report.contraction_ratios))
    lines.append(f"params = {params.fingerprint()}")
    with open(os.path.join(directory, f"iter{k:03d}_certificates.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# residual of the original nonlinear system
# ---------------------------------------------------------------------------

def nonlinear_residual(state: IterationState, params: ModelParams) -> dict:
    """Discrete L2 residuals of the steady system with mu(rho) = rho,
    lambda = 0, p(rho) = rho^gamma at the state (r, u).

    Returns absolute norms for mass, momentum, boundary (impermeability)
    and the mean constraint, plus the momentum data scale for relative
    checks.  The pressure gradient uses the face-averaged gamma rho^(g-1)
    coefficient, the same composite the converged iteration satisfies.
    """
    grid = params.grid
    m, gamma, f = params.m, params.gamma, params.f_friction
    r, u = state.r, state.u
    rho = m + r.values

    fx, fy = face_mass_flux(grid, rho, u)
    mass = lp_norm(divergence(VectorField(grid, fx, fy)), 2)

    sig = slip_closure_stress(grid, f, u, WallStress.zero(grid))
    sx, sy = stress_divergence(grid, rho, u, wall_sigma=sig)
    cu, cv = convective_apply(grid, fx, fy, u)
    gr = gradient(r)
    pcoeff = gamma * rho ** (gamma - 1.0)
    px = np.zeros_like(gr.xcomp)
    py = np.zeros_like(gr.ycomp)
    px[1:-1, :] = 0.5 * (pcoeff[1:, :] + pcoeff[:-1, :]) * gr.xcomp[1:-1, :]
    py[:, 1:-1] = 0.5 * (pcoeff[:, 1:] + pcoeff[:, :-1]) * gr.ycomp[:, 1:-1]
    ffx, ffy = face_mass_flux(grid, rho, params.force)
    res_x = cu - sx + px - ffx
    res_y = cv - sy + py - ffy
    a = grid.cell_area
    momentum = float(np.sqrt((np.sum(res_x[1:-1, :] ** 2)
                              + np.sum(res_y[:, 1:-1] ** 2)) * a))

    bc = max(
        float(np.max(np.abs(u.xcomp[0, :]))), float(np.max(np.abs(u.xcomp[-1, :]))),
        float(np.max(np.abs(u.ycomp[:, 0]))), float(np.max(np.abs(u.ycomp[:, -1]))))

    mean = abs(r.integral()) / (m * grid.area)

    scale = float(np.sqrt((np.sum(ffx[1:-1, :] ** 2)
                           + np.sum(ffy[:, 1:-1] ** 2)) * a)) + 1e-300
    return {"mass": mass, "momentum": momentum, "bc": bc, "mean": mean,
            "momentum_scale": scale}
