import warnings

import numpy as np
import pytest

from heavyflow.diagnostics import (fit_loglog,
                                   incompressible_reference_solve,
                                   low_mach_consistency, plot_study,
                                   probe_inner_contraction, write_study_csv, xi)
from heavyflow.field import (GridSpec, ScalarField, VectorField, divergence,
                             lp_norm, random_vector, sobolev_norm)
from heavyflow.forces import make_force
from heavyflow.iteration import IterationState, calibrate_bounds, outer_loop
from heavyflow.model import ModelParams


def vortex_params(grid, m=1000.0, gamma=2.0):
    force = make_force(grid, "vortex", amplitude=1.0, p_norm=4.0)
    return ModelParams(m=m, gamma=gamma, f_friction=1.0, p_exp=4.0, force=force)


# ---------------------------------------------------------------------------
# xi
# ---------------------------------------------------------------------------

def test_xi_zero_state(grid):
    params = vortex_params(grid)
    state = IterationState(ScalarField.zeros(grid), VectorField.zeros(grid), {})
    assert xi(state, params) == 0.0


def test_xi_single_term(grid, rng):
    params = vortex_params(grid)
    u = random_vector(grid, rng, wall_compatible=True)
    state = IterationState(ScalarField.zeros(grid), u, {})
    assert xi(state, params) == pytest.approx(sobolev_norm(u, 2, 4), rel=1e-13)


def test_xi_homogeneous_in_velocity(grid, rng):
    params = vortex_params(grid)
    u = random_vector(grid, rng, wall_compatible=True)
    s1 = IterationState(ScalarField.zeros(grid), u, {})
    s2 = IterationState(ScalarField.zeros(grid), 2.5 * u, {})
    assert xi(s2, params) == pytest.approx(2.5 * xi(s1, params), rel=1e-12)


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

def test_fit_recovers_power_law():
    ms = [100.0, 316.0, 1000.0, 3162.0, 10000.0]
    vals = [3.0 * m**-1.5 for m in ms]
    fit = fit_loglog(ms, vals)
    assert fit.slope == pytest.approx(-1.5, abs=1e-12)
    assert fit.r2 > 0.999999
    assert not fit.inconclusive


def test_fit_flags_scatter_as_inconclusive():
    rng = np.random.default_rng(0)
    ms = [100.0, 316.0, 1000.0, 3162.0, 10000.0]
    vals = 10.0 ** rng.uniform(-3, 0, size=5)
    fit = fit_loglog(ms, list(vals))
    assert fit.inconclusive


def test_fit_needs_three_points():
    with pytest.raises(ValueError):
        fit_loglog([1.0, 10.0], [1.0, 0.1])


# ---------------------------------------------------------------------------
# incompressible reference
# ---------------------------------------------------------------------------

def test_reference_zero_force(grid):
    u = incompressible_reference_solve(VectorField.zeros(grid), 0.0, grid)
    assert lp_norm(u, np.inf) == 0.0


def test_reference_gradient_force_absorbed(grid):
    f = make_force(grid, "gradient", amplitude=1.0)
    u = incompressible_reference_solve(f, 0.0, grid)
    assert sobolev_norm(u, 1, 2) <= 1e-10


def test_reference_vortex_regression(grid):
    # frozen regression baseline for the 32x32 unit-square vortex reference
    f = make_force(grid, "vortex", amplitude=1.0, p_norm=4.0)
    u = incompressible_reference_solve(f, 0.0, grid)
    assert lp_norm(divergence(u), 2) <= 1e-10
    val = sobolev_norm(u, 1, 2)
    assert val == pytest.approx(0.18336885294522667, rel=1e-9)


# ---------------------------------------------------------------------------
# studies (small sweeps; the full criteria run in the acceptance module)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_sweep():
    grid = GridSpec(32, 32)
    base = vortex_params(grid, m=100.0)
    from heavyflow.diagnostics import divu_scaling_study
    rep = divu_scaling_study([100.0, 1000.0, 10000.0], base, probes=True)
    return grid, base, rep


def test_divu_slope_small_sweep(small_sweep):
    _, _, rep = small_sweep
    assert rep.all_converged()
    fit = rep.fits["divu_p"]
    assert fit.slope == pytest.approx(-1.0, abs=0.15)
    assert not fit.inconclusive


def test_contraction_slopes_small_sweep(small_sweep):
    _, _, rep = small_sweep
    fit = rep.fits["inner_ratio"]
    assert fit.slope == pytest.approx(-1.0, abs=0.15)


def test_rows_carry_fingerprints(small_sweep):
    _, _, rep = small_sweep
    for row in rep.rows:
        assert row["grid_hash"] and row["params_fingerprint"]
        assert row["converged"]


def test_certificate_columns_bounded(small_sweep):
    _, base, rep = small_sweep
    for row in rep.rows:
        # divergence certificate m^(g-1)||div u||_p stays below 2 C_f^2 and
        # the solution size stays below the configured C_f
        params = base.replace_m(row["m"])
        bounds = calibrate_bounds(params)
        assert row["cert_div"] <= 2.0 * bounds.C_f**2
        assert row["xi"] <= bounds.C_f
        assert abs(row["mean_constraint"]) <= 1e-12


def test_csv_and_plots(small_sweep, tmp_path):
    _, _, rep = small_sweep
    path = tmp_path / "study.csv"
    write_study_csv(rep, path, fingerprint="deadbeef")
    text = path.read_text()
    assert text.startswith("# config_fingerprint=deadbeef")
    assert "divu_p" in text.splitlines()[1]
    assert "# fit,divu_p" in text
    plots = plot_study(rep, tmp_path)
    assert plots and all(p.endswith(".svg") for p in plots)


def test_nonconverged_row_voids_fit(grid, monkeypatch):
    import heavyflow.diagnostics as diag
    from heavyflow.iteration import LoopConvergenceError

    def explode(params, bounds, strict=False):
        raise LoopConvergenceError("forced failure for the partial-report path")

    monkeypatch.setattr(diag, "outer_loop", explode)
    base = vortex_params(grid, m=100.0)
    rep = diag.divu_scaling_study([100.0, 1000.0, 10000.0], base, probes=False)
    assert not rep.all_converged()
    assert rep.fits == {}
    assert any("non-converged" in n for n in rep.notes)
    assert all("error" in row for row in rep.rows)


def test_low_mach_gamma15_flagged(grid):
    base = vortex_params(grid, m=100.0, gamma=1.5)
    rep = low_mach_consistency([100.0, 1000.0, 10000.0], base)
    assert any("limit structure differs" in n for n in rep.notes)


def test_worker_count_respects_env(monkeypatch):
    from heavyflow.diagnostics import worker_count
    monkeypatch.setenv("HEAVYFLOW_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(1) == 1
    monkeypatch.delenv("HEAVYFLOW_THREADS")
    assert worker_count(8) >= 1


@pytest.mark.slow
def test_refinement_keeps_contraction_ratio():
    # probe ratio at fixed m varies below 20% between 64^2 and 128^2
    ratios = []
    for n in (64, 128):
        grid = GridSpec(n, n)
        params = vortex_params(grid, m=1000.0)
        bounds = calibrate_bounds(params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            state, _ = outer_loop(params, bounds)
        ratios.append(probe_inner_contraction(params, state, bounds))
    assert abs(ratios[1] - ratios[0]) <= 0.2 * max(ratios)
