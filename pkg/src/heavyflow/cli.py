"""Batch experiment driver: solve, study, verify, dump.

Configuration is flat key = value text with sections (INI), archived with
its SHA-256 fingerprint in every emitted artifact; each key can also be
overridden by a command-line flag of the same name.  No interactive
steering: runs emit files and exit codes (0 fine, 1 configuration error,
2 non-convergence with artifacts still written, 3 failed verification).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (GridSpec, ScalarField, VectorField, divergence, dump_field,
                    gradient, inner_cells, inner_faces, load_field, lp_norm,
                    random_scalar, random_vector, sobolev_norm, to_csv)
from .forces import PRESETS, make_force
from .iteration import (AdmissibleBounds, LoopConvergenceError, calibrate_bounds,
                        measure_certificates, outer_loop)
from .model import ModelParams


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "grid": {"nx": "64", "ny": "64", "Lx": "1.0", "Ly": "1.0",
             "wall_mode": "slip"},
    "model": {"m": "1000.0", "gamma": "2.0", "f_friction": "1.0",
              "p_exp": "4.0"},
    "force": {"preset": "vortex", "amplitude": "1.0", "normalize": "true",
              "path": ""},
    "loops": {"tol_inner": "1e-10", "tol_density": "1e-9", "tol_outer": "1e-8",
              "tol_residual": "1e-7", "max_outer": "40", "theta": "1.0",
              "strict": "false"},
    "bounds": {"mode": "calibrate", "C_f": "0.0", "E": "0.0", "alpha": "0.1"},
    # default study sweep: five masses log-spaced over two decades
    "run": {"outdir": "out", "seed": "0",
            "masses": "100 316.22776601683796 1000 3162.2776601683795 10000"},
}


@dataclass
class RunConfig:
    values: dict = dc_field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=()):
        values = {s: dict(kv) for s, kv in _DEFAULTS.items()}
        if path:
            parser = configparser.ConfigParser()
            read = parser.read(path)
            if not read:
                raise ConfigError(f"cannot read config file {path!r}")
            for section in parser.sections():
                if section not in values:
                    raise ConfigError(f"unknown config section [{section}]")
                for key, val in parser.items(section):
                    if key not in values[section]:
                        raise ConfigError(f"unknown key {key!r} in [{section}]")
                    values[section][key] = val
        for item in overrides:
            key, _, val = item.partition("=")
            if not _:
                raise ConfigError(f"override {item!r} is not key=value")
            for section, kv in values.items():
                if key in kv:
                    kv[key] = val
                    break
            else:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(values)
        cfg.validate()
        return cfg

    def get(self, section, key):
        return self.values[section][key]

    def getfloat(self, section, key):
        try:
            return float(self.values[section][key])
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be a number, got "
                              f"{self.values[section][key]!r}") from exc

    def getint(self, section, key):
        return int(self.getfloat(section, key))

    def getbool(self, section, key):
        return self.values[section][key].strip().lower() in ("1", "true", "yes", "on")

    def masses(self):
        raw = self.values["run"]["masses"].replace(",", " ").split()
        if raw:
            return [float(tok) for tok in raw]
        return [self.getfloat("model", "m")]

    def validate(self):
        gamma = self.getfloat("model", "gamma")
        if gamma <= 1.0:
            raise ConfigError(
                f"gamma = {gamma} rejected: the pressure law requires gamma > 1")
        p = self.getfloat("model", "p_exp")
        if not (3.0 < p < 6.0):
            raise ConfigError(
                f"p_exp = {p} rejected: the norm exponent must lie in (3, 6)")
        for m in self.masses():
            if m <= 0:
                raise ConfigError(f"m = {m} rejected: the mean density must be positive")
        if self.getfloat("model", "f_friction") < 0:
            raise ConfigError("f_friction must be non-negative")
        if self.get("grid", "wall_mode") not in ("slip", "periodic-x"):
            raise ConfigError("wall_mode must be slip or periodic-x")
        preset = self.get("force", "preset")
        if preset not in PRESETS and not self.get("force", "path"):
            raise ConfigError(f"force preset {preset!r} unknown; choose from {PRESETS}")

    def canonical(self):
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                lines.append(f"{section}.{key}={self.values[section][key]}")
        return "\n".join(lines)

    def fingerprint(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    # -- builders ----------------------------------------------------------

    def grid(self):
        return GridSpec(self.getint("grid", "nx"), self.getint("grid", "ny"),
                        self.getfloat("grid", "Lx"), self.getfloat("grid", "Ly"),
                        self.get("grid", "wall_mode"))

    def force(self, grid):
        path = self.get("force", "path")
        if path:
            f = load_field(path)
            if not isinstance(f, VectorField):
                raise ConfigError(f"force dump {path!r} is not a vector field")
            return f
        p_norm = self.getfloat("model", "p_exp") if self.getbool("force", "normalize") \
            else None
        return make_force(grid, self.get("force", "preset"),
                          self.getfloat("force", "amplitude"), p_norm)

    def params(self, m=None):
        grid = self.grid()
        return ModelParams(m=m if m is not None else self.getfloat("model", "m"),
                           gamma=self.getfloat("model", "gamma"),
                           f_friction=self.getfloat("model", "f_friction"),
                           p_exp=self.getfloat("model", "p_exp"),
                           force=self.force(grid))

    def bounds(self, params):
        if self.get("bounds", "mode") == "calibrate":
            return calibrate_bounds(params, alpha=self.getfloat("bounds", "alpha"))
        return AdmissibleBounds(C_f=self.getfloat("bounds", "C_f"),
                                E=self.getfloat("bounds", "E"),
                                alpha=self.getfloat("bounds", "alpha"))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _write_sidecar(path, cfg, params, state, report, converged):
    certs = measure_certificates(state.r, state.u, params)
    lines = [f"# config_fingerprint={cfg.fingerprint()}",
             f"converged = {converged}",
             f"outer_iterates = {report.iterates}",
             "[certificates]"]
    lines += [f"{k} = {v!r}" for k, v in sorted(certs.items())]
    lines.append("[residuals]")
    lines += [f"{k} = {v!r}" for k, v in sorted((report.final_residual or {}).items())]
    lines.append("[ratios]")
    lines.append("outer_errors = " + ",".join(repr(e) for e in report.errors_per_iterate))
    lines.append("outer_ratios = " + ",".join(repr(e) for e in report.contraction_ratios))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_solve(cfg: RunConfig) -> int:
    import warnings
    if cfg.get("grid", "wall_mode") != "slip":
        print("config error: solve requires wall_mode = slip (the linearized "
              "solves are built for the closed rectangle)", file=sys.stderr)
        return 1
    outdir = cfg.get("run", "outdir")
    os.makedirs(outdir, exist_ok=True)
    params = cfg.params()
    bounds = cfg.bounds(params)
    strict = cfg.getbool("loops", "strict")
    converged = True
    try:
        with warnings.catch_warnings():
            if not strict:
                warnings.simplefilter("ignore", RuntimeWarning)
            state, report = outer_loop(
                params, bounds, tol=cfg.getfloat("loops", "tol_outer"),
                tol_density=cfg.getfloat("loops", "tol_density"),
                tol_inner=cfg.getfloat("loops", "tol_inner"),
                tol_residual=cfg.getfloat("loops", "tol_residual"),
                max_outer=cfg.getint("loops", "max_outer"),
                theta=cfg.getfloat("loops", "theta"), strict=strict,
                checkpoint_dir=os.path.join(outdir, "checkpoints"))
    except LoopConvergenceError as exc:
        state = getattr(exc, "state", None)
        report = getattr(exc, "report", None)
        converged = False
        print(f"solve: not converged: {exc}", file=sys.stderr)
        if state is None:
            return 2
    ckdir = os.path.join(outdir, "checkpoints")
    if os.path.isdir(ckdir):
        with open(os.path.join(ckdir, "config.txt"), "w") as fh:
            fh.write(f"# config_fingerprint={cfg.fingerprint()}\n")
            fh.write(cfg.canonical() + "\n")
    dump_field(state.r, os.path.join(outdir, "r.hvf"))
    dump_field(state.u, os.path.join(outdir, "u.hvf"))
    rho = ScalarField(params.grid, params.m + state.r.values)
    dump_field(rho, os.path.join(outdir, "rho.hvf"))
    _write_sidecar(os.path.join(outdir, "certificates.txt"), cfg, params,
                   state, report, converged)
    res = report.final_residual
    print(f"solve: converged={converged} outer_iterates={report.iterates} "
          f"momentum_residual={res['momentum']:.3e} mass_residual={res['mass']:.3e}")
    return 0 if converged else 2


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------

def cmd_study(cfg: RunConfig) -> int:
    from .diagnostics import (divu_scaling_study, incompressible_reference_solve,
                              plot_study, write_study_csv)
    if cfg.get("grid", "wall_mode") != "slip":
        print("config error: study requires wall_mode = slip", file=sys.stderr)
        return 1
    masses = cfg.masses()
    if len(masses) < 3:
        print("study: need >= 3 points to fit", file=sys.stderr)
        return 1
    outdir = cfg.get("run", "outdir")
    os.makedirs(outdir, exist_ok=True)
    base = cfg.params(m=masses[0])
    bounds = None if cfg.get("bounds", "mode") == "calibrate" else cfg.bounds(base)
    u_ref = incompressible_reference_solve(base.force, 0.0, base.grid)
    report = divu_scaling_study(masses, base, bounds,
                                strict=cfg.getbool("loops", "strict"),
                                probes=True, u_ref=u_ref)
    if base.gamma != 2.0:
        report.notes.append(
            f"gamma={base.gamma:g}: low-Mach limit structure differs; "
            "distance column is informational only")
    csv_path = os.path.join(outdir, "study.csv")
    write_study_csv(report, csv_path, fingerprint=cfg.fingerprint())
    plots = plot_study(report, outdir)
    print(f"study: wrote {csv_path} and {len(plots)} plots")
    print("summary:")
    for name in sorted(report.fits):
        f = report.fits[name]
        flag = " (inconclusive)" if f.inconclusive else ""
        print(f"  {name}: slope {f.slope:+.4f} +- {f.half_width:.4f} "
              f"R2={f.r2:.4f}{flag}")
    for note in report.notes:
        print(f"  note: {note}")
    return 0 if report.all_converged() else 2


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _verify_checks(seed, fault=None):
    """Operator/property self-test suite; yields (name, passed, detail)."""
    from .helmholtz import project
    from .inverse_div import bogovskii
    from .linsolve import (LinearizedProblem, WallStress, energy_identity_report,
                           solve_decomposed, solve_monolithic)

    rng = np.random.default_rng(seed)
    grid = GridSpec(32, 32)

    grad_op = gradient
    if fault == "gradient-sign":
        def grad_op(s):  # noqa: ANN001 - test hook
            g = gradient(s)
            return VectorField(g.grid, -g.xcomp, -g.ycomp)
    elif fault is not None:
        raise ConfigError(f"unknown fault {fault!r}")

    worst = 0.0
    for _ in range(100):
        s = random_scalar(grid, rng)
        v = random_vector(grid, rng, wall_compatible=True)
        lhs = inner_cells(divergence(v), s)
        rhs = inner_faces(v, grad_op(s))
        scale = lp_norm(divergence(v), 2) * lp_norm(s, 2) \
            + lp_norm(v, 2) * lp_norm(grad_op(s), 2) + 1e-30
        worst = max(worst, abs(lhs + rhs) / scale)
    yield "summation-by-parts", worst <= 1e-12, f"worst relative {worst:.2e}"

    worst = 0.0
    for _ in range(20):
        g = random_vector(grid, rng)
        split = project(g)
        rec = VectorField(grid, split.solenoidal.xcomp + split.potential_grad.xcomp
                          - g.xcomp,
                          split.solenoidal.ycomp + split.potential_grad.ycomp
                          - g.ycomp)
        worst = max(worst, lp_norm(rec, 2) / lp_norm(g, 2),
                    lp_norm(divergence(split.solenoidal), 2) / lp_norm(g, 2))
    yield "helmholtz-round-trip", worst <= 1e-10, f"worst relative {worst:.2e}"

    worst = 0.0
    for _ in range(20):
        r = random_scalar(grid, rng, mean_zero=True)
        worst = max(worst, lp_norm(divergence(bogovskii(r)) - r, 2) / lp_norm(r, 2))
    yield "bogovskii-round-trip", worst <= 1e-10, f"worst relative {worst:.2e}"

    force = make_force(grid, "vortex", 1.0, 4.0)
    params = ModelParams(m=1000.0, gamma=2.0, f_friction=1.0, p_exp=4.0, force=force)
    ub = random_vector(grid, rng, wall_compatible=True)
    uf = VectorField.zeros(grid)
    rt = 0.1 * random_scalar(grid, rng, mean_zero=True)
    G = random_vector(grid, rng)
    prob = LinearizedProblem(params, uf, ub, rt, G, WallStress.zero(grid))
    sm = solve_monolithic(prob)
    sd = solve_decomposed(prob)
    gap = sobolev_norm(sd.u - sm.u, 1, 2) / sobolev_norm(sm.u, 1, 2)
    yield "linear-solver-agreement", gap <= 1e-6, f"relative gap {gap:.2e}"
    egap = energy_identity_report(prob, sm)["relative_gap"]
    yield "energy-identity", egap <= 1e-9, f"relative gap {egap:.2e}"
    fgap = sd.flux_trace.consistency
    yield "effective-flux-identity", fgap <= 1e-6, f"relative gap {fgap:.2e}"


def cmd_verify(cfg: RunConfig, fault=None) -> int:
    failures = 0
    print(f"{'check':<28} {'status':<6} detail")
    for name, ok, detail in _verify_checks(cfg.getint("run", "seed"), fault):
        print(f"{name:<28} {'PASS' if ok else 'FAIL':<6} {detail}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 3


# ---------------------------------------------------------------------------
# dump
# ---------------------------------------------------------------------------

def cmd_dump(path_in, path_out) -> int:
    f = load_field(path_in)
    to_csv(f, path_out)
    print(f"dump: wrote {path_out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="heavyflow",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "study", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        if name == "verify":
            p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p = sub.add_parser("dump")
    p.add_argument("field", help="input .hvf field dump")
    p.add_argument("csv", help="output CSV path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "dump":
        return cmd_dump(args.field, args.csv)
    try:
        cfg = RunConfig.load(args.config, args.set)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.command == "solve":
        return cmd_solve(cfg)
    if args.command == "study":
        return cmd_study(cfg)
    return cmd_verify(cfg, getattr(args, "inject_fault", None))


if __name__ == "__main__":
    sys.exit(main())
