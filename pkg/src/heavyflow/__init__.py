"""Steady compressible flow at large mean density on staggered grids."""

from .field import (GridSpec, ScalarField, VectorField, curl2d, divergence,
                    gradient, lp_norm, mean_zero_project, sobolev_norm, sym_grad)
from .helmholtz import HelmholtzSplit, neumann_poisson_solve, project
from .inverse_div import bogovskii, bogovskii_bound_check
from .iteration import (AdmissibleBounds, IterationState, calibrate_bounds,
                        check_admissible, density_loop, inner_banach,
                        nonlinear_residual, outer_loop, taylor_remainder)
from .linsolve import (LinearizedProblem, LinearSolution, solve_decomposed,
                       solve_monolithic)
from .model import ModelParams

__version__ = "0.1.0"
