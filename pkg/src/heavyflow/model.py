"""Physical parameters of the heavy-density flow problem."""

from __future__ import annotations

from dataclasses import dataclass

from .field import VectorField


@dataclass(frozen=True)
class ModelParams:
    """Mean density m, pressure exponent gamma, wall friction, norm exponent
    and the external force field.

    The admissible window is gamma > 1, p_exp in (3, 6), m > 0, f >= 0;
    violations raise at construction.
    """

    m: float
    gamma: float
    f_friction: float
    p_exp: float
    force: VectorField

    def __post_init__(self):
        if self.gamma <= 1:
            raise ValueError(f"gamma must exceed 1 (pressure law), got {self.gamma}")
        if not (3.0 < self.p_exp < 6.0):
            raise ValueError(f"norm exponent p must lie in (3, 6), got {self.p_exp}")
        if self.m <= 0:
            raise ValueError(f"mean density m must be positive, got {self.m}")
        if self.f_friction < 0:
            raise ValueError(f"friction coefficient must be >= 0, got {self.f_friction}")

    @property
    def grid(self):
        return self.force.grid

    @property
    def pressure_coeff(self):
        """gamma * m^(gamma-1), the linearized pressure gradient coefficient."""
        return self.gamma * self.m ** (self.gamma - 1.0)

    def replace_m(self, m):
        return ModelParams(m, self.gamma, self.f_friction, self.p_exp, self.force)

    def fingerprint(self):
        return (f"m={self.m:.17g};gamma={self.gamma:.17g};f={self.f_friction:.17g};"
                f"p={self.p_exp:.17g};{self.force.grid.fingerprint()}")
