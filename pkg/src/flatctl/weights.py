"""Canonical weight on [0, 1]: graded grid, exact cell masses, pointwise values.

The weight is the coefficient in front of u_t after reduction to the form
u_yy = rho_hat * u_t. It may vanish or blow up (integrably) at the endpoints,
so alongside pointwise values we carry per-cell masses computed upstream by
singularity-aware quadrature, plus the endpoint power exponents that quadrature
and mesh grading need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .coefficients import CoefficientFn
from .quadrature import cell_integrals


@dataclass(frozen=True)
class Weight:
    edges: np.ndarray
    cell_mass: np.ndarray
    fn: Callable[[np.ndarray], np.ndarray]
    left_exponent: float = 0.0
    right_exponent: float = 0.0

    def __post_init__(self):
        if len(self.cell_mass) != len(self.edges) - 1:
            raise ValueError("cell_mass must have one entry per grid cell")
        object.__setattr__(self, "_cum", np.concatenate(([0.0], np.cumsum(self.cell_mass))))
        object.__setattr__(self, "_cum_interp", PchipInterpolator(self.edges, self._cum))

    # ------------------------------------------------------------------
    @classmethod
    def from_coefficient(cls, rho: CoefficientFn, edges: np.ndarray) -> "Weight":
        mass = cell_integrals(rho, edges)
        return cls(edges=np.asarray(edges, dtype=float), cell_mass=mass, fn=rho,
                   left_exponent=rho.exponent_at(0.0), right_exponent=rho.exponent_at(1.0))

    # ------------------------------------------------------------------
    @property
    def cell_mean(self) -> np.ndarray:
        return self.cell_mass / np.diff(self.edges)

    @property
    def total_mass(self) -> float:
        return float(self._cum[-1])

    def __call__(self, y):
        return self.fn(y)

    def mass_between(self, y0, y1):
        return self._cum_interp(y1) - self._cum_interp(y0)

    def singularities(self) -> dict:
        out = {}
        if self.left_exponent != 0.0:
            out[0.0] = self.left_exponent
        if self.right_exponent != 0.0:
            out[1.0] = self.right_exponent
        return out

    def integrate_against(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of f(y) * rho_hat(y) over [0, 1] on the weight's own grid."""
        integrand = lambda y: np.asarray(f(y), dtype=float) * np.asarray(self.fn(y), dtype=float)
        return float(np.sum(cell_integrals(integrand, self.edges, self.singularities())))

    def merged_runs(self, rtol: float = 1e-12):
        """Collapse consecutive cells with equal means into single cells.

        Exact for piecewise-constant weights, where it reduces the grid to one
        cell per constant run; harmless otherwise (nothing merges).
        """
        means = self.cell_mean
        widths = np.diff(self.edges)
        scale = max(abs(float(means.max())), abs(float(means.min())), 1e-300)
        run_edges = [self.edges[0]]
        run_mass = []
        acc_mass = self.cell_mass[0]
        for i in range(1, len(means)):
            if abs(means[i] - means[i - 1]) <= rtol * scale:
                acc_mass += self.cell_mass[i]
            else:
                run_edges.append(self.edges[i])
                run_mass.append(acc_mass)
                acc_mass = self.cell_mass[i]
        run_edges.append(self.edges[-1])
        run_mass.append(acc_mass)
        edges = np.asarray(run_edges)
        mass = np.asarray(run_mass)
        return edges, mass / np.diff(edges)
