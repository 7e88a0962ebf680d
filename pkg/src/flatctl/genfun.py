"""Generating functions g_i: iterated second antiderivatives against the weight.

g_0 is the affine function fixed by the homogeneous left boundary pair with a
unit Wronskian-type normalization; for i >= 1,

    g_i(x) = int_0^x int_0^s rho(sigma) g_{i-1}(sigma) dsigma ds,

so g_i has vanishing Cauchy data at 0 and g_i'' = rho g_{i-1}. The recursion
runs cell by cell on the weight grid with the weight replaced by its cell
means, the same discretization the spectral side uses; the double integral of
the cubic Hermite of g_{i-1} over a cell has a closed form, so no inner
quadrature nodes are needed and integrable weight singularities cost nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import FitDegenerate
from .problem import RobinPair
from .weights import Weight


@dataclass(frozen=True)
class GenFunTable:
    grid: np.ndarray
    g: np.ndarray          # shape (n_gen + 1, len(grid))
    g_prime: np.ndarray
    traces: Tuple          # ((g_i(1), g_i'(1)), ...)
    bc0: RobinPair

    @property
    def n_gen(self) -> int:
        return self.g.shape[0] - 1

    def evaluate(self, x, deriv: bool = False) -> np.ndarray:
        """Cubic-Hermite evaluation of every g_i at the points x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.clip(np.searchsorted(self.grid, x, side="right") - 1, 0, len(self.grid) - 2)
        h = self.grid[idx + 1] - self.grid[idx]
        t = (x - self.grid[idx]) / h
        g0, g1 = self.g[:, idx], self.g[:, idx + 1]
        d0, d1 = self.g_prime[:, idx] * h, self.g_prime[:, idx + 1] * h
        if deriv:
            dh00 = (6 * t * t - 6 * t) / h
            dh10 = (3 * t * t - 4 * t + 1) / h
            dh01 = -dh00
            dh11 = (3 * t * t - 2 * t) / h
            return g0 * dh00 + d0 * dh10 + g1 * dh01 + d1 * dh11
        h00 = 2 * t ** 3 - 3 * t * t + 1
        h10 = t ** 3 - 2 * t * t + t
        h01 = -2 * t ** 3 + 3 * t * t
        h11 = t ** 3 - t * t
        return g0 * h00 + d0 * h10 + g1 * h01 + d1 * h11


def compute_g0(bc0_hat: RobinPair):
    """Affine seed g_0(x) = (alpha^2 + beta^2)^-1 (beta - alpha x)."""
    norm = bc0_hat.alpha ** 2 + bc0_hat.beta ** 2
    intercept = bc0_hat.beta / norm
    slope = -bc0_hat.alpha / norm

    def g0(x):
        return intercept + slope * np.asarray(x, dtype=float)

    return g0, intercept, slope


def iterate_g(g_prev: np.ndarray, gp_prev: np.ndarray, weight: Weight):
    """One recursion step: returns (g_i, g_i') at the grid nodes.

    Per cell, with m the cell mean of the weight and H the cubic Hermite of
    g_{i-1}: the inner integral advances by m * int H, the outer by Fubini
    using int (x_hi - s) H(s) ds; both integrals of H are closed forms in the
    endpoint values and slopes.
    """
    grid = weight.edges
    h = np.diff(grid)
    m = weight.cell_mean
    glo, ghi = g_prev[:-1], g_prev[1:]
    dlo, dhi = gp_prev[:-1], gp_prev[1:]
    area = h * (0.5 * (glo + ghi) + h * (dlo - dhi) / 12.0)
    wmom = h * h * (glo * (7.0 / 20.0) + h * dlo * (1.0 / 20.0)
                    + ghi * (3.0 / 20.0) - h * dhi * (1.0 / 30.0))
    inner = np.concatenate(([0.0], np.cumsum(m * area)))
    steps = h * inner[:-1] + m * wmom
    g_new = np.concatenate(([0.0], np.cumsum(steps)))
    return g_new, inner


def build_genfun_table(weight: Weight, bc0_hat: RobinPair, n_gen: int = 30) -> GenFunTable:
    grid = weight.edges
    g = np.empty((n_gen + 1, len(grid)))
    gp = np.empty_like(g)
    _, intercept, slope = compute_g0(bc0_hat)
    g[0] = intercept + slope * grid
    gp[0] = slope
    for i in range(1, n_gen + 1):
        g[i], gp[i] = iterate_g(g[i - 1], gp[i - 1], weight)
    traces = tuple((float(g[i, -1]), float(gp[i, -1])) for i in range(n_gen + 1))
    return GenFunTable(grid=grid, g=g, g_prime=gp, traces=traces, bc0=bc0_hat)


def boundary_traces(table: GenFunTable, bc1_hat: RobinPair) -> np.ndarray:
    """Per-order scalars alpha1 g_i(1) + beta1 g_i'(1) feeding the control series."""
    vals = np.array(table.traces)
    return bc1_hat.alpha * vals[:, 0] + bc1_hat.beta * vals[:, 1]


def fit_bound(table: GenFunTable, p: float):
    """Least-squares constants (C, R) with sup|g_i| ~= C R^-i / (i!)^(2-1/p).

    Returns (C, R, ratios) with ratios[j] = data / fitted envelope per usable
    order; the decay statement is an upper bound, so only ratios above 1 count
    against it. Diagnostic only; the fit certifies nothing.
    """
    sup = np.max(np.abs(table.g), axis=1)
    expo = 2.0 if math.isinf(p) else 2.0 - 1.0 / p
    usable = np.nonzero(sup > 0.0)[0]
    if len(usable) < 2:
        raise FitDegenerate("all generating functions vanish; nothing to fit")
    i = usable.astype(float)
    yv = np.log(sup[usable]) + expo * np.array([math.lgamma(k + 1.0) for k in i])
    A = np.column_stack((np.ones_like(i), -i))
    coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
    logC, logR = coef
    ratios = np.exp(yv - A @ coef)
    return float(math.exp(logC)), float(math.exp(logR)), ratios
