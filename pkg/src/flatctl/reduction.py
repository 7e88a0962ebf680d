"""Reduction of the general problem to canonical form u_yy = rho_hat u_t.

Three successive changes of variables: a drift gauge B absorbing b, a positive
corrector v absorbing the (shifted) reaction term, and a rescaled space
variable y normalizing the diffusion to 1. The chain is invertible; pull_back
maps canonical trajectories and fluxes to the original variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded

from .coefficients import CoefficientFn
from .errors import SolveFailure
from .problem import ProblemSpec, RobinPair
from .quadrature import build_master_grid, cumulative_integral, integrate_singular
from .weights import Weight

DEFAULT_CORRECTOR_NODES = 4096


@dataclass(frozen=True)
class TransformChain:
    """Sampled transform data: gauge B, corrector v, space map y, shift rate K."""

    x_grid: np.ndarray
    B: np.ndarray                 # gauge at x_grid nodes
    v: np.ndarray                 # corrector at x_grid nodes
    L: float
    y_of_x: Callable
    x_of_y: Callable
    K: float
    atilde_vx: Callable           # (a e^B v_x)(x); one-sided limits valid at 0, 1
    av_x0: float                  # (a v_x)(0+)
    av_x1: float                  # (a v_x)(1-)
    B_of_x: Callable
    v_of_x: Callable

    @property
    def y_grid(self):
        y = np.asarray(self.y_of_x(self.x_grid), dtype=float)
        y[0], y[-1] = 0.0, 1.0
        return y

    def is_identity(self, tol=1e-12):
        return (abs(self.L - 1.0) <= tol and self.K == 0.0
                and float(np.max(np.abs(self.v - 1.0))) <= tol
                and float(np.max(np.abs(self.B))) <= tol)


@dataclass(frozen=True)
class CanonicalProblem:
    weight: Weight
    bc0_hat: RobinPair
    bc1_hat: RobinPair
    chain: TransformChain
    u0_hat: Callable
    p: float
    weight_p_integral: float = math.nan   # diagnostic: int rho_hat^p (finite p)


def _strictly_increasing(x, y):
    """Filter (x, y) so y is strictly increasing; duplicates from underflowing
    cell masses are dropped before interpolation."""
    keep = [0]
    for i in range(1, len(y)):
        if y[i] > y[keep[-1]]:
            keep.append(i)
    idx = np.asarray(keep)
    return x[idx], y[idx]


class MonotoneInverse:
    """Inverse of a monotone pchip map, refined by safeguarded Newton steps.

    A plain pchip through the swapped node pairs is only a third-order inverse
    between nodes; polishing against the forward map keeps the round trip at
    solver precision while staying inside the bracketing cell (monotone).
    """

    def __init__(self, x_nodes, y_nodes, forward):
        self._x = np.asarray(x_nodes, dtype=float)
        self._y = np.asarray(y_nodes, dtype=float)
        self._fwd = forward
        self._dfwd = forward.derivative()
        self._guess = PchipInterpolator(self._y, self._x)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, self._y[0], self._y[-1])
        idx = np.clip(np.searchsorted(self._y, yc) - 1, 0, len(self._y) - 2)
        lo, hi = self._x[idx], self._x[idx + 1]
        x = np.clip(self._guess(yc), lo, hi)
        for _ in range(4):
            slope = np.maximum(np.asarray(self._dfwd(x), dtype=float), 1e-300)
            x = np.clip(x - (np.asarray(self._fwd(x), dtype=float) - yc) / slope, lo, hi)
        return x if y.ndim else float(x)


def master_grid_for(spec: ProblemSpec, n_base: int = 4096) -> np.ndarray:
    breaks = np.unique(np.concatenate([c.breakpoints() for c in (spec.a, spec.b, spec.c, spec.rho)]))
    sing = set()
    for c in (spec.a, spec.b, spec.c, spec.rho):
        sing.update(c.singular_points().keys())
    return build_master_grid(breaks, sorted(sing), n_base=n_base)


# ----------------------------------------------------------------------
# drift gauge
# ----------------------------------------------------------------------

def compute_drift_gauge(spec: ProblemSpec, x_grid: Optional[np.ndarray] = None):
    """Gauge B = int_0^x b/a, modified diffusion a_tilde = a e^B, and shifted
    reaction c_tilde = (K rho - c) e^B (nonnegative when K bounds c/rho)."""
    if x_grid is None:
        x_grid = master_grid_for(spec)
    K = spec.reaction_shift()
    shifted = spec.rho.scaled(K).plus(spec.c.scaled(-1.0))
    if spec.b.is_identically_zero():
        B_nodes = np.zeros_like(x_grid)
        return x_grid, B_nodes, spec.a, shifted
    B_nodes = cumulative_integral(spec.b.times(spec.a.reciprocal()), x_grid)
    expB = CoefficientFn.from_samples(x_grid, np.exp(B_nodes))
    return x_grid, B_nodes, spec.a.times(expB), shifted.times(expB)


# ----------------------------------------------------------------------
# corrector
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CorrectorSolution:
    v_nodes: np.ndarray           # on the x master grid
    v_of_x: Callable
    atilde_vx: Callable           # (a_tilde v_x)(x) = w'(z(x)) / l
    av_x0: float
    av_x1: float
    z_nodes: np.ndarray
    w: np.ndarray


def solve_corrector(a_tilde: CoefficientFn, c_tilde: CoefficientFn,
                    x_grid: np.ndarray, n_z: int = DEFAULT_CORRECTOR_NODES) -> CorrectorSolution:
    """Solve -(a_tilde v')' + c_tilde v = 0, v(0) = v(1) = 1.

    The solve happens in the stretched variable z with z' = 1/(l a_tilde),
    where the equation becomes w'' = gamma w with gamma = l^2 a_tilde c_tilde
    evaluated through x(z). gamma >= 0 makes the finite-difference system an
    M-matrix, so the discrete solution inherits 0 < v <= 1.
    """
    if c_tilde.is_identically_zero():
        ones = np.ones_like(x_grid)
        zero_fn = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        return CorrectorSolution(ones, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                 zero_fn, 0.0, 0.0, np.linspace(0, 1, 2), np.ones(2))

    inv_at = a_tilde.reciprocal()
    cum_z = cumulative_integral(inv_at, x_grid)
    l = float(cum_z[-1])
    z_of_xgrid = cum_z / l
    z_of_xgrid[0], z_of_xgrid[-1] = 0.0, 1.0
    xz, zz = _strictly_increasing(x_grid, z_of_xgrid)
    z_fwd = PchipInterpolator(xz, zz)
    x_of_z = MonotoneInverse(xz, zz, z_fwd)

    # cell-averaged gamma keeps the scheme meaningful for merely integrable
    # c_tilde: the mass of gamma over a z-cell equals l * int c_tilde dx
    cum_c = PchipInterpolator(x_grid, cumulative_integral(c_tilde, x_grid))
    z = np.linspace(0.0, 1.0, n_z + 1)
    dz = z[1] - z[0]
    faces = np.clip(np.concatenate(([0.0], 0.5 * (z[1:] + z[:-1]), [1.0])), 0.0, 1.0)
    x_faces = np.clip(x_of_z(faces), x_grid[0], x_grid[-1])
    gamma_mass = l * np.diff(cum_c(x_faces))        # one entry per z node
    gamma_mass = np.maximum(gamma_mass, 0.0)

    n_int = n_z - 1
    ab = np.zeros((3, n_int))
    ab[0, 1:] = -1.0 / dz
    ab[1, :] = 2.0 / dz + gamma_mass[1:-1]
    ab[2, :-1] = -1.0 / dz
    rhs = np.zeros(n_int)
    rhs[0] += 1.0 / dz
    rhs[-1] += 1.0 / dz
    try:
        w_int = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"corrector system singular: {exc}") from exc
    w = np.concatenate(([1.0], w_int, [1.0]))
    if not np.all(np.isfinite(w)) or w.min() <= 0.0:
        raise SolveFailure("corrector solution is not strictly positive")
    w = np.minimum(w, 1.0)

    wp = np.empty_like(w)
    wp[1:-1] = (w[2:] - w[:-2]) / (2 * dz)
    wp[0] = (-3 * w[0] + 4 * w[1] - w[2]) / (2 * dz)
    wp[-1] = (3 * w[-1] - 4 * w[-2] + w[-3]) / (2 * dz)

    w_of_z = PchipInterpolator(z, w)
    wp_of_z = PchipInterpolator(z, wp)
    z_of_x = z_fwd

    def v_of_x(xq):
        return w_of_z(np.clip(z_of_x(xq), 0.0, 1.0))

    def atilde_vx(xq):
        return wp_of_z(np.clip(z_of_x(xq), 0.0, 1.0)) / l

    v_nodes = np.asarray(v_of_x(x_grid), dtype=float)
    v_nodes[0] = v_nodes[-1] = 1.0
    return CorrectorSolution(v_nodes, v_of_x, atilde_vx, float(wp[0] / l), float(wp[-1] / l),
                             z, w)


# ----------------------------------------------------------------------
# space map
# ----------------------------------------------------------------------

def build_space_map(a: CoefficientFn, x_grid: np.ndarray,
                    v_nodes: np.ndarray, B_nodes: np.ndarray):
    """L = int (a v^2 e^B)^-1 and the increasing bijection y(x) it normalizes."""
    factor = CoefficientFn.from_samples(x_grid, np.exp(-B_nodes) / np.square(v_nodes))
    integrand = a.reciprocal().times(factor)
    cum = cumulative_integral(integrand, x_grid)
    L = float(cum[-1])
    if not (math.isfinite(L) and L > 0):
        raise SolveFailure(f"space-map normalizer L={L} is unusable")
    y_nodes = cum / L
    y_nodes[0], y_nodes[-1] = 0.0, 1.0
    xs, ys = _strictly_increasing(x_grid, y_nodes)
    y_of_x = PchipInterpolator(xs, ys)
    x_of_y = MonotoneInverse(xs, ys, y_of_x)
    return L, y_of_x, x_of_y


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------

def _pullback_exponent(exp_a: float, exp_rho: float) -> float:
    # near a degenerate endpoint with a ~ d^alpha (alpha < 1), the distance in
    # y scales like d^(1-alpha), so rho_hat ~ y^((alpha+beta)/(1-alpha))
    if exp_a >= 1.0:
        return 0.0
    return (exp_a + exp_rho) / (1.0 - exp_a)


def assemble_canonical(spec: ProblemSpec, n_base: int = 4096,
                       n_z: int = DEFAULT_CORRECTOR_NODES) -> CanonicalProblem:
    """Run the full reduction and package the canonical problem."""
    x_grid, B_nodes, a_tilde, c_tilde = compute_drift_gauge(spec, master_grid_for(spec, n_base))
    corr = solve_corrector(a_tilde, c_tilde, x_grid, n_z)
    L, y_of_x, x_of_y = build_space_map(spec.a, x_grid, corr.v_nodes, B_nodes)
    K = spec.reaction_shift()

    B_of_x = PchipInterpolator(x_grid, B_nodes)
    chain = TransformChain(
        x_grid=x_grid, B=B_nodes, v=corr.v_nodes, L=L, y_of_x=y_of_x, x_of_y=x_of_y,
        K=K, atilde_vx=corr.atilde_vx, av_x0=corr.av_x0 * math.exp(-B_nodes[0]),
        av_x1=corr.av_x1 * math.exp(-B_nodes[-1]), B_of_x=B_of_x, v_of_x=corr.v_of_x)

    # weight masses are computed in x space, where the singular structure is
    # declared: the mass of rho_hat over a y-cell is L * int v^2 e^B rho dx
    factor = CoefficientFn.from_samples(x_grid, np.square(corr.v_nodes) * np.exp(B_nodes))
    mass = L * np.diff(cumulative_integral(spec.rho.times(factor), x_grid))
    y_edges = chain.y_grid

    def rho_hat_fn(y):
        x = np.clip(x_of_y(np.asarray(y, dtype=float)), 0.0, 1.0)
        v = np.asarray(corr.v_of_x(x), dtype=float)
        return (L * L) * spec.a(x) * np.power(v, 4) * np.exp(2.0 * np.asarray(B_of_x(x))) * spec.rho(x)

    weight = Weight(edges=y_edges, cell_mass=mass, fn=rho_hat_fn,
                    left_exponent=_pullback_exponent(spec.a.exponent_at(0.0), spec.rho.exponent_at(0.0)),
                    right_exponent=_pullback_exponent(spec.a.exponent_at(1.0), spec.rho.exponent_at(1.0)))

    bc0_hat = RobinPair(spec.bc0.alpha + spec.bc0.beta * chain.av_x0, spec.bc0.beta / L)
    bc1_hat = RobinPair(spec.bc1.alpha + spec.bc1.beta * chain.av_x1, spec.bc1.beta / L)

    def u0_hat(y):
        x = np.clip(x_of_y(np.asarray(y, dtype=float)), 0.0, 1.0)
        return np.asarray(spec.u0(x), dtype=float) / np.asarray(corr.v_of_x(x), dtype=float)

    p_int = math.nan
    if math.isfinite(spec.p):
        means = np.maximum(weight.cell_mean, 0.0)
        p_int = float(np.sum(np.power(means, spec.p) * np.diff(y_edges)))

    return CanonicalProblem(weight=weight, bc0_hat=bc0_hat, bc1_hat=bc1_hat, chain=chain,
                            u0_hat=u0_hat, p=spec.p, weight_p_integral=p_int)


# ----------------------------------------------------------------------
# inverse map
# ----------------------------------------------------------------------

def pull_back(chain: TransformChain, u_hat: Callable, u_hat_y: Callable):
    """Map a canonical trajectory (and its y-derivative) to original variables.

    Returns (u, a_u_x) as callables of (x, t):
        u(x,t)    = e^{Kt} v(x) u_hat(y(x), t)
        a u_x     = e^{Kt} [ (a e^B v_x) e^{-B} u_hat + e^{-B} (L v)^{-1} u_hat_y ]
    """
    def u(x, t):
        x = np.asarray(x, dtype=float)
        y = np.clip(chain.y_of_x(x), 0.0, 1.0)
        return math.exp(chain.K * t) * np.asarray(chain.v_of_x(x), dtype=float) * np.asarray(u_hat(y, t), dtype=float)

    def flux(x, t):
        x = np.asarray(x, dtype=float)
        y = np.clip(chain.y_of_x(x), 0.0, 1.0)
        emB = np.exp(-np.asarray(chain.B_of_x(x), dtype=float))
        term1 = np.asarray(chain.atilde_vx(x), dtype=float) * emB * np.asarray(u_hat(y, t), dtype=float)
        term2 = emB / (chain.L * np.asarray(chain.v_of_x(x), dtype=float)) * np.asarray(u_hat_y(y, t), dtype=float)
        return math.exp(chain.K * t) * (term1 + term2)

    return u, flux


def identity_chain(x_grid: Optional[np.ndarray] = None) -> TransformChain:
    """Trivial chain (a=1, b=c=0, K=0); useful for canonical-space runs."""
    if x_grid is None:
        x_grid = np.linspace(0.0, 1.0, 257)
    ident = PchipInterpolator(x_grid, x_grid)
    zeros = np.zeros_like(x_grid)
    zfn = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return TransformChain(x_grid=x_grid, B=zeros, v=np.ones_like(x_grid), L=1.0,
                          y_of_x=ident, x_of_y=ident, K=0.0, atilde_vx=zfn,
                          av_x0=0.0, av_x1=0.0, B_of_x=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                          v_of_x=lambda x: np.ones_like(np.asarray(x, dtype=float)))
