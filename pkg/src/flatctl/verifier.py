"""Independent forward simulator used as the acceptance oracle.

Conservative finite volumes: cell balances with face fluxes in the variable
a u_x, face transmissibilities from the exact resistance integral int dx/a
(the rigorous harmonic average, well defined for degenerate a), cell masses
int rho dx from singularity-aware quadrature, upwinded drift, mass-lumped
reaction, and Robin conditions eliminated through the boundary half-cell
resistance. Time stepping is implicit Euler or trapezoidal.

This module deliberately shares no machinery with the series-based synthesis:
it may import the problem model, quadrature, and the weight container, but
none of the spectral, generating-function, flat-output, or synthesis modules.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import CoefficientFn
from .errors import SingularMatrix, StabilityWarning
from .problem import ProblemSpec, RobinPair
from .quadrature import build_master_grid, cumulative_integral
from .weights import Weight


@dataclass(frozen=True)
class SimGrid:
    x_nodes: np.ndarray          # cell edges, strictly increasing, 0 and 1 included
    n_steps: int
    scheme: str = "trapezoidal"  # or "implicit-euler"

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        if x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
            raise ValueError("x_nodes must increase strictly from 0 to 1")
        if self.scheme not in ("trapezoidal", "implicit-euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def centers(self):
        x = np.asarray(self.x_nodes)
        return 0.5 * (x[1:] + x[:-1])


def sim_grid_for(spec: ProblemSpec, n_cells: int = 2000, n_steps: int = 4000,
                 scheme: str = "trapezoidal") -> SimGrid:
    breaks = np.unique(np.concatenate([c.breakpoints() for c in (spec.a, spec.b, spec.c, spec.rho)]))
    sing = set()
    for c in (spec.a, spec.b, spec.c, spec.rho):
        sing.update(c.singular_points().keys())
    edges = build_master_grid(breaks, sorted(sing), n_base=n_cells, grading_levels=25)
    return SimGrid(x_nodes=edges, n_steps=n_steps, scheme=scheme)


@dataclass(frozen=True)
class SimResult:
    centers: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray        # shape (len(times), n_cells)
    final_norm_ratio: float
    initial_norm: float
    mass_history: np.ndarray     # weighted cell sums at snapshot times
    sup_history: np.ndarray
    cell_mass: np.ndarray
    scheme_used: str


def _partial_integrals(fn, pts, singularities=None):
    if isinstance(fn, CoefficientFn) and fn.is_identically_zero():
        return np.zeros(len(pts))
    return cumulative_integral(fn, pts, singularities)


class _Discretization:
    """Tridiagonal operator A and affine part with A u - b(t) = -(rhs of the
    cell balances), so that M du/dt + A u = b(t)."""

    def __init__(self, edges, inv_a, rho, drift, reaction, bc0: RobinPair, bc1: RobinPair):
        self.edges = np.asarray(edges, dtype=float)
        self.centers = 0.5 * (self.edges[1:] + self.edges[:-1])
        n = len(self.centers)
        pts = np.unique(np.concatenate((self.edges, self.centers)))
        self.pts = pts
        c_idx = np.searchsorted(pts, self.centers)
        e_idx = np.searchsorted(pts, self.edges)

        cum_inv_a = _partial_integrals(inv_a["fn"], pts, inv_a.get("sing"))
        res = cum_inv_a[c_idx[1:]] - cum_inv_a[c_idx[:-1]]
        if np.any(res <= 0):
            raise SingularMatrix("nonpositive face resistance; grid too coarse for 1/a")
        self.t_face = 1.0 / res
        self.r0 = float(cum_inv_a[c_idx[0]] - cum_inv_a[e_idx[0]])
        self.r1 = float(cum_inv_a[e_idx[-1]] - cum_inv_a[c_idx[-1]])

        cum_rho = _partial_integrals(rho["fn"], pts, rho.get("sing"))
        self.mass = cum_rho[e_idx[1:]] - cum_rho[e_idx[:-1]]
        if np.any(self.mass <= 0):
            raise SingularMatrix("nonpositive cell mass")

        cum_b = _partial_integrals(drift["fn"], pts, drift.get("sing"))
        self.beta = cum_b[e_idx[1:]] - cum_b[e_idx[:-1]]
        cum_c = _partial_integrals(reaction["fn"], pts, reaction.get("sing"))
        self.gamma = cum_c[e_idx[1:]] - cum_c[e_idx[:-1]]

        den0 = bc0.alpha * self.r0 - bc0.beta
        if den0 == 0.0:
            raise SingularMatrix("left Robin pair degenerate against the boundary half cell")
        self.k0 = bc0.alpha / den0
        den1 = bc1.alpha * self.r1 + bc1.beta
        if den1 == 0.0:
            raise SingularMatrix("right Robin pair degenerate against the boundary half cell")
        self.k1 = bc1.alpha / den1
        self.ch = 1.0 / den1

        # assemble the tridiagonal A (lower, diag, upper)
        lo = np.zeros(n)
        di = np.zeros(n)
        up = np.zeros(n)
        di[:-1] += self.t_face
        up[:-1] -= self.t_face
        di[1:] += self.t_face
        lo[1:] -= self.t_face
        di[0] += self.k0
        di[-1] += self.k1
        di -= self.gamma
        # upwinded drift: beta > 0 uses the forward difference
        dxc = np.diff(self.centers)
        for i in range(n):
            bmass = self.beta[i]
            if bmass == 0.0:
                continue
            if (bmass > 0 and i < n - 1) or i == 0:
                d = dxc[i]
                di[i] += bmass / d
                up[i] -= bmass / d
            else:
                d = dxc[i - 1]
                di[i] -= bmass / d
                lo[i] += bmass / d
        self.lower, self.diag, self.upper = lo, di, up

    def apply(self, u):
        out = self.diag * u
        out[:-1] += self.upper[:-1] * u[1:]
        out[1:] += self.lower[1:] * u[:-1]
        return out

    def forcing(self, h_value, source_cells=None):
        b = np.zeros(len(self.centers))
        b[-1] = self.ch * h_value
        if source_cells is not None:
            b += source_cells
        return b


def _cell_averages(fn, edges):
    nodes, weights = np.polynomial.legendre.leggauss(4)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    vals = np.asarray(fn(pts.ravel()), dtype=float).reshape(pts.shape)
    return (vals @ weights) / 2.0


def _march(disc: _Discretization, u0_cells, h_of_t: Callable, source_of_t,
           T_final: float, n_steps: int, scheme: str, snapshot_times):
    n = len(disc.centers)
    dt = T_final / n_steps
    mass = disc.mass
    snapshot_times = np.asarray(sorted(snapshot_times), dtype=float)

    def banded(coeff):
        ab = np.zeros((3, n))
        ab[0, 1:] = coeff * disc.upper[:-1]
        ab[1, :] = mass / dt + coeff * disc.diag
        ab[2, :-1] = coeff * disc.lower[1:]
        return ab

    u = np.asarray(u0_cells, dtype=float).copy()
    initial_norm = math.sqrt(float(np.sum(mass * u * u)))
    snaps = []
    snap_mass = []
    snap_sup = []
    next_snap = 0

    def record(t):
        nonlocal next_snap
        while next_snap < len(snapshot_times) and t >= snapshot_times[next_snap] - 1e-12 * T_final:
            snaps.append(u.copy())
            snap_mass.append(float(np.sum(mass * u)))
            snap_sup.append(float(np.max(np.abs(u))))
            next_snap += 1

    scheme_used = scheme
    osc_run = 0
    prev_diff = None
    record(0.0)
    ab = banded(1.0 if scheme == "implicit-euler" else 0.5)
    t = 0.0
    for k in range(n_steps):
        t_next = (k + 1) * dt
        if scheme_used == "implicit-euler":
            rhs = mass / dt * u + disc.forcing(h_of_t(t_next),
                                               source_of_t(t_next) if source_of_t else None)
        else:
            b_mid = 0.5 * (disc.forcing(h_of_t(t), source_of_t(t) if source_of_t else None)
                           + disc.forcing(h_of_t(t_next), source_of_t(t_next) if source_of_t else None))
            rhs = mass / dt * u - 0.5 * disc.apply(u) + b_mid
        try:
            u_next = solve_banded((1, 1), ab, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(str(exc)) from exc
        if not np.all(np.isfinite(u_next)):
            raise SingularMatrix("non-finite state during time stepping")
        diff = u_next - u
        if scheme_used == "trapezoidal" and prev_diff is not None:
            flips = np.count_nonzero(diff * prev_diff < 0)
            growing = float(np.linalg.norm(diff)) > float(np.linalg.norm(prev_diff))
            osc_run = osc_run + 1 if (flips > 0.9 * n and growing) else 0
            if osc_run >= 10:
                warnings.warn("trapezoidal stepping oscillates; restarting with implicit Euler",
                              StabilityWarning)
                return _march(disc, u0_cells, h_of_t, source_of_t, T_final, n_steps,
                              "implicit-euler", snapshot_times)
        prev_diff = diff
        u = u_next
        t = t_next
        record(t)

    final_norm = math.sqrt(float(np.sum(mass * u * u)))
    ratio = final_norm / initial_norm if initial_norm > 0 else final_norm
    return SimResult(centers=disc.centers, snapshot_times=snapshot_times,
                     snapshots=np.asarray(snaps), final_norm_ratio=ratio,
                     initial_norm=initial_norm, mass_history=np.asarray(snap_mass),
                     sup_history=np.asarray(snap_sup), cell_mass=mass,
                     scheme_used=scheme_used)


def _default_snapshots(T, n=9):
    return np.linspace(0.0, T, n)


def simulate_forward(spec: ProblemSpec, control, grid: SimGrid,
                     snapshot_times=None) -> SimResult:
    """Advance the original-variable system under a boundary control (an object
    with .times/.values, linearly interpolated) or a distributed control (an
    object with .x_grid/.t_grid/.values)."""
    disc = _Discretization(grid.x_nodes, {"fn": spec.a.reciprocal()},
                           {"fn": spec.rho}, {"fn": spec.b}, {"fn": spec.c},
                           spec.bc0, spec.bc1)
    u0_cells = _cell_averages(spec.u0, grid.x_nodes)
    snapshot_times = _default_snapshots(spec.T) if snapshot_times is None else snapshot_times

    if hasattr(control, "times") and hasattr(control, "values"):
        h_of_t = lambda t: float(np.interp(t, control.times, control.values))
        source = None
    elif control is None:
        h_of_t = lambda t: 0.0
        source = None
    else:
        h_of_t = lambda t: 0.0
        f_x, f_t, f_vals = control.x_grid, control.t_grid, control.values
        widths = np.diff(grid.x_nodes)
        centers = disc.centers

        def source(t):
            row = np.empty(len(f_x))
            j = np.clip(np.searchsorted(f_t, t) - 1, 0, len(f_t) - 2)
            w = (t - f_t[j]) / (f_t[j + 1] - f_t[j])
            row = (1 - w) * f_vals[j] + w * f_vals[j + 1]
            return np.interp(centers, f_x, row) * widths
    return _march(disc, u0_cells, h_of_t, source, spec.T, grid.n_steps, grid.scheme,
                  snapshot_times)


def simulate_canonical(weight: Weight, bc0: RobinPair, bc1: RobinPair, u0_hat,
                       control, T: float, grid: SimGrid, snapshot_times=None) -> SimResult:
    """Forward simulation of u_yy = rho_hat u_t in canonical variables."""
    # a == 1: resistances are plain distances; masses come from the weight
    edges = grid.x_nodes
    centers = 0.5 * (edges[1:] + edges[:-1])
    disc = _Discretization.__new__(_Discretization)
    disc.edges = edges
    disc.centers = centers
    n = len(centers)
    disc.t_face = 1.0 / np.diff(centers)
    disc.r0 = float(centers[0])
    disc.r1 = float(1.0 - centers[-1])
    disc.mass = np.maximum(np.asarray(weight.mass_between(edges[:-1], edges[1:]), dtype=float), 0.0)
    if np.any(disc.mass <= 0):
        # weights vanishing at an endpoint can produce zero leading cells
        floor = 1e-14 * max(float(np.max(disc.mass)), 1e-300)
        disc.mass = np.maximum(disc.mass, floor)
    disc.beta = np.zeros(n)
    disc.gamma = np.zeros(n)
    den0 = bc0.alpha * disc.r0 - bc0.beta
    den1 = bc1.alpha * disc.r1 + bc1.beta
    if den0 == 0.0 or den1 == 0.0:
        raise SingularMatrix("Robin pair degenerate against the boundary half cell")
    disc.k0 = bc0.alpha / den0
    disc.k1 = bc1.alpha / den1
    disc.ch = 1.0 / den1
    lo = np.zeros(n)
    di = np.zeros(n)
    up = np.zeros(n)
    di[:-1] += disc.t_face
    up[:-1] -= disc.t_face
    di[1:] += disc.t_face
    lo[1:] -= disc.t_face
    di[0] += disc.k0
    di[-1] += disc.k1
    disc.lower, disc.diag, disc.upper = lo, di, up

    u0_cells = _cell_averages(u0_hat, edges)
    snapshot_times = _default_snapshots(T) if snapshot_times is None else snapshot_times
    if control is None:
        h_of_t = lambda t: 0.0
    else:
        h_of_t = lambda t: float(np.interp(t, control.times, control.values))
    return _march(disc, u0_cells, h_of_t, None, T, grid.n_steps, grid.scheme, snapshot_times)


def cross_check(trajectory, sim: SimResult, t_min_fraction: float = 0.1) -> dict:
    """Deviation between a series trajectory (object with x_grid, t_grid,
    values) and a simulation, over snapshot times past the startup margin."""
    T = float(trajectory.t_grid[-1])
    max_dev = 0.0
    l2_acc = 0.0
    count = 0
    for j, t in enumerate(sim.snapshot_times):
        if t < t_min_fraction * T:
            continue
        k = np.searchsorted(trajectory.t_grid, t)
        k = min(max(k, 1), len(trajectory.t_grid) - 1)
        t0, t1 = trajectory.t_grid[k - 1], trajectory.t_grid[k]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        row = (1 - w) * trajectory.values[k - 1] + w * trajectory.values[k]
        series_vals = np.interp(sim.centers, trajectory.x_grid, row)
        gap = series_vals - sim.snapshots[j]
        max_dev = max(max_dev, float(np.max(np.abs(gap))))
        l2_acc += float(np.sum(sim.cell_mass * gap * gap))
        count += 1
    l2_dev = math.sqrt(l2_acc / max(count, 1))
    return {"max_dev": max_dev, "l2_dev": l2_dev, "final_norm_ratio": sim.final_norm_ratio}
