"""Control synthesis: two-regime trajectory, boundary control series, pipeline.

Before the switch time tau the state relaxes freely and is represented by its
eigenfunction series; after tau it is steered along the flat output,
u = sum_i y^(i)(t) g_i(x), with the control read off the boundary combination
of the generating-function traces. At tau the two representations agree
because each eigenfunction expands in the g_i with weights (-lambda_n)^i.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import DivergenceWarning, PipelineError, TruncationWarning
from .flatout import BumpSpec, FlatOutput, build_flat_output, gevrey_estimate, y_derivs
from .genfun import GenFunTable, boundary_traces, build_genfun_table
from .problem import ProblemSpec, validate
from .reduction import CanonicalProblem, assemble_canonical, pull_back
from .spectral import EigenBasis, EigenPair, solve_spectrum
from .util import kahan_sum


@dataclass(frozen=True)
class SolverOptions:
    n_eig: int = 40
    n_gen: int = 30
    bump_M: float = 1.0
    tol_quad: float = 1e-10
    tol_ode: float = 1e-12          # eigenvalue bisection tolerance
    grid_n: int = 4096              # master grid backbone
    corrector_n: int = 4096
    t_samples: int = 801
    x_samples: int = 201
    sim_cells: int = 2000
    sim_steps: int = 4000
    scheme: str = "trapezoidal"
    threshold: float = 1e-2         # final-norm acceptance in verify runs
    gevrey_orders: int = 20


@dataclass(frozen=True)
class ControlSignal:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values)

    def scaled(self, factor: float) -> "ControlSignal":
        return ControlSignal(self.times, factor * self.values)


@dataclass(frozen=True)
class Trajectory:
    x_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray              # shape (len(t_grid), len(x_grid))
    regimes: tuple                  # per-time tag: "eigen" or "genfun"


@dataclass(frozen=True)
class Report:
    matching_error: float
    trunc_eig: float
    trunc_gen: float
    gevrey_M: float
    gevrey_R: float
    final_norm_series: float

    def as_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


EIGEN_FLAG_FRACTION = 1e-4   # eigen-series values below this multiple of T are flagged


def build_time_grid(T: float, tau: float, n_base: int = 801) -> np.ndarray:
    """Uniform grid over [0, T] with factor-4 refinement around the switch."""
    base = np.linspace(0.0, T, n_base)
    lo = max(0.0, tau - 0.05 * (T - tau))
    hi = min(T, tau + 0.05 * (T - tau))
    window = base[(base >= lo) & (base <= hi)]
    extra = []
    for a, b in zip(window[:-1], window[1:]):
        extra.append(np.linspace(a, b, 5)[1:-1])
    pieces = [base, np.array([tau])] + extra
    return np.unique(np.concatenate(pieces))


def synthesize_control(canonical: CanonicalProblem, flat: FlatOutput, traces: np.ndarray,
                       t_grid: np.ndarray) -> ControlSignal:
    """Canonical-variable control: 0 up to tau, then the trace-weighted series
    sum_i y^(i)(t) (alpha1 g_i(1) + beta1 g_i'(1))."""
    n_gen = len(traces) - 1
    values = np.zeros_like(t_grid)
    worst_last = 0.0
    for j, t in enumerate(t_grid):
        if t <= flat.bump.tau:
            continue
        yd = y_derivs(flat, float(t), n_gen)
        terms = yd * traces
        values[j] = kahan_sum(terms)
        worst_last = max(worst_last, abs(terms[-1]))
    peak = float(np.max(np.abs(values)))
    # pointwise ratios blow up at the zeros of h, so the retained-tail check is
    # normalized by the peak of the control instead
    if peak > 0 and worst_last > 1e-8 * peak:
        warnings.warn(f"last control term reaches {worst_last / peak:.2e} of the peak; "
                      "increase n_gen", TruncationWarning)
    return ControlSignal(times=np.asarray(t_grid, dtype=float), values=values)


def evaluate_trajectory(flat: FlatOutput, gentable: GenFunTable, basis: EigenBasis,
                        y, t: float) -> np.ndarray:
    """Canonical trajectory at points y and one time t (regime chosen by t)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if t <= flat.bump.tau:
        e_vals = basis.evaluate(y)
        amp = flat.c * np.exp(-flat.lam * t)
        return amp @ e_vals
    yd = y_derivs(flat, float(t), gentable.n_gen)
    g_vals = gentable.evaluate(y)
    return yd @ g_vals


def trajectory_y_derivative(flat: FlatOutput, gentable: GenFunTable, basis: EigenBasis,
                            y, t: float) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if t <= flat.bump.tau:
        amp = flat.c * np.exp(-flat.lam * t)
        return amp @ basis.evaluate(y, deriv=True)
    yd = y_derivs(flat, float(t), gentable.n_gen)
    return yd @ gentable.evaluate(y, deriv=True)


def expand_eigenfunction(pair: EigenPair, gentable: GenFunTable):
    """Reconstruct e_n from the generating functions: zeta_n sum (-lam)^i g_i.

    Returns (reconstruction on the table grid, sup deviation from the stored
    eigenfunction samples). Emits DivergenceWarning when the retained terms
    are still growing, i.e. n_gen is too small for this eigenvalue.
    """
    n_gen = gentable.n_gen
    coeff = pair.zeta * np.power(-pair.lam, np.arange(n_gen + 1))
    sup_g = np.max(np.abs(gentable.g), axis=1)
    term_mags = np.abs(coeff) * sup_g
    if n_gen >= 2 and term_mags[-1] > term_mags[-2] > 0 and term_mags[-1] > 1e-12:
        warnings.warn(f"expansion terms still growing at order {n_gen} "
                      f"(lambda={pair.lam:.3g})", DivergenceWarning)
    recon = coeff @ gentable.g
    dev = float(np.max(np.abs(recon - pair.e)))
    return recon, dev


def matching_error(flat: FlatOutput, gentable: GenFunTable, basis: EigenBasis) -> float:
    """Relative weighted-L2 gap at tau between the eigen-series and the
    generating-function series."""
    tau = flat.bump.tau
    amp = flat.c * np.exp(-flat.lam * tau)
    left = amp @ np.array([p.e for p in basis.pairs])
    yd = flat.w_derivs(tau, gentable.n_gen)   # phi-layer is exactly (1, 0, 0, ...) at tau
    right = yd @ gentable.g
    mass = basis.weight.cell_mass
    def norm2(f):
        return float(np.sum(mass * 0.5 * (f[:-1] ** 2 + f[1:] ** 2)))
    denom = norm2(left)
    if denom == 0.0:
        return 0.0
    return math.sqrt(norm2(left - right) / denom)


@dataclass(frozen=True)
class NullControlResult:
    control: ControlSignal          # original variables
    trajectory: Trajectory          # original variables
    report: Report
    canonical: CanonicalProblem
    basis: EigenBasis
    gentable: GenFunTable
    flat: FlatOutput
    control_hat: ControlSignal      # canonical variables
    trajectory_hat: Trajectory

    def as_tuple(self):
        return self.control, self.trajectory, self.report


def _stage(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, exc) from exc


def solve_canonical(canonical: CanonicalProblem, s: float, tau: float, T: float,
                    options: SolverOptions):
    """Spectrum, generating functions, flat output, and canonical control for
    an already-reduced problem."""
    basis = _stage("spectral", solve_spectrum, canonical.weight, canonical.bc0_hat,
                   canonical.bc1_hat, options.n_eig, options.tol_ode)
    gentable = _stage("genfun", build_genfun_table, canonical.weight, canonical.bc0_hat,
                      options.n_gen)
    bump = BumpSpec(s=s, tau=tau, T=T, M=options.bump_M)
    flat = _stage("flat-output", build_flat_output, canonical.u0_hat, basis,
                  canonical.weight, bump)
    traces = boundary_traces(gentable, canonical.bc1_hat)
    t_grid = build_time_grid(T, tau, options.t_samples)
    control_hat = _stage("synthesis", synthesize_control, canonical, flat, traces, t_grid)
    return basis, gentable, flat, control_hat, t_grid


def solve_null_control(spec: ProblemSpec, options: Optional[SolverOptions] = None) -> NullControlResult:
    """Full pipeline: reduce, eigensolve, generate, synthesize, pull back."""
    options = options or SolverOptions()
    report_checks = _stage("validate", validate, spec)
    if not report_checks.admissible:
        failed = [c.name for c in report_checks.checks if not c.passed]
        raise PipelineError("validate", ValueError(f"inadmissible problem: {failed}"))
    canonical = _stage("reduction", assemble_canonical, spec,
                       options.grid_n, options.corrector_n)
    basis, gentable, flat, control_hat, t_grid = solve_canonical(
        canonical, spec.s, spec.tau, spec.T, options)

    match = _stage("matching", matching_error, flat, gentable, basis)
    try:
        gev_M, gev_R, _ = gevrey_estimate(flat, options.gevrey_orders)
    except Exception:
        gev_M, gev_R = math.nan, math.nan

    # canonical trajectory on a y-grid, then pulled back to x
    y_grid = np.linspace(0.0, 1.0, options.x_samples)
    values_hat = np.empty((len(t_grid), len(y_grid)))
    regimes = []
    for j, t in enumerate(t_grid):
        values_hat[j] = evaluate_trajectory(flat, gentable, basis, y_grid, float(t))
        regimes.append("eigen" if t <= spec.tau else "genfun")
        if t < EIGEN_FLAG_FRACTION * spec.T and regimes[-1] == "eigen":
            regimes[-1] = "eigen-early"
    traj_hat = Trajectory(x_grid=y_grid, t_grid=t_grid, values=values_hat,
                          regimes=tuple(regimes))

    chain = canonical.chain
    x_grid = np.asarray(chain.x_of_y(y_grid), dtype=float)
    x_grid[0], x_grid[-1] = 0.0, 1.0
    v_x = np.asarray(chain.v_of_x(x_grid), dtype=float)
    shift = np.exp(chain.K * t_grid)
    values = values_hat * v_x[None, :] * shift[:, None]
    trajectory = Trajectory(x_grid=x_grid, t_grid=t_grid, values=values,
                            regimes=tuple(regimes))
    control = ControlSignal(times=t_grid, values=control_hat.values * shift)

    # diagnostics
    trunc_eig = flat.last_mode_magnitude(spec.tau)
    n_gen = gentable.n_gen
    traces = boundary_traces(gentable, canonical.bc1_hat)
    peak = float(np.max(np.abs(control_hat.values))) or 1.0
    after = t_grid > spec.tau
    last_terms = [abs(y_derivs(flat, float(t), n_gen)[-1] * traces[-1])
                  for t in t_grid[after][:: max(1, after.sum() // 16)]]
    trunc_gen = max(last_terms) / peak if last_terms else 0.0
    final_series = float(np.max(np.abs(values_hat[-1])))
    report = Report(matching_error=match, trunc_eig=trunc_eig, trunc_gen=trunc_gen,
                    gevrey_M=gev_M, gevrey_R=gev_R, final_norm_series=final_series)
    return NullControlResult(control=control, trajectory=trajectory, report=report,
                             canonical=canonical, basis=basis, gentable=gentable,
                             flat=flat, control_hat=control_hat, trajectory_hat=traj_hat)
