"""Applications: inverse-square boundary potentials, radial problems, internal control.

The inverse-square reduction replaces the corrector by an explicit solution of
v'' + (mu/x^2) v = 0 that is positive with integrable v^-2:

  * subcritical (mu < 1/4):  v = x^r1 with r1 = (1 - sqrt(1-4 mu))/2,
  * critical   (mu = 1/4):  v = sqrt(x) (1 - ln x).

Both give closed-form space maps and weights. In the critical case the
combination -sqrt(x) ln x from the same solution family fails the
integrability requirement at x = 1 (it vanishes there, so int v^-2 diverges
and the normalizer L is infinite); the chosen combination keeps v(1) = 1 and
yields L = 1, y(x) = 1/(1 - ln x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .flatout import BumpSpec, bump_derivs
from .problem import DIRICHLET, NEUMANN, ProblemSpec, RobinPair
from .quadrature import build_master_grid, integrate_singular
from .reduction import CanonicalProblem, TransformChain, assemble_canonical
from .spectral import EigenBasis
from .synthesis import (ControlSignal, SolverOptions, Trajectory, evaluate_trajectory,
                        solve_canonical, trajectory_y_derivative, build_time_grid)
from .weights import Weight


@dataclass(frozen=True)
class SingularPotentialSpec:
    mu: float
    bc1: RobinPair
    T: float
    tau: float
    s: float
    u0: Callable

    def __post_init__(self):
        if not 0.0 <= self.mu <= 0.25:
            raise DomainError(f"mu={self.mu} outside [0, 1/4]; the reduction does not apply")
        if not (1.0 < self.s < 2.0):
            raise ValueError("Gevrey order s must lie in (1, 2)")
        if not 0 < self.tau < self.T:
            raise ValueError("need 0 < tau < T")


def _critical_v(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(x) * (1.0 - np.log(x))


def _critical_v_prime(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -(1.0 + np.log(x)) / (2.0 * np.sqrt(x))


def inverse_square_reduce(spec: SingularPotentialSpec, n_base: int = 4096) -> CanonicalProblem:
    """Closed-form reduction of u_xx + (mu/x^2) u = u_t with Dirichlet left end."""
    mu = spec.mu
    x_grid = build_master_grid([0.0, 1.0], [0.0], n_base=n_base)
    critical = mu == 0.25

    if critical:
        L = 1.0
        v_of_x = _critical_v
        v_prime = _critical_v_prime

        def y_of_x(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore"):
                out = 1.0 / (1.0 - np.log(x))
            return np.where(x <= 0.0, 0.0, out)

        def x_of_y(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(divide="ignore"):
                out = np.exp(1.0 - 1.0 / y)
            return np.where(y <= 0.0, 0.0, out)

        def rho_hat_fn(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(divide="ignore", over="ignore"):
                out = np.exp(2.0 - 2.0 / y) / y ** 4
            return np.where(y <= 0.0, 0.0, out)

        def mass_antiderivative(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(divide="ignore", over="ignore"):
                u = 1.0 / y
                out = math.e ** 2 * np.exp(-2.0 * u) * (0.5 * u * u + 0.5 * u + 0.25)
            return np.where(y <= 0.0, 0.0, out)

        left_exp = 0.0
        av_x1 = -0.5
    else:
        r1 = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * mu))
        L = 1.0 / (1.0 - 2.0 * r1)
        pow_y = 1.0 - 2.0 * r1
        q = 4.0 * r1 / (1.0 - 2.0 * r1)

        def v_of_x(x, r1=r1):
            return np.power(np.asarray(x, dtype=float), r1)

        def v_prime(x, r1=r1):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore"):
                return r1 * np.power(x, r1 - 1.0)

        def y_of_x(x, pow_y=pow_y):
            return np.power(np.asarray(x, dtype=float), pow_y)

        def x_of_y(y, pow_y=pow_y):
            return np.power(np.asarray(y, dtype=float), 1.0 / pow_y)

        def rho_hat_fn(y, L=L, q=q):
            return L * L * np.power(np.asarray(y, dtype=float), q)

        def mass_antiderivative(y, L=L, q=q):
            return L * L * np.power(np.asarray(y, dtype=float), q + 1.0) / (q + 1.0)

        left_exp = q
        av_x1 = r1

    y_edges = np.asarray(y_of_x(x_grid), dtype=float)
    y_edges[0], y_edges[-1] = 0.0, 1.0
    keep = np.concatenate(([True], np.diff(y_edges) > 0))
    y_edges = y_edges[keep]
    mass = np.diff(mass_antiderivative(y_edges))
    weight = Weight(edges=y_edges, cell_mass=np.maximum(mass, 0.0), fn=rho_hat_fn,
                    left_exponent=left_exp, right_exponent=0.0)

    chain = TransformChain(
        x_grid=x_grid, B=np.zeros_like(x_grid), v=np.asarray(v_of_x(x_grid), dtype=float),
        L=L, y_of_x=y_of_x, x_of_y=x_of_y, K=0.0, atilde_vx=v_prime,
        av_x0=math.nan, av_x1=av_x1,
        B_of_x=lambda x: np.zeros_like(np.asarray(x, dtype=float)), v_of_x=v_of_x)

    # critical control is synthesized against a Dirichlet end; the requested
    # Robin combination is evaluated afterwards from the trajectory
    bc1_hat = DIRICHLET if critical else RobinPair(spec.bc1.alpha + spec.bc1.beta * av_x1,
                                                   spec.bc1.beta / L)

    def u0_hat(y):
        x = np.asarray(x_of_y(y), dtype=float)
        return np.asarray(spec.u0(x), dtype=float) / np.asarray(v_of_x(x), dtype=float)

    return CanonicalProblem(weight=weight, bc0_hat=DIRICHLET, bc1_hat=bc1_hat,
                            chain=chain, u0_hat=u0_hat, p=math.inf)


def weight_identity_gap(spec: SingularPotentialSpec, canonical: CanonicalProblem,
                        tol: float = 1e-10) -> float:
    """Relative gap in int |u0_hat|^2 rho_hat dy = L int |u0|^2 dx."""
    lhs = canonical.weight.integrate_against(lambda y: np.square(canonical.u0_hat(y)))
    rhs = canonical.chain.L * integrate_singular(lambda x: np.square(np.asarray(spec.u0(x), dtype=float)),
                                                 0.0, 1.0, tol)
    return abs(lhs - rhs) / abs(rhs)


@dataclass(frozen=True)
class InverseSquareResult:
    canonical: CanonicalProblem
    basis: EigenBasis
    gentable: object
    flat: object
    control_hat: ControlSignal      # control actually applied in canonical variables
    control: ControlSignal          # requested Robin combination in original variables
    trajectory_hat: Trajectory
    weight_identity: float


def solve_inverse_square(spec: SingularPotentialSpec,
                         options: Optional[SolverOptions] = None) -> InverseSquareResult:
    options = options or SolverOptions()
    canonical = inverse_square_reduce(spec, options.grid_n)
    basis, gentable, flat, control_hat, t_grid = solve_canonical(
        canonical, spec.s, spec.tau, spec.T, options)

    y_grid = np.linspace(0.0, 1.0, options.x_samples)
    values = np.empty((len(t_grid), len(y_grid)))
    regimes = []
    for j, t in enumerate(t_grid):
        values[j] = evaluate_trajectory(flat, gentable, basis, y_grid, float(t))
        regimes.append("eigen" if t <= spec.tau else "genfun")
    traj_hat = Trajectory(x_grid=y_grid, t_grid=t_grid, values=values, regimes=tuple(regimes))

    # original-variable control: h = alpha1 u(1,t) + beta1 u_x(1,t) with
    # u = v(x) u_hat(y(x)), u_x(1) = v'(1) u_hat(1) + u_hat_y(1)/L
    chain = canonical.chain
    vp1 = float(chain.av_x1)
    h_vals = np.empty_like(t_grid)
    for j, t in enumerate(t_grid):
        uh1 = float(evaluate_trajectory(flat, gentable, basis, np.array([1.0]), float(t))[0])
        uy1 = float(trajectory_y_derivative(flat, gentable, basis, np.array([1.0]), float(t))[0])
        h_vals[j] = spec.bc1.alpha * uh1 + spec.bc1.beta * (vp1 * uh1 + uy1 / chain.L)
    control = ControlSignal(times=t_grid, values=h_vals)
    gap = weight_identity_gap(spec, canonical)
    return InverseSquareResult(canonical=canonical, basis=basis, gentable=gentable,
                               flat=flat, control_hat=control_hat, control=control,
                               trajectory_hat=traj_hat, weight_identity=gap)


# ----------------------------------------------------------------------
# radial problems
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RadialReduction:
    N: int
    mu_eff: float
    bc1_eff: RobinPair

    def map_initial(self, u0: Callable) -> Callable:
        half = 0.5 * (self.N - 1)

        def tilde_u0(r):
            r = np.asarray(r, dtype=float)
            return np.power(r, half) * np.asarray(u0(r), dtype=float)

        return tilde_u0


def radial_reduce(N: int, bc1: RobinPair) -> RadialReduction:
    """Substitution u = tilde_u / r^((N-1)/2) for radial heat flow in dimension N.

    N = 3 removes the potential entirely; N = 2 leaves the critical 1/4
    inverse-square coefficient. The boundary pair at r = 1 shifts by the
    logarithmic derivative of the substitution."""
    if N not in (2, 3):
        raise DomainError(f"radial reduction only covers N in {{2, 3}}, got {N}")
    mu_eff = (N - 1) * (3 - N) / 4.0
    bc1_eff = RobinPair(bc1.alpha - 0.5 * (N - 1) * bc1.beta, bc1.beta)
    return RadialReduction(N=N, mu_eff=mu_eff, bc1_eff=bc1_eff)


@dataclass(frozen=True)
class RadialResult:
    reduction: RadialReduction
    inner: InverseSquareResult
    control: ControlSignal

    def u_of_rt(self, r, t: float) -> np.ndarray:
        """Radial trajectory u(r, t) pulled back through both substitutions."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        chain = self.inner.canonical.chain
        y = np.asarray(chain.y_of_x(r), dtype=float)
        uh = evaluate_trajectory(self.inner.flat, self.inner.gentable, self.inner.basis,
                                 y, float(t))
        half = 0.5 * (self.reduction.N - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.asarray(chain.v_of_x(r), dtype=float) * uh / np.power(r, half)
        vals[r == 0.0] = np.nan
        return vals


def solve_radial(N: int, bc1: RobinPair, u0: Callable, T: float, tau: float, s: float,
                 options: Optional[SolverOptions] = None) -> RadialResult:
    options = options or SolverOptions()
    red = radial_reduce(N, bc1)
    tilde_u0 = red.map_initial(u0)
    inner_spec = SingularPotentialSpec(mu=red.mu_eff, bc1=red.bc1_eff, T=T, tau=tau,
                                       s=s, u0=tilde_u0)
    inner = solve_inverse_square(inner_spec, options)
    return RadialResult(reduction=red, inner=inner, control=inner.control)


# ----------------------------------------------------------------------
# internal (distributed) control
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class InternalControlSpec:
    base: ProblemSpec              # homogeneous Robin conditions at both ends
    omega: tuple                   # (l1, l2), control support
    inner: tuple                   # (l1p, l2p) with l1 < l1p < l2p < l2

    def __post_init__(self):
        l1, l2 = self.omega
        l1p, l2p = self.inner
        if not (0.0 < l1 < l1p < l2p < l2 < 1.0):
            raise ValueError("need 0 < l1 < l1' < l2' < l2 < 1")


@dataclass(frozen=True)
class DistributedControl:
    x_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray             # shape (len(t_grid), len(x_grid))
    support: tuple


def _mirror_weight(w: Weight) -> Weight:
    edges = 1.0 - w.edges[::-1]
    edges = edges.copy()
    edges[0], edges[-1] = 0.0, 1.0
    fn = lambda y: np.asarray(w.fn(1.0 - np.asarray(y, dtype=float)), dtype=float)
    return Weight(edges=edges, cell_mass=w.cell_mass[::-1].copy(), fn=fn,
                  left_exponent=w.right_exponent, right_exponent=w.left_exponent)


@dataclass(frozen=True)
class InternalControlResult:
    control: DistributedControl      # original variables
    control_hat: DistributedControl  # canonical variables
    trajectory: Trajectory           # blended, original variables
    trajectory_hat: Trajectory
    canonical: CanonicalProblem
    cutoff: BumpSpec


def internal_control(spec: InternalControlSpec,
                     options: Optional[SolverOptions] = None) -> InternalControlResult:
    """Blend two boundary-controlled solutions into a distributed control.

    Solution one keeps the original left condition and is driven by a Neumann
    control at y = 1; solution two is driven by a Neumann control at y = 0
    (realized by mirroring the domain) and keeps the original right condition.
    The blend u = phi u1 + (1 - phi) u2 with a smooth cutoff phi supported
    below l2' and equal to one below l1' satisfies both homogeneous boundary
    conditions, matches the initial state, vanishes at T, and solves the
    forced equation with source phi'' (u1 - u2) + 2 phi' (u1_y - u2_y),
    supported in the image of (l1', l2').
    """
    options = options or SolverOptions()
    base = spec.base
    canonical = assemble_canonical(base, options.grid_n, options.corrector_n)
    chain = canonical.chain
    l1p_hat = float(chain.y_of_x(spec.inner[0]))
    l2p_hat = float(chain.y_of_x(spec.inner[1]))

    prob1 = CanonicalProblem(weight=canonical.weight, bc0_hat=canonical.bc0_hat,
                             bc1_hat=NEUMANN, chain=chain, u0_hat=canonical.u0_hat,
                             p=canonical.p)
    basis1, table1, flat1, _, t_grid = solve_canonical(prob1, base.s, base.tau, base.T, options)

    mirror_w = _mirror_weight(canonical.weight)
    bc0_m = RobinPair(canonical.bc1_hat.alpha, -canonical.bc1_hat.beta)
    u0_m = lambda y: np.asarray(canonical.u0_hat(1.0 - np.asarray(y, dtype=float)), dtype=float)
    prob2 = CanonicalProblem(weight=mirror_w, bc0_hat=bc0_m, bc1_hat=NEUMANN,
                             chain=chain, u0_hat=u0_m, p=canonical.p)
    basis2, table2, flat2, _, _ = solve_canonical(prob2, base.s, base.tau, base.T, options)

    cutoff = BumpSpec(s=base.s, tau=l1p_hat, T=l2p_hat, M=options.bump_M)
    y_grid = np.unique(np.concatenate((np.linspace(0.0, 1.0, options.x_samples),
                                       np.linspace(l1p_hat, l2p_hat, options.x_samples // 2))))
    phi = np.array([bump_derivs(cutoff, float(y), 2) for y in y_grid])
    phi0, phi1, phi2 = phi[:, 0], phi[:, 1], phi[:, 2]

    n_t, n_y = len(t_grid), len(y_grid)
    u_blend = np.empty((n_t, n_y))
    f_hat = np.zeros((n_t, n_y))
    regimes = []
    band = (y_grid > l1p_hat) & (y_grid < l2p_hat)
    for j, t in enumerate(t_grid):
        u1 = evaluate_trajectory(flat1, table1, basis1, y_grid, float(t))
        u1y = trajectory_y_derivative(flat1, table1, basis1, y_grid, float(t))
        u2 = evaluate_trajectory(flat2, table2, basis2, 1.0 - y_grid, float(t))
        u2y = -trajectory_y_derivative(flat2, table2, basis2, 1.0 - y_grid, float(t))
        u_blend[j] = phi0 * u1 + (1.0 - phi0) * u2
        f_hat[j, band] = (phi2 * (u1 - u2) + 2.0 * phi1 * (u1y - u2y))[band]
        regimes.append("eigen" if t <= base.tau else "genfun")

    traj_hat = Trajectory(x_grid=y_grid, t_grid=t_grid, values=u_blend, regimes=tuple(regimes))
    control_hat = DistributedControl(x_grid=y_grid, t_grid=t_grid, values=f_hat,
                                     support=(l1p_hat, l2p_hat))

    # back to original variables: f = (L^2 a v^3 e^{2B} e^{-Kt})^{-1} f_hat(y(x), t)
    x_grid = np.asarray(chain.x_of_y(y_grid), dtype=float)
    x_grid[0], x_grid[-1] = 0.0, 1.0
    v_x = np.asarray(chain.v_of_x(x_grid), dtype=float)
    B_x = np.asarray(chain.B_of_x(x_grid), dtype=float)
    a_x = np.asarray(base.a(x_grid), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_factor = 1.0 / (chain.L ** 2 * a_x * np.power(v_x, 3) * np.exp(2.0 * B_x))
    inv_factor[~np.isfinite(inv_factor)] = 0.0
    shift = np.exp(chain.K * t_grid)
    f_vals = f_hat * inv_factor[None, :] * shift[:, None]
    u_vals = u_blend * v_x[None, :] * shift[:, None]
    support_x = (float(chain.x_of_y(l1p_hat)), float(chain.x_of_y(l2p_hat)))
    control = DistributedControl(x_grid=x_grid, t_grid=t_grid, values=f_vals,
                                 support=support_x)
    trajectory = Trajectory(x_grid=x_grid, t_grid=t_grid, values=u_vals,
                            regimes=tuple(regimes))
    return InternalControlResult(control=control, control_hat=control_hat,
                                 trajectory=trajectory, trajectory_hat=traj_hat,
                                 canonical=canonical, cutoff=cutoff)
