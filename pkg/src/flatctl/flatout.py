"""Flat output y(t): smoothed spectral sum with high-order time derivatives.

The bump phi equals 1 up to the switch time tau and 0 from the horizon T on;
in between it is the logistic-type partition

    phi(t) = psi((T - t)/(T - tau)),    psi(q) = (1 - tanh(g(q)/2)) / 2,
    g(q) = M (q^-k - (1-q)^-k),         k = 1/(s - 1),

which lies in the Gevrey class of order s. Interior derivatives come from the
Cauchy integral formula on a circle, evaluated by the trapezoid rule (an FFT
over the contour samples). psi is analytic near the real interval except for
the essential singularities at q = 0, 1 and the zeros of 1 + e^g, which sit on
the line Re q = 1/2 starting at height v0 solving
2 M |1/2 + i v|^-k sin(k arg(1/2 + i v)) = pi. The contour radius therefore
keeps a factor-2 margin below both the interval ends and that zero height;
a radius chosen from the interval ends alone would enclose the zeros for
moderate M and make every mid-interval derivative wrong.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FitDegenerate, IntegrationFailure, OrderTooHigh, TruncationWarning
from .spectral import EigenBasis
from .util import kahan_sum
from .weights import Weight

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_EDGE_MARGIN = 1e-6       # no contour derivatives closer than this to tau or T
_CONTOUR_TOL = 1e-10


def _denominator_zero_height(M: float, k: float) -> float:
    """Smallest v > 0 with a zero of 1 + exp(g) at q = 1/2 + i v (inf if none)."""
    def gap(v):
        rho = math.hypot(0.5, v)
        phi = math.atan2(v, 0.5)
        return 2.0 * M * rho ** (-k) * math.sin(min(k * phi, math.pi)) - math.pi

    vs = np.linspace(1e-6, 2.0, 4001)
    vals = np.array([gap(v) for v in vs])
    sign_change = np.nonzero((vals[:-1] < 0) & (vals[1:] >= 0))[0]
    if len(sign_change) == 0:
        return math.inf
    lo, hi = vs[sign_change[0]], vs[sign_change[0] + 1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BumpSpec:
    s: float
    tau: float
    T: float
    M: float = 1.0

    def __post_init__(self):
        if not (1.0 < self.s < 2.0):
            raise ValueError("Gevrey order s must lie in (1, 2)")
        if not 0 < self.tau < self.T:
            raise ValueError("need 0 < tau < T")
        if not self.M > 0:
            raise ValueError("shape parameter M must be positive")
        object.__setattr__(self, "k", 1.0 / (self.s - 1.0))
        object.__setattr__(self, "zero_height", _denominator_zero_height(self.M, self.k))

    def psi(self, q):
        """Transition profile 1/(1 + exp(g(q))) on (0, 1); complex-capable.

        Always evaluated through the exponentially small branch so the result
        keeps full relative precision: computing it as (1 - tanh(g/2))/2 loses
        a digit for every decade by which psi approaches 0 or 1, which is what
        the Cauchy derivative quotient then amplifies by r^-j."""
        q = np.atleast_1d(np.asarray(q))
        g = self.M * (np.power(q, -self.k) - np.power(1.0 - q, -self.k))
        out = np.empty_like(g)
        pos = np.real(g) >= 0
        with np.errstate(over="ignore", under="ignore"):
            eg = np.exp(-g[pos])
            out[pos] = eg / (1.0 + eg)
            ei = np.exp(g[~pos])
            out[~pos] = 1.0 / (1.0 + ei)
        return out

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        out[t <= self.tau] = 1.0
        out[t >= self.T] = 0.0
        mid = (t > self.tau) & (t < self.T)
        if np.any(mid):
            out[mid] = np.real(self.psi((self.T - t[mid]) / (self.T - self.tau)))
        return out if out.ndim else float(out)

    def contour_radius(self, t: float) -> float:
        """Safe Cauchy radius at t: half the distance to the interval ends and
        to the nearest denominator zero (in t units)."""
        span = self.T - self.tau
        q = (self.T - t) / span
        d_ends = min(q, 1.0 - q)
        d_zero = math.hypot(q - 0.5, self.zero_height) if math.isfinite(self.zero_height) else math.inf
        return 0.5 * span * min(d_ends, d_zero)


def bump_derivs(bump: BumpSpec, t: float, max_order: int) -> np.ndarray:
    """phi and its derivatives up to max_order at one time.

    On the flat sides the exact values (1 or 0, all derivatives 0) are
    returned; inside, trapezoid contour sums are doubled from 64 nodes until
    two passes agree to 1e-10 on every requested order.
    """
    if t <= bump.tau + 1e-14 * max(1.0, bump.tau):
        out = np.zeros(max_order + 1)
        out[0] = 1.0
        return out
    if t >= bump.T - 1e-14 * max(1.0, bump.T):
        return np.zeros(max_order + 1)
    if min(t - bump.tau, bump.T - t) < _EDGE_MARGIN:
        raise OrderTooHigh(f"t={t} is within {_EDGE_MARGIN} of a flat-region endpoint")

    r = bump.contour_radius(t)
    span = bump.T - bump.tau
    n = 64
    while n < 8 * (max_order + 1):
        n *= 2
    with np.errstate(over="ignore"):
        factor = np.exp(np.array([math.lgamma(j + 1.0) for j in range(max_order + 1)])
                        - np.arange(max_order + 1) * math.log(r))
    # in the left half phi is exponentially close to 1, so differentiate the
    # complementary transition (psi(q) + psi(1-q) = 1) whose contour samples
    # are exponentially small but carry full relative precision
    mirrored = (bump.T - t) > 0.5 * span
    prev = None
    while n <= 2 ** 15:
        angles = 2.0 * math.pi * np.arange(n) / n
        z = t + r * np.exp(1j * angles)
        if mirrored:
            vals = bump.psi((z - bump.tau) / span)
        else:
            vals = bump.psi((bump.T - z) / span)
        coeffs = np.fft.fft(vals)[: max_order + 1] / n
        out = np.real(coeffs) * factor
        # summing n samples of size max|vals| leaves an absolute roundoff
        # floor on every coefficient; differences at that floor are converged
        noise = 1e-13 * factor * max(float(np.abs(vals).max()), 1e-300)
        if prev is not None:
            agree = np.abs(out - prev) <= np.maximum(_CONTOUR_TOL * np.abs(out), noise)
            if np.all(agree):
                break
        prev = out
        n *= 2
    else:
        raise IntegrationFailure("contour derivative sums did not settle")
    out[np.abs(out) <= noise] = 0.0
    if mirrored:
        out = -out
        out[0] += 1.0
    return out


# ----------------------------------------------------------------------
# spectral coefficients and the flat output
# ----------------------------------------------------------------------

def project_initial(u0_hat, basis: EigenBasis, rho_hat: Weight) -> np.ndarray:
    """Coefficients c_n = int u0 e_n rho dy, cell-mean weight quadrature."""
    edges = rho_hat.edges
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    u_vals = np.asarray(u0_hat(nodes), dtype=float)
    if not np.all(np.isfinite(u_vals)):
        raise IntegrationFailure("initial state is not finite at quadrature nodes")
    e_vals = basis.evaluate(nodes)
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * np.repeat(rho_hat.cell_mean, len(_GL_NODES))
    return e_vals @ (w * u_vals)


@dataclass(frozen=True)
class FlatOutput:
    c: np.ndarray
    zeta: np.ndarray
    lam: np.ndarray
    bump: BumpSpec
    n_eig: int = field(default=0)

    def __post_init__(self):
        if self.n_eig == 0:
            object.__setattr__(self, "n_eig", len(self.lam))

    def w_derivs(self, t: float, max_order: int) -> np.ndarray:
        """Derivatives of w(t) = sum c_n zeta_n exp(-lam_n t), orders 0..max.

        Term magnitudes lam^k e^{-lam t} are combined in log scale so that the
        two factors cannot overflow separately when the product is finite."""
        amp = self.c * self.zeta
        lam = self.lam
        nonzero = lam != 0.0
        loglam = np.zeros_like(lam)
        loglam[nonzero] = np.log(np.abs(lam[nonzero]))
        out = np.empty(max_order + 1)
        for k in range(max_order + 1):
            with np.errstate(over="ignore"):
                mag = np.exp(k * loglam - lam * t)
            sign = np.where(lam > 0, (-1.0) ** k, 1.0)
            terms = amp * sign * mag
            if k > 0:
                terms = np.where(nonzero, terms, 0.0)
            out[k] = kahan_sum(terms)
        return out

    def last_mode_magnitude(self, t: float) -> float:
        if len(self.lam) == 0:
            return 0.0
        return float(abs(self.c[-1] * self.zeta[-1]) * math.exp(-self.lam[-1] * t))

    def y_value(self, t: float) -> float:
        return float(self.bump.value(t) * self.w_derivs(t, 0)[0])


def y_derivs(flat: FlatOutput, t: float, max_order: int) -> np.ndarray:
    """Leibniz combination y^(i) = sum_j C(i,j) phi^(j) w^(i-j), orders 0..max."""
    if t >= flat.bump.T - 1e-14 * max(1.0, flat.bump.T):
        return np.zeros(max_order + 1)
    phi = bump_derivs(flat.bump, t, max_order)
    w = flat.w_derivs(t, max_order)
    binom = np.zeros((max_order + 1, max_order + 1))
    binom[:, 0] = 1.0
    for i in range(1, max_order + 1):
        binom[i, 1:i + 1] = binom[i - 1, 1:i + 1] + binom[i - 1, 0:i]
    out = np.empty(max_order + 1)
    for i in range(max_order + 1):
        j = np.arange(i + 1)
        out[i] = kahan_sum(binom[i, j] * phi[j] * w[i - j])
    return out


def gevrey_estimate(flat: FlatOutput, max_order: int = 20, n_samples: int = 33):
    """Fit the envelope sup_t |y^(p)(t)| <= M (p!)^s / R^p over sampled times.

    Returns (M_fit, R_fit, ratios) where ratios[j] = data / envelope for the
    j-th usable order; ratios above 1 mean the envelope is exceeded. The class
    membership statement is one-sided, so only upward deviations count against
    it.
    """
    if max_order < 5:
        raise ValueError("need at least orders 0..5 for a meaningful fit")
    bump = flat.bump
    pad = max(10 * _EDGE_MARGIN, 1e-3 * (bump.T - bump.tau))
    ts = np.linspace(bump.tau + pad, bump.T - pad, n_samples)
    sup = np.zeros(max_order + 1)
    for t in ts:
        sup = np.maximum(sup, np.abs(y_derivs(flat, float(t), max_order)))
    usable = np.nonzero(sup > 0.0)[0]
    if len(usable) < 2:
        raise FitDegenerate("flat output vanishes at all sampled times")
    p = usable.astype(float)
    yv = np.log(sup[usable]) - flat.bump.s * np.array([math.lgamma(q + 1.0) for q in p])
    A = np.column_stack((np.ones_like(p), -p))
    coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
    ratios = np.exp(yv - A @ coef)
    return float(math.exp(coef[0])), float(math.exp(coef[1])), ratios


def build_flat_output(u0_hat, basis: EigenBasis, rho_hat: Weight, bump: BumpSpec,
                      warn_tail: bool = True) -> FlatOutput:
    c = project_initial(u0_hat, basis, rho_hat)
    flat = FlatOutput(c=c, zeta=basis.zetas.copy(), lam=basis.lams.copy(), bump=bump)
    if warn_tail and len(c):
        head = float(np.max(np.abs(c * basis.zetas * np.exp(-basis.lams * bump.tau))))
        tail = flat.last_mode_magnitude(bump.tau)
        if head > 0 and tail > 1e-8 * head:
            warnings.warn(f"last retained mode still contributes {tail:.2e} at tau",
                          TruncationWarning)
    return flat
