"""Spectrum of -e'' = lambda rho e on (0,1) with Robin ends, via Prüfer shooting.

The angle theta with (e, e') = (r sin theta, r cos theta) satisfies
theta' = cos^2 theta + lambda rho sin^2 theta, and (e, lambda) is an eigenpair
iff theta(1, lambda) hits the boundary angle mod pi. theta(1, .) is strictly
increasing in lambda, so each eigenvalue is a bisection root.

Propagation uses the exact solution of e'' = -mu e on cells where rho is
replaced by its cell mean: exact for piecewise-constant weights (after merging
equal-mean runs the canonical demos collapse to one or two cells) and
lambda-uniformly second order otherwise. The classical adaptive Runge-Kutta
shoot needs step counts growing like lambda^(5/8) at tight tolerances, which
is why it is not used here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BracketFailure, IntegrationFailure
from .problem import RobinPair
from .weights import Weight

_MU_SMALL = 1e-4          # |mu| h^2 below this uses series propagation
_BRACKET_BUDGET = 2.0 ** 60
_PI = math.pi


@dataclass(frozen=True)
class PruferAngles:
    theta0: float
    theta1: float


@dataclass(frozen=True)
class EigenPair:
    n: int
    lam: float
    e: np.ndarray            # values on the weight grid
    e_prime: np.ndarray
    zeta: float
    e_mid: np.ndarray = field(repr=False, default=None)   # cell midpoints, for quadrature


def boundary_angles(bc0: RobinPair, bc1: RobinPair) -> PruferAngles:
    def angle(pair):
        if pair.alpha == 0.0:
            return 0.5 * _PI
        return -math.atan(pair.beta / pair.alpha)
    return PruferAngles(angle(bc0), angle(bc1))


# ----------------------------------------------------------------------
# exact constant-coefficient propagation of e'' = -mu e
# ----------------------------------------------------------------------

def _cs(mu, h):
    """Fundamental pair: e(h) = C e0 + S e0', e'(h) = -mu S e0 + C e0'."""
    mu = np.asarray(mu, dtype=float)
    h = np.asarray(h, dtype=float)
    C = np.empty(np.broadcast(mu, h).shape)
    S = np.empty_like(C)
    mu_b = np.broadcast_to(mu, C.shape)
    h_b = np.broadcast_to(h, C.shape)
    small = np.abs(mu_b) * h_b * h_b < _MU_SMALL
    trig = (~small) & (mu_b > 0)
    hyp = (~small) & (mu_b < 0)
    if np.any(trig):
        w = np.sqrt(mu_b[trig])
        C[trig] = np.cos(w * h_b[trig])
        S[trig] = np.sin(w * h_b[trig]) / w
    if np.any(hyp):
        k = np.sqrt(-mu_b[hyp])
        C[hyp] = np.cosh(k * h_b[hyp])
        S[hyp] = np.sinh(k * h_b[hyp]) / k
    if np.any(small):
        m, hh = mu_b[small], h_b[small]
        z = m * hh * hh
        C[small] = 1.0 - z / 2.0 + z * z / 24.0
        S[small] = hh * (1.0 - z / 6.0 + z * z / 120.0)
    return C, S


def _advance_theta(theta, mu, h):
    """Advance the Prüfer angle across one constant-mu cell, exactly.

    For mu > 0 the scaled angle psi with tan psi = omega tan theta rotates
    uniformly: psi' = omega. For mu <= 0 the direction (e, e') is propagated
    with overflow-safe scaling and theta is lifted back into its trapping
    window (theta can cross multiples of pi upward only, and for mu <= 0 it
    cannot cross pi/2 + k pi upward, which pins the branch).
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), theta.shape)
    out = np.empty_like(theta)
    rotating = mu * h * h > _MU_SMALL
    if np.any(rotating):
        th = theta[rotating]
        w = np.sqrt(mu[rotating])
        m = np.round(th / _PI)
        frac = th - m * _PI
        psi = m * _PI + np.arctan2(w * np.sin(frac), np.cos(frac)) + w * h
        m2 = np.round(psi / _PI)
        fr = psi - m2 * _PI
        out[rotating] = m2 * _PI + np.arctan2(np.sin(fr), w * np.cos(fr))
    rest = ~rotating
    if np.any(rest):
        th = theta[rest]
        mur = mu[rest]
        s, c = np.sin(th), np.cos(th)
        e = np.empty_like(th)
        ep = np.empty_like(th)
        hyp = mur * h * h < -_MU_SMALL
        if np.any(hyp):
            # direction only matters: propagate (e, e') scaled by exp(-kappa h)
            k = np.sqrt(-mur[hyp])
            decay = np.exp(-2.0 * k * h)
            em = 0.5 * (1.0 + decay)
            sm = 0.5 * (1.0 - decay)
            e[hyp] = em * s[hyp] + (sm / k) * c[hyp]
            ep[hyp] = k * sm * s[hyp] + em * c[hyp]
        small = ~hyp
        if np.any(small):
            C, S = _cs(mur[small], h)
            e[small] = C * s[small] + S * c[small]
            ep[small] = -mur[small] * S * s[small] + C * c[small]
        raw = np.arctan2(e, ep)
        m = np.round(th / _PI)
        center = m * _PI - 0.25 * _PI   # window (m pi - pi, m pi + pi/2]
        out[rest] = raw + 2.0 * _PI * np.round((center - raw) / (2.0 * _PI))
    return out


def _merged(weight: Weight):
    edges, means = weight.merged_runs()
    return edges, means


def shoot_theta_batch(lams, edges, means, theta0):
    theta = np.full(np.shape(lams), float(theta0), dtype=float)
    lams = np.asarray(lams, dtype=float)
    widths = np.diff(edges)
    for j in range(len(widths)):
        theta = _advance_theta(theta, lams * means[j], float(widths[j]))
    if not np.all(np.isfinite(theta)):
        raise IntegrationFailure("Prüfer angle became non-finite")
    return theta


def shoot_theta(lam: float, rho_hat: Weight, theta0: float) -> float:
    """Terminal Prüfer angle theta(1, lambda) for the given weight."""
    edges, means = _merged(rho_hat)
    return float(shoot_theta_batch(np.array([lam]), edges, means, theta0)[0])


# ----------------------------------------------------------------------
# eigenvalue location
# ----------------------------------------------------------------------

def _theta_floor(edges, means, theta0, theta1):
    """Lower bracket by downward doubling: stop when theta(1, lam) falls below
    theta1 or saturates at its lambda -> -inf limit."""
    lam = -1.0
    prev = float(shoot_theta_batch(np.array([lam]), edges, means, theta0)[0])
    saturated = False
    while prev > theta1 and abs(lam) < _BRACKET_BUDGET:
        nxt = lam * 2.0
        cur = float(shoot_theta_batch(np.array([nxt]), edges, means, theta0)[0])
        if abs(cur - prev) < 1e-9:
            lam, prev = nxt, cur
            saturated = True
            break
        lam, prev = nxt, cur
    if prev > theta1 and not saturated and abs(lam) >= _BRACKET_BUDGET:
        warnings.warn("no bracket below theta1 within 2^60; using the saturated floor")
    return lam, prev


def eigenvalues(weight: Weight, bc0: RobinPair, bc1: RobinPair, n_max: int,
                rtol: float = 1e-12) -> np.ndarray:
    """First n_max + 1 eigenvalues, indexed from 0, by batched bisection."""
    angles = boundary_angles(bc0, bc1)
    edges, means = _merged(weight)
    lam_floor, th_floor = _theta_floor(edges, means, angles.theta0, angles.theta1)
    m_min = math.floor((th_floor - angles.theta1) / _PI) + 1
    targets = angles.theta1 + (m_min + np.arange(n_max + 1)) * _PI

    lo = np.full(n_max + 1, lam_floor)
    hi = np.full(n_max + 1, max(1.0, abs(lam_floor)))
    for _ in range(200):
        th = shoot_theta_batch(hi, edges, means, angles.theta0)
        need = th <= targets
        if not np.any(need):
            break
        hi[need] *= 2.0
        if np.max(hi) > _BRACKET_BUDGET:
            raise BracketFailure("upward doubling exceeded 2^60")
    else:
        raise BracketFailure("upward doubling did not bracket all targets")

    while True:
        gap = hi - lo
        if np.all(gap <= rtol * np.maximum(1.0, np.abs(lo))):
            break
        mid = 0.5 * (lo + hi)
        th = shoot_theta_batch(mid, edges, means, angles.theta0)
        below = th < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def find_eigenvalue(n: int, rho_hat: Weight, angles_or_bc0, bc1: Optional[RobinPair] = None,
                    rtol: float = 1e-12) -> float:
    """n-th eigenvalue. Accepts either precomputed PruferAngles or the two
    Robin pairs."""
    if isinstance(angles_or_bc0, PruferAngles):
        a = angles_or_bc0
        bc0 = RobinPair(math.cos(a.theta0), -math.sin(a.theta0)) if a.theta0 != 0.5 * _PI else RobinPair(0.0, 1.0)
        bc1p = RobinPair(math.cos(a.theta1), -math.sin(a.theta1)) if a.theta1 != 0.5 * _PI else RobinPair(0.0, 1.0)
    else:
        bc0, bc1p = angles_or_bc0, bc1
    return float(eigenvalues(rho_hat, bc0, bc1p, n, rtol)[n])


# ----------------------------------------------------------------------
# eigenfunctions
# ----------------------------------------------------------------------

def _norm_cell_integrals(mu, h, e0, ep0, mean):
    """Exact integrals of rho_cell * e^2 over cells (all arguments vectorized)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    h = np.broadcast_to(np.asarray(h, dtype=float), mu.shape)
    C, S = _cs(mu, h)
    Icc = 0.5 * (h + C * S)
    Ics = 0.5 * S * S
    small = np.abs(mu) * h * h < _MU_SMALL
    Iss = np.empty_like(C)
    np.divide(h - C * S, 2.0 * mu, out=Iss, where=~small)
    hs, ms = h[small], mu[small]
    Iss[small] = hs ** 3 / 3.0 - ms * hs ** 5 / 15.0 + 2.0 * ms * ms * hs ** 7 / 315.0
    return mean * (e0 * e0 * Icc + 2.0 * e0 * ep0 * Ics + ep0 * ep0 * Iss)


def build_eigenpair(lam: float, rho_hat: Weight, bc0_hat: RobinPair, n: int = -1) -> EigenPair:
    """Propagate (e, e'), normalize in the weighted L2 norm, and read off the
    trace coefficient zeta = beta0 e(0) - alpha0 e'(0)."""
    theta0 = boundary_angles(bc0_hat, bc0_hat).theta0
    edges = rho_hat.edges
    means = rho_hat.cell_mean
    n_cells = len(means)
    e = np.empty(n_cells + 1)
    ep = np.empty(n_cells + 1)
    e_mid = np.empty(n_cells)
    e[0], ep[0] = math.sin(theta0), math.cos(theta0)
    widths = np.diff(edges)
    mus = lam * means
    Ch, Sh = _cs(mus, widths)
    Cm, Sm = _cs(mus, 0.5 * widths)
    for j in range(n_cells):
        e_mid[j] = Cm[j] * e[j] + Sm[j] * ep[j]
        e[j + 1] = Ch[j] * e[j] + Sh[j] * ep[j]
        ep[j + 1] = -mus[j] * Sh[j] * e[j] + Ch[j] * ep[j]
    norm_sq = float(np.sum(_norm_cell_integrals(mus, widths, e[:-1], ep[:-1], means)))
    if not (norm_sq > 0 and math.isfinite(norm_sq)):
        raise IntegrationFailure(f"eigenfunction norm^2 = {norm_sq}")
    scale = 1.0 / math.sqrt(norm_sq)
    # sign convention: first nonzero of (e(0), e'(0)) positive
    lead = e[0] if e[0] != 0.0 else ep[0]
    if lead < 0:
        scale = -scale
    e *= scale
    ep *= scale
    e_mid *= scale
    zeta = bc0_hat.beta * e[0] - bc0_hat.alpha * ep[0]
    return EigenPair(n=n, lam=float(lam), e=e, e_prime=ep, zeta=float(zeta), e_mid=e_mid)


class EigenBasis:
    """Computed eigenpairs plus in-cell evaluation against the shared weight."""

    def __init__(self, weight: Weight, bc0: RobinPair, bc1: RobinPair, pairs):
        self.weight = weight
        self.bc0 = bc0
        self.bc1 = bc1
        self.pairs = list(pairs)
        self.lams = np.array([p.lam for p in self.pairs])
        self.zetas = np.array([p.zeta for p in self.pairs])

    def __len__(self):
        return len(self.pairs)

    def evaluate(self, y, deriv: bool = False) -> np.ndarray:
        """Matrix e_n(y) (rows n, columns y), exact within each grid cell."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        edges = self.weight.edges
        means = self.weight.cell_mean
        idx = np.clip(np.searchsorted(edges, y, side="right") - 1, 0, len(means) - 1)
        d = y - edges[idx]
        out = np.empty((len(self.pairs), len(y)))
        for i, pair in enumerate(self.pairs):
            mu = pair.lam * means[idx]
            C, S = _cs(mu, d)
            if deriv:
                out[i] = -mu * S * pair.e[idx] + C * pair.e_prime[idx]
            else:
                out[i] = C * pair.e[idx] + S * pair.e_prime[idx]
        return out

    def boundary_residuals(self) -> np.ndarray:
        r0 = self.bc0.alpha * np.array([p.e[0] for p in self.pairs]) + \
            self.bc0.beta * np.array([p.e_prime[0] for p in self.pairs])
        r1 = self.bc1.alpha * np.array([p.e[-1] for p in self.pairs]) + \
            self.bc1.beta * np.array([p.e_prime[-1] for p in self.pairs])
        return np.maximum(np.abs(r0), np.abs(r1))


def solve_spectrum(weight: Weight, bc0: RobinPair, bc1: RobinPair, n_eig: int = 40,
                   rtol: float = 1e-12) -> EigenBasis:
    """Eigenvalues and normalized eigenfunctions for indices 0 .. n_eig - 1."""
    lams = eigenvalues(weight, bc0, bc1, n_eig - 1, rtol)
    pairs = [build_eigenpair(lam, weight, bc0, n=i) for i, lam in enumerate(lams)]
    return EigenBasis(weight, bc0, bc1, pairs)
