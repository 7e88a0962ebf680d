"""Problem data types and admissibility validation for the boundary-control setup.

The controlled system is

    (a u_x)_x + b u_x + c u - rho u_t = 0          on (0,1) x (0,T)
    alpha0 u(0,t) + beta0 (a u_x)(0,t) = 0
    alpha1 u(1,t) + beta1 (a u_x)(1,t) = h(t)
    u(x,0) = u0(x)

with a, b, c, rho merely integrable in the combinations checked by validate().
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coefficients import CoefficientFn
from .errors import NonIntegrable
from .quadrature import integrate_singular

SAMPLES_PER_SEGMENT = 10_000


@dataclass(frozen=True)
class RobinPair:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha == 0.0 and self.beta == 0.0:
            raise ValueError("Robin pair (0, 0) is not allowed")

    def as_tuple(self):
        return (self.alpha, self.beta)


DIRICHLET = RobinPair(1.0, 0.0)
NEUMANN = RobinPair(0.0, 1.0)


@dataclass(frozen=True)
class ProblemSpec:
    a: CoefficientFn
    b: CoefficientFn
    c: CoefficientFn
    rho: CoefficientFn
    bc0: RobinPair
    bc1: RobinPair
    T: float
    tau: float
    s: float
    u0: Callable[[np.ndarray], np.ndarray]
    p: float = math.inf
    K: Optional[float] = None   # bound for c/rho; sampled when omitted

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not 0 < self.tau < self.T:
            raise ValueError("switch time tau must lie in (0, T)")
        if not self.p > 1:
            raise ValueError("integrability exponent p must exceed 1")
        if not 1 < self.s < 2 - 1 / self.p:
            raise ValueError(f"smoothness order s={self.s} outside (1, {2 - 1 / self.p})")

    def sampled_reaction_bound(self) -> float:
        """Sampled sup of c/rho over segment interiors (used as default K)."""
        worst = 0.0
        for seg in self.c.segments:
            xs = _interior_samples(seg.x_lo, seg.x_hi)
            ratio = self.c(xs) / self.rho(xs)
            worst = max(worst, float(np.nanmax(ratio)))
        return max(0.0, worst)

    def reaction_shift(self) -> float:
        return self.K if self.K is not None else self.sampled_reaction_bound()


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    value: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    admissible: bool

    def as_dict(self):
        return {
            "admissible": self.admissible,
            "checks": [{"name": c.name, "value": c.value, "passed": c.passed} for c in self.checks],
        }


def _interior_samples(lo, hi, n=SAMPLES_PER_SEGMENT):
    step = (hi - lo) / (n + 1)
    return lo + step * np.arange(1, n + 1)


def _finite_integral(fn, name, tol):
    if fn.is_identically_zero():
        return ValidationCheck(name, 0.0, True)
    try:
        value = integrate_singular(fn, 0.0, 1.0, tol)
        return ValidationCheck(name, value, math.isfinite(value))
    except NonIntegrable:
        return ValidationCheck(name, math.inf, False)


def validate(spec: ProblemSpec, tol: float = 1e-10) -> ValidationReport:
    """Check the admissibility conditions and report every outcome.

    Positivity of a and rho is sampled on segment interiors; the reaction
    bound c/rho <= K is a dense sampling check, not a proof.
    """
    checks = []

    pos = True
    for coeff, label in ((spec.a, "a"), (spec.rho, "rho")):
        for seg in coeff.segments:
            xs = _interior_samples(seg.x_lo, seg.x_hi, 1000)
            if np.nanmin(coeff(xs)) <= 0.0:
                pos = False
    checks.append(ValidationCheck("positivity a,rho", 1.0 if pos else 0.0, pos))

    checks.append(_finite_integral(spec.a.reciprocal(), "int 1/a", tol))
    checks.append(_finite_integral(spec.b.absolute().times(spec.a.reciprocal()), "int |b|/a", tol))
    checks.append(_finite_integral(spec.c.absolute(), "int |c|", tol))
    checks.append(_finite_integral(spec.rho, "int rho", tol))

    K = spec.reaction_shift()
    bound = spec.sampled_reaction_bound()
    checks.append(ValidationCheck("sup c/rho <= K", bound, bound <= K + 1e-12))

    # the L^p membership of a^(1-1/p) rho reduces to finiteness of
    # int a^(p-1) rho^p for finite p; for p = inf sample sup(a rho)
    if math.isinf(spec.p):
        worst = 0.0
        prod = spec.a.times(spec.rho)
        for seg in prod.segments:
            xs = _interior_samples(seg.x_lo, seg.x_hi)
            worst = max(worst, float(np.nanmax(np.abs(prod(xs)))))
        checks.append(ValidationCheck("ess-sup a*rho", worst, math.isfinite(worst)))
    else:
        integrand = spec.a.power(spec.p - 1.0).times(spec.rho.power(spec.p))
        checks.append(_finite_integral(integrand, f"int a^(p-1) rho^p, p={spec.p}", tol))

    return ValidationReport(tuple(checks), all(c.passed for c in checks))
