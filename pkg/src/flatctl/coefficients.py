"""Piecewise coefficient functions with declared endpoint power behaviour.

A coefficient is a list of segments partitioning [0, 1]. On the interior of a
segment the value is

    (x - x_lo)^left_exp * (x_hi - x)^right_exp * smooth(x)

with ``smooth`` continuous on the closed segment. Declaring the power factors
explicitly is what lets the quadrature grade its mesh toward integrable
singularities instead of guessing them from samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    x_lo: float
    x_hi: float
    left_exp: float
    right_exp: float
    smooth: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError(f"segment bounds must satisfy x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            out = np.asarray(self.smooth(x), dtype=float) + np.zeros_like(x)
            if self.left_exp != 0.0:
                out = out * np.power(x - self.x_lo, self.left_exp)
            if self.right_exp != 0.0:
                out = out * np.power(self.x_hi - x, self.right_exp)
        return out


def _restrict(seg: Segment, lo: float, hi: float) -> Segment:
    """Restrict a segment to [lo, hi] inside it, folding interior power factors
    into the smooth part so exponents stay attached to true segment ends."""
    keep_left = abs(lo - seg.x_lo) <= _EDGE_TOL
    keep_right = abs(hi - seg.x_hi) <= _EDGE_TOL
    if keep_left and keep_right:
        return seg
    le = seg.left_exp if keep_left else 0.0
    re = seg.right_exp if keep_right else 0.0
    base = seg

    def smooth(x, base=base, keep_left=keep_left, keep_right=keep_right):
        out = np.asarray(base.smooth(x), dtype=float) + np.zeros_like(np.asarray(x, dtype=float))
        if not keep_left and base.left_exp != 0.0:
            out = out * np.power(np.asarray(x, dtype=float) - base.x_lo, base.left_exp)
        if not keep_right and base.right_exp != 0.0:
            out = out * np.power(base.x_hi - np.asarray(x, dtype=float), base.right_exp)
        return out

    return Segment(lo, hi, le, re, smooth)


class CoefficientFn:
    """Piecewise power-law-times-smooth function on [0, 1]."""

    def __init__(self, segments: Sequence[Segment]):
        segments = sorted(segments, key=lambda s: s.x_lo)
        if not segments:
            raise ValueError("at least one segment required")
        for a, b in zip(segments, segments[1:]):
            if abs(a.x_hi - b.x_lo) > _EDGE_TOL:
                raise ValueError(f"segments leave a gap or overlap near x={a.x_hi}")
        self.segments = tuple(segments)
        self.lo = segments[0].x_lo
        self.hi = segments[-1].x_hi

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def constant(cls, value: float, lo: float = 0.0, hi: float = 1.0) -> "CoefficientFn":
        v = float(value)
        return cls([Segment(lo, hi, 0.0, 0.0, lambda x, v=v: np.full_like(np.asarray(x, dtype=float), v))])

    @classmethod
    def from_callable(cls, fn, lo: float = 0.0, hi: float = 1.0,
                      left_exp: float = 0.0, right_exp: float = 0.0) -> "CoefficientFn":
        return cls([Segment(lo, hi, left_exp, right_exp, fn)])

    @classmethod
    def power_law(cls, exponent: float, coefficient: float = 1.0, at: str = "left",
                  lo: float = 0.0, hi: float = 1.0) -> "CoefficientFn":
        """coefficient * (x - lo)^exponent or coefficient * (hi - x)^exponent."""
        c = float(coefficient)
        smooth = lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c)
        if at == "left":
            return cls([Segment(lo, hi, exponent, 0.0, smooth)])
        if at == "right":
            return cls([Segment(lo, hi, 0.0, exponent, smooth)])
        raise ValueError("at must be 'left' or 'right'")

    @classmethod
    def from_samples(cls, x: np.ndarray, values: np.ndarray) -> "CoefficientFn":
        """Single smooth segment through samples (shape-preserving cubic)."""
        interp = PchipInterpolator(np.asarray(x, dtype=float), np.asarray(values, dtype=float))
        return cls([Segment(float(x[0]), float(x[-1]), 0.0, 0.0, interp)])

    @classmethod
    def piecewise_constant(cls, edges: Sequence[float], values: Sequence[float]) -> "CoefficientFn":
        segs = []
        for lo, hi, v in zip(edges[:-1], edges[1:], values):
            v = float(v)
            segs.append(Segment(float(lo), float(hi), 0.0, 0.0,
                                lambda x, v=v: np.full_like(np.asarray(x, dtype=float), v)))
        return cls(segs)

    # ------------------------------------------------------------------
    # evaluation and structure
    # ------------------------------------------------------------------
    def __call__(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x_arr)
        edges = self.breakpoints()
        # interior points of segment k satisfy edges[k] <= x < edges[k+1]
        idx = np.clip(np.searchsorted(edges, x_arr, side="right") - 1, 0, len(self.segments) - 1)
        for k, seg in enumerate(self.segments):
            mask = idx == k
            if np.any(mask):
                out[mask] = seg.value(x_arr[mask])
        if np.ndim(x) == 0:
            return float(out[0])
        return out

    def breakpoints(self) -> np.ndarray:
        return np.array([s.x_lo for s in self.segments] + [self.segments[-1].x_hi])

    def exponent_at(self, point: float) -> float:
        """Total declared power exponent governing behaviour as x -> point."""
        exp = 0.0
        for seg in self.segments:
            if abs(point - seg.x_lo) <= _EDGE_TOL:
                exp += seg.left_exp
            if abs(point - seg.x_hi) <= _EDGE_TOL:
                exp += seg.right_exp
        return exp

    def singular_points(self) -> dict:
        """Breakpoints with a nonzero declared exponent, mapped to the exponent."""
        out = {}
        for p in self.breakpoints():
            e = self.exponent_at(float(p))
            if e != 0.0:
                out[float(p)] = e
        return out

    # ------------------------------------------------------------------
    # algebra (used to form integrands such as 1/a, |b|/a, a^(p-1) rho^p)
    # ------------------------------------------------------------------
    def _pieces_on(self, cuts: np.ndarray):
        pieces = []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (lo + hi)
            for seg in self.segments:
                if seg.x_lo - _EDGE_TOL <= mid <= seg.x_hi + _EDGE_TOL:
                    pieces.append(_restrict(seg, lo, hi))
                    break
            else:
                raise ValueError(f"no segment covers x={mid}")
        return pieces

    def _merged_cuts(self, other: "CoefficientFn") -> np.ndarray:
        cuts = np.union1d(self.breakpoints(), other.breakpoints())
        keep = [cuts[0]]
        for c in cuts[1:]:
            if c - keep[-1] > _EDGE_TOL:
                keep.append(c)
        return np.array(keep)

    def times(self, other: "CoefficientFn") -> "CoefficientFn":
        cuts = self._merged_cuts(other)
        segs = []
        for sa, sb in zip(self._pieces_on(cuts), other._pieces_on(cuts)):
            segs.append(Segment(
                sa.x_lo, sa.x_hi, sa.left_exp + sb.left_exp, sa.right_exp + sb.right_exp,
                lambda x, f=sa.smooth, g=sb.smooth: np.asarray(f(x), dtype=float) * np.asarray(g(x), dtype=float)))
        return CoefficientFn(segs)

    def power(self, r: float) -> "CoefficientFn":
        """Pointwise power; assumes the smooth parts do not vanish when r < 0."""
        segs = [Segment(s.x_lo, s.x_hi, s.left_exp * r, s.right_exp * r,
                        lambda x, f=s.smooth, r=r: np.power(np.asarray(f(x), dtype=float), r))
                for s in self.segments]
        return CoefficientFn(segs)

    def scaled(self, c: float) -> "CoefficientFn":
        segs = [Segment(s.x_lo, s.x_hi, s.left_exp, s.right_exp,
                        lambda x, f=s.smooth, c=c: c * np.asarray(f(x), dtype=float))
                for s in self.segments]
        return CoefficientFn(segs)

    def absolute(self) -> "CoefficientFn":
        segs = [Segment(s.x_lo, s.x_hi, s.left_exp, s.right_exp,
                        lambda x, f=s.smooth: np.abs(np.asarray(f(x), dtype=float)))
                for s in self.segments]
        return CoefficientFn(segs)

    def plus(self, other: "CoefficientFn") -> "CoefficientFn":
        """Pointwise sum. Exponents of the sum take the min of the two declared
        exponents on each side; the exponent gaps fold into the smooth part
        (continuous because the gaps are nonnegative)."""
        cuts = self._merged_cuts(other)
        segs = []
        for sa, sb in zip(self._pieces_on(cuts), other._pieces_on(cuts)):
            le = min(sa.left_exp, sb.left_exp)
            re = min(sa.right_exp, sb.right_exp)

            def smooth(x, sa=sa, sb=sb, le=le, re=re):
                x = np.asarray(x, dtype=float)
                ta = np.asarray(sa.smooth(x), dtype=float) + np.zeros_like(x)
                tb = np.asarray(sb.smooth(x), dtype=float) + np.zeros_like(x)
                if sa.left_exp != le:
                    ta = ta * np.power(x - sa.x_lo, sa.left_exp - le)
                if sa.right_exp != re:
                    ta = ta * np.power(sa.x_hi - x, sa.right_exp - re)
                if sb.left_exp != le:
                    tb = tb * np.power(x - sb.x_lo, sb.left_exp - le)
                if sb.right_exp != re:
                    tb = tb * np.power(sb.x_hi - x, sb.right_exp - re)
                return ta + tb

            segs.append(Segment(sa.x_lo, sa.x_hi, le, re, smooth))
        return CoefficientFn(segs)

    def reciprocal(self) -> "CoefficientFn":
        return self.power(-1.0)

    def is_identically_zero(self, n_probe: int = 512) -> bool:
        """Sampled test for the zero function (smooth parts vanish everywhere)."""
        for seg in self.segments:
            xs = np.linspace(seg.x_lo, seg.x_hi, n_probe + 2)[1:-1]
            if np.any(np.asarray(seg.smooth(xs), dtype=float) != 0.0):
                return False
        return True
