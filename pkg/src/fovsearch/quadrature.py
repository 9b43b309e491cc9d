"""Numerical integration backends for the lookahead probability integral.

The integrand is a standard normal density times a monotone product of
normal CDFs.  Some of those CDF factors can be steep (their argument scale
is a visibility ratio), which defeats any fixed global node grid: the
default scheme therefore integrates a windowed composite Gauss-Legendre
rule whose window and interior breakpoints come from the factor geometry,
with the saturated tails added in closed form.  Plain Gauss-Hermite and an
adaptive Simpson rule are kept as independent cross-check schemes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

WINDOWED_LEGENDRE = "windowed-legendre"
GAUSS_HERMITE = "gauss-hermite"
ADAPTIVE_SIMPSON = "adaptive-simpson"

# Hermite weights below this never influence the first 15 digits of a
# bounded integrand; dropping them shrinks the node loop
WEIGHT_TOL = 1e-18


class QuadratureError(RuntimeError):
    """Raised when node doubling moves the result more than the tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    scheme: str = WINDOWED_LEGENDRE
    nodes: int = 61
    tail_halfwidth: float = 8.0

    def __post_init__(self):
        if self.scheme not in (WINDOWED_LEGENDRE, GAUSS_HERMITE,
                               ADAPTIVE_SIMPSON):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.nodes < 15:
            raise ValueError("quadrature needs at least 15 nodes")
        if self.tail_halfwidth < 6:
            raise ValueError("tail_halfwidth must cover at least 6 sd")

    def doubled(self) -> "QuadratureSpec":
        """Resolution-doubled spec (2m - 1 nodes interleaves the old grid)."""
        return replace(self, nodes=2 * self.nodes - 1)


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=32)
def hermite_nodes(m: int, wtol: float = WEIGHT_TOL):
    """Gauss-Hermite nodes and pi-normalized weights, negligible tails cut.

    Returns (x, wbar) with sum(wbar) = 1 to ~1e-16, so that
    integral of phi(z) f(z) dz ~= sum wbar_j f(sqrt(2) x_j).
    """
    x, w = np.polynomial.hermite.hermgauss(m)
    wbar = w / math.sqrt(math.pi)
    keep = wbar > wtol
    x = np.ascontiguousarray(x[keep])
    wbar = np.ascontiguousarray(wbar[keep])
    x.flags.writeable = False
    wbar.flags.writeable = False
    return x, wbar


def gauss_hermite_expect(f, m: int) -> float:
    """E[f(Z)] for Z standard normal, by m-node Gauss-Hermite."""
    x, wbar = hermite_nodes(m)
    return float(np.dot(wbar, f(math.sqrt(2.0) * x)))


@lru_cache(maxsize=32)
def legendre_nodes(m: int):
    """Gauss-Legendre nodes and weights on [-1, 1], read-only arrays."""
    xi, w = np.polynomial.legendre.leggauss(m)
    xi = np.ascontiguousarray(xi)
    w = np.ascontiguousarray(w)
    xi.flags.writeable = False
    w.flags.writeable = False
    return xi, w


def legendre_window_expect(f, m: int, halfwidth: float) -> float:
    """E[f(Z)] truncated to |Z| <= halfwidth, by one m-node Legendre panel.

    This is the generic-integrand face of the windowed scheme; the
    production lookahead integral additionally splits the window at the
    CDF factors' transition points, which a black-box f cannot offer.
    """
    xi, w = legendre_nodes(m)
    z = halfwidth * xi
    dens = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return float(halfwidth * np.dot(w, dens * f(z)))


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 30) -> float:
    """Classic recursive adaptive Simpson rule for a scalar integrand."""
    def simpson(lo, flo, hi, fhi, mid, fmid):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, flo, hi, fhi, mid, fmid, whole, eps, depth):
        lmid = 0.5 * (lo + mid)
        rmid = 0.5 * (mid + hi)
        flm = f(lmid)
        frm = f(rmid)
        left = simpson(lo, flo, mid, fmid, lmid, flm)
        right = simpson(mid, fmid, hi, fhi, rmid, frm)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, flo, mid, fmid, lmid, flm, left, eps / 2.0, depth - 1)
                + recurse(mid, fmid, hi, fhi, rmid, frm, right, eps / 2.0, depth - 1))

    mid = 0.5 * (a + b)
    fa, fb, fm = f(a), f(b), f(mid)
    whole = simpson(a, fa, b, fb, mid, fm)
    return recurse(a, fa, b, fb, mid, fm, whole, tol, max_depth)


def normal_expect(f, spec: QuadratureSpec) -> float:
    """E[f(Z)], Z ~ N(0,1), under any scheme of the spec."""
    if spec.scheme == GAUSS_HERMITE:
        return gauss_hermite_expect(f, spec.nodes)
    if spec.scheme == WINDOWED_LEGENDRE:
        return legendre_window_expect(f, spec.nodes, spec.tail_halfwidth)
    h = spec.tail_halfwidth
    phi = 1.0 / math.sqrt(2.0 * math.pi)
    return adaptive_simpson(
        lambda z: phi * math.exp(-0.5 * z * z) * f(z), -h, h)
