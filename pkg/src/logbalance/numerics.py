"""
Shared numerical primitives.

Everything that touches coefficients or moment integrals of the balanced
model runs through here: log-domain reals, Laplace-windowed quadrature in
``t = log x``, a safeguarded monotone root finder, a golden-section
extremizer and central finite-difference stencils.

All functions are pure; there is no module-level mutable state apart from
the cached Gauss-Legendre rules.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NumericsError",
    "NonConvergentTail",
    "BracketInvalid",
    "LogReal",
    "lse",
    "log_sum_exp",
    "signed_log_sum_exp",
    "QuadratureSpec",
    "laplace_spec",
    "logspace_rule",
    "integrate_logspace",
    "find_root_monotone",
    "expand_bracket",
    "golden_section",
    "central_diff",
    "derivative",
]

NEG_INF = -math.inf
_LOG_MAX = math.log(sys.float_info.max)


class NumericsError(RuntimeError):
    pass


class NonConvergentTail(NumericsError):
    """Tail widening ran out of segments before the tail became negligible."""


class BracketInvalid(NumericsError):
    """The root bracket does not straddle zero."""


# ---------------------------------------------------------------------------
# log-domain reals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogReal:
    """A real number stored as ``sign * exp(logmag + lo)``.

    ``sign == 0`` is exact zero and ``logmag`` is then ignored.  ``lo`` is a
    tiny correction recorded by :meth:`from_real` so that the round trip back
    to a float is accurate to a few ulps instead of ``|log v|`` ulps; products
    and quotients carry it, sums drop it.
    """

    sign: int
    logmag: float = NEG_INF
    lo: float = 0.0

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign!r}")
        if self.sign != 0 and math.isnan(self.logmag):
            raise ValueError("logmag is NaN")

    @classmethod
    def zero(cls) -> "LogReal":
        return cls(0)

    @classmethod
    def from_log(cls, logmag: float) -> "LogReal":
        """Positive number with the given natural log (``-inf`` gives zero)."""
        if logmag == NEG_INF:
            return cls(0)
        return cls(1, float(logmag))

    @classmethod
    def from_real(cls, value: float) -> "LogReal":
        if value == 0:
            return cls(0)
        mag = abs(value)
        hi = math.log(mag)
        e = math.exp(hi)
        while e == math.inf:  # log of a value near the overflow threshold rounded up
            hi = math.nextafter(hi, NEG_INF)
            e = math.exp(hi)
        lo = math.log(mag / e) if e > 0.0 else 0.0
        return cls(1 if value > 0 else -1, hi, lo)

    def to_real(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.lo == 0.0:
            return self.sign * math.exp(self.logmag)
        out = math.exp(self.logmag) * math.exp(self.lo)
        if out == math.inf and self.logmag + self.lo <= _LOG_MAX + 1e-14:
            out = sys.float_info.max  # a few ulps above the largest double
        return self.sign * out

    __float__ = to_real

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def __neg__(self) -> "LogReal":
        return LogReal(-self.sign, self.logmag, self.lo)

    def __mul__(self, other: "LogReal") -> "LogReal":
        if self.sign == 0 or other.sign == 0:
            return LogReal(0)
        return LogReal(self.sign * other.sign, self.logmag + other.logmag, self.lo + other.lo)

    def __truediv__(self, other: "LogReal") -> "LogReal":
        if other.sign == 0:
            raise ZeroDivisionError("LogReal division by zero")
        if self.sign == 0:
            return LogReal(0)
        return LogReal(self.sign * other.sign, self.logmag - other.logmag, self.lo - other.lo)

    def __add__(self, other: "LogReal") -> "LogReal":
        return signed_log_sum_exp([self, other])

    def __sub__(self, other: "LogReal") -> "LogReal":
        return signed_log_sum_exp([self, -other])

    def pow(self, p: float) -> "LogReal":
        if self.sign < 0:
            raise ValueError("fractional power of a negative LogReal")
        if self.sign == 0:
            return LogReal(0) if p > 0 else LogReal(1, 0.0)
        return LogReal(1, self.logmag * p)


def lse(values, axis=None):
    """``log(sum(exp(values)))`` along ``axis``, shifted by the running max.

    Rows that are entirely ``-inf`` give ``-inf`` rather than NaN.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return NEG_INF if axis is None else np.full(np.delete(v.shape, axis), NEG_INF)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_sum_exp(terms: Iterable[LogReal]) -> LogReal:
    """Sum of non-negative ``LogReal`` terms, evaluated in log space.

    The empty sum is exact zero.
    """
    logs = []
    for term in terms:
        if term.sign < 0:
            raise ValueError("log_sum_exp takes non-negative terms; use signed_log_sum_exp")
        if term.sign > 0:
            logs.append(term.logmag)
    if not logs:
        return LogReal(0)
    return LogReal.from_log(lse(logs))


def signed_log_sum_exp(terms: Iterable[LogReal]) -> LogReal:
    """Sum of ``LogReal`` terms of either sign.

    Positive and negative parts are accumulated separately and only combined
    at the end, so a near-cancellation shows up as a small result instead of
    being hidden inside the shifted exponentials.
    """
    pos, neg = [], []
    for term in terms:
        if term.sign > 0:
            pos.append(term.logmag)
        elif term.sign < 0:
            neg.append(term.logmag)
    lp = lse(pos) if pos else NEG_INF
    ln = lse(neg) if neg else NEG_INF
    if lp == ln:
        return LogReal(0)
    if lp > ln:
        return LogReal(1, lp + math.log1p(-math.exp(ln - lp)))
    return LogReal(-1, ln + math.log1p(-math.exp(lp - ln)))


# ---------------------------------------------------------------------------
# quadrature in t = log x
# ---------------------------------------------------------------------------

_PANEL = 16


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class QuadratureSpec:
    """Window description for :func:`integrate_logspace`.

    ``core_nodes`` Gauss-Legendre nodes (in panels of 16) cover
    ``[center - half_width, center + half_width]``; outside the core, tail
    segments of doubling length are added until one contributes less than
    ``abs_log_tol`` relative to the running total.  ``tail_segments`` caps the
    number of segments per side.  ``lower``/``upper`` clip the domain.
    """

    center: float
    half_width: float
    core_nodes: int = 128
    tail_segments: int = 40
    abs_log_tol: float = 1e-15
    lower: float = NEG_INF
    upper: float = math.inf

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.core_nodes < _PANEL:
            raise ValueError(f"core_nodes must be >= {_PANEL}")
        if self.tail_segments < 1:
            raise ValueError("tail_segments must be positive")
        if not self.lower < self.upper:
            raise ValueError("empty integration domain")


def laplace_spec(center: float, curvature: float, **kwargs) -> QuadratureSpec:
    """Window of twelve local standard deviations around a Laplace peak."""
    curvature = max(float(curvature), 1e-300)
    return QuadratureSpec(center=center, half_width=12.0 / math.sqrt(curvature), **kwargs)


def _panel_rule(lo: float, hi: float, panels: int):
    x, w = _gauss_legendre(_PANEL)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _eval(log_integrand, nodes, weights):
    vals = np.asarray(log_integrand(nodes), dtype=float)
    with np.errstate(divide="ignore"):
        return vals + np.log(weights)


def logspace_rule(log_integrand: Callable[[np.ndarray], np.ndarray], spec: QuadratureSpec):
    """Nodes and log(weight * integrand) values realising ``spec``.

    ``log_integrand`` must accept a numpy array of ``t`` values.  The returned
    pair can be reused to form moments ``sum exp(logv) * g(t)`` without
    re-evaluating the integrand.
    """
    lo = max(spec.center - spec.half_width, spec.lower)
    hi = min(spec.center + spec.half_width, spec.upper)
    if not lo < hi:
        # window entirely outside the domain: fall back to the clipped span
        lo, hi = spec.lower, spec.upper
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("window lies outside an unbounded domain")
    panels = max(1, spec.core_nodes // _PANEL)
    nodes, weights = _panel_rule(lo, hi, panels)
    all_nodes = [nodes]
    all_logv = [_eval(log_integrand, nodes, weights)]
    total = lse(all_logv[0])
    log_tol = math.log(spec.abs_log_tol)

    for direction in (+1, -1):
        edge = hi if direction > 0 else lo
        bound = spec.upper if direction > 0 else spec.lower
        length = spec.half_width
        converged = edge == bound
        for _ in range(spec.tail_segments):
            if converged:
                break
            nxt = edge + direction * length
            nxt = min(nxt, bound) if direction > 0 else max(nxt, bound)
            a, b = (edge, nxt) if direction > 0 else (nxt, edge)
            tn, tw = _panel_rule(a, b, 2)
            logv = _eval(log_integrand, tn, tw)
            all_nodes.append(tn)
            all_logv.append(logv)
            contrib = lse(logv)
            total = float(np.logaddexp(total, contrib))
            edge = nxt
            length *= 2.0
            if edge == bound or contrib == NEG_INF or contrib - total < log_tol:
                converged = True
        if not converged:
            side = "upper" if direction > 0 else "lower"
            raise NonConvergentTail(
                f"{side} tail still significant after {spec.tail_segments} segments "
                f"(center={spec.center:.6g}, half_width={spec.half_width:.3g})"
            )

    nodes = np.concatenate(all_nodes)
    logv = np.concatenate(all_logv)
    order = np.argsort(nodes, kind="stable")
    return nodes[order], logv[order]


def integrate_logspace(log_integrand, spec: QuadratureSpec) -> LogReal:
    """Log of ``int exp(log_integrand(t)) dt`` over the window in ``spec``.

    Intended for Laplace-type integrands: unimodal-dominant near
    ``spec.center`` with integrable tails.

    Raises
    ------
    NonConvergentTail
        If ``spec.tail_segments`` doubling segments do not make a tail
        negligible (misplaced window, or an integrand that is not
        concentrated).
    """
    _, logv = logspace_rule(log_integrand, spec)
    return LogReal.from_log(lse(logv))


# ---------------------------------------------------------------------------
# roots and extrema
# ---------------------------------------------------------------------------


def find_root_monotone(
    g: Callable[[float], float],
    bracket: tuple[float, float],
    tol: float = 1e-12,
    dg: Callable[[float], float] | None = None,
    max_iter: int = 200,
) -> float:
    """Root of a strictly increasing ``g`` inside ``bracket``.

    Newton steps are used when ``dg`` is supplied and the step stays inside
    the current bracket; otherwise the bracket is bisected, so termination is
    guaranteed.  The returned ``r`` satisfies ``|g(r) / g'(r)| <= tol`` (with
    ``dg``) or lies in a bracket of width ``<= tol``.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise BracketInvalid(f"bracket ({lo}, {hi}) is empty")
    glo, ghi = g(lo), g(hi)
    if glo == 0:
        return lo
    if ghi == 0:
        return hi
    if not (glo < 0 < ghi):
        raise BracketInvalid(f"g({lo})={glo:.6g} and g({hi})={ghi:.6g} do not straddle zero")

    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        gx = g(x)
        if gx == 0:
            return x
        if gx < 0:
            lo = x
        else:
            hi = x
        step = None
        if dg is not None:
            slope = dg(x)
            if slope > 0 and math.isfinite(slope):
                step = gx / slope
                if abs(step) <= tol:
                    return x - step
                cand = x - step
                if not lo < cand < hi:
                    step = None
        if step is None:
            if hi - lo <= tol:
                return 0.5 * (lo + hi)
            x = 0.5 * (lo + hi)
        else:
            x = x - step
    raise NumericsError(f"root finder did not converge in {max_iter} iterations")


def expand_bracket(
    g: Callable[[float], float],
    lo: float,
    hi: float,
    floor: float = -math.inf,
    ceiling: float = math.inf,
    max_expand: int = 60,
) -> tuple[float, float]:
    """Widen ``(lo, hi)`` geometrically until an increasing ``g`` changes sign."""
    width = hi - lo
    for _ in range(max_expand):
        glo, ghi = g(lo), g(hi)
        if glo <= 0 <= ghi:
            return lo, hi
        if glo > 0:
            if lo <= floor:
                break
            lo = max(lo - width, floor)
        if ghi < 0:
            if hi >= ceiling:
                break
            hi = min(hi + width, ceiling)
        width *= 2.0
    raise BracketInvalid(f"could not bracket a root (last bracket {lo}, {hi})")


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-6,
    maximize: bool = False,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Golden-section search for the extremum of a unimodal ``f`` on ``[lo, hi]``.

    Returns ``(argext, f(argext))``.  The endpoints are compared at the end so
    a monotone ``f`` reports the boundary extremum.
    """
    sgn = -1.0 if maximize else 1.0

    def h(x):
        return sgn * f(x)

    a, b = float(lo), float(hi)
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = h(x1), h(x2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = h(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = h(x2)
    x = 0.5 * (a + b)
    best_x, best = x, h(x)
    for edge in (float(lo), float(hi)):
        fe = h(edge)
        if fe < best:
            best_x, best = edge, fe
    return best_x, sgn * best


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

# rows: derivative order; columns: offsets -2..2 or -3..3
_STENCIL5 = {
    1: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]), 12.0),
    2: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]), 12.0),
}
_STENCIL7 = {
    1: (np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]), 60.0),
    2: (np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]), 180.0),
    3: (np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]), 8.0),
    4: (np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]), 6.0),
}


def central_diff(samples: Sequence[float], k: int, h: float) -> float:
    """k-th derivative at the centre of a symmetric stencil.

    ``samples`` holds ``g(x0 + j*h)`` for ``j = -2..2`` (5 points, ``k <= 2``)
    or ``j = -3..3`` (7 points, ``k <= 4``).  The 5-point first/second
    derivatives and the 7-point third/fourth derivatives are O(h^4); the
    7-point first/second derivatives are O(h^6).
    """
    s = np.asarray(samples, dtype=float)
    table = {5: _STENCIL5, 7: _STENCIL7}.get(s.size)
    if table is None:
        raise ValueError("stencil needs 5 or 7 samples")
    if k not in table:
        raise ValueError(f"order {k} not available on a {s.size}-point stencil")
    coef, denom = table[k]
    return float(coef @ s) / (denom * h**k)


def derivative(g: Callable[[float], float], x0: float, k: int, h: float) -> float:
    """Convenience wrapper: sample ``g`` around ``x0`` and apply :func:`central_diff`."""
    half = 2 if k <= 2 else 3
    samples = [g(x0 + j * h) for j in range(-half, half + 1)]
    return central_diff(samples, k, h)
