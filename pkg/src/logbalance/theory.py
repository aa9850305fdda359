"""
Comparison functionals for admissible potentials.

``d_m(c)`` measures the dimensionless second moment of ``e^{-l_c}`` where
``l_c`` is the half-Gaussian potential ``y^2/2`` whose curvature switches to
``m`` beyond the knot ``c``.  Its extremes over ``c`` give the bracketing
functions ``p(m)`` and ``q(m)``; ``p~``, ``q~``, ``F`` and ``P`` are built on
top of them.  At ``m = 1`` everything reduces to the half-Gaussian value
``d = 2/pi``, i.e. ``p = q = 1/(2 pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .numerics import golden_section

TWO_OVER_PI = 2.0 / math.pi
INV_2PI = 1.0 / (2.0 * math.pi)
C_BRACKET = (0.0, 12.0)

# windows quoted for 1 <= m < 1.01; asserted with +-0.001 slack
PAPER_WINDOWS = {
    "p_slope": (0.031, 0.033),
    "q_slope": (-0.033, -0.031),
    "F_slope": (0.0, 0.84),
    "P_slope": (0.0, 0.0037),
    "P": (1.0, 1.00002),
    "p_tilde_slope": (0.031, 0.034),
    "q_tilde_slope": (-0.033, -0.03),
    "ratio_tilde_slope": (0.0, 0.89),
}


def l_potential(y: float, m: float, c: float) -> float:
    """Piecewise potential, ``C^1`` at the knot ``y = c``."""
    if y <= c:
        return 0.5 * y * y
    return 0.5 * m * y * y + (1.0 - m) * c * y + 0.5 * m * c * c - 0.5 * c * c


def d_ratio(m: float, c: float, epsrel: float = 1e-13) -> float:
    """``int y^2 e^{-l_c} / (int e^{-l_c})^3`` over ``y >= 0`` by quadrature."""
    if m <= 0 or c < 0:
        raise ValueError("d_ratio needs m > 0 and c >= 0")
    y_max = c + 40.0 / math.sqrt(min(1.0, m))

    def w(y):
        return math.exp(-l_potential(y, m, c))

    def y2w(y):
        return y * y * w(y)

    pieces = [(0.0, c), (c, y_max)] if c > 0 else [(0.0, y_max)]
    mass = second = 0.0
    for lo, hi in pieces:
        mass += integrate.quad(w, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)[0]
        second += integrate.quad(y2w, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)[0]
    return second / mass**3


def extremize_d(m: float, mode: str = "min", tol: float = 1e-6):
    """Extremum of ``d_m(c)`` over ``c`` in ``[0, 12]`` by golden-section search.

    ``m < 1`` has an interior maximum, ``m > 1`` an interior minimum.  At
    ``m = 1`` the function is constant and ``c_star`` is returned as NaN.
    """
    if mode not in ("min", "max"):
        raise ValueError("mode must be 'min' or 'max'")
    if m == 1.0:
        return math.nan, TWO_OVER_PI
    c, d = golden_section(lambda c: d_ratio(m, c), *C_BRACKET, tol=tol, maximize=(mode == "max"))
    return c, d


def big_p(m: float) -> float:
    a = 1.0 / math.sqrt(m)
    return 4.0 * (a**3 + 1.0) / (1.0 + a) ** 3


def p_of_m(m: float):
    """``p(m) = max_c d_{1/m}(c) / 4``; also returns the maximiser."""
    c, d = extremize_d(1.0 / m, "max")
    return 0.25 * d, c


def q_of_m(m: float):
    """``q(m) = min_c d_m(c) / 4``; also returns the minimiser."""
    c, d = extremize_d(m, "min")
    return 0.25 * d, c


@dataclass(frozen=True)
class TheoryCurve:
    m_grid: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_tilde: np.ndarray
    q_tilde: np.ndarray
    big_f: np.ndarray
    big_p: np.ndarray
    argmax_c: np.ndarray
    argmin_c: np.ndarray
    fd_slopes: dict

    COLUMNS = ("m", "p", "q", "F", "P", "p_tilde", "q_tilde", "argmax_c", "argmin_c",
               "dp_dm", "dq_dm", "dF_dm", "dP_dm", "dp_tilde_dm", "dq_tilde_dm", "dratio_tilde_dm")

    def rows(self):
        s = self.fd_slopes
        for k, m in enumerate(self.m_grid):
            yield (m, self.p[k], self.q[k], self.big_f[k], self.big_p[k], self.p_tilde[k],
                   self.q_tilde[k], self.argmax_c[k], self.argmin_c[k], s["p"][k], s["q"][k],
                   s["F"][k], s["P"][k], s["p_tilde"][k], s["q_tilde"][k], s["ratio_tilde"][k])


def curve(m_grid) -> TheoryCurve:
    """Evaluate ``p, q, F, P, p~, q~`` on a sorted grid in ``[1, 1.01]``.

    Slopes are ``numpy.gradient`` central differences (one-sided at the ends).
    """
    m = np.asarray(sorted(float(v) for v in m_grid))
    if m.size == 0:
        raise ValueError("empty m grid")
    if m[0] < 1.0 or m[-1] > 1.01 + 1e-12:
        raise ValueError("m grid must lie in [1, 1.01]")
    p = np.empty(m.size)
    q = np.empty(m.size)
    cmax = np.empty(m.size)
    cmin = np.empty(m.size)
    for k, mk in enumerate(m):
        p[k], cmax[k] = p_of_m(mk)
        q[k], cmin[k] = q_of_m(mk)
    alpha = 1.0 / np.sqrt(m)
    P = 4.0 * (alpha**3 + 1.0) / (1.0 + alpha) ** 3
    p_t = p * P
    q_t = q - (4.0 / math.pi**2) * (1.0 - alpha) ** 2 / (1.0 + alpha) ** 2
    F = (p / q) ** 2
    ratio_t = (p_t / q_t) ** 2

    def slope(v):
        if m.size < 2:
            return np.full(m.size, math.nan)
        return np.gradient(v, m)

    slopes = {"p": slope(p), "q": slope(q), "F": slope(F), "P": slope(P),
              "p_tilde": slope(p_t), "q_tilde": slope(q_t), "ratio_tilde": slope(ratio_t)}
    return TheoryCurve(m, p, q, p_t, q_t, F, P, cmax, cmin, slopes)


# ---------------------------------------------------------------------------
# functionals of a general admissible g
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibleFunctionals:
    A: float       # int e^{-g}
    t_bar: float   # mean of t under e^{-g}
    B: float       # int (t - t_bar)^2 e^{-g}
    d_tilde: float  # B / A^3


def admissible_functionals(g: Callable[[float], float], lo: float = -math.inf,
                           hi: float = math.inf) -> AdmissibleFunctionals:
    """``A``, ``t_bar``, ``B`` and ``d~ = B / A^3`` of an admissible potential ``g``."""
    def w(t):
        return math.exp(-g(t))

    kw = dict(epsabs=0.0, epsrel=1e-12, limit=200)
    A = integrate.quad(w, lo, hi, **kw)[0]
    t_bar = integrate.quad(lambda t: t * w(t), lo, hi, **kw)[0] / A
    B = integrate.quad(lambda t: (t - t_bar) ** 2 * w(t), lo, hi, **kw)[0]
    return AdmissibleFunctionals(A, t_bar, B, B / A**3)
