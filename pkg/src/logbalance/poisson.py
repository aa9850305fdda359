"""
Sum-versus-integral comparison for the normalised coefficient profile

    zeta_a(i) = c(i) / c(a) * x_a^(i - a),    i > -1,

a near-Gaussian bump in ``i`` centred close to ``n_{x_a}``.

The profile is smooth and decays like a Gaussian, so the gap between
``sum_i zeta_a(i)`` and ``int zeta_a`` is set by boundary terms of size
``zeta_a(0) ~ e^{-a}`` and is far below double precision for moderate
``a``.  :func:`sum_vs_integral` therefore evaluates both sides with mpmath at
a configurable working precision, on a profile that is an exact analytic
function of ``i``: the moments are taken against the fixed trapezoid measure
of :func:`logbalance.solver.moment_grid`, so nothing in the rule moves with
``i``.  Both sides stand for infinite ranges, so the summation cut-off is
pushed past the point where the tail drops below the working precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .asymptotics import log_moment, solve_n, solve_u
from .numerics import LogReal, lse
from .solver import BalancedModel, moment_grid

DEFAULT_DPS = 60


def i_max_for(a: float) -> int:
    """Smallest summation cut-off, ``a + 15 sqrt(a)``."""
    return int(math.ceil(a + 15.0 * math.sqrt(a)))


def working_dps(prof: "_GridProfile", dps: int) -> int:
    """Raise ``dps`` so the boundary value ``zeta_a(0)`` is resolved with 25 digits to spare."""
    z0 = float(prof.log_zeta(0.0)[0]) / math.log(10.0)
    return max(int(dps), int(math.ceil(-z0)) + 25)


def tail_cutoff(prof: "_GridProfile", dps: int) -> int:
    """First integer past ``a + 15 sqrt(a)`` where ``zeta_a < 10^-(dps+5)``.

    The right tail is heavier than Gaussian, so at high precision this sits
    near ``a + 22 sqrt(a)``.
    """
    a = prof.a
    floor = -(dps + 5) * math.log(10.0)
    i = np.arange(i_max_for(a), int(math.ceil(a + 60.0 * math.sqrt(a) + 100.0)))
    below = np.nonzero(prof.log_zeta(i) < floor)[0]
    if below.size == 0:
        raise ValueError(f"zeta_{a:g} does not fall below 1e-{dps + 5} by i = {i[-1]}")
    return int(i[below[0]])


def zeta(model: BalancedModel, a: float, i: float, t_a: float | None = None) -> LogReal:
    """``zeta_a(i)`` with ``lambda`` from the windowed continuous moment integral.

    Returns zero for ``i <= -1``.
    """
    if i <= -1:
        return LogReal.zero()
    if i == a:
        return LogReal.from_log(0.0)
    if t_a is None:
        t_a = solve_u(model, a)
    return LogReal.from_log(log_moment(model, a) - log_moment(model, i) + (i - a) * t_a)


class _GridProfile:
    """``log zeta_a(i)`` against the fixed trapezoid measure of the moment grid."""

    def __init__(self, model: BalancedModel, a: float, t_a: float | None = None):
        if t_a is None:
            t_a = solve_u(model, a)
        t, logw = moment_grid(model.x_max)
        self.a = a
        self.t_a = t_a
        self.tau = t - t_a
        # log of x^i / f dx / x_a^i without the i*tau factor
        self.base = logw + t - model.log_f_t(t)
        self.log_s_a = lse(self.base + a * self.tau)
        self._mp = None

    def log_zeta(self, i) -> np.ndarray:
        i = np.atleast_1d(np.asarray(i, dtype=float))
        out = np.empty(i.size)
        for k, ik in enumerate(i):
            out[k] = self.log_s_a - lse(self.base + ik * self.tau) if ik > -1 else -math.inf
        return out

    def mp_zeta(self, ctx, i):
        """``zeta_a(i)`` in the precision of ``ctx``; negligible nodes are skipped."""
        if self._mp is None or self._mp[0] is not ctx:
            base = [ctx.mpf(float(b)) for b in self.base]
            tau = [ctx.mpf(float(s)) for s in self.tau]
            self._mp = (ctx, base, tau, None)
            self._mp = (ctx, base, tau, self._mp_sum(ctx, ctx.mpf(self.a)))
        return self._mp[3] / self._mp_sum(ctx, i)

    def _mp_sum(self, ctx, i):
        _, base, tau, _ = self._mp
        expo = self.base + float(i) * self.tau
        cut = expo.max() - (ctx.dps * math.log(10.0) + 20.0)
        keep = np.nonzero(expo > cut)[0]
        return ctx.fsum(ctx.exp(base[k] + i * tau[k]) for k in keep)


@dataclass(frozen=True)
class ZetaProfile:
    a: float
    x_a: float
    values: dict
    i_max: int

    def log_values(self) -> np.ndarray:
        return np.array([self.values[i].logmag for i in range(self.i_max + 1)])

    def is_unimodal(self) -> bool:
        """Forward differences of ``zeta`` change sign exactly once."""
        lv = self.log_values()
        signs = np.sign(np.diff(lv))
        signs = signs[signs != 0]
        return bool(signs.size) and int(np.count_nonzero(np.diff(signs))) == 1 and signs[0] > 0


def zeta_profile(model: BalancedModel, a: float, i_max: int | None = None) -> ZetaProfile:
    """``zeta_a`` at the integers ``0..i_max`` (grid measure, double precision)."""
    if i_max is None:
        i_max = i_max_for(a)
    prof = _GridProfile(model, a)
    lv = prof.log_zeta(np.arange(i_max + 1))
    values = {i: LogReal.from_log(float(v)) for i, v in enumerate(lv)}
    return ZetaProfile(float(a), math.exp(prof.t_a), values, i_max)


@dataclass(frozen=True)
class SumIntegral:
    a: float
    j: int
    sum: float
    integral: float
    err: float        # relative for even j, absolute for odd j
    dps: int


def sum_vs_integral(model: BalancedModel, a: float, j: int = 0, dps: int = DEFAULT_DPS,
                    i_max: int | None = None, center: float | None = None) -> SumIntegral:
    """Compare ``sum_{i=0}^{i_max} (i-n)^j zeta_a(i)`` with ``int_0^{i_max}`` of the same.

    ``n = n_{x_a}`` unless ``center`` is given.  By default ``i_max`` is
    :func:`tail_cutoff`, so neither side feels the cut-off.  ``dps`` is a
    floor; :func:`working_dps` raises it until the gap, which is of the size
    of ``zeta_a(0)``, is resolvable.  ``err`` is relative for ``j`` in
    {0, 2} and absolute for ``j`` in {1, 3}.
    """
    return sum_vs_integral_all(model, a, (j,), dps=dps, i_max=i_max, center=center)[0]


def sum_vs_integral_all(model: BalancedModel, a: float, js=(0, 1, 2, 3), dps: int = DEFAULT_DPS,
                        i_max: int | None = None, center: float | None = None):
    """:func:`sum_vs_integral` for several ``j`` sharing one profile."""
    for j in js:
        if j not in (0, 1, 2, 3):
            raise ValueError("moment order j must be 0, 1, 2 or 3")
    t_a = solve_u(model, a)
    if center is None:
        center = solve_n(model, math.exp(t_a))
    prof = _GridProfile(model, a, t_a)
    dps = working_dps(prof, dps)
    if i_max is None:
        i_max = tail_cutoff(prof, dps)
    ctx = mpmath.MPContext()
    ctx.dps = dps
    n = ctx.mpf(center)
    cache = {}

    def z(i):
        key = ctx.mpf(i)
        if key not in cache:
            cache[key] = prof.mp_zeta(ctx, key)
        return cache[key]

    terms = [z(i) for i in range(i_max + 1)]
    width = math.sqrt(max(a, 1.0))
    knots = sorted({0.0, float(a), float(i_max)}
                   | {min(max(0.0, a + k * width), float(i_max)) for k in (-12, -6, 6, 12)})
    out = []
    for j in js:
        s = ctx.fsum((i - n) ** j * terms[i] for i in range(i_max + 1))
        integral = ctx.quad(lambda i: (i - n) ** j * z(i), knots)
        diff = s - integral
        err = abs(diff / integral) if j % 2 == 0 else abs(diff)
        out.append(SumIntegral(float(a), j, float(s), float(integral), float(err), dps))
    return out


def decay_slope(a_values, errs) -> float:
    """Least-squares slope of ``log err`` against ``log a`` (NaN if any err is 0)."""
    e = np.asarray(errs, dtype=float)
    if np.any(e <= 0) or e.size < 2:
        return math.nan
    la = np.log(np.asarray(a_values, dtype=float))
    return float(np.polyfit(la, np.log(e), 1)[0])


def is_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))
