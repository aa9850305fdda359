"""
Per-anchor asymptotic diagnostics of a solved balanced model.

Two families of moments drive everything:

* the *series* weights ``tau_x(i) = c_i x^i / f(x)``, whose cumulants are the
  t-derivatives of ``log f`` (``u = d/dt log f`` is the mean), and
* the *continuous* density ``x^a / f(x) dx``, whose cumulants in ``log x``
  are the a-derivatives of ``lambda(a) = log int x^a / f dx``.

``x_a`` solves ``u(x_a) = a`` and ``n_x`` solves ``lambda'(n_x) = log x``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .numerics import (
    NumericsError,
    expand_bracket,
    find_root_monotone,
    integrate_logspace,
    laplace_spec,
    logspace_rule,
    lse,
)
from .solver import BalancedModel, series_degree

SQRT_2PI = math.sqrt(2.0 * math.pi)


class TruncationDominates(NumericsError):
    """Series weights reach past the trusted degree."""


class GridTooNarrow(ValueError):
    pass


# ---------------------------------------------------------------------------
# series side: derivatives of log f in t
# ---------------------------------------------------------------------------


def _series_weights(model: BalancedModel, t: float, check: bool = True) -> np.ndarray:
    logw = model.series_log_weights(t)
    top = series_degree(model)
    if check and top < model.n_trunc:
        tail = lse(logw[top + 1:])
        if tail > math.log(1e-10):
            raise TruncationDominates(
                f"{math.exp(tail):.2e} of the series weight at x={math.exp(t):.4g} "
                f"sits above the reliable degree {top}"
            )
    return np.exp(logw)


def u_moments(model: BalancedModel, t: float, max_order: int = 4, check: bool = True):
    """Cumulants of the series weights at ``x = e^t``.

    Returns ``(u, u2, u3, u4)`` = the first four t-derivatives of ``log f``:
    mean, variance, third central moment and fourth cumulant.  Only the first
    ``max_order`` entries are filled; the rest are NaN.
    """
    w = _series_weights(model, t, check)
    i = model.degrees
    u = float(w @ i)
    d = i - u
    out = [u, math.nan, math.nan, math.nan]
    if max_order >= 2:
        out[1] = float(w @ d**2)
    if max_order >= 3:
        out[2] = float(w @ d**3)
    if max_order >= 4:
        out[3] = float(w @ d**4) - 3.0 * out[1] ** 2
    return tuple(out)


def _u_and_var(model: BalancedModel, t: float):
    w = np.exp(model.series_log_weights(t))
    i = model.degrees
    u = float(w @ i)
    return u, float(w @ (i - u) ** 2)


def solve_u(model: BalancedModel, a: float, tol: float = 1e-14) -> float:
    """``t = log x`` with ``u(x) = a`` (u is increasing in t: its slope is a variance)."""
    if a <= 0:
        raise ValueError("u(x) = a needs a > 0")

    def g(t):
        return _u_and_var(model, t)[0] - a

    def dg(t):
        return _u_and_var(model, t)[1]

    t0 = math.log(a)
    lo, hi = expand_bracket(g, t0 - 1.0, t0 + 1.0, floor=-700.0, ceiling=math.log(model.x_max) + 5)
    return find_root_monotone(g, (lo, hi), tol=tol, dg=dg)


# ---------------------------------------------------------------------------
# continuous side: lambda(a) and its derivatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LambdaMoments:
    a: float
    lam: float   # lambda(a) = log int x^a / f dx
    d1: float    # lambda'(a): mean of log x
    d2: float    # variance of log x
    d3: float    # third central moment
    d4: float    # fourth cumulant
    nodes: np.ndarray = field(repr=False, default=None)
    probs: np.ndarray = field(repr=False, default=None)


def _lambda_rule(model: BalancedModel, a: float):
    if a <= -1:
        raise ValueError("lambda(a) needs a > -1")
    t_star = solve_u(model, a + 1.0)
    curv = _u_and_var(model, t_star)[1]

    def log_integrand(t):
        return (a + 1.0) * t - model.log_f_t(t)

    spec = laplace_spec(t_star, curv, upper=math.log(model.x_max))
    return log_integrand, spec


def log_moment(model: BalancedModel, a: float) -> float:
    """``lambda(a) = log int_0^{x_max} x^a / f(x) dx`` by windowed quadrature."""
    fn, spec = _lambda_rule(model, a)
    return integrate_logspace(fn, spec).logmag


def lambda_moments(model: BalancedModel, a: float, max_order: int = 4) -> LambdaMoments:
    """``lambda(a)`` and its first four derivatives as cumulants of ``log x``.

    The density ``x^a / f(x) dx = e^{(a+1)t} / f(e^t) dt`` is integrated on a
    Laplace window centred at ``t_{a+1}``; the mean, variance, third central
    moment and fourth cumulant of ``t`` are the a-derivatives 1..4.
    """
    fn, spec = _lambda_rule(model, a)
    t, logv = logspace_rule(fn, spec)
    total = lse(logv)
    p = np.exp(logv - total)
    mean = float(p @ t)
    d = t - mean
    m2 = float(p @ d**2)
    m3 = float(p @ d**3) if max_order >= 3 else math.nan
    m4 = float(p @ d**4) - 3.0 * m2**2 if max_order >= 4 else math.nan
    return LambdaMoments(a, total, mean, m2, m3, m4, t, p)


def solve_n(model: BalancedModel, x: float, tol: float = 1e-12) -> float:
    """``n_x``: the order with ``lambda'(n_x) = log x``."""
    target = math.log(x)
    memo: dict[float, LambdaMoments] = {}

    def lm(n):
        if n not in memo:
            memo[n] = lambda_moments(model, n, max_order=2)
        return memo[n]

    def g(n):
        return lm(n).d1 - target

    def dg(n):
        return lm(n).d2

    guess = x - 0.5
    span = 2.0 + 2.0 * math.sqrt(max(x, 1.0))
    lo, hi = expand_bracket(g, max(guess - span, -0.999), guess + span, floor=-0.999)
    return find_root_monotone(g, (lo, hi), tol=tol, dg=dg)


# ---------------------------------------------------------------------------
# anchor rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticRow:
    a: float
    x_a: float
    t_a: float
    lambda_a: float
    lambda_d1: float     # tilde t_a = lambda'(a)
    lambda_d2: float
    lambda_d3: float
    lambda_d4: float
    n_xa: float          # tilde a
    delta_cap: float     # Delta_a = c(tilde a)/c(a) x_a^(tilde a - a)
    nu_classic: float    # h_a(x_a) / sqrt(x_a)
    nu_refined: float    # h_a(x_a) / sqrt(x_a + 1/6)
    u_d2: float
    u_d3: float
    u_d4: float
    delta_small: float   # t_{a+1} - tilde t_a
    sigma_small: float   # a - n_{x_a}
    x_a1: float          # x_{a+1}
    trusted: bool = True

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def as_dict(self):
        return asdict(self)


def anchor(model: BalancedModel, a: float) -> DiagnosticRow:
    """All per-a quantities for one anchor value ``a``."""
    trusted = a <= 0.5 * model.x_max
    t_a = solve_u(model, a)
    x_a = math.exp(t_a)
    t_a1 = solve_u(model, a + 1.0)
    lm = lambda_moments(model, a)
    u, u2, u3, u4 = u_moments(model, t_a, check=trusted)
    n_xa = solve_n(model, x_a)
    lam_n = log_moment(model, n_xa)
    log_f = float(model.log_f_t(np.array([t_a]))[0])
    log_h = log_f + lm.lam - a * t_a
    return DiagnosticRow(
        a=float(a),
        x_a=x_a,
        t_a=t_a,
        lambda_a=lm.lam,
        lambda_d1=lm.d1,
        lambda_d2=lm.d2,
        lambda_d3=lm.d3,
        lambda_d4=lm.d4,
        n_xa=n_xa,
        delta_cap=math.exp(lm.lam - lam_n + (n_xa - a) * t_a),
        nu_classic=math.exp(log_h - 0.5 * t_a),
        nu_refined=math.exp(log_h) / math.sqrt(x_a + 1.0 / 6.0),
        u_d2=u2,
        u_d3=u3,
        u_d4=u4,
        delta_small=t_a1 - lm.d1,
        sigma_small=a - n_xa,
        x_a1=math.exp(t_a1),
        trusted=trusted,
    )


# ---------------------------------------------------------------------------
# recentred moment families and their shift identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftMoments:
    a: float
    I: tuple   # int (log x - t_{a+1})^k dx/h_a,   k = 0..3
    J: tuple   # int (log x - tilde t_a)^k dx/h_a, k = 0..3
    H: tuple   # sum (i - a)^k tau(i)
    K: tuple   # sum (i - n_{x_a})^k tau(i)
    delta: float   # t_{a+1} - tilde t_a
    sigma: float   # a - n_{x_a}


def shift_moments(model: BalancedModel, a: float, row: DiagnosticRow | None = None) -> ShiftMoments:
    """I/J moments (continuous, in log x) and H/K moments (series, in i)."""
    if row is None:
        row = anchor(model, a)
    lm = lambda_moments(model, a)
    t_a1 = math.log(row.x_a1)
    I = tuple(float(lm.probs @ (lm.nodes - t_a1) ** k) for k in range(4))
    J = tuple(float(lm.probs @ (lm.nodes - lm.d1) ** k) for k in range(4))
    w = _series_weights(model, row.t_a, check=False)
    i = model.degrees
    H = tuple(float(w @ (i - a) ** k) for k in range(4))
    K = tuple(float(w @ (i - row.n_xa) ** k) for k in range(4))
    return ShiftMoments(a, I, J, H, K, t_a1 - lm.d1, a - row.n_xa)


def shift_identities(m: ShiftMoments):
    """Residuals of the third-moment recentring identities.

    ``J3 = I3 + 3 delta I2 - 2 delta^3`` with ``delta = t_{a+1} - tilde t_a``
    and ``H3 = K3 + 3 s K2 - 2 s^3`` with ``s = n_{x_a} - a``.  Both are exact
    for a mean-centred family, so the residuals only measure how well the
    anchors (the roots ``x_a`` and the quadrature mean) are resolved.
    """
    d = m.delta
    s = -m.sigma
    r_j = abs(m.J[3] - (m.I[3] + 3.0 * d * m.I[2] - 2.0 * d**3))
    r_h = abs(m.H[3] - (m.K[3] + 3.0 * s * m.K[2] - 2.0 * s**3))
    return r_j, r_h


# ---------------------------------------------------------------------------
# gap ratio
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    b: float
    m1_cont: float
    m2_cont: float
    m1_disc: float
    m2_disc: float
    m_of_b: float
    x_window: tuple
    a_window: tuple


def _geometric(lo: float, hi: float, per_decade: int = 41) -> np.ndarray:
    n = max(2, int(math.ceil(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


def gap_report(model: BalancedModel, b: float, a_hi: float | None = None) -> GapReport:
    """Tail inf/sup of ``u2(x)/x`` and ``(x_a + 1/2) lambda''(a)`` and the ratio ``m(b)``.

    The tails start at ``x_b - sqrt(b) log b`` and ``b - sqrt(b) log b`` and
    are cut at ``a_hi`` (default ``0.5 x_max``), sampled geometrically.
    ``m(b) = (1 + 3 log b / sqrt b) * max(M2', M2'') / min(M1', M1'')``.
    """
    if b < 10:
        raise ValueError("gap_report needs b >= 10")
    if a_hi is None:
        a_hi = 0.5 * model.x_max
    if a_hi <= b:
        raise ValueError("a_hi must exceed b")
    shift = math.sqrt(b) * math.log(b)
    x_b = math.exp(solve_u(model, b))
    x_hi = math.exp(solve_u(model, a_hi))
    x_lo = max(x_b - shift, 1.0)
    xs = _geometric(x_lo, x_hi)
    cont = np.array([u_moments(model, math.log(x), max_order=2)[1] / x for x in xs])
    a_lo = max(b - shift, 1.0)
    as_ = _geometric(a_lo, a_hi)
    disc = []
    for a in as_:
        xa = math.exp(solve_u(model, a))
        disc.append((xa + 0.5) * lambda_moments(model, a, max_order=2).d2)
    disc = np.array(disc)
    m1 = min(cont.min(), disc.min())
    m2 = max(cont.max(), disc.max())
    m_of_b = (1.0 + 3.0 * math.log(b) / math.sqrt(b)) * m2 / m1
    return GapReport(float(b), float(cont.min()), float(cont.max()), float(disc.min()),
                     float(disc.max()), float(m_of_b), (x_lo, x_hi), (a_lo, a_hi))


# ---------------------------------------------------------------------------
# omega and C_beta
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OmegaEstimate:
    omega_hat: float
    error_bar: float
    c_beta_hat: float
    x: tuple
    u_minus_x: tuple
    log_c: tuple


def omega_estimate(model: BalancedModel, x_grid) -> OmegaEstimate:
    """``omega ~ u(x) - x`` at the largest grid point.

    The error bar is the spread of ``u - x`` over the upper half of the grid;
    ``C_beta ~ f(x) / (x^omega e^x)`` at the largest point.
    """
    xs = np.sort(np.asarray(x_grid, dtype=float))
    if xs.size < 4 or xs[-1] < 4.0 * xs[0]:
        raise GridTooNarrow("omega_estimate needs >= 4 points spanning a factor >= 4")
    ts = np.log(xs)
    diff = np.array([u_moments(model, t, max_order=1)[0] for t in ts]) - xs
    omega = float(diff[-1])
    top = diff[xs.size // 2:]
    err = float(top.max() - top.min())
    logf = model.log_f_t(ts)
    log_c = logf - xs - omega * ts
    return OmegaEstimate(omega, err, float(math.exp(log_c[-1])), tuple(xs), tuple(diff), tuple(log_c))


# ---------------------------------------------------------------------------
# comparison of two betas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KProfile:
    i: np.ndarray
    log_k: np.ndarray
    min_k: float
    argmin: int
    eventually_increasing: bool

    @property
    def k(self) -> np.ndarray:
        return np.exp(self.log_k)


def compare_models(m1: BalancedModel, m2: BalancedModel, i_max: int | None = None) -> KProfile:
    """``k(i) = c(i, beta2) / c(i, beta1)`` on the common trusted integer range.

    "Eventually increasing" means the forward differences of ``log k`` are
    positive over the upper half of the range.
    """
    top = min(m1.trusted_degree, m2.trusted_degree)
    if i_max is not None:
        top = min(top, int(i_max))
    i = np.arange(1, top + 1)
    log_k = m1.lam[i] - m2.lam[i]
    diffs = np.diff(log_k)
    j = int(np.argmin(log_k))
    inc = bool(np.all(diffs[diffs.size // 2:] > 0)) if diffs.size else False
    return KProfile(i, log_k, float(math.exp(log_k[j])), int(i[j]), inc)


# ---------------------------------------------------------------------------
# concentration of e^{-g_a} and e^{-G_a}
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Concentration:
    a: float
    tail_fraction: float       # mass of e^{-g_a} beyond the window, relative
    window: float              # 3 log a / sqrt a
    g_min_second_diff: float   # on a t-grid across the window
    G_min_second_diff: float   # on integers across sqrt(a) log a


def concentration(model: BalancedModel, a: float, n_t: int = 201) -> Concentration:
    """Concentration and convexity checks for ``g_a(t)`` and ``G_a(i)``.

    ``e^{-g_a(t)} dt`` is proportional to ``x^a / f dx``; its tail fraction
    beyond ``|t - t_{a+1}| > 3 log a / sqrt a`` is read off the same
    quadrature used for ``lambda(a)``.
    """
    lm = lambda_moments(model, a, max_order=2)
    t_a1 = solve_u(model, a + 1.0)
    width = 3.0 * math.log(a) / math.sqrt(a)
    outside = np.abs(lm.nodes - t_a1) > width
    tail = float(lm.probs[outside].sum())
    # g_a(t) = log f(e^t) - (a+1) t + const
    ts = np.linspace(t_a1 - width, t_a1 + width, n_t)
    g = model.log_f_t(ts) - (a + 1.0) * ts
    g_dd = np.diff(g, 2)
    # G_a(i) = lambda(i) - (i) log x_a + const on the integer window
    x_a = math.exp(solve_u(model, a))
    half = math.sqrt(a) * math.log(a)
    ii = np.arange(max(0, math.floor(a - half)), math.ceil(a + half) + 1)
    G = np.array([log_moment(model, float(k)) for k in ii]) - ii * math.log(x_a)
    G_dd = np.diff(G, 2)
    return Concentration(float(a), tail, width, float(g_dd.min()), float(G_dd.min()))
