"""
Balanced model solver.

The model is the entire function ``f(x) = sum_i c_i x^i`` with ``f(0) = 1``
whose coefficients satisfy the moment balance

    c_i * int_0^inf x^i / f(x) dx = 1        (i >= 1)
    c_0 * int_0^inf     1 / f(x) dx = 1 - beta

which, summed against ``s^i``, is ``int f(sx)/f(x) dx = 1/(1-s) - beta``.

Coefficients are carried as ``lambda_i = -log c_i``.  The T-step replaces
every ``lambda_i`` by the log of its moment integral; ``solve`` iterates it
(Anderson-accelerated) and then rescales ``f(x) -> kappa f(mu x)`` so that the
balance constant is one and ``f(0) = 1``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .numerics import NumericsError, lse

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
E1_SAMPLES = tuple(round(0.1 * k, 1) for k in range(1, 10))


class SolverError(NumericsError):
    pass


class DivergentIterate(SolverError):
    pass


class MaxIterExceeded(SolverError):
    def __init__(self, message, model=None, report=None):
        super().__init__(message)
        self.model = model
        self.report = report


class TailNotConverged(SolverError):
    pass


class ModelFileError(ValueError):
    pass


class FormatVersionMismatch(ModelFileError):
    pass


class CorruptFile(ModelFileError):
    pass


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: int = 0
    final_sup_delta: float = math.nan
    max_balance_residual: float = math.nan
    e1_residuals: dict = field(default_factory=dict)
    damping_used: float = 1.0
    log_balance_constant: float = 0.0  # log C found before the final rescale
    converged: bool = False


@dataclass(frozen=True, eq=False)
class BalancedModel:
    """Truncated series ``f(x) = sum_{i<=N} exp(-lam[i]) x^i``.

    ``lam[0] = +inf`` encodes ``c_0 = 0`` (used for explicit profiles such
    as ``x e^x``).  Instances are treated as immutable.
    """

    beta: float
    n_trunc: int
    lam: np.ndarray
    x_max: float
    trusted_degree: int
    report: ConvergenceReport = field(default_factory=ConvergenceReport)
    label: str = ""

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.shape != (self.n_trunc + 1,):
            raise ValueError(f"lam must have n_trunc+1={self.n_trunc + 1} entries, got {lam.shape}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta={self.beta} outside [0, 1]")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_lambda(cls, lam, beta: float, x_max: float, trusted_degree: int | None = None, label=""):
        lam = np.asarray(lam, dtype=float)
        n = lam.size - 1
        if trusted_degree is None:
            trusted_degree = default_trusted_degree(x_max, n)
        return cls(beta=beta, n_trunc=n, lam=lam, x_max=float(x_max),
                   trusted_degree=int(trusted_degree), label=label)

    @classmethod
    def exponential(cls, n_trunc: int, x_max: float):
        """``f = e^x``: the exact beta = 0 solution, ``c_i = 1/i!``."""
        i = np.arange(n_trunc + 1, dtype=float)
        return cls.from_lambda(gammaln(i + 1.0), 0.0, x_max, label="exp")

    @classmethod
    def x_exponential(cls, n_trunc: int, x_max: float):
        """``f = x e^x``: ``c_0 = 0``, ``c_i = 1/(i-1)!``; balanced with beta = 1."""
        i = np.arange(n_trunc + 1, dtype=float)
        lam = np.empty_like(i)
        lam[0] = math.inf
        lam[1:] = gammaln(i[1:])
        return cls.from_lambda(lam, 1.0, x_max, label="xexp")

    # -- series evaluation ------------------------------------------------

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.n_trunc + 1, dtype=float)

    @property
    def coefficients(self) -> np.ndarray:
        return np.exp(-self.lam)

    def log_f_t(self, t) -> np.ndarray:
        """``log f(e^t)``, vectorised over ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.shape)
        i = self.degrees
        step = max(1, 400_000 // (self.n_trunc + 1))
        flat_t, flat_out = t.ravel(), out.ravel()
        for s in range(0, flat_t.size, step):
            block = flat_t[s:s + step]
            flat_out[s:s + step] = lse(np.outer(block, i) - self.lam[None, :], axis=1)
        return flat_out.reshape(t.shape)

    def log_f(self, x) -> np.ndarray:
        """``log f(x)`` for ``x >= 0``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty(x.shape)
        pos = x > 0
        out[~pos] = -self.lam[0]
        if pos.any():
            out[pos] = self.log_f_t(np.log(x[pos]))
        return out

    def series_log_weights(self, t: float) -> np.ndarray:
        """Normalised log weights ``log(c_i x^i / f(x))`` at ``x = e^t``."""
        v = self.degrees * t - self.lam
        return v - lse(v)

    def with_report(self, report: ConvergenceReport) -> "BalancedModel":
        return replace(self, report=report)


def default_trusted_degree(x_max: float, n_trunc: int) -> int:
    """Degrees whose moment integrand peaks well inside ``(0, x_max)``.

    Up to ``0.6 x_max`` the cut-off moments equal the untruncated ones to
    far below the solver tolerance, so the balance residual is meaningful.
    """
    return int(min(n_trunc, math.floor(0.6 * x_max)))


def series_degree(model: "BalancedModel") -> int:
    """Highest degree usable as a series term of ``f``.

    Solved beta = 0 models reproduce ``log i!`` to 1e-8 up to about
    ``x_max``, well past the balance-trusted range; ``0.8 x_max`` keeps the
    series weights of every diagnostic anchor ``a <= 0.5 x_max`` below 1e-10
    past this degree.
    """
    return int(min(model.n_trunc, max(model.trusted_degree, math.floor(0.8 * model.x_max))))


def min_truncation(x_max: float) -> int:
    """Smallest degree that keeps the series mass at ``x_max`` inside the sum."""
    return int(math.ceil(x_max + 12.0 * math.sqrt(x_max)))


# ---------------------------------------------------------------------------
# moment integrals on a shared t-grid
# ---------------------------------------------------------------------------


def moment_grid(x_max: float, t_min: float = -40.0):
    """Uniform t-grid ending at ``log x_max`` with trapezoid log-weights.

    The spacing ``0.5 / sqrt(x_max)`` is half the narrowest Laplace width of
    any moment integrand, which keeps the trapezoid rule (exponentially
    convergent for these analytic, rapidly decaying integrands) far below
    double-precision round-off.  Degrees whose integrand has not decayed at
    the cut-off (beyond the trusted range) keep the O(h^2) end error.  The
    left end at ``t = -40`` truncates the slowest (``i = 0``) integrand at a
    relative ``e^-40``.
    """
    h = 0.5 / math.sqrt(x_max)
    t_hi = math.log(x_max)
    n = int(math.ceil((t_hi - t_min) / h))
    t = t_hi - h * np.arange(n, -1, -1, dtype=float)
    logw = np.full(t.size, math.log(h))
    logw[0] -= math.log(2.0)
    logw[-1] -= math.log(2.0)
    return t, logw


def log_moments(model: BalancedModel, orders=None, grid=None) -> np.ndarray:
    """``log int_0^{x_max} x^i / f(x) dx`` for every ``i`` in ``orders``.

    Defaults to all series degrees.  Uses the shared trapezoid grid from
    :func:`moment_grid`.
    """
    if grid is None:
        grid = moment_grid(model.x_max)
    t, logw = grid
    if orders is None:
        orders = model.degrees
    orders = np.asarray(orders, dtype=float)
    base = logw - model.log_f_t(t)
    out = np.empty(orders.size)
    step = max(1, 2_000_000 // t.size)
    for s in range(0, orders.size, step):
        block = orders[s:s + step]
        out[s:s + step] = lse((block[:, None] + 1.0) * t[None, :] + base[None, :], axis=1)
    return out


def _target(model: BalancedModel, grid=None) -> np.ndarray:
    logm = log_moments(model, grid=grid)
    logm[0] -= math.log1p(-model.beta)
    return logm


def balance_residuals(model: BalancedModel, grid=None) -> np.ndarray:
    """``log(c_i M_i)`` for ``i >= 1`` and ``log(c_0 M_0 / (1 - beta))``."""
    return _target(model, grid) - model.lam


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------


def t_step(model: BalancedModel, damping: float = 1.0, grid=None) -> BalancedModel:
    """One damped T-step; no normalisation is applied.

    ``lam_i <- (1-theta) lam_i + theta log M_i`` for ``i >= 1`` and
    ``lam_0 <- (1-theta) lam_0 + theta (log M_0 - log(1-beta))``.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if model.beta >= 1.0:
        raise ValueError("t_step needs beta < 1")
    target = _target(model, grid)
    new = (1.0 - damping) * model.lam + damping * target
    if not np.all(np.isfinite(new)):
        bad = int(np.flatnonzero(~np.isfinite(new))[0])
        raise DivergentIterate(f"lambda_{bad} became non-finite")
    return replace(model, lam=new)


def finalize_normalization(model: BalancedModel, grid=None) -> BalancedModel:
    """Rescale ``f(x) -> kappa f(mu x)`` to balance constant 1 and ``f(0) = 1``.

    ``C`` is read off the median of ``log(c_i M_i)`` over the trusted degrees;
    ``mu = C`` and ``kappa = 1/c_0``, i.e.
    ``lam_i <- lam_i - i log(mu) - log(kappa)``.
    """
    log_c = _log_balance_constant(model, grid)
    log_kappa = model.lam[0]
    lam = model.lam - model.degrees * log_c - log_kappa
    lam[0] = 0.0
    return replace(model, lam=lam)


def _initial_lambda(n_trunc: int, warm_start: BalancedModel | None) -> np.ndarray:
    i = np.arange(n_trunc + 1, dtype=float)
    lam = gammaln(i + 1.0)
    if warm_start is not None:
        src = np.asarray(warm_start.lam, dtype=float)
        if not np.isfinite(src[0]):
            raise ValueError("cannot warm-start from a profile with c_0 = 0")
        # undo the final rescale: the iteration's fixed point sits at the
        # cut-off selected constant, not at C = 1
        src = src + np.arange(src.size) * warm_start.report.log_balance_constant
        k = min(src.size, lam.size)
        # keep the warm start's offset from log i! and continue it flat past its degree
        offset = src[:k] - lam[:k]
        lam[:k] = src[:k]
        if k < lam.size:
            lam[k:] += offset[-1]
    return lam


def _iterate(model: BalancedModel, tol: float, max_iter: int, memory: int, damping: float, grid):
    """Anderson-mixed iteration of the gauge-fixed T-map.

    Returns ``(model, iterations, sup_delta, converged, damping)``.
    """
    beta = model.beta
    theta = float(damping)
    hist_x: list[np.ndarray] = []
    hist_r: list[np.ndarray] = []
    best = math.inf
    since_best = 0
    sup_delta = math.inf
    it = 0
    while it < max_iter:
        stepped = t_step(model, theta, grid=grid)
        g = stepped.lam - stepped.lam[0]
        r = g - model.lam
        sup_delta = float(np.max(np.abs(r)))
        it += 1
        if sup_delta < tol:
            return replace(model, lam=g), it, sup_delta, True, theta
        if sup_delta < best:
            best, since_best = sup_delta, 0
        else:
            since_best += 1
        if sup_delta > 1e3 * best or since_best > 25:
            theta *= 0.5
            hist_x.clear()
            hist_r.clear()
            best, since_best = sup_delta, 0
            log.info("solve beta=%g: damping reduced to %g at iteration %d", beta, theta, it)
        x = model.lam
        if memory > 0:
            hist_x.append(x.copy())
            hist_r.append(r.copy())
            if len(hist_x) > memory + 1:
                hist_x.pop(0)
                hist_r.pop(0)
        if len(hist_x) >= 2:
            dx = np.diff(np.array(hist_x), axis=0).T
            dr = np.diff(np.array(hist_r), axis=0).T
            gamma, *_ = np.linalg.lstsq(dr, r, rcond=None)
            nxt = x + r - (dx + dr) @ gamma
        else:
            nxt = g
        if not np.all(np.isfinite(nxt)):
            raise DivergentIterate(f"non-finite iterate at iteration {it}")
        nxt = nxt - nxt[0]
        model = replace(model, lam=nxt)
    return model, it, sup_delta, False, theta


def _log_balance_constant(model: BalancedModel, grid) -> float:
    return float(np.median(balance_residuals(model, grid)[1: model.trusted_degree + 1]))


def solve(
    beta: float,
    n_trunc: int,
    x_max: float,
    tol: float = 1e-10,
    max_iter: int = 500,
    warm_start: BalancedModel | None = None,
    memory: int = 8,
    damping: float = 1.0,
    initial_lambda=None,
) -> BalancedModel:
    """Solve the balance conditions for the given beta.

    The gauge-fixed T-map ``G(lam) = T(lam) - T(lam)_0`` is iterated with
    Anderson mixing (history ``memory``; ``memory=0`` gives the plain damped
    iteration).  Convergence is ``sup_i |G(lam)_i - lam_i| < tol``.  If the
    residual stalls or blows up the damping is halved and the history
    dropped.

    The converged iterate is balanced with some constant ``C`` (selected by
    the degrees near the cut-off, where the truncated problem departs from
    the untruncated one) and is then passed through
    :func:`finalize_normalization`.  Below about ``x_max - 5 sqrt(x_max)``
    the result is the untruncated solution with ``C = 1``.

    Raises
    ------
    MaxIterExceeded
        carrying the last (finalised) model and its report.
    DivergentIterate
        if an iterate becomes non-finite.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta={beta} outside [0, 1)")
    if n_trunc < min_truncation(x_max):
        log.warning("n_trunc=%d is below x_max + 12 sqrt(x_max) = %d; series truncation "
                    "error near x_max will exceed 1e-12", n_trunc, min_truncation(x_max))
    grid = moment_grid(x_max)
    if initial_lambda is not None:
        lam = np.array(initial_lambda, dtype=float)
    else:
        lam = _initial_lambda(n_trunc, warm_start)
    lam = lam - lam[0]
    model = BalancedModel.from_lambda(lam, beta, x_max)

    model, it, sup_delta, converged, theta = _iterate(model, tol, max_iter, memory, damping, grid)
    log_c = _log_balance_constant(model, grid)
    final = finalize_normalization(model, grid)
    res = balance_residuals(final, grid)[: final.trusted_degree + 1]
    report = ConvergenceReport(
        iterations=it,
        final_sup_delta=sup_delta,
        max_balance_residual=float(np.max(np.abs(np.expm1(res)))),
        e1_residuals=_e1_residuals(final),
        damping_used=theta,
        log_balance_constant=log_c,
        converged=converged,
    )
    final = final.with_report(report)
    if not converged:
        raise MaxIterExceeded(
            f"beta={beta}: sup delta {sup_delta:.3e} after {it} iterations (tol {tol:.1e})",
            model=final, report=report,
        )
    return final


# ---------------------------------------------------------------------------
# independent check of the defining equation
# ---------------------------------------------------------------------------


def _e1_residuals(model: BalancedModel) -> dict:
    """E1 residual per sample; NaN where the cut-off is too short for that ``s``."""
    out = {}
    for s in E1_SAMPLES:
        try:
            out[s] = check_e1(model, s)[2]
        except TailNotConverged as exc:
            log.warning("E1 check skipped: %s", exc)
            out[s] = math.nan
    return out


def check_e1(model: BalancedModel, s: float, epsrel: float = 1e-12):
    """Direct quadrature of ``int_0^{x_max} f(sx)/f(x) dx`` against ``1/(1-s) - beta``.

    This deliberately avoids the moment machinery: the ratio is integrated
    in ``x`` with adaptive Gauss-Kronrod.

    Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    if not 0.0 <= s < 1.0:
        raise ValueError("s must lie in [0, 1)")

    def log_ratio(x):
        return model.log_f(s * x) - model.log_f(x)

    # probe just above 0: log f(0) is -inf when c_0 = 0
    peak = float(np.max(log_ratio(np.array([1e-9, 1e-6, 1e-3]))))
    edge = float(log_ratio(np.array([model.x_max]))[0])
    if edge - peak > math.log(1e-12):
        raise TailNotConverged(
            f"f(sx)/f(x) at x_max is {math.exp(edge - peak):.2e} of its peak (s={s})"
        )

    def integrand(x):
        return math.exp(float(log_ratio(np.array([x]))[0]))

    # break points follow the 1/(1-s) decay length
    scale = 1.0 / max(1.0 - s, 1e-3)
    pts = [0.0]
    b = min(0.25 * scale, model.x_max)
    while b < model.x_max:
        pts.append(b)
        b *= 2.0
    pts.append(model.x_max)
    lhs = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)
        lhs += val
    rhs = 1.0 / (1.0 - s) - model.beta
    return lhs, rhs, abs(lhs - rhs)


def generating_identity(model: BalancedModel, s: float, grid=None) -> float:
    """``sum_i s^i c_i M_i`` from the moment integrals (compare to ``1/(1-s) - beta``)."""
    logm = log_moments(model, grid=grid)
    with np.errstate(divide="ignore"):
        terms = model.degrees * math.log(s) - model.lam + logm if s > 0 else None
    if terms is None:
        return math.exp(logm[0] - model.lam[0])
    return math.exp(lse(terms))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def _dump(obj, indent=0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_dump(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return _num(obj)


def _payload(model: BalancedModel) -> dict:
    rep = model.report
    return {
        "format_version": FORMAT_VERSION,
        "label": model.label,
        "beta": model.beta,
        "n_trunc": model.n_trunc,
        "x_max": model.x_max,
        "trusted_degree": model.trusted_degree,
        "lambda": list(model.lam),
        "report": {
            "iterations": rep.iterations,
            "final_sup_delta": rep.final_sup_delta,
            "max_balance_residual": rep.max_balance_residual,
            "e1_residuals": {_num(k): v for k, v in rep.e1_residuals.items()},
            "damping_used": rep.damping_used,
            "log_balance_constant": rep.log_balance_constant,
            "converged": rep.converged,
        },
    }


def _checksum(payload: dict) -> str:
    return hashlib.sha256(_dump(payload).encode("utf-8")).hexdigest()


def save_model(model: BalancedModel, path) -> Path:
    """Write the model as a JSON document with an embedded SHA-256 checksum."""
    payload = _payload(model)
    doc = dict(payload)
    doc["checksum"] = _checksum(payload)
    path = Path(path)
    path.write_text(_dump(doc) + "\n", encoding="utf-8")
    return path


def load_model(path) -> BalancedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: not a valid model document ({exc})") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    stored = doc.pop("checksum", None)
    try:
        rep = doc["report"]
        report = ConvergenceReport(
            iterations=int(rep["iterations"]),
            final_sup_delta=float(rep["final_sup_delta"]),
            max_balance_residual=float(rep["max_balance_residual"]),
            e1_residuals={float(k): float(v) for k, v in rep["e1_residuals"].items()},
            damping_used=float(rep["damping_used"]),
            log_balance_constant=float(rep["log_balance_constant"]),
            converged=bool(rep["converged"]),
        )
        model = BalancedModel(
            beta=float(doc["beta"]),
            n_trunc=int(doc["n_trunc"]),
            lam=np.array(doc["lambda"], dtype=float),
            x_max=float(doc["x_max"]),
            trusted_degree=int(doc["trusted_degree"]),
            report=report,
            label=str(doc.get("label", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: malformed model document ({exc})") from exc
    if stored != _checksum(_payload(model)):
        raise CorruptFile(f"{path}: checksum mismatch")
    return model
