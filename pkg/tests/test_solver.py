import json
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln

from logbalance.solver import (
    E1_SAMPLES,
    BalancedModel,
    CorruptFile,
    DivergentIterate,
    FormatVersionMismatch,
    MaxIterExceeded,
    TailNotConverged,
    balance_residuals,
    check_e1,
    default_trusted_degree,
    finalize_normalization,
    generating_identity,
    load_model,
    log_moments,
    min_truncation,
    save_model,
    solve,
    t_step,
)

N_SMALL, X_SMALL = 400, 300.0


@pytest.fixture(scope="module")
def small_beta0():
    return solve(0.0, N_SMALL, X_SMALL, tol=1e-10)


def log_factorials(n):
    return gammaln(np.arange(n + 1) + 1.0)


# -- construction -----------------------------------------------------------------


def test_model_validation():
    with pytest.raises(ValueError):
        BalancedModel(beta=0.0, n_trunc=3, lam=np.zeros(3), x_max=10.0, trusted_degree=2)
    with pytest.raises(ValueError):
        BalancedModel(beta=1.5, n_trunc=2, lam=np.zeros(3), x_max=10.0, trusted_degree=2)
    m = BalancedModel.exponential(10, 20.0)
    with pytest.raises(ValueError):
        m.lam[0] = 1.0


def test_sizing_rules():
    assert min_truncation(300.0) == 508
    assert default_trusted_degree(420.0, 680) == 252
    assert default_trusted_degree(420.0, 100) == 100


def test_log_f_matches_exp():
    m = BalancedModel.exponential(400, 300.0)
    x = np.array([0.5, 10.0, 150.0])
    np.testing.assert_allclose(m.log_f(x), x, rtol=1e-13)
    # at the cut-off the degree-400 series misses the Poisson(300) tail above 400
    from scipy.stats import poisson
    assert m.log_f(np.array([300.0]))[0] - 300.0 == pytest.approx(np.log(poisson.cdf(400, 300.0)), abs=1e-12)


# -- T-step ----------------------------------------------------------------------------


def test_exact_solution_is_fixed_point():
    m = BalancedModel.exponential(N_SMALL, X_SMALL)
    out = t_step(m)
    top = m.trusted_degree
    assert np.max(np.abs(out.lam[: top + 1] - m.lam[: top + 1])) < 1e-9


def test_t_step_rational_integrand():
    # f = sum_{j<=30} x^j, one undamped step gives log of the cut-off moments
    m = BalancedModel.from_lambda(np.zeros(31), 0.0, 80.0)
    out = t_step(m)
    assert np.all(np.isfinite(out.lam))
    # x -> 1/x maps the order-i integrand to order 29-i on [1, inf): not monotone
    assert int(np.argmin(out.lam)) in (14, 15)

    def oracle(i):
        ref, _ = integrate.quad(lambda x: x**i / sum(x**j for j in range(31)), 0.0, 80.0,
                                points=[1.0], limit=400, epsrel=1e-13)
        return math.log(ref)

    for i in (0, 5, 17, 25):
        assert out.lam[i] == pytest.approx(oracle(i), abs=1e-9)
    # top degrees do not decay at the cut-off; trapezoid end error only
    for i in (29, 30):
        assert out.lam[i] == pytest.approx(oracle(i), abs=1e-3)


def test_t_step_near_degenerate_beta():
    beta = 1.0 - 1e-9
    m = BalancedModel.from_lambda(log_factorials(60), beta, 40.0)
    out = t_step(m)
    m0 = log_moments(m, orders=[0])[0]
    assert out.lam[0] - m0 == pytest.approx(-math.log1p(-beta), rel=1e-6)
    assert out.lam[0] - m0 == pytest.approx(20.7233, abs=1e-3)


def test_t_step_rejects_bad_damping():
    m = BalancedModel.exponential(20, 10.0)
    with pytest.raises(ValueError):
        t_step(m, damping=0.0)


def test_t_step_divergent():
    lam = log_factorials(20)
    lam[5] = math.nan
    m = BalancedModel.from_lambda(lam, 0.0, 10.0)
    with pytest.raises(DivergentIterate):
        t_step(m)


# -- finalisation --------------------------------------------------------------------


def test_finalize_identity_on_normalized():
    m = BalancedModel.exponential(N_SMALL, X_SMALL)
    out = finalize_normalization(m)
    assert np.max(np.abs(out.lam - m.lam)) < 1e-12


def test_finalize_restores_f0_after_halving():
    m = BalancedModel.exponential(N_SMALL, X_SMALL)
    halved = BalancedModel.from_lambda(m.lam + math.log(2.0), 0.0, X_SMALL)
    res_before = balance_residuals(halved)[1:halved.trusted_degree + 1]
    out = finalize_normalization(halved)
    assert out.lam[0] == 0.0
    # kappa scaling leaves c_i M_i unchanged
    np.testing.assert_allclose(res_before, balance_residuals(m)[1:m.trusted_degree + 1], atol=1e-12)
    np.testing.assert_allclose(out.lam, m.lam, atol=1e-12)


def test_finalize_undoes_dilation():
    i = np.arange(N_SMALL + 1)
    dilated = BalancedModel.from_lambda(log_factorials(N_SMALL) - i * math.log(2.0), 0.0, X_SMALL)
    out = finalize_normalization(dilated)
    top = out.trusted_degree
    assert np.max(np.abs(out.lam[: top + 1] - log_factorials(N_SMALL)[: top + 1])) < 1e-9


# -- solve -----------------------------------------------------------------------------


def test_solve_beta0_closed_form(small_beta0):
    err = np.abs(small_beta0.lam[:201] - log_factorials(200))
    assert err.max() < 1e-6
    top = small_beta0.trusted_degree
    assert np.abs(small_beta0.lam[: top + 1] - log_factorials(top)).max() < 1e-6


def test_solve_report(small_beta0):
    rep = small_beta0.report
    assert rep.converged and rep.final_sup_delta < 1e-10
    assert rep.max_balance_residual < 1e-9
    assert set(rep.e1_residuals) == set(E1_SAMPLES)
    assert small_beta0.lam[0] == 0.0


def test_solve_beta_half_e1():
    m = solve(0.5, N_SMALL, X_SMALL, tol=1e-10, max_iter=500)
    lhs, rhs, res = check_e1(m, 0.5)
    assert rhs == pytest.approx(1.5)
    assert res < 1e-4


def test_solve_rejects_beta():
    with pytest.raises(ValueError):
        solve(1.0, 50, 20.0)


def test_solve_max_iter():
    with pytest.raises(MaxIterExceeded) as info:
        solve(0.5, N_SMALL, X_SMALL, tol=1e-10, max_iter=3)
    assert info.value.model is not None
    assert not info.value.report.converged
    assert info.value.report.iterations == 3


def test_scale_equivariance(small_beta0):
    i = np.arange(N_SMALL + 1)
    start = log_factorials(N_SMALL) - i * math.log(2.0)
    m = solve(0.0, N_SMALL, X_SMALL, tol=1e-10, initial_lambda=start)
    top = m.trusted_degree
    assert np.abs(m.lam[: top + 1] - small_beta0.lam[: top + 1]).max() < 1e-8


@pytest.mark.slow
def test_solved_invariants(solved):
    for beta, m in solved.items():
        top = m.trusted_degree
        res = np.expm1(balance_residuals(m))[: top + 1]
        assert np.abs(res).max() < 10 * 1e-10, beta
        assert m.lam[0] == 0.0
        # log-convexity of 1/c_i past the first few degrees
        assert np.all(np.diff(m.lam[5: top + 1], 2) > 0), beta


@pytest.mark.slow
def test_solved_generating_identity(solved):
    for beta in (0.0, 0.25, 0.5, 0.75):
        m = solved[beta]
        for s in E1_SAMPLES:
            assert abs(generating_identity(m, s) - (1.0 / (1.0 - s) - beta)) < 1e-4


@pytest.mark.slow
def test_solved_beta_quarter_e1(solved):
    lhs, rhs, res = check_e1(solved[0.25], 0.8)
    assert rhs == pytest.approx(4.75)
    assert res < 1e-4


@pytest.mark.slow
def test_continuation_saves_iterations(solved):
    prev = None
    for beta in (0.0, 0.25, 0.5, 0.75):
        cold = solved[beta].report.iterations if beta == 0.0 else solve(beta, 680, 420.0).report.iterations
        warm = solve(beta, 680, 420.0, warm_start=prev) if prev is not None else solved[beta]
        assert warm.report.iterations <= cold, beta
        prev = warm


@pytest.mark.slow
def test_near_one_approaches_xexp(solved):
    m99 = solve(0.99, 680, 420.0, warm_start=solved[0.9])
    m = solve(0.999, 680, 420.0, warm_start=m99)
    i = np.arange(681)
    gap = m.lam[1:] - gammaln(i[1:])  # lambda_i - log (i-1)!
    top = m.trusted_degree
    step = np.abs(np.diff(gap[: top + 1]))
    # the offset settles: its increments shrink steadily toward zero
    assert np.all(np.diff(step[10:]) <= 1e-12)
    assert step[-1] < 1e-2 * step[0]


# -- check_e1 ---------------------------------------------------------------------------


def test_e1_exact_profiles():
    lhs, rhs, res = check_e1(BalancedModel.exponential(N_SMALL, X_SMALL), 0.5)
    assert lhs == pytest.approx(2.0, rel=1e-10) and rhs == 2.0
    lhs, rhs, res = check_e1(BalancedModel.x_exponential(N_SMALL, X_SMALL), 0.5)
    assert lhs == pytest.approx(1.0, rel=1e-10) and rhs == pytest.approx(1.0)


def test_e1_short_cutoff():
    m = solve(0.0, 220, 100.0, tol=1e-10)
    with pytest.raises(TailNotConverged):
        check_e1(m, 0.8)
    res = m.report.e1_residuals
    assert math.isnan(res[0.8]) and math.isnan(res[0.9])
    assert res[0.5] < 1e-8


def test_moments_agree_with_windowed_quadrature(small_beta0):
    from logbalance.asymptotics import log_moment

    grid = log_moments(small_beta0, orders=[3, 50, 120])
    for k, i in enumerate((3, 50, 120)):
        assert grid[k] == pytest.approx(log_moment(small_beta0, float(i)), abs=1e-11)


# -- persistence ---------------------------------------------------------------------------


def test_round_trip(tmp_path, small_beta0):
    path = save_model(small_beta0, tmp_path / "m.json")
    back = load_model(path)
    assert np.array_equal(back.lam, small_beta0.lam)
    assert back.report == small_beta0.report
    assert back.beta == small_beta0.beta and back.x_max == small_beta0.x_max
    assert check_e1(back, 0.5)[2] == check_e1(small_beta0, 0.5)[2]


def test_round_trip_infinite_lambda(tmp_path):
    m = BalancedModel.x_exponential(30, 10.0)
    back = load_model(save_model(m, tmp_path / "x.json"))
    assert back.lam[0] == math.inf
    assert np.array_equal(back.lam[1:], m.lam[1:])


def test_version_mismatch(tmp_path, small_beta0):
    path = save_model(small_beta0, tmp_path / "m.json")
    doc = json.loads(path.read_text())
    doc["format_version"] = 0
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatVersionMismatch):
        load_model(path)


def test_corrupt_file(tmp_path, small_beta0):
    path = save_model(small_beta0, tmp_path / "m.json")
    text = path.read_text()
    path.write_text(text.replace('"beta": 0', '"beta": 0.5', 1))
    with pytest.raises(CorruptFile):
        load_model(path)
    path.write_text("{ not json")
    with pytest.raises(CorruptFile):
        load_model(path)
