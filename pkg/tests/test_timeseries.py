import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from implicit_copulas.copula_core import gaussian_copula_logdensity
from implicit_copulas.errors import DomainError
from implicit_copulas.margins import NormalMargin, StudentTMargin, UniformMargin
from implicit_copulas.mcmc import ar1_precision
from implicit_copulas.timeseries import (ArCopula, UcsvCopula, UcsvParams, VarCopula,
                                         VarCopulaParams, ar_autocovariances,
                                         ar_conditional_logdensity, ar_copula_correlation,
                                         ar_copula_loglik, ar_fit, simulate_ar_z, simulate_var_z,
                                         spearman_lag, ts_predictive_density,
                                         ucsv_bivariate_density_grid, ucsv_margin, ucsv_mcmc_fit,
                                         ucsv_simulate_z, ucsv_validate, var_block_correlations,
                                         var_fit, var_predict_draw)
from implicit_copulas.timeseries.ucsv import draw_mu


def stationary_rho(p, seed):
    # map partial autocorrelations in (-0.9, 0.9) to AR coefficients (Durbin-Levinson)
    pac = np.random.default_rng(seed).uniform(-0.9, 0.9, p)
    phi = np.zeros(0)
    for k, a in enumerate(pac):
        phi = np.append(phi - a * phi[::-1], a) if k else np.array([a])
    return phi


# ---- AR ------------------------------------------------------------------

def test_ar_autocovariances():
    assert np.allclose(ar_autocovariances([0.0], 3), [1, 0, 0, 0])
    assert np.allclose(ar_autocovariances([0.5], 2), [4 / 3, 2 / 3, 1 / 3], atol=1e-14)


def test_ar2_autocovariances_match_simulation():
    rho = [0.5, 0.3]
    z = simulate_ar_z(rho, 1_000_000, np.random.default_rng(0))[0]
    g = ar_autocovariances(rho, 3)
    emp = [np.mean(z[h:] * z[:z.size - h]) for h in range(4)]
    assert np.allclose(emp, g, rtol=0.03)


def test_ar_correlation_matrix():
    assert np.allclose(ar_copula_correlation([0.0], 4).values, np.eye(4))
    R = ar_copula_correlation([0.5], 3).values
    assert np.allclose(R, 0.5 ** np.abs(np.subtract.outer(range(3), range(3))))
    np.linalg.cholesky(ar_copula_correlation([0.7, 0.2], 1000).values)


def test_spearman_lag():
    assert spearman_lag([0.5], 0) == pytest.approx(1.0)
    assert spearman_lag([0.5], 1) == pytest.approx(6 / math.pi * math.asin(0.25), abs=1e-12)
    assert 6 / math.pi * math.asin(0.25) == pytest.approx(0.48256, abs=5e-5)
    assert spearman_lag([0.0], 3) == 0.0


def test_conditional_density_independence_and_normalization():
    assert ar_conditional_logdensity([0.0], [0.2], 0.9) == pytest.approx(0.0, abs=1e-14)
    rng = np.random.default_rng(1)
    for rho in ([0.6], [0.4, -0.3]):
        hist = rng.uniform(0.05, 0.95, 5)
        val, _ = integrate.quad(lambda v: math.exp(ar_conditional_logdensity(rho, hist, v)),
                                0, 1, epsabs=1e-11, limit=200)
        assert val == pytest.approx(1.0, abs=1e-6)


@given(st.integers(1, 3), st.integers(2, 50), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_joint_equals_sequential(p, T, seed):
    rho = stationary_rho(p, seed)
    u = np.random.default_rng(seed + 1).uniform(0.01, 0.99, T)
    joint = gaussian_copula_logdensity(ar_copula_correlation(rho, T), u)
    assert ar_copula_loglik(rho, u) == pytest.approx(joint, abs=1e-8)


def test_ar_fit_recovers_rho():
    model = ArCopula([0.7], 2000)
    u = model.aux_cdf(model.simulate_z(1, np.random.default_rng(2))[0])
    assert 0.65 <= ar_fit(u, 1).params.rho[0] <= 0.75
    noise = np.random.default_rng(3).uniform(size=2000)
    assert abs(ar_fit(noise, 1).params.rho[0]) <= 0.05
    with pytest.raises(DomainError):
        ar_fit([0.2, 0.5, 0.7], 1)


def test_heteroscedastic_predictive():
    # heavy-tailed margin: the predictive spread depends on where the series sits
    model, margin = ArCopula([0.8]), StudentTMargin(3)
    y = np.linspace(-60, 60, 24001)

    def cond_var(u_last):
        f = ts_predictive_density(model, [u_last], margin, y)
        m = np.trapezoid(y * f, y)
        return np.trapezoid((y - m) ** 2 * f, y)

    assert cond_var(0.99) > 2 * cond_var(0.5)


# ---- VAR -----------------------------------------------------------------

def test_var_fit_recovers_b():
    sig = np.array([[1.0, 0.3], [0.3, 1.0]])
    par = VarCopulaParams(0.5 * np.eye(2), sig)
    z = simulate_var_z(par, 5000, np.random.default_rng(4))
    u = special.ndtr(z / np.sqrt(np.diag(par.autocovariances(0)[0])))
    fit = var_fit(u, 1)
    assert np.allclose(fit.b_matrices[0], 0.5 * np.eye(2), atol=0.05)
    assert np.allclose(np.diag(fit.autocovariances(0)[0]), 1.0, atol=1e-10)


def test_var_white_noise():
    sig = np.array([[1.0, 0.3], [0.3, 1.0]])
    om = var_block_correlations(VarCopulaParams(np.zeros((1, 2, 2)), sig), 2)
    assert np.allclose(om[0], sig)
    assert np.allclose(om[1:], 0.0)
    u = special.ndtr(np.random.default_rng(5).multivariate_normal([0, 0], sig, 3000))
    fitted = var_block_correlations(var_fit(u, 1), 1)
    assert np.max(np.abs(fitted[1])) < 0.06


@given(st.floats(-0.95, 0.95))
@settings(max_examples=20, deadline=None)
def test_var_univariate_matches_ar(r):
    om = var_block_correlations(VarCopulaParams([[[r]]], [[1.0]]), 4)[:, 0, 0]
    g = ar_autocovariances([r], 4)
    assert np.allclose(om, g / g[0], atol=1e-10)


def test_var_cross_correlations_match_simulation():
    par = VarCopulaParams(np.array([[0.5, 0.2], [-0.1, 0.4]]), np.array([[1.0, 0.3], [0.3, 0.8]]))
    z = simulate_var_z(par, 1_000_000, np.random.default_rng(6))
    z = z / z.std(axis=0)
    emp = z[1:].T @ z[:-1] / (z.shape[0] - 1)
    assert np.allclose(emp, var_block_correlations(par, 1)[1], atol=0.01)


def test_var_predict_draws():
    sig = np.array([[1.0, 0.5], [0.5, 1.0]])
    par = VarCopulaParams(np.zeros((1, 2, 2)), sig)
    margins = [NormalMargin(2, 3), StudentTMargin(5)]
    y = var_predict_draw(par, margins, [[0.3, 0.8]], np.random.default_rng(7), n=100_000)
    assert stats.kstest(y[:, 0], "norm", args=(2, 3)).pvalue > 0.01
    assert stats.kstest(y[:, 1], "t", args=(5,)).pvalue > 0.01
    rho_s = 6 / math.pi * math.asin(0.25)
    assert stats.spearmanr(y[:, 0], y[:, 1])[0] == pytest.approx(rho_s, abs=0.01)
    a = var_predict_draw(par, margins, [[0.3, 0.8]], np.random.default_rng(8))
    b = var_predict_draw(par, margins, [[0.3, 0.8]], np.random.default_rng(8))
    assert np.array_equal(a, b)


def test_var_univariate_predictive_mean():
    r = 0.6
    par = VarCopulaParams([[[r]]], [[1 - r * r]])
    u_last = 0.9
    y = var_predict_draw(par, [NormalMargin()], [[u_last]], np.random.default_rng(9), n=200_000)
    se = math.sqrt(1 - r * r) / math.sqrt(y.shape[0])
    assert abs(y.mean() - r * special.ndtri(u_last)) < 4 * se


def test_var_predictive_density_integrates():
    par = VarCopulaParams(np.array([[0.5, 0.1], [0.0, 0.3]]), np.array([[1.0, 0.2], [0.2, 1.0]]))
    y = np.linspace(-12, 12, 4001)
    f = ts_predictive_density(VarCopula(par), [[0.2, 0.7]], [NormalMargin(), StudentTMargin(6)], y)
    assert np.allclose(np.trapezoid(f, y, axis=1), 1.0, atol=2e-3)


# ---- UCSV ----------------------------------------------------------------

def test_ucsv_validate_values():
    der = ucsv_validate(UcsvParams(0.9, 0.1, 0.9, 0.19))
    assert der.s2_mu == pytest.approx(0.526316, abs=1e-6)
    assert der.s2_zeta == pytest.approx(1.0, abs=1e-12)
    assert der.zeta_bar == pytest.approx(-1.247214, abs=1e-6)
    with pytest.raises(DomainError):
        ucsv_validate(UcsvParams(0.6, 1 - 0.36, 0.5, 0.1))
    with pytest.raises(DomainError):
        ucsv_validate(UcsvParams(1.0, 0.1, 0.5, 0.1))
    tiny = ucsv_validate(UcsvParams(0.5, 1e-12, 0.5, 0.3))
    assert tiny.zeta_bar == pytest.approx(-0.5 * tiny.s2_zeta, abs=1e-10)


@given(st.floats(-0.95, 0.95), st.floats(0.01, 0.9), st.floats(-0.95, 0.95), st.floats(0.01, 2.0))
@settings(max_examples=20, deadline=None)
def test_ucsv_unit_variance(rm, frac, rz, s2z):
    par = UcsvParams(rm, frac * (1 - rm * rm), rz, s2z)
    der = ucsv_validate(par)
    assert der.s2_mu + math.exp(der.zeta_bar + 0.5 * der.s2_zeta) == pytest.approx(1.0, abs=1e-12)


def test_ucsv_unit_variance_by_simulation():
    rng = np.random.default_rng(10)
    for _ in range(3):
        rm, rz = rng.uniform(-0.9, 0.9, 2)
        par = UcsvParams(rm, rng.uniform(0.05, 0.8) * (1 - rm * rm), rz, rng.uniform(0.05, 0.5))
        z, _ = ucsv_simulate_z(par, 1, rng, n=1_000_000)
        assert z.var() == pytest.approx(1.0, abs=0.01)


def test_ucsv_margin_symmetry():
    tab = ucsv_margin(UcsvParams(0.9, 0.1, 0.9, 0.19))
    assert tab.cdf(0.0) == pytest.approx(0.5, abs=1e-8)
    z = np.linspace(-4, 4, 41)
    assert np.allclose(tab.logpdf(z), tab.logpdf(-z), atol=1e-10)


def test_ucsv_iid_limit_and_clustering():
    rng = np.random.default_rng(11)
    z, _ = ucsv_simulate_z(UcsvParams(0.0, 1e-10, 0.0, 1e-10), 1, rng, n=200_000)
    assert stats.kstest(z.ravel(), "norm").pvalue > 0.01
    z, _ = ucsv_simulate_z(UcsvParams(0.5, 0.1, 0.98, 0.1), 100_000, rng)
    sq = z * z
    assert np.corrcoef(sq[1:], sq[:-1])[0, 1] > 0.05


def test_mu_step_matches_conditional():
    rng = np.random.default_rng(12)
    par = UcsvParams(0.9, 0.1, 0.8, 0.2)
    T = 20
    z = rng.standard_normal(T)
    zeta = rng.normal(-1.0, 0.5, T)
    Q = ar1_precision(T, par.rho_mu, par.sigma2_mu).to_dense() + np.diag(np.exp(-zeta))
    cov = np.linalg.inv(Q)
    mean = cov @ (z * np.exp(-zeta))
    draws = np.array([draw_mu(z, zeta, par, rng) for _ in range(20_000)])
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4.5 * se)
    assert np.allclose(np.cov(draws.T), cov, atol=0.05 * np.max(np.diag(cov)))
    assert np.allclose(draw_mu(z, zeta, par, rng, return_mean=True)[1], mean, atol=1e-10)


def test_ucsv_empty_chain():
    u = np.random.default_rng(13).uniform(size=60)
    ch = ucsv_mcmc_fit(u, 0, seed=1)
    assert len(ch) == 0


def test_ucsv_short_fit_is_finite():
    par = UcsvParams(0.9, 0.1, 0.9, 0.2)
    model = UcsvCopula(par, 150)
    rng = np.random.default_rng(14)
    u = model.aux_cdf(model.simulate_z(1, rng)[0])
    ch = ucsv_mcmc_fit(u, 200, rng)
    assert len(ch) == 160
    assert np.all(np.isfinite(ch.draws))
    assert np.all(np.abs(ch["rho_mu"]) < 1)


def test_density_grid_independence_limit():
    g = ucsv_bivariate_density_grid(UcsvParams(0.5, 1e-9, 0.5, 1e-9), 20)
    assert np.allclose(g["c"], 1.0, atol=1e-3)
    assert ucsv_bivariate_density_grid(UcsvParams(0.5, 0.1, 0.5, 0.1), 2)["c"].size == 4


def test_density_grid_symmetry_and_mass():
    n = 60
    g = ucsv_bivariate_density_grid(UcsvParams(0.9, 0.1, 0.95, 0.1), n)
    c = g["c"].reshape(n, n)
    assert np.allclose(c, c[::-1, ::-1], atol=1e-6)
    assert c.mean() == pytest.approx(1.0, abs=1e-2)
    assert c[0, 0] > c[n // 2, n // 2]


def test_predictive_ar_cases():
    y = np.linspace(-3, 3, 25)
    g = NormalMargin(0.5, 1.2)
    f = ts_predictive_density(ArCopula([0.0]), [0.3], g, y)
    assert np.allclose(f, g.pdf(y), atol=1e-14)
    uu = np.linspace(0.02, 0.98, 25)
    f = ts_predictive_density(ArCopula([0.8]), [0.7], UniformMargin(0, 1), uu)
    ref = np.exp(ar_conditional_logdensity([0.8], [0.7], uu))
    assert np.allclose(f, ref, atol=1e-10)
    with pytest.raises(DomainError):
        ts_predictive_density(ArCopula([0.8]), [], g, y)


def test_predictive_ucsv_integrates():
    par = UcsvParams(0.9, 0.1, 0.9, 0.2)
    model = UcsvCopula(par, 80)
    rng = np.random.default_rng(15)
    hist = model.aux_cdf(model.simulate_z(1, rng)[0])
    g = StudentTMargin(5, 1.0, 0.5)
    y = np.linspace(-15, 17, 3201)
    f = ts_predictive_density(UcsvCopula(par), hist, g, y, rng=rng)
    assert np.trapezoid(f, y) == pytest.approx(1.0, abs=0.02)


def test_stationary_uniform_margins():
    rng = np.random.default_rng(16)
    for model in (ArCopula([0.6, 0.2], 400), UcsvCopula(UcsvParams(0.9, 0.1, 0.9, 0.2), 400)):
        paths = model.aux_cdf(model.simulate_z(5000, rng))
        for t in (0, 199, 399):
            assert stats.kstest(paths[:, t], "uniform").pvalue > 0.001
