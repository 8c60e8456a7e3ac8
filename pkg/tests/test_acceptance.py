"""One test per acceptance criterion, each at its stated tolerance."""

import math
import time

import numpy as np
import pytest
from scipy import integrate, special, stats

from conftest import random_correlation
from implicit_copulas.calibration import regression_replicate, ucsv_replicate
from implicit_copulas.copula_core import (CorrelationMatrix, DiscreteBounds, DiscreteCdf,
                                          GaussianCopula, TCopula, TCopulaParams,
                                          discrete_bounds, discrete_mass_by_differencing,
                                          gaussian_copula_cdf, gaussian_copula_logdensity,
                                          gaussian_da_z_step, simulate_copula_model,
                                          t_copula_logdensity)
from implicit_copulas.factor import FactorCopula, FactorParams
from implicit_copulas.margins import NormalMargin, build_interp_table
from implicit_copulas.regression import (RegressionCopula, RegressionData,
                                         reg_conditional_loglik, reg_correlation, reg_mcmc_fit,
                                         reg_predict_density, simulate_regression_data)
from implicit_copulas.skewt import (SkewTCopula, SkewTCopulaParams, skewt_aug_logdensity,
                                    skewt_logpdf, skewt_marginal_table)
from implicit_copulas.timeseries import (ArCopula, UcsvCopula, UcsvParams, VarCopula,
                                         VarCopulaParams, spearman_lag, ucsv_margin,
                                         ucsv_simulate_z)
from implicit_copulas.timeseries.ucsv import ucsv_validate

SPEARMAN_R05 = 6 / math.pi * math.asin(0.25)


def _report(k, ok, detail):
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")


def test_criterion_01_density_ratio_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 11))
        R = random_correlation(m, rng)
        om = CorrelationMatrix(R)
        u = rng.uniform(0.005, 0.995, m)
        nu = float(rng.uniform(1.5, 30))
        z = special.ndtri(u)
        direct = stats.multivariate_normal(np.zeros(m), R).logpdf(z) - stats.norm.logpdf(z).sum()
        got = gaussian_copula_logdensity(om, u)
        worst = max(worst, abs(got - direct) / max(1.0, abs(direct)))
        zt = stats.t.ppf(u, nu)
        direct = stats.multivariate_t(np.zeros(m), R, df=nu).logpdf(zt) - stats.t.logpdf(zt, nu).sum()
        got = t_copula_logdensity(TCopulaParams(om, nu), u)
        worst = max(worst, abs(got - direct) / max(1.0, abs(direct)))
    _report(1, worst <= 1e-10, f"max relative error {worst:.2e}")
    assert worst <= 1e-10


def test_criterion_02_spearman():
    rng = np.random.default_rng(2)
    u = simulate_copula_model(GaussianCopula([[1, 0.5], [0.5, 1]]), None, 100_000, rng=rng)
    r_g = stats.spearmanr(u[:, 0], u[:, 1])[0]
    path = simulate_copula_model(ArCopula([0.5], 100_001), None, 1, rng=rng)[0]
    r_ar = stats.spearmanr(path[:-1], path[1:])[0]
    assert spearman_lag([0.5], 1) == pytest.approx(SPEARMAN_R05, abs=1e-12)
    ok = abs(r_g - SPEARMAN_R05) <= 0.01 and abs(r_ar - SPEARMAN_R05) <= 0.01
    _report(2, ok, f"gaussian {r_g:.4f}, ar1 {r_ar:.4f}, target {SPEARMAN_R05:.5f}")
    assert abs(r_g - SPEARMAN_R05) <= 0.01
    assert abs(r_ar - SPEARMAN_R05) <= 0.01


def test_criterion_03_discrete_consistency():
    om = CorrelationMatrix([[1, 0.5], [0.5, 1]])
    margins = [DiscreteCdf.bernoulli(0.5), DiscreteCdf.bernoulli(0.5)]
    # orthant probabilities of a standard bivariate normal with r = 0.5
    p11 = 0.25 + math.asin(0.5) / (2 * math.pi)
    exact = {(1, 1): p11, (0, 0): p11, (0, 1): 0.5 - p11, (1, 0): 0.5 - p11}
    mass_err = 0.0
    for y, pe in exact.items():
        b = discrete_bounds(margins, np.array(y, float))
        got = discrete_mass_by_differencing(lambda c: gaussian_copula_cdf(om, c), b)
        mass_err = max(mass_err, abs(got - pe))
    assert exact[(1, 1)] == pytest.approx(1 / 3, abs=1e-15)

    # DA chains: free sweeps recover cell masses; conditioning on y1 = 1
    # must give P(y2 = 1 | y1 = 1) = 2/3
    rng = np.random.default_rng(3)
    k, sweeps, burn = 4000, 120, 20
    free = DiscreteBounds(np.zeros(2), np.ones(2))
    cond = DiscreteBounds(np.array([0.5, 0.0]), np.ones(2))
    zf = np.zeros((k, 2))
    zc = np.column_stack([np.full(k, 0.1), np.zeros(k)])
    hits_f = np.zeros(2)
    hits_c = 0.0
    for s in range(sweeps):
        zf = gaussian_da_z_step(om, free, zf, rng)
        zc = gaussian_da_z_step(om, cond, zc, rng)
        if s >= burn:
            pos = zf > 0
            hits_f += [np.mean(pos[:, 0] & pos[:, 1]), np.mean(pos[:, 0] & ~pos[:, 1])]
            hits_c += np.mean(zc[:, 1] > 0)
    n = sweeps - burn
    freq_err = max(abs(hits_f[0] / n - exact[(1, 1)]), abs(hits_f[1] / n - exact[(1, 0)]),
                   abs(hits_c / n - 2 / 3))
    ok = mass_err <= 1e-6 and freq_err <= 0.005
    _report(3, ok, f"mass error {mass_err:.1e}, frequency error {freq_err:.4f}")
    assert mass_err <= 1e-6
    assert freq_err <= 0.005


def test_criterion_04_skewt_reductions():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 6))
        R = random_correlation(m, rng) if m > 1 else np.eye(1)
        nu = float(rng.uniform(2.5, 25))
        par = SkewTCopulaParams(CorrelationMatrix(R), np.zeros(m), nu)
        z = rng.standard_normal(m) * 2
        ref = stats.multivariate_t(np.zeros(m), R, df=nu).logpdf(z)
        worst = max(worst, abs(skewt_logpdf(par, z) - ref))

    aug_err = 0.0
    for delta, nu, x in [(1.5, 5.0, 0.7), (-2.0, 8.0, -1.2), (0.8, 3.5, 2.5)]:
        par = SkewTCopulaParams(CorrelationMatrix(np.eye(1)), np.array([delta]), nu)

        def f(q, w):
            return math.exp(skewt_aug_logdensity(par, np.array([x]), np.array([q]), w))

        val, _ = integrate.dblquad(f, 1e-10, 200.0, 1e-10, 80.0, epsabs=1e-10, epsrel=1e-9)
        ref = math.exp(skewt_logpdf(par, np.array([x])))
        aug_err = max(aug_err, abs(val - ref))
    ok = worst <= 1e-10 and aug_err <= 1e-3
    _report(4, ok, f"delta=0 log error {worst:.1e}, augmentation error {aug_err:.1e}")
    assert worst <= 1e-10
    assert aug_err <= 1e-3


def _random_ucsv(rng):
    while True:
        rm, rz = rng.uniform(0.0, 0.97, 2)
        s2m = rng.uniform(0.01, 0.9) * (1 - rm ** 2)
        s2z = rng.uniform(0.01, 0.5) * (1 - rz ** 2)
        par = UcsvParams(float(rm), float(s2m), float(rz), float(s2z))
        try:
            ucsv_validate(par)
            return par
        except ValueError:
            continue


def test_criterion_05_ucsv_identification():
    rng = np.random.default_rng(5)
    var_err = 0.0
    for _ in range(20):
        par = _random_ucsv(rng)
        z, _ = ucsv_simulate_z(par, 1, rng, n=1_000_000)
        var_err = max(var_err, abs(np.var(z) - 1.0))
    par = UcsvParams(0.95, 0.05, 0.9, 0.2)
    table = ucsv_margin(par)
    z, _ = ucsv_simulate_z(par, 1, rng, n=1_000_000)
    z = np.sort(np.ravel(z))
    ecdf_hi = np.arange(1, z.size + 1) / z.size
    F = table.cdf(z)
    sup = max(np.max(np.abs(F - ecdf_hi)), np.max(np.abs(F - (ecdf_hi - 1 / z.size))))
    ok = var_err <= 0.01 and sup <= 0.005
    _report(5, ok, f"max |Var-1| {var_err:.4f}, sup distance {sup:.4f}")
    assert var_err <= 0.01
    assert sup <= 0.005


@pytest.mark.slow
def test_criterion_06_ucsv_calibration():
    cover = np.sum([ucsv_replicate(seed) for seed in range(20)], axis=0)
    ok = bool(np.all(cover >= 15))
    _report(6, ok, f"UCSV coverage per parameter {cover.tolist()} of 20")
    assert np.all(cover >= 15)


@pytest.mark.slow
def test_criterion_06_regression_calibration():
    res = [regression_replicate(1000 + seed) for seed in range(20)]
    cover = np.sum([r[0] for r in res], axis=0)
    names = res[0][1]
    beta_cover = cover[:5]
    ok = bool(np.all(beta_cover >= 16))
    _report(6, ok, "regression coverage " + ", ".join(f"{n}={c}" for n, c in zip(names, cover)))
    assert np.all(beta_cover >= 16)


def test_criterion_07_regression_algebra():
    rng = np.random.default_rng(7)
    wood = 0.0
    for _ in range(20):
        n, p = int(rng.integers(5, 60)), int(rng.integers(1, 6))
        B = rng.standard_normal((n, p))
        lam = rng.uniform(0.05, 2.0, p)
        wood = max(wood, np.max(np.abs(reg_correlation(B, lam).values
                                       - reg_correlation(B, lam, "woodbury").values)))

    marg = 0.0
    for trial in range(6):
        n, p = int(rng.integers(10, 51)), 1 + trial % 2
        B = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        data = RegressionData(B, y, NormalMargin(), standardize=False)
        lam = rng.uniform(0.2, 1.0, p)
        R = reg_correlation(data.X, lam)
        target = gaussian_copula_logdensity(R, special.ndtr(y)) + data.log_g.sum()
        # integrate relative to the value at the conditional mode for stability
        s = 1 / np.sqrt(1 + (data.X ** 2) @ lam ** 2)
        prec = data.X.T @ data.X + np.diag(1 / lam ** 2)
        mode = np.linalg.solve(prec, data.X.T @ (data.z / s))
        sd = np.sqrt(np.diag(np.linalg.inv(prec)))
        ref = reg_conditional_loglik(data, mode, lam)

        def integrand(*b):
            b = np.array(b[::-1])
            lp = stats.norm.logpdf(b, 0, lam).sum()
            return math.exp(reg_conditional_loglik(data, b, lam) + lp - ref)

        lims = [(mode[j] - 12 * sd[j], mode[j] + 12 * sd[j]) for j in range(p)]
        if p == 1:
            val = integrate.quad(integrand, *lims[0], epsabs=0, epsrel=1e-11)[0]
        else:
            val = integrate.dblquad(integrand, *lims[0], *lims[1], epsabs=0, epsrel=1e-10)[0]
        marg = max(marg, abs(math.log(val) + ref - target))

    B = rng.standard_normal((150, 3))
    y = simulate_regression_data(B, np.array([0.5, 0.0, -0.3]), rng)
    mg = NormalMargin()
    chain = reg_mcmc_fit(RegressionData(B, y, mg), 3000, rng)
    integ = 0.0
    for x in (B[0], np.zeros(3), np.array([2.0, -1.0, 1.5])):
        out = reg_predict_density(x, chain, mg)
        for key in ("bayes", "point"):
            integ = max(integ, abs(np.trapezoid(out[key], out["y"]) - 1.0))
    ok = wood <= 1e-9 and marg <= 1e-6 and integ <= 1e-2
    _report(7, ok, f"woodbury {wood:.1e}, marginalization {marg:.1e}, integral {integ:.1e}")
    assert wood <= 1e-9
    assert marg <= 1e-6
    assert integ <= 1e-2


def test_criterion_08_regression_runtime():
    rng = np.random.default_rng(8)
    B = rng.standard_normal((580, 5))
    y = simulate_regression_data(B, np.array([0.4, -0.2, 0.1, 0.0, 0.0]), rng)
    data = RegressionData(B, y, NormalMargin())
    t0 = time.perf_counter()
    chain = reg_mcmc_fit(data, 10_000, rng)
    secs = time.perf_counter() - t0
    _report(8, secs < 300, f"{secs:.1f} s for 10^4 iterations")
    assert len(chain) == 8000
    assert secs < 300


def test_criterion_09_interpolation_tables():
    nm = NormalMargin()
    t = build_interp_table(nm.cdf, nm.logpdf, 100, quantile_fn=nm.quantile)
    p = np.linspace(0.001, 0.999, 20_001)
    q_err = float(np.max(np.abs(t.quantile(p) - special.ndtri(p))))
    pp = np.linspace(1e-4, 1 - 1e-4, 5001)
    trip = 0.0
    mono = True
    tables = [skewt_marginal_table(d, nu, 100) for d, nu in [(0.0, 5.0), (1.5, 4.0), (-2.0, 10.0),
                                                              (3.0, 30.0)]]
    tables += [ucsv_margin(UcsvParams(0.95, 0.05, 0.9, 0.2)),
               ucsv_margin(UcsvParams(0.5, 0.3, 0.98, 0.03))]
    for tb in tables:
        q = tb.quantile(pp)
        mono &= bool(np.all(np.diff(q) > 0)) and bool(np.all(np.diff(tb.cdf(q)) >= 0))
        trip = max(trip, float(np.max(np.abs(tb.cdf(q) - pp))))
    ok = q_err <= 1e-3 and mono and trip <= 1e-4
    _report(9, ok, f"normal quantile error {q_err:.1e}, round trip {trip:.1e}, monotone {mono}")
    assert q_err <= 1e-3
    assert mono
    assert trip <= 1e-4


def _ks_models(rng):
    R = random_correlation(3, rng)
    yield "gaussian", GaussianCopula(R), 20_000
    yield "t", TCopula(R, 4.0), 20_000
    yield "skew-t", SkewTCopula(SkewTCopulaParams(CorrelationMatrix(R), np.array([1.0, -0.5, 2.0]),
                                                  6.0)), 20_000
    yield "factor", FactorCopula(FactorParams(np.array([[0.8, 0.0], [0.5, 0.4], [0.3, 0.6],
                                                        [-0.2, 0.7]]), np.full(4, 0.5))), 20_000
    yield "ar", ArCopula([0.6, 0.2], 50), 5000
    yield "var", VarCopula(VarCopulaParams([[[0.5, 0.1], [-0.2, 0.4]]], [[1, 0.3], [0.3, 1]]), 25), 5000
    yield "ucsv", UcsvCopula(UcsvParams(0.9, 0.1, 0.95, 0.05), 50), 5000
    yield "regression", RegressionCopula(rng.standard_normal((30, 3)), [0.8, 0.3, 1.5]), 5000


def test_criterion_10_ks_uniform_margins():
    rng = np.random.default_rng(10)
    worst = ("", 1.0)
    for name, model, n in _ks_models(rng):
        u = simulate_copula_model(model, None, n, rng=rng)
        cols = {0, u.shape[1] - 1}
        for j in cols:
            pv = stats.kstest(u[:, j], "uniform").pvalue
            if pv < worst[1]:
                worst = (f"{name}[{j}]", pv)
    ok = worst[1] >= 0.01
    _report(10, ok, f"smallest KS p-value {worst[1]:.3f} at {worst[0]}")
    assert worst[1] >= 0.01
