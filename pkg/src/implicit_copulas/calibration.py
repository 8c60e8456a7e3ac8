"""Seeded calibration replicates: simulate from known parameters, refit, check coverage."""

from __future__ import annotations

import numpy as np

from .copula_core import CorrelationMatrix, simulate_copula_model
from .margins import NormalMargin
from .regression import RegressionData, reg_mcmc_fit, simulate_regression_data
from .skewt import SkewTCopula, SkewTCopulaParams, skewt_mcmc_fit
from .timeseries.ucsv import (PARAM_NAMES, UcsvMarginal, UcsvParams, ucsv_mcmc_fit,
                              ucsv_simulate_z)

UCSV_TRUTH = UcsvParams(0.95, 0.05, 0.9, 0.2)


def interval_covers(draws, truth, level=0.9):
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(np.asarray(draws, float), [a, 1.0 - a], axis=0)
    truth = np.asarray(truth, float)
    return (lo <= truth) & (truth <= hi)


def ucsv_replicate(seed: int, T: int = 300, iters: int = 10_000, truth: UcsvParams = UCSV_TRUTH):
    """Coverage of each UCSV parameter by its 90% interval for one synthetic series."""
    rng = np.random.default_rng(seed)
    z, _ = ucsv_simulate_z(truth, T, rng)
    u = np.clip(UcsvMarginal(truth).cdf(z), 1e-12, 1 - 1e-12)
    chain = ucsv_mcmc_fit(u, iters, rng, seed=seed)
    draws = np.column_stack([chain[k] for k in PARAM_NAMES])
    return interval_covers(draws, truth.as_tuple())


def horseshoe_prior_draw(p: int, rng):
    """``tau ~ C+(0,1)``, ``lambda_j ~ C+(0,tau)``, ``beta_j ~ N(0, lambda_j^2)``."""
    tau = abs(rng.standard_cauchy())
    lam = tau * np.abs(rng.standard_cauchy(p))
    return rng.standard_normal(p) * lam, lam, tau


def regression_replicate(seed: int, n: int = 200, p: int = 5, iters: int = 10_000):
    """Coverage of ``(beta, lambda, tau)`` drawn from the prior, for one synthetic dataset.

    Covariates are standard normal and already standardized, so the fitted
    scale matches the generating one up to sampling error in the column sds.
    """
    rng = np.random.default_rng(seed)
    beta, lam, tau = horseshoe_prior_draw(p, rng)
    B = rng.standard_normal((n, p))
    B = (B - B.mean(axis=0)) / B.std(axis=0)
    y = simulate_regression_data(B, beta, rng, lam=lam)
    data = RegressionData(B, y, NormalMargin())
    chain = reg_mcmc_fit(data, iters, rng, seed=seed)
    truth = np.concatenate([beta, lam, [tau]])
    return interval_covers(chain.draws, truth), chain.names


def regression_fixed_replicate(seed: int, beta=(0.2, -0.05, 0.05, 0.0, 0.0), n: int = 200,
                               iters: int = 10_000):
    """Posterior means for a fixed sparse coefficient vector (shrinkage check)."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, float)
    B = rng.standard_normal((n, beta.size))
    B = (B - B.mean(axis=0)) / B.std(axis=0)
    y = simulate_regression_data(B, beta, rng)
    chain = reg_mcmc_fit(RegressionData(B, y, NormalMargin()), iters, rng, seed=seed)
    draws = chain.columns("beta")
    return draws.mean(axis=0), interval_covers(draws, beta)


SKEWT_TRUTH = (0.5, (1.0, -1.0), 6.0)


def skewt_replicate(seed: int, n: int = 300, iters: int = 3000, truth=SKEWT_TRUTH):
    """Coverage of ``(gamma_12, delta_1, delta_2, nu)`` for one bivariate skew-t sample."""
    r, delta, nu = truth
    params = SkewTCopulaParams(CorrelationMatrix([[1.0, r], [r, 1.0]]), delta, nu)
    rng = np.random.default_rng(seed)
    u = simulate_copula_model(SkewTCopula(params), None, n, rng=rng)
    chain = skewt_mcmc_fit(u, iters=iters, rng=rng)
    names = ["gamma_1_2", "delta_1", "delta_2", "nu"]
    draws = np.column_stack([chain[k] for k in names])
    return interval_covers(draws, [r, *delta, nu])
