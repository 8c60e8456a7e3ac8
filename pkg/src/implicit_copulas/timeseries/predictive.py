"""One-step-ahead predictive densities of time-series copula processes."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..errors import DomainError
from ..margins import P_CLAMP
from ..mcmc import make_rng
from .ar import ArCopula, ar_conditional_logdensity
from .ucsv import UcsvCopula, UcsvMarginal, ucsv_validate
from .var import VarCopula, var_conditional_mean

N_PARTICLES = 2000
_LOG_2PI = math.log(2.0 * math.pi)


def _u_of(margin, y):
    return np.clip(margin.cdf(y), P_CLAMP, 1 - P_CLAMP)


def ucsv_filter_predictive(params, u_history, z_next, n_particles=N_PARTICLES, rng=None,
                           n_quad=50):
    """Bootstrap particle filter estimate of ``f(z_{T+1} | z_{1:T})`` at ``z_next``."""
    rng = make_rng(0) if rng is None else rng
    der = ucsv_validate(params)
    marg = UcsvMarginal(params, n_quad)
    z = marg.quantile(np.clip(np.asarray(u_history, float), P_CLAMP, 1 - P_CLAMP))
    n = n_particles
    mu = math.sqrt(der.s2_mu) * rng.standard_normal(n)
    zeta = der.zeta_bar + math.sqrt(der.s2_zeta) * rng.standard_normal(n)
    sm, sz = math.sqrt(params.sigma2_mu), math.sqrt(params.sigma2_zeta)
    for t, zt in enumerate(z):
        if t > 0:
            mu = params.rho_mu * mu + sm * rng.standard_normal(n)
            zeta = der.zeta_bar + params.rho_zeta * (zeta - der.zeta_bar) + sz * rng.standard_normal(n)
        logw = -0.5 * zeta - 0.5 * (zt - mu) ** 2 * np.exp(-zeta)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        # systematic resampling
        pos = (rng.random() + np.arange(n)) / n
        idx = np.minimum(np.searchsorted(np.cumsum(w), pos), n - 1)
        mu, zeta = mu[idx], zeta[idx]
    mu = params.rho_mu * mu + sm * rng.standard_normal(n)
    zeta = der.zeta_bar + params.rho_zeta * (zeta - der.zeta_bar) + sz * rng.standard_normal(n)
    zn = np.asarray(z_next, dtype=float).reshape(-1, 1)
    dens = np.exp(-0.5 * (_LOG_2PI + zeta) - 0.5 * (zn - mu) ** 2 * np.exp(-zeta))
    return dens.mean(axis=1), marg


def ts_predictive_density(model, u_history, margin, y_grid, rng=None,
                          n_particles: int = N_PARTICLES):
    """``f(z_{T+1} | past) g(y) / f_Z(z)`` on ``y_grid`` with ``z = F_Z^-1(G(y))``.

    For a VAR model ``margin`` is a list (one per series) and the result has
    one row per series, each the marginal one-step predictive of that series.
    """
    hist = np.asarray(u_history, dtype=float)
    if hist.size == 0:
        raise DomainError("predictive density needs a non-empty history")
    y = np.asarray(y_grid, dtype=float)
    if isinstance(model, ArCopula):
        u = _u_of(margin, y)
        return np.exp(ar_conditional_logdensity(model.params, hist, u) + margin.logpdf(y))
    if isinstance(model, VarCopula):
        par = model.params
        mean = var_conditional_mean(par, special.ndtri(np.atleast_2d(hist)))
        out = []
        for j, mg in enumerate(margin):
            yj = y[j] if y.ndim == 2 else y
            z = special.ndtri(_u_of(mg, yj))
            s2 = par.sigma[j, j]
            log_cond = -0.5 * (_LOG_2PI + math.log(s2)) - 0.5 * (z - mean[j]) ** 2 / s2
            out.append(np.exp(log_cond + 0.5 * (_LOG_2PI + z * z) + mg.logpdf(yj)))
        return np.array(out)
    if isinstance(model, UcsvCopula):
        rng = make_rng(0) if rng is None else rng
        marg = model.marginal
        z = marg.quantile(_u_of(margin, y))
        f_pred, _ = ucsv_filter_predictive(model.params, hist, z, n_particles, rng)
        return f_pred * np.exp(margin.logpdf(y) - marg.logpdf(z))
    raise DomainError(f"no predictive density for family {getattr(model, 'family', model)!r}")
