"""Unobserved-components stochastic-volatility (UCSV) copula process.

``Z_t | mu_t, zeta_t ~ N(mu_t, exp(zeta_t))`` with stationary AR(1) states
``mu_t`` (mean 0) and ``zeta_t`` (mean ``zeta_bar``). ``zeta_bar`` is pinned
so that ``Var(Z_t) = 1``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import special

from ..copula_core import CopulaModel
from ..errors import DomainError, MatrixError, NumericError, RunError
from ..margins import InterpTable, build_interp_table, solve_quantile
from ..mcmc import (BandedPrecision, ChainRecorder, MHState, ProposalScale, RunningMoments,
                    adaptive_rw_mh, ar1_precision, banded_cholesky, banded_gaussian_draw,
                    banded_gaussian_logpdf,
                    banded_gaussian_mean, banded_gaussian_sample, default_burn_in, make_rng)

_LOG_2PI = math.log(2.0 * math.pi)
SIGMA2_ZETA_CAP = 10.0
SIGMA2_FLOOR = 1e-8
PARAM_NAMES = ("rho_mu", "sigma2_mu", "rho_zeta", "sigma2_zeta")


class UcsvDerived(NamedTuple):
    s2_mu: float
    s2_zeta: float
    zeta_bar: float


@dataclass(frozen=True)
class UcsvParams:
    rho_mu: float
    sigma2_mu: float
    rho_zeta: float
    sigma2_zeta: float

    def as_tuple(self):
        return (self.rho_mu, self.sigma2_mu, self.rho_zeta, self.sigma2_zeta)

    def to_dict(self):
        return dict(zip(PARAM_NAMES, map(float, self.as_tuple())))

    @classmethod
    def from_dict(cls, d):
        return cls(*(float(d[k]) for k in PARAM_NAMES))


def ucsv_validate(params: UcsvParams) -> UcsvDerived:
    """Check the identification constraints and return ``(s2_mu, s2_zeta, zeta_bar)``."""
    rm, s2m, rz, s2z = params.as_tuple()
    if not all(np.isfinite(v) for v in params.as_tuple()):
        raise DomainError("UCSV parameters must be finite")
    if not -1 < rm < 1:
        raise DomainError("|rho_mu| < 1 is violated")
    if not -1 < rz < 1:
        raise DomainError("|rho_zeta| < 1 is violated")
    if not s2m > 0:
        raise DomainError("sigma2_mu > 0 is violated")
    if not s2z > 0:
        raise DomainError("sigma2_zeta > 0 is violated")
    if not s2m < 1 - rm * rm:
        raise DomainError("sigma2_mu < 1 - rho_mu^2 is violated (zeta_bar would be -inf)")
    s_mu = s2m / (1 - rm * rm)
    s_zeta = s2z / (1 - rz * rz)
    return UcsvDerived(s_mu, s_zeta, math.log1p(-s_mu) - 0.5 * s_zeta)


class StatePaths(NamedTuple):
    mu: np.ndarray
    zeta: np.ndarray


# --------------------------------------------------------------------------
# Stationary margin F_Z by Gauss-Hermite over zeta
# --------------------------------------------------------------------------

class UcsvMarginal:
    """``f_Z(z) = int N(z; 0, s2_mu + e^zeta) N(zeta; zeta_bar, s2_zeta) dzeta``."""

    def __init__(self, params: UcsvParams, n_quad: int = 50):
        der = ucsv_validate(params)
        x, w = special.roots_hermite(n_quad)
        keep = w > 1e-300
        zeta = der.zeta_bar + math.sqrt(2.0 * der.s2_zeta) * x[keep]
        self.var = der.s2_mu + np.exp(zeta)
        self.sd = np.sqrt(self.var)
        self.logw = np.log(w[keep] / math.sqrt(math.pi))
        sig = w[keep] > 1e-14
        self._sd_lo, self._sd_hi = float(self.sd[sig].min()), float(self.sd[sig].max())

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        zz = z.reshape(-1, 1)
        terms = self.logw - 0.5 * (_LOG_2PI + np.log(self.var)) - 0.5 * zz * zz / self.var
        return special.logsumexp(terms, axis=1).reshape(z.shape)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        out = special.ndtr(z.reshape(-1, 1) / self.sd) @ np.exp(self.logw)
        return np.clip(out, 0.0, 1.0).reshape(z.shape)

    def quantile(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        zq = special.ndtri(p)
        # a scale mixture's quantile lies between the extreme component quantiles
        lo = np.minimum(zq * self._sd_lo, zq * self._sd_hi) - 1e-9
        hi = np.maximum(zq * self._sd_lo, zq * self._sd_hi) + 1e-9
        return solve_quantile(self.cdf, self.pdf, p, x0=zq, lo=lo - 1e-3 * (hi - lo),
                              hi=hi + 1e-3 * (hi - lo))


@lru_cache(maxsize=64)
def _cached_margin(key, N, n_quad):
    m = UcsvMarginal(UcsvParams(*key), n_quad)
    return build_interp_table(m.cdf, m.logpdf, N, quantile_fn=m.quantile)


def ucsv_margin(params: UcsvParams, N_table: int = 100, n_quad: int = 50) -> InterpTable:
    """Interpolation table of the stationary margin F_Z."""
    try:
        return _cached_margin(params.as_tuple(), int(N_table), int(n_quad))
    except NumericError as exc:
        raise NumericError(f"UCSV margin quadrature failed: {exc}") from None


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

def ucsv_simulate_z(params: UcsvParams, T: int, rng, n: int | None = None):
    """Stationary path(s) ``z`` of length ``T`` and their latent states."""
    der = ucsv_validate(params)
    k = 1 if n is None else n
    mu = np.empty((k, T))
    zeta = np.empty((k, T))
    mu[:, 0] = math.sqrt(der.s2_mu) * rng.standard_normal(k)
    zeta[:, 0] = der.zeta_bar + math.sqrt(der.s2_zeta) * rng.standard_normal(k)
    e_mu = math.sqrt(params.sigma2_mu) * rng.standard_normal((k, T))
    e_zeta = math.sqrt(params.sigma2_zeta) * rng.standard_normal((k, T))
    for t in range(1, T):
        mu[:, t] = params.rho_mu * mu[:, t - 1] + e_mu[:, t]
        zeta[:, t] = der.zeta_bar + params.rho_zeta * (zeta[:, t - 1] - der.zeta_bar) + e_zeta[:, t]
    z = mu + np.exp(0.5 * zeta) * rng.standard_normal((k, T))
    if n is None:
        return z[0], StatePaths(mu[0], zeta[0])
    return z, StatePaths(mu, zeta)


class UcsvCopula(CopulaModel):
    family = "ucsv"

    def __init__(self, params: UcsvParams, length: int = 1, n_quad: int = 50):
        ucsv_validate(params)
        self.params = params
        self.length = int(length)
        self.marginal = UcsvMarginal(params, n_quad)

    @property
    def dim(self):
        return self.length

    def simulate_z(self, n, rng):
        return ucsv_simulate_z(self.params, self.length, rng, n=n)[0]

    def aux_cdf(self, z):
        return self.marginal.cdf(z)

    def to_dict(self):
        return {"family": self.family, **self.params.to_dict(), "length": self.length}

    @classmethod
    def from_dict(cls, d):
        return cls(UcsvParams.from_dict(d), d.get("length", 1))


# --------------------------------------------------------------------------
# Bivariate copula density by nested Gauss-Hermite
# --------------------------------------------------------------------------

def ucsv_bivariate_density_grid(params: UcsvParams, grid_n: int, n_quad: int = 50,
                                lag: int = 1):
    """``c(u1, u2)`` of ``(U_t, U_{t+lag})`` on the midpoint lattice of (0,1)^2.

    The level states are integrated analytically (the pair is Gaussian given
    the log-variances); the two log-variances by nested Gauss-Hermite using
    the AR(1) conditional of ``zeta_2`` given ``zeta_1``.
    """
    if grid_n < 2:
        raise DomainError("grid_n must be at least 2")
    der = ucsv_validate(params)
    marg = UcsvMarginal(params, n_quad)
    u = (np.arange(grid_n) + 0.5) / grid_n
    z = marg.quantile(u)
    logf1 = marg.logpdf(z)

    x, w = special.roots_hermite(n_quad)
    keep = w > 1e-300
    x, logw = x[keep], np.log(w[keep] / math.sqrt(math.pi))
    rz_h = params.rho_zeta ** lag
    rm_h = params.rho_mu ** lag
    zeta1 = der.zeta_bar + math.sqrt(2 * der.s2_zeta) * x
    cond_sd = math.sqrt(der.s2_zeta * (1 - rz_h * rz_h))
    zeta2 = der.zeta_bar + rz_h * (zeta1[:, None] - der.zeta_bar) + math.sqrt(2) * cond_sd * x[None, :]
    a = (der.s2_mu + np.exp(zeta1))[:, None] * np.ones_like(zeta2)
    b = der.s2_mu + np.exp(zeta2)
    c = rm_h * der.s2_mu
    det = (a * b - c * c).ravel()
    a, b = a.ravel(), b.ravel()
    lw = (logw[:, None] + logw[None, :]).ravel()
    base = lw - _LOG_2PI - 0.5 * np.log(det)

    Z1, Z2 = np.meshgrid(z, z, indexing="ij")
    z1, z2 = Z1.ravel(), Z2.ravel()
    logf12 = np.empty(z1.size)
    step = max(1, 2_000_000 // det.size)
    for s in range(0, z1.size, step):
        p1, p2 = z1[s:s + step, None], z2[s:s + step, None]
        quad = (b * p1 * p1 - 2 * c * p1 * p2 + a * p2 * p2) / det
        logf12[s:s + step] = special.logsumexp(base - 0.5 * quad, axis=1)
    U1, U2 = np.meshgrid(u, u, indexing="ij")
    L1, L2 = np.meshgrid(logf1, logf1, indexing="ij")
    log_c = logf12 - L1.ravel() - L2.ravel()
    if not np.all(np.isfinite(log_c)):
        raise NumericError("bivariate density quadrature produced non-finite values")
    return {"u1": U1.ravel(), "u2": U2.ravel(), "c": np.exp(log_c), "log_c": log_c}


# --------------------------------------------------------------------------
# MCMC
# --------------------------------------------------------------------------

def _ar1_logpdf(x, rho, sigma2, mean=0.0):
    """Log density of a stationary AR(1) path."""
    d = np.asarray(x) - mean
    T = d.size
    quad = (1 - rho * rho) * d[0] ** 2 + float(np.sum((d[1:] - rho * d[:-1]) ** 2))
    return -0.5 * (T * (_LOG_2PI + math.log(sigma2)) - math.log(1 - rho * rho) + quad / sigma2)


def _add_diag(prec: BandedPrecision, diag):
    bands = prec.bands.copy()
    bands[0] += diag
    return BandedPrecision(bands)


def draw_mu(z, zeta, params: UcsvParams, rng, return_mean=False):
    """Exact Gaussian conditional of the level path given log-variances."""
    Q = ar1_precision(z.size, params.rho_mu, params.sigma2_mu)
    iv = np.exp(-zeta)
    prec = _add_diag(Q, iv)
    return banded_gaussian_sample(prec, z * iv, rng, return_mean=return_mean)


def _zeta_logcond(zeta, e2, Q: BandedPrecision, zbar, lin):
    d = zeta - zbar
    return float(np.sum(-0.5 * zeta - 0.5 * e2 * np.exp(-zeta)) - 0.5 * d @ Q.matvec(d) - lin @ d)


def _zeta_mode(zeta0, e2, Q: BandedPrecision, zbar, lin, max_iter=100):
    x = zeta0.copy()
    f = _zeta_logcond(x, e2, Q, zbar, lin)
    for _ in range(max_iter):
        k = 0.5 * e2 * np.exp(-x)
        grad = -0.5 + k - Q.matvec(x - zbar) - lin
        fac = banded_cholesky(_add_diag(Q, k))
        step = banded_gaussian_mean(fac, grad)
        t = 1.0
        while True:
            xn = x + t * step
            fn = _zeta_logcond(xn, e2, Q, zbar, lin)
            if fn >= f - 1e-10 or t < 1e-8:
                break
            t *= 0.5
        x, f_old, f = xn, f, fn
        if np.max(np.abs(t * step)) < 1e-8 or abs(f - f_old) < 1e-12 * (1 + abs(f)):
            break
    k = 0.5 * e2 * np.exp(-x)
    return x, banded_cholesky(_add_diag(Q, k))


def draw_zeta_block(zeta, e2, Q: BandedPrecision, zbar, lin, rng):
    """Independence MH for a log-variance block from its Laplace approximation.

    ``lin`` carries the prior coupling to states outside the block.
    Returns ``(zeta, accepted)``.
    """
    mode, fac = _zeta_mode(zeta, e2, Q, zbar, lin)
    prop = banded_gaussian_draw(mode, fac, rng)
    log_a = (_zeta_logcond(prop, e2, Q, zbar, lin) - _zeta_logcond(zeta, e2, Q, zbar, lin)
             + banded_gaussian_logpdf(zeta, mode, fac) - banded_gaussian_logpdf(prop, mode, fac))
    if np.log(rng.random()) < log_a:
        return prop, True
    return zeta, False


def draw_zeta(zeta, z, mu, params: UcsvParams, zbar, rng, block=None):
    """Sweep the log-variance path in blocks; returns ``(zeta, n_accepted, n_blocks)``."""
    T = zeta.size
    e2 = (z - mu) ** 2 + 1e-300
    Qfull = ar1_precision(T, params.rho_zeta, params.sigma2_zeta)
    if block is None or block >= T:
        new, acc = draw_zeta_block(zeta, e2, Qfull, zbar, np.zeros(T), rng)
        return new, int(acc), 1
    zeta = zeta.copy()
    start = int(rng.integers(0, block))
    cuts = [0] + list(range(start if start > 0 else block, T, block)) + [T]
    cuts = sorted(set(cuts))
    n_acc = 0
    off = -params.rho_zeta / params.sigma2_zeta
    for a, b in zip(cuts[:-1], cuts[1:]):
        bands = Qfull.bands[:, a:b].copy()
        bands[1, b - a - 1:] = 0.0
        Q = BandedPrecision(bands)
        lin = np.zeros(b - a)
        if a > 0:
            lin[0] += off * (zeta[a - 1] - zbar)
        if b < T:
            lin[-1] += off * (zeta[b] - zbar)
        new, acc = draw_zeta_block(zeta[a:b], e2[a:b], Q, zbar, lin, rng)
        zeta[a:b] = new
        n_acc += int(acc)
    return zeta, n_acc, len(cuts) - 1


def _to_work(params: UcsvParams):
    return np.array([math.atanh(params.rho_mu), math.log(params.sigma2_mu),
                     math.atanh(params.rho_zeta), math.log(params.sigma2_zeta)])


def _from_work(w):
    return UcsvParams(math.tanh(w[0]), math.exp(w[1]), math.tanh(w[2]), math.exp(w[3]))


def _in_region(p: UcsvParams) -> bool:
    return (abs(p.rho_mu) < 1 and abs(p.rho_zeta) < 1 and SIGMA2_FLOOR <= p.sigma2_mu
            < 1 - p.rho_mu ** 2 and SIGMA2_FLOOR <= p.sigma2_zeta <= SIGMA2_ZETA_CAP)


def _log_prior_work(w, p: UcsvParams):
    # 1/(s2_mu s2_zeta) is flat in log variance; uniform rho gives a (1 - rho^2) Jacobian
    return math.log1p(-p.rho_mu ** 2) + math.log1p(-p.rho_zeta ** 2)


@dataclass
class UcsvSamplerConfig:
    N_table: int = 100
    n_quad: int = 50
    zeta_block: int | None = 50
    state_thin: int | None = None
    adapt_start: int | None = None


def ucsv_mcmc_fit(u_data, iters: int = 1000, rng=None, burn_in: int | None = None,
                  init: UcsvParams | None = None, config: UcsvSamplerConfig | None = None,
                  seed=None, progress=None):
    """State-space copula sampler for the UCSV copula.

    Each sweep: recompute ``z`` from the current margin table; draw the
    level path exactly from its band-one Gaussian conditional; update the
    log-variance path by Laplace-proposal independence MH in blocks; then a
    joint random-walk MH step on the transformed parameters whose target
    includes the ``-sum log f_Z(z_t)`` Jacobian term.
    """
    cfg = config or UcsvSamplerConfig()
    rng = make_rng(seed) if rng is None else rng
    u = np.asarray(u_data, dtype=float).ravel()
    T = u.size
    if T < 30:
        raise DomainError("UCSV fitting needs at least 30 observations")
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("copula data must lie strictly inside (0, 1)")
    burn_in = default_burn_in(iters) if burn_in is None else burn_in
    thin = cfg.state_thin or max(1, (iters - burn_in) // 500)
    adapt_start = cfg.adapt_start if cfg.adapt_start is not None else burn_in // 2

    params = init or UcsvParams(0.8, 0.05, 0.8, 0.1)
    ucsv_validate(params)
    rec = ChainRecorder(list(PARAM_NAMES), iters, burn_in)

    def margin_state(p):
        tab = ucsv_margin(p, cfg.N_table, cfg.n_quad)
        zz = np.asarray(tab.quantile(u), dtype=float)
        return zz, float(np.sum(tab.logpdf(zz)))

    z, sum_logf = margin_state(params)
    der = ucsv_validate(params)
    mu = np.zeros(T)
    zeta = np.full(T, der.zeta_bar)

    def logpost(p, zz, slf):
        d = ucsv_validate(p)
        ll = float(np.sum(-0.5 * (_LOG_2PI + zeta) - 0.5 * (zz - mu) ** 2 * np.exp(-zeta)))
        return (ll - slf + _ar1_logpdf(mu, p.rho_mu, p.sigma2_mu)
                + _ar1_logpdf(zeta, p.rho_zeta, p.sigma2_zeta, d.zeta_bar))

    scale = ProposalScale.for_dim(4, 0.05)
    moments = RunningMoments(4)
    work = _to_work(params)
    keep_mu, keep_zeta = [], []
    t_start = time.perf_counter()

    for it in range(iters):
        if it == burn_in:
            scale = scale.frozen()
        if it == adapt_start and moments.n > 20:
            scale = ProposalScale.for_dim(4, 2.38 / 2.0).with_shape(moments.cov)
        try:
            mu = draw_mu(z, zeta, params, rng)
            zeta, n_acc, n_blk = draw_zeta(zeta, z, mu, params, der.zeta_bar, rng, cfg.zeta_block)
        except MatrixError as exc:
            raise RunError(f"state update failed: {exc}", iteration=it,
                           state={"theta": params.to_dict()}) from None
        for _ in range(n_acc):
            rec.count("zeta", True)
        for _ in range(n_blk - n_acc):
            rec.count("zeta", False)

        cache = {}

        def lp_work(w):
            p = _from_work(w)
            if not _in_region(p):
                return -np.inf
            try:
                zz, slf = margin_state(p)
            except NumericError:
                return -np.inf
            cache[tuple(w)] = (p, zz, slf)
            return logpost(p, zz, slf) + _log_prior_work(w, p)

        cur = logpost(params, z, sum_logf) + _log_prior_work(work, params)
        if not np.isfinite(cur):
            raise RunError("non-finite log posterior", iteration=it,
                           state={"theta": params.to_dict(), "mu": mu.tolist(),
                                  "zeta": zeta.tolist()})
        st, acc, scale = adaptive_rw_mh(lp_work, MHState(work, cur), scale, rng)
        if acc:
            work = st.x
            params, z, sum_logf = cache[tuple(work)]
            der = ucsv_validate(params)
        rec.count("theta", acc)
        if it < burn_in:
            moments.push(work)
        rec.record(it, params.as_tuple())
        if it >= burn_in and (it - burn_in) % thin == 0:
            keep_mu.append(mu.copy())
            keep_zeta.append(zeta.copy())
        if progress is not None:
            progress(it)

    latents = {}
    if keep_mu:
        latents = {"mu": np.array(keep_mu), "zeta": np.array(keep_zeta)}
    return rec.finish(latents=latents, blocks={k: "theta" for k in PARAM_NAMES}, seed=seed,
                      meta={"family": "ucsv", "state_thin": thin, "N_table": cfg.N_table,
                            "n_quad": cfg.n_quad, "zeta_block": cfg.zeta_block,
                            "seconds": time.perf_counter() - t_start})


def state_summary(chain) -> dict:
    """Posterior mean and 5%/95% quantiles of the thinned state paths."""
    out = {}
    for key in ("mu", "zeta"):
        draws = chain.latents.get(key)
        if draws is None or len(draws) == 0:
            continue
        q05, q95 = np.quantile(draws, [0.05, 0.95], axis=0)
        out[key] = {"mean": draws.mean(axis=0).tolist(), "q05": q05.tolist(),
                    "q95": q95.tolist()}
    return out
