"""Skew-t copula built by hidden conditioning on a positive latent vector.

``X | q, w ~ N(Dq, Gamma/w)``, ``q | w ~ N(0, I/w)`` restricted to ``q > 0``
and ``w ~ Gamma(nu/2, nu/2)``. Marginalizing ``(q, w)`` gives a skew t whose
univariate margins are available in closed form.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .copula_core import CopulaModel, CorrelationMatrix, mvt_logpdf
from .errors import DomainError, MatrixError, RunError
from .margins import InterpTable, SkewTMargin, build_interp_table, sahu_skewt_logpdf
from .mcmc import (ChainRecorder, MHState, ProposalScale, adaptive_rw_mh, default_burn_in,
                   make_rng, truncated_normal)

_LOG_2PI = math.log(2.0 * math.pi)
MCMC_TABLE_N = 400


@dataclass(frozen=True)
class SkewTCopulaParams:
    gamma: CorrelationMatrix
    delta: np.ndarray
    nu: float

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if d.size != self.gamma.dim:
            raise DomainError("delta must have one entry per dimension")
        if not self.nu > 0:
            raise DomainError("skew-t degrees of freedom must be positive")
        object.__setattr__(self, "delta", d)

    @property
    def dim(self):
        return self.gamma.dim


def skewt_marginal_logpdf(delta_j, nu, z):
    return sahu_skewt_logpdf(z, float(delta_j), float(nu))


@lru_cache(maxsize=512)
def _cached_table(delta_j: float, nu: float, N: int) -> InterpTable:
    m = SkewTMargin(delta_j, nu)
    return build_interp_table(m.cdf, m.logpdf, N, quantile_fn=m.quantile)


def skewt_marginal_table(delta_j, nu, N: int = 100) -> InterpTable:
    """Interpolation table for F_Zj, cached per ``(delta_j, nu, N)``."""
    if not nu > 0:
        raise DomainError("skew-t degrees of freedom must be positive")
    # parameters closer than 1e-8 share a table
    return _cached_table(round(float(delta_j), 8), round(float(nu), 8), int(N))


def positive_orthant_prob(loc, scale, df, n_nodes=64):
    """``Pr(V > 0)`` for ``V ~ t_m(loc, scale, df)``.

    Exact for m = 1 and for zero location with diagonal scale; otherwise a
    Gauss-Laguerre integral over the gamma mixing variable of Gaussian
    orthant probabilities.
    """
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    m = loc.size
    sd = np.sqrt(np.diag(scale))
    if m == 1:
        return float(special.stdtr(df, loc[0] / sd[0]))
    off = scale - np.diag(np.diag(scale))
    if np.all(loc == 0) and np.all(off == 0):
        return 0.5 ** m
    corr = scale / np.outer(sd, sd)
    a = 0.5 * df
    # w ~ Gamma(a, rate a): substitute x = a w, weight x^(a-1) e^-x / Gamma(a)
    x, wts = special.roots_genlaguerre(n_nodes, a - 1.0)
    wts = wts / math.exp(special.gammaln(a))
    pts = np.sqrt(x / a)[:, None] * (loc / sd)[None, :]
    probs = stats.multivariate_normal.cdf(pts, mean=np.zeros(m), cov=corr,
                                          abseps=1e-9, releps=1e-9)
    return float(np.dot(wts, np.atleast_1d(probs)))


def skewt_logpdf(params: SkewTCopulaParams, z):
    """Joint log density of the m-variate skew t at one point ``z``."""
    z = np.asarray(z, dtype=float)
    m, nu = params.dim, params.nu
    D = np.diag(params.delta)
    A = params.gamma.values + D @ D
    Ainv = np.linalg.inv(A)
    S = float(z @ Ainv @ z)
    _, logdet = np.linalg.slogdet(A)
    log_t = (special.gammaln(0.5 * (nu + m)) - special.gammaln(0.5 * nu)
             - 0.5 * m * math.log(nu * math.pi) - 0.5 * (nu + m) * math.log1p(S / nu))
    loc = D @ Ainv @ z
    scale = ((S + nu) / (m + nu)) * (np.eye(m) - D @ Ainv @ D)
    prob = positive_orthant_prob(loc, scale, nu + m)
    with np.errstate(divide="ignore"):
        return m * math.log(2.0) - 0.5 * logdet + log_t + math.log(prob)


def simulate_skewt_z(params: SkewTCopulaParams, n: int, rng):
    m, nu = params.dim, params.nu
    w = rng.gamma(0.5 * nu, 2.0 / nu, size=(n, 1))
    q = np.abs(rng.standard_normal((n, m))) / np.sqrt(w)
    eps = rng.standard_normal((n, m)) @ params.gamma.chol.T
    return q * params.delta[None, :] + eps / np.sqrt(w)


def skewt_aug_logdensity(params: SkewTCopulaParams, x, q, w):
    """Log joint density of ``(x, q, w)`` given ``q > 0``, including the 2^m factor."""
    x, q = np.asarray(x, float), np.asarray(q, float)
    if np.any(q <= 0):
        raise DomainError("augmentation q must be strictly positive")
    if not w > 0:
        raise DomainError("augmentation w must be positive")
    m, nu = params.dim, params.nu
    r = x - params.delta * q
    log_x = -0.5 * (m * _LOG_2PI + params.gamma.logdet - m * math.log(w)
                    + w * params.gamma.quad_form(r))
    log_q = -0.5 * (m * _LOG_2PI - m * math.log(w) + w * float(q @ q))
    log_w = stats.gamma.logpdf(w, 0.5 * nu, scale=2.0 / nu)
    return float(m * math.log(2.0) + log_x + log_q + log_w)


class SkewTCopula(CopulaModel):
    family = "skew-t"

    def __init__(self, params: SkewTCopulaParams, table_n: int = MCMC_TABLE_N):
        self.params = params
        self.table_n = table_n

    @property
    def dim(self):
        return self.params.dim

    def tables(self):
        return [skewt_marginal_table(d, self.params.nu, self.table_n) for d in self.params.delta]

    def simulate_z(self, n, rng):
        return simulate_skewt_z(self.params, n, rng)

    def aux_cdf(self, z):
        return np.column_stack([t.cdf(z[:, j]) for j, t in enumerate(self.tables())])

    def to_dict(self):
        p = self.params
        return {"family": self.family, "gamma": p.gamma.values.tolist(),
                "delta": p.delta.tolist(), "nu": p.nu}

    @classmethod
    def from_dict(cls, d):
        return cls(SkewTCopulaParams(CorrelationMatrix(np.array(d["gamma"])),
                                     np.array(d["delta"]), d["nu"]))


# --------------------------------------------------------------------------
# Correlation matrices from partial correlations
# --------------------------------------------------------------------------

def partials_to_corr(pc, m):
    """Correlation matrix from canonical partial correlations (row-major i<j)."""
    z = np.zeros((m, m))
    z[np.triu_indices(m, 1)] = pc
    L = np.zeros((m, m))
    L[0, 0] = 1.0
    for j in range(1, m):
        rem = 1.0
        for i in range(j):
            L[j, i] = z[i, j] * math.sqrt(rem)
            rem -= L[j, i] ** 2
        L[j, j] = math.sqrt(max(rem, 0.0))
    R = L @ L.T
    np.fill_diagonal(R, 1.0)
    return R


def corr_to_partials(R):
    L = np.linalg.cholesky(R)
    m = R.shape[0]
    out = []
    for i in range(m):
        for j in range(i + 1, m):
            rem = 1.0 - float(np.sum(L[j, :i] ** 2))
            out.append(L[j, i] / math.sqrt(rem))
    return np.array(out)


# --------------------------------------------------------------------------
# Data-augmentation MCMC
# --------------------------------------------------------------------------

@dataclass
class SkewTPrior:
    delta_var: float = 10.0
    nu_shape: float = 2.0
    nu_rate: float = 0.1
    nu_lo: float = 2.0
    nu_hi: float = 200.0
    fix_delta: bool = False


def _draw_q(z, w, delta, gamma_inv, q, rng):
    # precision of q_i is w_i (D Gamma^-1 D + I); coordinates Gibbs-updated in turn
    D = np.diag(delta)
    A = D @ gamma_inv @ D + np.eye(delta.size)
    b = z @ (gamma_inv @ D)
    sd_scale = 1.0 / np.sqrt(w)
    for j in range(delta.size):
        ajj = A[j, j]
        rest = b[:, j] - (q @ A[:, j] - q[:, j] * ajj)
        mean = rest / ajj
        q[:, j] = truncated_normal(mean, sd_scale / math.sqrt(ajj), 0.0, np.inf, rng)
    np.maximum(q, np.finfo(float).tiny, out=q)
    return q


def _draw_w(z, q, delta, gamma_inv, nu, rng):
    r = z - q * delta[None, :]
    quad = np.einsum("ij,jk,ik->i", r, gamma_inv, r)
    m = delta.size
    rate = 0.5 * (nu + quad + np.sum(q * q, axis=1))
    return rng.gamma(0.5 * (nu + 2 * m), 1.0 / rate)


def skewt_mcmc_fit(u_data, prior: SkewTPrior | None = None, iters: int = 1000, rng=None,
                   burn_in: int | None = None, table_n: int = MCMC_TABLE_N, init=None,
                   seed=None, progress=None):
    """Data-augmentation sampler for the skew-t copula.

    Each sweep recomputes ``z`` from the current margin tables, Gibbs-draws
    ``q_i`` and ``w_i``, then runs random-walk MH on the tanh-transformed
    partial correlations of Gamma (one block), each ``delta_j`` and
    ``log nu``. Latent draws are summarized by their running means.
    """
    prior = prior or SkewTPrior()
    rng = make_rng(seed) if rng is None else rng
    u = np.asarray(u_data, dtype=float)
    if u.ndim != 2:
        raise DomainError("u_data must be an (n_obs, m) matrix")
    n, m = u.shape
    if n < 10:
        raise DomainError("skew-t fitting needs at least 10 observations")
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("copula data must lie strictly inside (0, 1)")
    burn_in = default_burn_in(iters) if burn_in is None else burn_in

    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    names = [f"gamma_{i + 1}_{j + 1}" for i, j in pairs] + \
        [f"delta_{j + 1}" for j in range(m)] + ["nu"]
    blocks = {nm: "gamma" for nm in names[:len(pairs)]}
    blocks.update({f"delta_{j + 1}": f"delta_{j + 1}" for j in range(m)})
    blocks["nu"] = "nu"
    rec = ChainRecorder(names, iters, burn_in)

    if init is not None:
        R0, delta, nu = init.gamma.values, init.delta.copy(), float(init.nu)
    else:
        zs = special.ndtri(u)
        R0 = np.corrcoef(zs, rowvar=False) if m > 1 else np.eye(1)
        delta, nu = np.zeros(m), 10.0
    if prior.fix_delta:
        delta = np.zeros(m)
    phi = np.arctanh(np.clip(corr_to_partials(np.atleast_2d(R0)), -0.95, 0.95)) \
        if pairs else np.zeros(0)

    def tables_for(d, v):
        return [skewt_marginal_table(dj, v, table_n) for dj in d]

    def zcol(tab, j):
        return np.asarray(tab.quantile(u[:, j]), dtype=float)

    tabs = tables_for(delta, nu)
    z = np.column_stack([zcol(t, j) for j, t in enumerate(tabs)])
    logf = np.column_stack([t.logpdf(z[:, j]) for j, t in enumerate(tabs)])
    q = np.abs(rng.standard_normal((n, m))) + 0.1
    w = np.ones(n)

    def corr_of(ph):
        return CorrelationMatrix(partials_to_corr(np.tanh(ph), m), check=False) \
            if m > 1 else CorrelationMatrix(np.eye(1))

    gamma = corr_of(phi)

    def x_term(zz, dd, gm):
        r = zz - q * dd[None, :]
        quad = np.einsum("ij,jk,ik->i", r, np.linalg.inv(gm.values), r)
        return float(np.sum(-0.5 * (gm.logdet - m * np.log(w) + w * quad)))

    def w_term(v):
        return float(np.sum(stats.gamma.logpdf(w, 0.5 * v, scale=2.0 / v)))

    def log_prior_delta(dj):
        return -0.5 * dj * dj / prior.delta_var

    def log_prior_lognu(ln):
        v = math.exp(ln)
        if not prior.nu_lo < v < prior.nu_hi:
            return -np.inf
        return (prior.nu_shape - 1) * ln - prior.nu_rate * v + ln

    sc_gamma = ProposalScale.for_dim(len(pairs), 0.1) if pairs else None
    sc_delta = [ProposalScale.for_dim(1, 0.2) for _ in range(m)]
    sc_nu = ProposalScale.for_dim(1, 0.2)
    lat_q = np.zeros((n, m))
    lat_w = np.zeros(n)
    n_lat = 0
    t_start = time.perf_counter()

    for it in range(iters):
        if it == burn_in:
            sc_gamma = sc_gamma.frozen() if sc_gamma else None
            sc_delta = [s.frozen() for s in sc_delta]
            sc_nu = sc_nu.frozen()
        ginv = np.linalg.inv(gamma.values)
        q = _draw_q(z, w, delta, ginv, q, rng)
        w = _draw_w(z, q, delta, ginv, nu, rng)

        # Gamma block: z and the margins do not depend on Gamma
        if pairs:
            def lp_gamma(ph):
                if np.any(np.abs(ph) > 15):
                    return -np.inf
                try:
                    gm = corr_of(ph)
                except MatrixError:
                    return -np.inf
                return x_term(z, delta, gm) + float(np.sum(np.log1p(-np.tanh(ph) ** 2)))
            st, acc, sc_gamma = adaptive_rw_mh(lp_gamma, MHState(phi, lp_gamma(phi)),
                                               sc_gamma, rng)
            phi = st.x
            gamma = corr_of(phi)
            rec.count("gamma", acc)

        # delta_j: the j-th margin table and z column move with delta_j
        if not prior.fix_delta:
            for j in range(m):
                def lp_delta(x, j=j):
                    dj = float(x[0])
                    tab = skewt_marginal_table(dj, nu, table_n)
                    zj = zcol(tab, j)
                    zz = z.copy()
                    zz[:, j] = zj
                    dd = delta.copy()
                    dd[j] = dj
                    return (x_term(zz, dd, gamma) - float(np.sum(tab.logpdf(zj)))
                            + log_prior_delta(dj)), (tab, zj)
                cur, _ = lp_delta(np.array([delta[j]]))
                cache = {}

                def lp_only(x, j=j):
                    val, extra = lp_delta(x, j)
                    cache["extra"] = extra
                    return val
                st, acc, sc_delta[j] = adaptive_rw_mh(lp_only, MHState(np.array([delta[j]]), cur),
                                                      sc_delta[j], rng)
                if acc:
                    delta[j] = float(st.x[0])
                    tab, zj = cache["extra"]
                    z[:, j] = zj
                    logf[:, j] = tab.logpdf(zj)
                rec.count(f"delta_{j + 1}", acc)

        # log nu: every table changes
        def lp_nu(x):
            v = math.exp(float(x[0]))
            lp0 = log_prior_lognu(float(x[0]))
            if not np.isfinite(lp0):
                return -np.inf
            tb = tables_for(delta, v)
            zz = np.column_stack([zcol(t, j) for j, t in enumerate(tb)])
            lf = np.column_stack([t.logpdf(zz[:, j]) for j, t in enumerate(tb)])
            cache_nu["extra"] = (zz, lf)
            return x_term(zz, delta, gamma) + w_term(v) - float(np.sum(lf)) + lp0
        cache_nu = {}
        cur = x_term(z, delta, gamma) + w_term(nu) - float(np.sum(logf)) \
            + log_prior_lognu(math.log(nu))
        if not np.isfinite(cur):
            raise RunError("non-finite log posterior", iteration=it,
                           state={"delta": delta.tolist(), "nu": nu})
        st, acc, sc_nu = adaptive_rw_mh(lp_nu, MHState(np.array([math.log(nu)]), cur), sc_nu, rng)
        if acc:
            nu = math.exp(float(st.x[0]))
            z, logf = cache_nu["extra"]
        rec.count("nu", acc)

        vals = []
        if pairs:
            vals.extend(gamma.values[i, j] for i, j in pairs)
        vals.extend(delta.tolist())
        vals.append(nu)
        rec.record(it, vals)
        if it >= burn_in:
            lat_q += q
            lat_w += w
            n_lat += 1
        if progress is not None:
            progress(it)

    latents = {}
    if n_lat:
        latents = {"q_mean": lat_q / n_lat, "w_mean": lat_w / n_lat}
    return rec.finish(latents=latents, blocks=blocks, seed=seed,
                      meta={"family": "skew-t", "table_n": table_n,
                            "seconds": time.perf_counter() - t_start,
                            "prior": vars(prior).copy()})
