"""Linear regression copula process with a horseshoe prior.

With ``z~ = B beta + e`` and ``beta ~ N(0, diag(lambda^2))`` the implicit
copula of ``z = S z~`` (unit variances) is Gaussian with correlation
``S (I + B P^-1 B') S``. Conditioning on ``beta`` instead gives an O(n)
likelihood with diagonal ``S``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .copula_core import CopulaModel, CorrelationMatrix
from .errors import CapacityError, DomainError, RunError
from .margins import Margin, P_CLAMP
from .mcmc import (ChainRecorder, MHState, ProposalScale, adaptive_rw_mh, default_burn_in,
                   make_rng)

_LOG_2PI = math.log(2.0 * math.pi)
DENSE_LIMIT = 2000


@dataclass
class RegressionData:
    B: np.ndarray
    y: np.ndarray
    margin: Margin
    standardize: bool = True
    center: np.ndarray = field(init=False)
    scale: np.ndarray = field(init=False)
    X: np.ndarray = field(init=False)
    z: np.ndarray = field(init=False)
    log_g: np.ndarray = field(init=False)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if B.shape[0] != y.size:
            raise DomainError("design and response lengths differ")
        if not np.all(np.isfinite(B)):
            raise DomainError("design matrix must be finite")
        self.B, self.y = B, y
        if self.standardize:
            self.center = B.mean(axis=0)
            sd = B.std(axis=0)
            self.scale = np.where(sd > 0, sd, 1.0)
        else:
            self.center = np.zeros(B.shape[1])
            self.scale = np.ones(B.shape[1])
        self.X = self.transform(B)
        self.log_g = np.asarray(self.margin.logpdf(y), dtype=float)
        u = np.clip(self.margin.cdf(y), P_CLAMP, 1 - P_CLAMP)
        self.z = special.ndtri(u)

    def transform(self, B):
        return (np.atleast_2d(np.asarray(B, dtype=float)) - self.center) / self.scale

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def reg_scale(x, lam):
    """``s = (1 + x' P^-1 x)^(-1/2)`` with ``P^-1 = diag(lambda^2)``; row-wise."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return 1.0 / np.sqrt(1.0 + (x * x) @ (lam * lam))


def reg_correlation(B, lam, method: str = "direct") -> CorrelationMatrix:
    """``R = S (I + B P^-1 B') S``; ``method='woodbury'`` uses ``S (I - B Sigma B')^-1 S``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = B.shape[0]
    if n > DENSE_LIMIT:
        raise CapacityError(f"dense correlation limited to n <= {DENSE_LIMIT}")
    lam = np.asarray(lam, dtype=float)
    s = reg_scale(B, lam)
    if method == "direct":
        core = np.eye(n) + (B * lam ** 2) @ B.T
    elif method == "woodbury":
        Sigma = np.linalg.inv(B.T @ B + np.diag(1.0 / lam ** 2))
        core = np.linalg.inv(np.eye(n) - B @ Sigma @ B.T)
    else:
        raise DomainError(f"unknown method {method!r}")
    R = s[:, None] * core * s[None, :]
    return CorrelationMatrix(0.5 * (R + R.T), check=False)


def _loglik_terms(z, X, beta, s):
    m = s * (X @ beta)
    return -0.5 * (_LOG_2PI + 2 * np.log(s)) - 0.5 * ((z - m) / s) ** 2 + 0.5 * (_LOG_2PI + z * z)


def reg_conditional_loglik(data: RegressionData, beta, lam) -> float:
    """``log phi_n(z; S B beta, S^2) + sum log g(y_i) - sum log phi(z_i)`` in O(n)."""
    s = reg_scale(data.X, lam)
    return float(np.sum(_loglik_terms(data.z, data.X, np.asarray(beta, float), s))
                 + np.sum(data.log_g))


def reg_marginal_loglik(X, z, lam, XtX=None) -> float:
    """``log phi_n(z; 0, R)`` with ``beta`` integrated out, via Woodbury in O(n p^2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lam = np.asarray(lam, dtype=float)
    XtX = X.T @ X if XtX is None else XtX
    s = reg_scale(X, lam)
    zt = z / s
    L = np.linalg.cholesky(XtX + np.diag(1.0 / (lam * lam)))
    w = np.linalg.solve(L, X.T @ zt)
    logdet = 2 * np.sum(np.log(s)) + 2 * np.sum(np.log(lam)) + 2 * np.sum(np.log(np.diag(L)))
    quad = zt @ zt - w @ w
    return float(-0.5 * (z.size * _LOG_2PI + logdet + quad))


def _half_cauchy_logpdf(x, scale):
    return math.log(2.0 / math.pi) - math.log(scale) - math.log1p((x / scale) ** 2)


def reg_mcmc_fit(data: RegressionData, iters: int = 1000, rng=None, burn_in: int | None = None,
                 seed=None, init_lambda=None, progress=None):
    """Regression-copula sampler.

    Step 1 updates each ``log lambda_j`` by adaptive random walk with ``beta``
    integrated out, which avoids the ``beta``/``lambda`` funnel; ``lambda_j``
    uses the inverse-gamma auxiliary form of its half-Cauchy prior. Step 2
    draws ``beta`` exactly from ``N((X'X + P)^-1 X' z~, (X'X + P)^-1)`` with
    ``z~ = S^-1 z``, then ``log tau`` by random walk and the auxiliaries by Gibbs.
    """
    rng = make_rng(seed) if rng is None else rng
    n, p = data.n, data.p
    if n < 10:
        raise DomainError("regression copula fitting needs at least 10 observations")
    burn_in = default_burn_in(iters) if burn_in is None else burn_in
    X, z = data.X, data.z
    XtX = X.T @ X
    names = [f"beta_{j + 1}" for j in range(p)] + [f"lambda_{j + 1}" for j in range(p)] + ["tau"]
    blocks = {f"lambda_{j + 1}": f"lambda_{j + 1}" for j in range(p)}
    blocks["tau"] = "tau"
    rec = ChainRecorder(names, iters, burn_in)

    lam = np.full(p, 0.5) if init_lambda is None else np.asarray(init_lambda, float).copy()
    tau = 0.5
    a = np.ones(p)
    beta = np.zeros(p)
    log_scales = np.full(p, math.log(0.8))
    n_acc = np.zeros(p, dtype=int)
    sc_tau = ProposalScale.for_dim(1, 0.8)
    t_start = time.perf_counter()

    def lam_target(loglam_j, j, lam_vec):
        try:
            ll = reg_marginal_loglik(X, z, lam_vec, XtX)
        except np.linalg.LinAlgError:
            return -np.inf
        # lambda_j^2 | a_j ~ IG(1/2, 1/a_j), written on the log-lambda scale
        return ll - loglam_j - 1.0 / (a[j] * math.exp(2 * loglam_j))

    for it in range(iters):
        if it == burn_in:
            sc_tau = sc_tau.frozen()
        # Step 1: log lambda_j by per-element random walk, beta integrated out
        for j in range(p):
            cur_l = math.log(lam[j])
            cur = lam_target(cur_l, j, lam)
            if not np.isfinite(cur):
                raise RunError("non-finite log posterior", iteration=it,
                               state={"lambda": lam.tolist(), "tau": tau})
            prop_l = cur_l + math.exp(log_scales[j]) * rng.standard_normal()
            if abs(prop_l) > 30:
                prop = -np.inf
            else:
                lam_new = lam.copy()
                lam_new[j] = math.exp(prop_l)
                prop = lam_target(prop_l, j, lam_new)
            log_ratio = prop - cur if np.isfinite(prop) else -np.inf
            acc = bool(math.log(rng.random()) < log_ratio)
            if acc:
                lam[j] = math.exp(prop_l)
                n_acc[j] += 1
            if it < burn_in:
                k = it + 1
                log_scales[j] += k ** -0.6 * (math.exp(min(0.0, log_ratio)) - 0.44)
            rec.count(f"lambda_{j + 1}", acc)

        # Step 2a: beta | lambda, z
        s = reg_scale(X, lam)
        zt = z / s
        prec = XtX + np.diag(1.0 / (lam * lam))
        try:
            L = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise RunError("beta precision is not positive definite", iteration=it,
                           state={"lambda": lam.tolist(), "tau": tau}) from None
        mean = np.linalg.solve(L.T, np.linalg.solve(L, X.T @ zt))
        beta = mean + np.linalg.solve(L.T, rng.standard_normal(p))

        # Step 2b: log tau with the auxiliaries integrated out, then a_j | lambda_j, tau
        def tau_target(x):
            t = math.exp(float(x[0]))
            return (sum(_half_cauchy_logpdf(lj, t) for lj in lam)
                    + _half_cauchy_logpdf(t, 1.0) + float(x[0]))
        st, acc, sc_tau = adaptive_rw_mh(tau_target, MHState(np.array([math.log(tau)]),
                                                             tau_target([math.log(tau)])),
                                         sc_tau, rng)
        tau = math.exp(float(st.x[0]))
        rec.count("tau", acc)
        a = 1.0 / rng.gamma(1.0, 1.0 / (1.0 / tau ** 2 + 1.0 / (lam * lam)))

        rec.record(it, np.concatenate([beta, lam, [tau]]))
        if progress is not None:
            progress(it)

    return rec.finish(blocks=blocks, seed=seed,
                      meta={"family": "regression", "center": data.center.tolist(),
                            "scale": data.scale.tolist(), "standardized": data.standardize,
                            "seconds": time.perf_counter() - t_start})


def _chain_arrays(chain):
    p = sum(1 for nm in chain.names if nm.startswith("beta_"))
    beta = np.column_stack([chain[f"beta_{j + 1}"] for j in range(p)])
    lam = np.column_stack([chain[f"lambda_{j + 1}"] for j in range(p)])
    return beta, lam


def default_y_grid(margin: Margin, n: int = 512):
    lo, hi = margin.quantile(np.array([0.001, 0.999]))
    return np.linspace(lo, hi, n)


def reg_predict_density(x_new, chain, margin: Margin, y_grid=None, standardized=False):
    """Bayes (mixture over draws) and plug-in predictive densities at ``x_new``.

    ``x_new`` is on the original covariate scale unless ``standardized``.
    """
    if chain is None or len(chain) == 0:
        raise DomainError("predictive density needs a non-empty chain")
    y = default_y_grid(margin) if y_grid is None else np.asarray(y_grid, dtype=float)
    x = np.asarray(x_new, dtype=float).ravel()
    if not standardized and chain.meta.get("center") is not None:
        x = (x - np.asarray(chain.meta["center"])) / np.asarray(chain.meta["scale"])
    beta, lam = _chain_arrays(chain)
    z = special.ndtri(np.clip(margin.cdf(y), P_CLAMP, 1 - P_CLAMP))
    log_ratio = np.asarray(margin.logpdf(y), dtype=float) + 0.5 * (_LOG_2PI + z * z)
    s = 1.0 / np.sqrt(1.0 + (lam * lam) @ (x * x))
    m = s * (beta @ x)
    J = s.size
    bayes = np.zeros(y.size)
    for c0 in range(0, J, 1024):
        sl = slice(c0, c0 + 1024)
        sj, mj = s[sl, None], m[sl, None]
        bayes += np.sum(np.exp(-0.5 * _LOG_2PI - np.log(sj) - 0.5 * ((z - mj) / sj) ** 2), axis=0)
    bayes = bayes / J * np.exp(log_ratio)
    s_hat = float(np.mean(s))
    m_hat = s_hat * float(beta.mean(axis=0) @ x)
    point = np.exp(-0.5 * _LOG_2PI - math.log(s_hat) - 0.5 * ((z - m_hat) / s_hat) ** 2
                   + log_ratio)
    return {"y": y, "bayes": bayes, "point": point}


def simulate_regression_data(B, beta, rng, margin: Margin | None = None, lam=None):
    """Responses from ``z = S(B beta + e)`` mapped through the margin (default N(0,1)).

    ``S`` uses ``lam`` (default ``|beta|``) so the data follow the conditional model.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    beta = np.asarray(beta, dtype=float)
    lam = np.abs(beta) if lam is None else np.asarray(lam, dtype=float)
    s = reg_scale(B, lam)
    z = s * (B @ beta + rng.standard_normal(B.shape[0]))
    if margin is None:
        return z
    return margin.quantile(np.clip(special.ndtr(z), P_CLAMP, 1 - P_CLAMP))


class RegressionCopula(CopulaModel):
    """Gaussian copula with correlation ``S (I + B P^-1 B') S`` over the rows of ``B``."""

    family = "regression"

    def __init__(self, B, lam):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.lam = np.asarray(lam, dtype=float)
        if self.lam.size != self.B.shape[1]:
            raise DomainError("need one shrinkage parameter per covariate")

    @property
    def dim(self):
        return self.B.shape[0]

    def correlation(self, method="direct"):
        return reg_correlation(self.B, self.lam, method)

    def simulate_z(self, n, rng):
        s = reg_scale(self.B, self.lam)
        beta = rng.standard_normal((n, self.lam.size)) * self.lam
        return s * (beta @ self.B.T + rng.standard_normal((n, self.dim)))

    def aux_cdf(self, z):
        return special.ndtr(z)

    def to_dict(self):
        return {"family": self.family, "B": self.B.tolist(), "lambda": self.lam.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["B"]), np.array(d["lambda"]))
