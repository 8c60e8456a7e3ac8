"""Gaussian static factor copula: ``z~ = Lambda eta + eps``, standardized."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .copula_core import CopulaModel, CorrelationMatrix
from .errors import DomainError, MatrixError

D_FLOOR = 1e-6


class FactorFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FactorParams:
    loadings: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        m, p = lam.shape
        if p < 1:
            raise DomainError("factor count must be at least 1")
        if p > m:
            raise DomainError(f"factor count {p} exceeds dimension {m}")
        if d.size != m or np.any(d <= 0):
            raise DomainError("idiosyncratic variances must be positive, one per dimension")
        if np.any(np.triu(lam, 1) != 0):
            raise DomainError("loadings must have a zero upper triangle")
        if np.any(np.diag(lam) <= 0):
            raise DomainError("leading diagonal loadings must be positive")
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "d", d)

    @property
    def m(self):
        return self.loadings.shape[0]

    @property
    def p(self):
        return self.loadings.shape[1]

    def covariance(self):
        return self.loadings @ self.loadings.T + np.diag(self.d)

    def to_dict(self):
        return {"m": self.m, "p": self.p, "lambda": self.loadings.ravel().tolist(),
                "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, dd):
        return cls(np.array(dd["lambda"], dtype=float).reshape(dd["m"], dd["p"]), dd["d"])


def factor_to_correlation(params: FactorParams) -> CorrelationMatrix:
    """``S^-1/2 (Lambda Lambda' + D) S^-1/2`` with ``S`` its diagonal."""
    cov = params.covariance()
    sd = np.sqrt(np.diag(cov))
    omega = cov / np.outer(sd, sd)
    np.fill_diagonal(omega, 1.0)
    try:
        return CorrelationMatrix(omega, check=False)
    except MatrixError as exc:
        raise MatrixError(f"factor correlation is not positive definite: {exc}") from None


def simulate_factor_z(params: FactorParams, n: int, rng):
    eta = rng.standard_normal((n, params.p))
    eps = rng.standard_normal((n, params.m)) * np.sqrt(params.d)
    zt = eta @ params.loadings.T + eps
    return zt / np.sqrt(np.diag(params.covariance()))


class FactorCopula(CopulaModel):
    family = "factor"

    def __init__(self, params: FactorParams):
        self.params = params

    @property
    def dim(self):
        return self.params.m

    def simulate_z(self, n, rng):
        return simulate_factor_z(self.params, n, rng)

    def aux_cdf(self, z):
        return special.ndtr(z)

    def correlation(self):
        return factor_to_correlation(self.params)

    def to_dict(self):
        return {"family": self.family, **self.params.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(FactorParams.from_dict(d))


def identify_loadings(lam):
    """Rotate to a zero upper triangle and flip signs to a positive diagonal.

    ``Lambda Q`` for orthogonal ``Q`` leaves ``Lambda Lambda'`` unchanged;
    ``Q`` comes from the QR decomposition of the transpose of the leading
    p x p block.
    """
    lam = np.asarray(lam, dtype=float)
    p = lam.shape[1]
    Q, _ = np.linalg.qr(lam[:p].T)
    out = lam @ Q
    signs = np.sign(np.diag(out))
    signs[signs == 0] = 1.0
    out = out * signs[None, :]
    out[np.triu_indices(p, 1, m=p)] = 0.0
    return out


def _loglik(S, lam, d, n):
    cov = lam @ lam.T + np.diag(d)
    L = np.linalg.cholesky(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    m = cov.shape[0]
    tr = np.trace(np.linalg.solve(cov, S))
    return -0.5 * n * (m * math.log(2 * math.pi) + logdet + tr)


def factor_fit_em(z_data, p: int, max_iter: int = 2000, tol: float = 1e-9,
                  return_trace: bool = False):
    """Maximum-likelihood Gaussian factor model by EM on auxiliary data.

    The result is rotated into the identified form. A warning is issued if
    the log-likelihood change has not fallen below ``tol`` by ``max_iter``.
    """
    z = np.asarray(z_data, dtype=float)
    if z.ndim != 2:
        raise DomainError("z_data must be a matrix")
    n, m = z.shape
    if p < 1:
        raise DomainError("factor count must be at least 1")
    if p > m:
        raise DomainError(f"factor count {p} exceeds dimension {m}")
    if n <= m:
        raise DomainError("EM needs more observations than dimensions")
    z = z - z.mean(axis=0)
    S = z.T @ z / n
    # start from the leading principal components
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(vals)[::-1][:p]
    lam = vecs[:, order] * np.sqrt(np.maximum(vals[order], 1e-3)) * 0.9
    d = np.maximum(np.diag(S) - np.sum(lam * lam, axis=1), 0.1)
    trace = [_loglik(S, lam, d, n)]
    converged = False
    for _ in range(max_iter):
        # E-step moments of eta given z
        dinv_lam = lam / d[:, None]
        G = np.linalg.inv(np.eye(p) + lam.T @ dinv_lam)
        beta = G @ dinv_lam.T
        Ezz = S @ beta.T
        Eee = G + beta @ S @ beta.T
        lam = Ezz @ np.linalg.inv(Eee)
        d = np.maximum(np.diag(S - lam @ Ezz.T), D_FLOOR)
        trace.append(_loglik(S, lam, d, n))
        if abs(trace[-1] - trace[-2]) < tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    if not converged:
        warnings.warn(f"factor EM did not converge in {max_iter} iterations", FactorFitWarning)
    params = FactorParams(identify_loadings(lam), d)
    return (params, np.array(trace)) if return_trace else params
