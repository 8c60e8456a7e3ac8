"""Stationary Gaussian autoregression copula of lag p (unit innovation variance)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special
from scipy.linalg import toeplitz

from ..copula_core import CopulaModel, CorrelationMatrix, gaussian_copula_logdensity
from ..errors import DomainError

MAX_RADIUS = 0.995


class StationarityWarning(UserWarning):
    pass


def companion(rho):
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    p = rho.size
    A = np.zeros((p, p))
    A[0] = rho
    A[1:, :-1] = np.eye(p - 1)
    return A


def spectral_radius(rho) -> float:
    rho = np.atleast_1d(rho)
    if rho.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion(rho)))))


def project_stationary(rho, radius=MAX_RADIUS):
    """Scale the companion roots so the spectral radius is at most ``radius``.

    Replacing ``rho_k`` by ``c^k rho_k`` multiplies every root by ``c``.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    r = spectral_radius(rho)
    if r < 1.0:
        return rho
    c = radius / r
    return rho * c ** np.arange(1, rho.size + 1)


@dataclass(frozen=True)
class ArCopulaParams:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if rho.ndim != 1 or rho.size < 1 or not np.all(np.isfinite(rho)):
            raise DomainError("AR coefficients must be a finite non-empty vector")
        if spectral_radius(rho) >= 1.0:
            raise DomainError("AR coefficients are not stationary (companion radius >= 1)")
        object.__setattr__(self, "rho", rho)

    @property
    def p(self):
        return self.rho.size


def _params(rho) -> ArCopulaParams:
    return rho if isinstance(rho, ArCopulaParams) else ArCopulaParams(rho)


def ar_autocovariances(rho, h_max: int):
    """Autocovariances ``gamma_0..gamma_hmax`` for unit innovation variance."""
    rho = _params(rho).rho
    p = rho.size
    # gamma_h - sum_k rho_k gamma_|h-k| = [h == 0] for h = 0..p
    A = np.eye(p + 1)
    for h in range(p + 1):
        for k in range(1, p + 1):
            A[h, abs(h - k)] -= rho[k - 1]
    rhs = np.zeros(p + 1)
    rhs[0] = 1.0
    g = np.linalg.solve(A, rhs)
    out = np.zeros(max(h_max, p) + 1)
    out[:p + 1] = g
    for h in range(p + 1, out.size):
        out[h] = np.dot(rho, out[h - 1::-1][:p])
    return out[:h_max + 1]


def ar_copula_correlation(rho, t: int) -> CorrelationMatrix:
    if t < 1:
        raise DomainError("series length must be at least 1")
    g = ar_autocovariances(rho, t - 1)
    return CorrelationMatrix(toeplitz(g / g[0]), check=False)


def spearman_lag(rho, h: int) -> float:
    g = ar_autocovariances(rho, abs(h))
    return float(6.0 / math.pi * math.asin(g[abs(h)] / (2.0 * g[0])))


def _z_scaled(u, g0):
    return math.sqrt(g0) * special.ndtri(np.asarray(u, dtype=float))


def ar_conditional_logdensity(rho, u_history, u_next):
    """``log f(u_next | history)`` with auxiliary values scaled to N(0, gamma_0)."""
    par = _params(rho)
    hist = np.atleast_1d(np.asarray(u_history, dtype=float))
    if hist.size < par.p:
        raise DomainError(f"history of length {hist.size} is shorter than the lag {par.p}")
    g0 = ar_autocovariances(par, 0)[0]
    zh = _z_scaled(hist[-par.p:], g0)
    mean = float(np.dot(par.rho, zh[::-1]))
    zn = _z_scaled(u_next, g0)
    return -0.5 * (zn - mean) ** 2 + 0.5 * zn * zn / g0 + 0.5 * math.log(g0)


def ar_copula_loglik(rho, u):
    """Copula log-likelihood of a series, telescoped into one-step conditionals."""
    par = _params(rho)
    u = np.asarray(u, dtype=float)
    T, p = u.size, par.p
    head = min(p, T)
    ll = float(gaussian_copula_logdensity(ar_copula_correlation(par, head), u[:head]))
    if T > p:
        g0 = ar_autocovariances(par, 0)[0]
        z = _z_scaled(u, g0)
        lags = np.column_stack([z[p - k:T - k] for k in range(1, p + 1)])
        mean = lags @ par.rho
        zn = z[p:]
        ll += float(np.sum(-0.5 * (zn - mean) ** 2 + 0.5 * zn * zn / g0 + 0.5 * math.log(g0)))
    return ll


class ArFit(NamedTuple):
    params: ArCopulaParams
    loglik: float


def ar_fit(u_data, p: int) -> ArFit:
    """Conditional least squares on ``Phi^-1(u)``; stationarity enforced by projection."""
    u = np.asarray(u_data, dtype=float).ravel()
    if p < 1:
        raise DomainError("lag order must be at least 1")
    if u.size <= 5 * p:
        raise DomainError(f"need more than {5 * p} observations for lag {p}")
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("copula data must lie strictly inside (0, 1)")
    z = special.ndtri(u)
    T = z.size
    X = np.column_stack([z[p - k:T - k] for k in range(1, p + 1)])
    rho, *_ = np.linalg.lstsq(X, z[p:], rcond=None)
    if spectral_radius(rho) >= 1.0:
        warnings.warn("least-squares AR estimate is nonstationary; projecting",
                      StationarityWarning)
        rho = project_stationary(rho)
    par = ArCopulaParams(rho)
    return ArFit(par, ar_copula_loglik(par, u))


def simulate_ar_z(rho, T: int, rng, n: int = 1):
    """``n`` stationary paths of length ``T`` on the N(0, gamma_0) scale."""
    par = _params(rho)
    p = par.p
    g = ar_autocovariances(par, p)
    L = np.linalg.cholesky(toeplitz(g[:p]))
    z = np.empty((n, T + p))
    z[:, :p] = (rng.standard_normal((n, p)) @ L.T)[:, ::-1]
    eps = rng.standard_normal((n, T))
    for t in range(p, T + p):
        z[:, t] = z[:, t - p:t][:, ::-1] @ par.rho + eps[:, t - p]
    return z[:, p:]


class ArCopula(CopulaModel):
    """AR copula process observed over ``length`` consecutive periods."""

    family = "ar"

    def __init__(self, rho, length: int = 1):
        self.params = _params(rho)
        self.length = int(length)
        self.gamma0 = float(ar_autocovariances(self.params, 0)[0])

    @property
    def dim(self):
        return self.length

    def simulate_z(self, n, rng):
        return simulate_ar_z(self.params, self.length, rng, n)

    def aux_cdf(self, z):
        return special.ndtr(np.asarray(z) / math.sqrt(self.gamma0))

    def to_dict(self):
        return {"family": self.family, "rho": self.params.rho.tolist(), "length": self.length}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rho"], d.get("length", 1))
