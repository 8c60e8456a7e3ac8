"""Gaussian vector autoregression copula with unit stationary variances."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_discrete_lyapunov

from ..copula_core import CopulaModel
from ..errors import DomainError, NumericError
from .ar import MAX_RADIUS, StationarityWarning

VEC_LIMIT = 20


def var_companion(b_matrices):
    B = np.asarray(b_matrices, dtype=float)
    p, d, _ = B.shape
    A = np.zeros((d * p, d * p))
    A[:d] = np.hstack(list(B))
    if p > 1:
        A[d:, :-d] = np.eye(d * (p - 1))
    return A


def _radius(B):
    return float(np.max(np.abs(np.linalg.eigvals(var_companion(B)))))


def _lyapunov_doubling(A, Q, tol=1e-14, max_iter=100):
    X, Ak = Q.copy(), A.copy()
    for _ in range(max_iter):
        step = Ak @ X @ Ak.T
        X = X + step
        Ak = Ak @ Ak
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(X))):
            return X
    raise NumericError("Lyapunov doubling did not converge", iterations=max_iter)


def stationary_covariance(B, sigma):
    """Companion-form stationary covariance ``K = A K A' + Q``."""
    B = np.asarray(B, dtype=float)
    p, d, _ = B.shape
    A = var_companion(B)
    Q = np.zeros((d * p, d * p))
    Q[:d, :d] = sigma
    if d * p <= VEC_LIMIT:
        K = solve_discrete_lyapunov(A, Q, method="direct")
    else:
        K = _lyapunov_doubling(A, Q)
    K = 0.5 * (K + K.T)
    if not np.all(np.isfinite(K)) or np.any(np.diag(K) <= 0):
        raise NumericError("Lyapunov solution is not a valid covariance")
    return K


@dataclass(frozen=True)
class VarCopulaParams:
    b_matrices: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.b_matrices, dtype=float)
        if B.ndim == 2:
            B = B[None]
        S = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if B.ndim != 3 or B.shape[1] != B.shape[2] or S.shape != B.shape[1:]:
            raise DomainError("VAR needs p square d x d matrices and a d x d covariance")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise DomainError("innovation covariance is not positive definite") from None
        if _radius(B) >= 1.0:
            raise DomainError("VAR coefficients are not stationary (companion radius >= 1)")
        object.__setattr__(self, "b_matrices", B)
        object.__setattr__(self, "sigma", 0.5 * (S + S.T))

    @property
    def p(self):
        return self.b_matrices.shape[0]

    @property
    def d(self):
        return self.b_matrices.shape[1]

    def autocovariances(self, h_max: int):
        """``Gamma_h = Cov(Z_{t+h}, Z_t)`` for ``h = 0..h_max``."""
        p, d = self.p, self.d
        K = stationary_covariance(self.b_matrices, self.sigma)
        # block (i, j) of K is Cov(Z_{t-i}, Z_{t-j}) = Gamma_{j-i}
        G = [K[:d, j * d:(j + 1) * d] for j in range(p)]
        G = [g for g in G]
        while len(G) <= h_max:
            h = len(G)
            acc = np.zeros((d, d))
            for j in range(1, p + 1):
                k = h - j
                acc += self.b_matrices[j - 1] @ (G[k] if k >= 0 else G[-k].T)
            G.append(acc)
        return np.array(G[:h_max + 1])

    def normalized(self) -> "VarCopulaParams":
        """Rescale to unit stationary variances: ``B_j -> S^-1/2 B_j S^1/2``."""
        sd = np.sqrt(np.diag(self.autocovariances(0)[0]))
        Bn = self.b_matrices * (1.0 / sd)[None, :, None] * sd[None, None, :]
        Sn = self.sigma / np.outer(sd, sd)
        return VarCopulaParams(Bn, Sn)

    def to_dict(self):
        return {"b_matrices": self.b_matrices.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["b_matrices"]), np.array(d["sigma"]))


def var_block_correlations(params: VarCopulaParams, h_max: int):
    """Correlation blocks ``Omega_0..Omega_hmax`` of the stationary process."""
    G = params.autocovariances(h_max)
    sd = np.sqrt(np.diag(G[0]))
    out = G / np.outer(sd, sd)[None]
    for j in range(params.d):
        out[0, j, j] = 1.0
    return out


def project_var(B, radius=MAX_RADIUS):
    """Shrink ``B_j -> c^j B_j`` so the companion spectral radius is ``radius``."""
    B = np.asarray(B, dtype=float)
    r = _radius(B)
    if r < 1.0:
        return B
    c = radius / r
    return B * (c ** np.arange(1, B.shape[0] + 1))[:, None, None]


def var_fit(u_data, p: int) -> VarCopulaParams:
    """Least squares on ``Phi^-1(u)``, projected to stationarity, unit variances."""
    u = np.asarray(u_data, dtype=float)
    if u.ndim != 2:
        raise DomainError("VAR data must be a T x d matrix")
    T, d = u.shape
    if p < 1:
        raise DomainError("lag order must be at least 1")
    if T <= d * p + 10:
        raise DomainError(f"need more than {d * p + 10} observations")
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("copula data must lie strictly inside (0, 1)")
    z = special.ndtri(u)
    X = np.hstack([z[p - k:T - k] for k in range(1, p + 1)])
    Y = z[p:]
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    B = coef.T.reshape(d, p, d).transpose(1, 0, 2)
    resid = Y - X @ coef
    sigma = resid.T @ resid / resid.shape[0]
    if _radius(B) >= 1.0:
        warnings.warn("least-squares VAR estimate is nonstationary; projecting",
                      StationarityWarning)
        B = project_var(B)
    return VarCopulaParams(B, sigma).normalized()


def simulate_var_z(params: VarCopulaParams, T: int, rng, burn: int | None = None):
    """One stationary path of length ``T`` (rows are periods)."""
    p, d = params.p, params.d
    K = stationary_covariance(params.b_matrices, params.sigma)
    L = np.linalg.cholesky(K + 1e-14 * np.eye(K.shape[0]))
    state = L @ rng.standard_normal(d * p)
    hist = [state[i * d:(i + 1) * d] for i in range(p)]  # hist[0] is the latest
    Ls = np.linalg.cholesky(params.sigma)
    out = np.empty((T, d))
    for t in range(T):
        znew = sum(params.b_matrices[j] @ hist[j] for j in range(p)) + Ls @ rng.standard_normal(d)
        hist = [znew] + hist[:-1]
        out[t] = znew
    return out


def var_conditional_mean(params: VarCopulaParams, z_history):
    zh = np.atleast_2d(np.asarray(z_history, dtype=float))
    if zh.shape[0] < params.p:
        raise DomainError(f"history of length {zh.shape[0]} is shorter than the lag {params.p}")
    return sum(params.b_matrices[j] @ zh[-1 - j] for j in range(params.p))


def var_predict_draw(params: VarCopulaParams, margins, u_history, rng, n: int | None = None):
    """Predictive draw(s) of ``Y_{t+1}``: simulate ``Z_{t+1}``, then invert the margins."""
    par = params.normalized()
    zh = special.ndtri(np.atleast_2d(np.asarray(u_history, dtype=float)))
    mean = var_conditional_mean(par, zh)
    L = np.linalg.cholesky(par.sigma)
    k = 1 if n is None else n
    z = mean[None, :] + rng.standard_normal((k, par.d)) @ L.T
    u = np.clip(special.ndtr(z), 1e-12, 1 - 1e-12)
    y = np.column_stack([mg.quantile(u[:, j]) for j, mg in enumerate(margins)])
    return y[0] if n is None else y


class VarCopula(CopulaModel):
    """VAR copula over ``length`` periods; draws are flattened period-major."""

    family = "var"

    def __init__(self, params: VarCopulaParams, length: int = 1):
        self.params = params.normalized()
        self.length = int(length)

    @property
    def dim(self):
        return self.length * self.params.d

    def simulate_z(self, n, rng):
        return np.array([simulate_var_z(self.params, self.length, rng).ravel()
                         for _ in range(n)]).reshape(n, self.dim)

    def aux_cdf(self, z):
        return special.ndtr(z)

    def to_dict(self):
        return {"family": self.family, **self.params.to_dict(), "length": self.length}

    @classmethod
    def from_dict(cls, d):
        return cls(VarCopulaParams.from_dict(d), d.get("length", 1))
