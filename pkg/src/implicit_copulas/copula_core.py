"""Shared copula machinery: correlation matrices, Gaussian and t copulas,
generic simulation, discrete-margin bounds and data augmentation."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats
from scipy.linalg import cho_solve, solve_triangular

from .errors import CapacityError, ContractError, DomainError, MatrixError
from .margins import Margin, P_CLAMP
from .mcmc import make_rng, truncated_normal

JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
_LOG_2PI = math.log(2.0 * math.pi)


def jittered_cholesky(a, ladder=JITTER_LADDER):
    """Lower Cholesky factor, adding ``eps*I`` from ``ladder`` until it succeeds."""
    a = np.asarray(a, dtype=float)
    eye = np.eye(a.shape[0])
    for eps in ladder:
        try:
            return np.linalg.cholesky(a + eps * eye)
        except np.linalg.LinAlgError:
            continue
    raise MatrixError(f"matrix is not positive definite (jitter up to {ladder[-1]:g})")


class CorrelationMatrix:
    """Symmetric positive-definite matrix with unit diagonal."""

    def __init__(self, values, check=True):
        v = np.array(values, dtype=float)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DomainError("correlation matrix must be square")
        if check:
            if not np.all(np.isfinite(v)):
                raise DomainError("correlation matrix has non-finite entries")
            if np.max(np.abs(v - v.T), initial=0.0) > 1e-12:
                raise DomainError("correlation matrix is not symmetric")
            if np.max(np.abs(np.diag(v) - 1.0), initial=0.0) > 1e-12:
                raise DomainError("correlation matrix must have unit diagonal")
        v = 0.5 * (v + v.T)
        np.fill_diagonal(v, 1.0)
        self.values = v
        self.chol = jittered_cholesky(v)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @property
    def dim(self):
        return self.values.shape[0]

    @classmethod
    def identity(cls, m):
        return cls(np.eye(m))

    @classmethod
    def equicorrelation(cls, m, r):
        v = np.full((m, m), float(r))
        np.fill_diagonal(v, 1.0)
        return cls(v)

    @classmethod
    def from_covariance(cls, cov):
        cov = np.asarray(cov, dtype=float)
        sd = np.sqrt(np.diag(cov))
        if np.any(sd <= 0):
            raise DomainError("covariance has a non-positive variance")
        return cls(cov / np.outer(sd, sd), check=False)

    def solve(self, x):
        """``Omega^{-1} x`` via the stored Cholesky factor."""
        return cho_solve((self.chol, True), x)

    def quad_form(self, z):
        """Row-wise ``z Omega^{-1} z'`` for ``z`` of shape (..., m)."""
        z = np.asarray(z, dtype=float)
        w = solve_triangular(self.chol, z.reshape(-1, self.dim).T, lower=True)
        return np.sum(w * w, axis=0).reshape(z.shape[:-1])

    def to_dict(self):
        return {"dim": self.dim, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["values"]))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.values:
                w.writerow([format(x, ".17g") for x in row])

    @classmethod
    def read_csv(cls, path):
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))

    def __repr__(self):
        return f"CorrelationMatrix(dim={self.dim})"


def _as_unit(u, m):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != m:
        raise DomainError(f"expected {m} components, got {u.shape[-1]}")
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    return u


def mvn_logpdf(z, omega: CorrelationMatrix):
    z = np.asarray(z, dtype=float)
    return -0.5 * (omega.dim * _LOG_2PI + omega.logdet + omega.quad_form(z))


def mvt_logpdf(z, omega: CorrelationMatrix, nu):
    z = np.asarray(z, dtype=float)
    m = omega.dim
    return (special.gammaln(0.5 * (nu + m)) - special.gammaln(0.5 * nu)
            - 0.5 * m * math.log(nu * math.pi) - 0.5 * omega.logdet
            - 0.5 * (nu + m) * np.log1p(omega.quad_form(z) / nu))


def t_logpdf(z, nu):
    z = np.asarray(z, dtype=float)
    return (special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi) - 0.5 * (nu + 1) * np.log1p(z * z / nu))


def norm_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - 0.5 * _LOG_2PI


def gaussian_copula_logdensity(omega: CorrelationMatrix, u):
    """``log c(u) = -0.5 log|Omega| - 0.5 z'(Omega^-1 - I) z``, row-wise."""
    z = special.ndtri(_as_unit(u, omega.dim))
    return -0.5 * omega.logdet - 0.5 * (omega.quad_form(z) - np.sum(z * z, axis=-1))


@dataclass(frozen=True)
class TCopulaParams:
    omega: CorrelationMatrix
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError("t copula degrees of freedom must be positive")


def t_copula_logdensity(params: TCopulaParams, u):
    u = _as_unit(u, params.omega.dim)
    z = special.stdtrit(params.nu, u)
    return mvt_logpdf(z, params.omega, params.nu) - np.sum(t_logpdf(z, params.nu), axis=-1)


def _nearest_correlation(a, floor=1e-6):
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    c = (v * np.maximum(w, floor)) @ v.T
    d = np.sqrt(np.diag(c))
    return c / np.outer(d, d)


def fit_gaussian_copula(u) -> CorrelationMatrix:
    """Correlation of the normal scores ``Phi^-1(u)``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    _as_unit(u, u.shape[1])
    if u.shape[0] < u.shape[1] + 1:
        raise DomainError("need more observations than dimensions")
    return CorrelationMatrix(_nearest_correlation(np.corrcoef(special.ndtri(u), rowvar=False)))


def fit_t_copula(u, nu_bounds=(2.01, 200.0)) -> TCopulaParams:
    """Kendall-tau inversion for the correlation, profile likelihood for ``nu``."""
    from scipy.optimize import minimize_scalar

    u = np.atleast_2d(np.asarray(u, dtype=float))
    m = u.shape[1]
    _as_unit(u, m)
    if u.shape[0] < m + 1:
        raise DomainError("need more observations than dimensions")
    tau = np.eye(m)
    for i, j in itertools.combinations(range(m), 2):
        tau[i, j] = tau[j, i] = stats.kendalltau(u[:, i], u[:, j])[0]
    omega = CorrelationMatrix(_nearest_correlation(np.sin(0.5 * math.pi * tau)))

    def nll(lognu):
        return -float(np.sum(t_copula_logdensity(TCopulaParams(omega, math.exp(lognu)), u)))

    res = minimize_scalar(nll, bounds=tuple(np.log(nu_bounds)), method="bounded",
                          options={"xatol": 1e-4})
    return TCopulaParams(omega, float(math.exp(res.x)))


# --------------------------------------------------------------------------
# Copula models and Algorithm-1 simulation
# --------------------------------------------------------------------------

class CopulaModel:
    """Tagged-union base: ``family`` plus z-simulation and F_Z hooks."""

    family = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def simulate_z(self, n, rng):
        raise NotImplementedError

    def aux_cdf(self, z):
        """Map auxiliary draws to the unit cube column by column."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class GaussianCopula(CopulaModel):
    family = "gaussian"

    def __init__(self, omega):
        self.omega = omega if isinstance(omega, CorrelationMatrix) else CorrelationMatrix(omega)

    @property
    def dim(self):
        return self.omega.dim

    def simulate_z(self, n, rng):
        return rng.standard_normal((n, self.dim)) @ self.omega.chol.T

    def aux_cdf(self, z):
        return special.ndtr(z)

    def logdensity(self, u):
        return gaussian_copula_logdensity(self.omega, u)

    def to_dict(self):
        return {"family": self.family, "omega": self.omega.values.tolist()}


class TCopula(CopulaModel):
    family = "t"

    def __init__(self, omega, nu):
        omega = omega if isinstance(omega, CorrelationMatrix) else CorrelationMatrix(omega)
        self.params = TCopulaParams(omega, float(nu))

    @property
    def dim(self):
        return self.params.omega.dim

    def simulate_z(self, n, rng):
        g = rng.standard_normal((n, self.dim)) @ self.params.omega.chol.T
        w = rng.gamma(0.5 * self.params.nu, 2.0 / self.params.nu, size=(n, 1))
        return g / np.sqrt(w)

    def aux_cdf(self, z):
        return special.stdtr(self.params.nu, z)

    def logdensity(self, u):
        return t_copula_logdensity(self.params, u)

    def to_dict(self):
        return {"family": self.family, "omega": self.params.omega.values.tolist(),
                "nu": self.params.nu}


def simulate_copula_model(model: CopulaModel, margins, n: int, seed=None, rng=None):
    """Draw ``n`` observations: z from F_Z, u = F_Z(z) per column, y = G^-1(u).

    ``margins`` is one margin per dimension, or a single margin broadcast to
    all of them; ``None`` returns the copula draws ``u``.
    """
    rng = make_rng(seed) if rng is None else rng
    m = model.dim
    if margins is not None and not isinstance(margins, Margin):
        margins = list(margins)
        if len(margins) != m:
            raise DomainError(f"model has dimension {m} but {len(margins)} margins were given")
    if n == 0:
        return np.empty((0, m))
    z = model.simulate_z(n, rng)
    u = np.clip(model.aux_cdf(z), P_CLAMP, 1.0 - P_CLAMP)
    if margins is None:
        return u
    if isinstance(margins, Margin):
        return margins.quantile(u)
    return np.column_stack([mg.quantile(u[:, j]) for j, mg in enumerate(margins)])


def model_from_dict(d: dict) -> CopulaModel:
    fam = d.get("family")
    if fam == "gaussian":
        return GaussianCopula(np.array(d["omega"]))
    if fam == "t":
        return TCopula(np.array(d["omega"]), d["nu"])
    # families defined downstream register their own loaders
    from . import registry
    return registry.load_model(d)


# --------------------------------------------------------------------------
# Discrete margins
# --------------------------------------------------------------------------

class DiscreteCdf:
    """CDF of an integer-valued distribution with support ``[lo, hi]``."""

    def __init__(self, cdf, lo=0, hi=np.inf, name="discrete"):
        self._cdf, self.lo, self.hi, self.name = cdf, lo, hi, name

    @classmethod
    def bernoulli(cls, p):
        return cls(lambda y: stats.bernoulli.cdf(y, p), 0, 1, f"bernoulli({p})")

    @classmethod
    def poisson(cls, lam):
        return cls(lambda y: stats.poisson.cdf(y, lam), 0, np.inf, f"poisson({lam})")

    @classmethod
    def from_pmf(cls, pmf, lo=0):
        c = np.cumsum(np.asarray(pmf, dtype=float))
        c = c / c[-1]
        hi = lo + c.size - 1

        def cdf(y):
            k = np.asarray(y) - lo
            return np.where(k < 0, 0.0, c[np.clip(k, 0, c.size - 1).astype(int)])
        return cls(cdf, lo, hi, "table")

    def cdf(self, y):
        return float(self._cdf(y))

    def bounds(self, y):
        if y != math.floor(y) or not (self.lo <= y <= self.hi):
            raise DomainError(f"{y!r} is outside the support of {self.name}")
        a = self.cdf(y - 1) if y > self.lo else 0.0
        return a, self.cdf(y)


@dataclass(frozen=True)
class DiscreteBounds:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        if a.shape != b.shape or np.any(a < 0) or np.any(b > 1) or np.any(a > b):
            raise DomainError("discrete bounds need 0 <= a <= b <= 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.a.size

    def z_limits(self):
        return special.ndtri(self.a), special.ndtri(self.b)


def discrete_bounds(margins, y) -> DiscreteBounds:
    """``a_j = F_j(y_j^-)``, ``b_j = F_j(y_j)`` for each coordinate."""
    y = np.atleast_1d(y)
    if len(margins) != y.size:
        raise DomainError("one discrete margin per coordinate is required")
    pairs = [mg.bounds(float(v)) for mg, v in zip(margins, y)]
    a, b = (np.array(x) for x in zip(*pairs))
    if np.any(a >= b):
        raise DomainError("observed value has zero probability")
    return DiscreteBounds(a, b)


def discrete_mass_by_differencing(copula_cdf_fn, bounds: DiscreteBounds, max_dim=20):
    """Sum of ``(-1)^{#a} C(corner)`` over the 2^m corners of the bounds box."""
    m = bounds.dim
    if m > max_dim:
        raise CapacityError(f"differencing needs 2^{m} copula evaluations (limit m <= {max_dim})")
    if np.any(bounds.a >= bounds.b):
        return 0.0
    total = 0.0
    for pick in itertools.product((0, 1), repeat=m):
        pick = np.array(pick, dtype=bool)
        corner = np.where(pick, bounds.a, bounds.b)
        if np.any(corner <= 0):
            continue
        total += (-1.0) ** int(pick.sum()) * float(copula_cdf_fn(corner))
    if total < -1e-8 or total > 1 + 1e-8:
        raise DomainError(f"differenced mass {total} is not a probability")
    return min(max(total, 0.0), 1.0)


def _bvn_cdf(h, k, r):
    # Phi2(h, k; r) = Phi(h)Phi(k) + int_0^r phi2(h, k; s) ds
    def dens(s):
        q = 1.0 - s * s
        return math.exp(-(h * h - 2 * s * h * k + k * k) / (2 * q)) / (2 * math.pi * math.sqrt(q))
    base = special.ndtr(h) * special.ndtr(k)
    if r == 0:
        return float(base)
    return float(base + integrate.quad(dens, 0.0, r, epsabs=1e-14, epsrel=1e-12)[0])


def gaussian_copula_cdf(omega: CorrelationMatrix, u):
    """``C(u) = Phi_m(Phi^-1(u); Omega)``; exact 1-D integral for two free coordinates."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        return 0.0
    keep = np.flatnonzero(u < 1)
    if keep.size == 0:
        return 1.0
    if keep.size == 1:
        return float(u[keep[0]])
    z = special.ndtri(u[keep])
    sub = omega.values[np.ix_(keep, keep)]
    if keep.size == 2:
        return _bvn_cdf(z[0], z[1], sub[0, 1])
    return float(stats.multivariate_normal.cdf(z, mean=np.zeros(keep.size), cov=sub,
                                               abseps=1e-10, releps=1e-10, maxpts=2_000_000))


def gaussian_da_z_step(omega: CorrelationMatrix, bounds: DiscreteBounds, z, rng, check=True):
    """One Gibbs sweep over the coordinates of ``z`` under box constraints.

    ``z`` may be a single m-vector or a (k, m) array of independent chains.
    Each coordinate is redrawn from its Gaussian full conditional truncated
    to ``[Phi^-1(a_j), Phi^-1(b_j))``.
    """
    z = np.array(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    lo, hi = bounds.z_limits()
    if check and (np.any(z < lo) or np.any(z >= hi)):
        raise ContractError("current z violates the discrete bounds")
    prec = np.linalg.inv(omega.values)
    m = omega.dim
    for j in range(m):
        pjj = prec[j, j]
        others = np.delete(np.arange(m), j)
        mean = -(z[:, others] @ prec[others, j]) / pjj
        z[:, j] = truncated_normal(mean, 1.0 / math.sqrt(pjj), lo[j], hi[j], rng)
    return z[0] if single else z
