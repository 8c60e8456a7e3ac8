"""Univariate margins: observation margins G and auxiliary margins F_Z.

Every margin exposes ``logpdf``, ``pdf``, ``cdf`` and ``quantile`` on
numpy arrays. Families without a closed-form quantile use a safeguarded
Newton solver; families without a closed-form CDF integrate the density.
:class:`InterpTable` is the fast tabulated form used inside MCMC loops.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, signal, special
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import DomainError, FitError, NumericError

P_CLAMP = 1e-12
TABLE_P1 = 1e-4
TABLE_PN = 1.0 - 1e-4
MAX_NEWTON_ITER = 200
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def clamp_prob(p):
    return np.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def _check_open_unit(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("probabilities must lie in the open interval (0, 1)")
    return p


# --------------------------------------------------------------------------
# Root finding
# --------------------------------------------------------------------------

def solve_quantile(cdf, pdf, p, x0=None, scale=1.0, ptol=1e-13, max_iter=MAX_NEWTON_ITER,
                   lo=None, hi=None):
    """Invert a continuous CDF by Newton's method inside a maintained bracket.

    The bracket starts at ``[-scale, scale]`` and doubles until it contains
    the target; whenever a Newton step leaves the bracket the step is
    replaced by bisection. Vectorized over ``p``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    lo = np.full(p.shape, -scale) if lo is None else np.array(np.broadcast_to(lo, p.shape), float)
    hi = np.full(p.shape, scale) if hi is None else np.array(np.broadcast_to(hi, p.shape), float)
    for _ in range(200):
        bad = cdf(lo) > p
        if not np.any(bad):
            break
        lo = np.where(bad, 2.0 * lo - 1.0, lo)
    for _ in range(200):
        bad = cdf(hi) < p
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi + 1.0, hi)
    if np.any(cdf(lo) > p) or np.any(cdf(hi) < p):
        raise NumericError("could not bracket quantile", p_min=float(p.min()),
                           p_max=float(p.max()))

    x = np.clip(np.zeros_like(p) if x0 is None else np.broadcast_to(x0, p.shape).copy(),
                lo, hi)
    active = np.ones(p.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return x
        xa = x[idx]
        err = cdf(xa) - p[idx]
        dens = pdf(xa)
        below = err < 0
        lo[idx] = np.where(below, xa, lo[idx])
        hi[idx] = np.where(below, hi[idx], xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dens > 0, err / dens, np.inf)
        xn = xa - step
        out = ~((xn > lo[idx]) & (xn < hi[idx]))
        xn = np.where(out, 0.5 * (lo[idx] + hi[idx]), xn)
        done = (np.abs(err) <= ptol) | (np.abs(xn - xa) <= 1e-15 * (1 + np.abs(xa))) \
            | (hi[idx] - lo[idx] <= 1e-15 * (1 + np.abs(xa)))
        x[idx] = np.where(done, xa, xn)
        active[idx[done]] = False
    if np.any(active):
        raise NumericError("quantile root finding did not converge",
                           iterations=max_iter, unresolved=int(active.sum()))
    return x


def cdf_by_quadrature(pdf, x, mode=0.0):
    """CDF of a smooth density at ``x`` by adaptive plus Gauss-Legendre quadrature.

    The tail up to the smallest point is integrated adaptively; consecutive
    increments use a 20-point Gauss-Legendre rule (adaptive for wide gaps).
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    order = np.argsort(flat)
    xs = flat[order]
    out = np.empty_like(xs)
    if xs.size == 0:
        return x.copy()
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)

    def scalar_pdf(t):
        return float(pdf(np.array([t]))[0])

    if xs[0] <= mode:
        out[0] = integrate.quad(scalar_pdf, -np.inf, xs[0], **opts)[0]
    else:
        out[0] = 1.0 - integrate.quad(scalar_pdf, xs[0], np.inf, **opts)[0]
    gaps = np.diff(xs)
    small = gaps <= 1.0
    inc = np.zeros_like(gaps)
    if np.any(small):
        a, b = xs[:-1][small], xs[1:][small]
        half = 0.5 * (b - a)
        nodes = (a + half)[:, None] + half[:, None] * _GL_X[None, :]
        inc[small] = half * (pdf(nodes.ravel()).reshape(nodes.shape) @ _GL_W)
    for k in np.flatnonzero(~small):
        inc[k] = integrate.quad(scalar_pdf, xs[k], xs[k + 1], **opts)[0]
    out[1:] = out[0] + np.cumsum(inc)
    res = np.empty_like(out)
    res[order] = np.clip(out, 0.0, 1.0)
    return res.reshape(x.shape)


class GridCdf:
    """CDF of a smooth density from cumulative Gauss-Legendre integrals on knots.

    ``F`` is stored at the knots; between knots one 20-point rule on
    ``[x_k, x]`` completes the integral. Beyond the outer knots adaptive
    quadrature takes over.
    """

    def __init__(self, pdf, knots):
        self.pdf = pdf
        self.knots = np.asarray(knots, dtype=float)
        self.values = cdf_by_quadrature(pdf, self.knots, mode=np.inf)

    def _gl(self, a, b):
        half = 0.5 * (b - a)
        nodes = (a + half)[:, None] + half[:, None] * _GL_X[None, :]
        return half * (self.pdf(nodes.ravel()).reshape(nodes.shape) @ _GL_W)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty(flat.shape)
        kn = self.knots
        inside = (flat >= kn[0]) & (flat <= kn[-1])
        if np.any(inside):
            xi = flat[inside]
            k = np.clip(np.searchsorted(kn, xi, side="right") - 1, 0, kn.size - 2)
            out[inside] = self.values[k] + self._gl(kn[k], xi)
        out[flat == np.inf] = 1.0
        out[flat == -np.inf] = 0.0
        rest = ~inside & np.isfinite(flat)
        if np.any(rest):
            out[rest] = cdf_by_quadrature(self.pdf, flat[rest], mode=0.5 * (kn[0] + kn[-1]))
        out = np.clip(out, 0.0, 1.0).reshape(x.shape)
        return out if out.ndim else float(out)

    def quantile(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        vals, kn = self.values, self.knots
        inside = (p >= vals[0]) & (p <= vals[-1])
        out = np.empty(p.shape)
        if np.any(inside):
            pi = p[inside]
            k = np.clip(np.searchsorted(vals, pi, side="right") - 1, 0, kn.size - 2)
            lo, hi = kn[k], kn[k + 1]
            frac = (pi - vals[k]) / np.maximum(vals[k + 1] - vals[k], 1e-300)
            out[inside] = solve_quantile(self.cdf, self.pdf, pi, x0=lo + frac * (hi - lo),
                                         lo=lo, hi=hi)
        if np.any(~inside):
            po = p[~inside]
            lo = np.where(po < vals[0], 2 * kn[0] - kn[-1], kn[-1])
            hi = np.where(po < vals[0], kn[0], 2 * kn[-1] - kn[0])
            out[~inside] = solve_quantile(self.cdf, self.pdf, po, x0=np.where(
                po < vals[0], kn[0], kn[-1]), lo=lo, hi=hi)
        return out


# --------------------------------------------------------------------------
# Margin families
# --------------------------------------------------------------------------

_REGISTRY: dict = {}


def _register(cls):
    _REGISTRY[cls.family] = cls
    return cls


class Margin:
    """Base class; subclasses define ``family`` and the four evaluators."""

    family = "abstract"
    support = (-np.inf, np.inf)

    def _check_support(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = self.support
        if np.any(np.isnan(y)) or np.any(y < lo) or np.any(y > hi):
            raise DomainError(f"value outside the support {self.support} of {self.family}")
        return y

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def logpdf(self, y):
        raise NotImplementedError

    def cdf(self, y):
        raise NotImplementedError

    def quantile(self, p):
        p = clamp_prob(_check_open_unit(p))
        out = solve_quantile(self.cdf, self.pdf, p.ravel(), x0=self._quantile_start(),
                             scale=self._scale_hint())
        return out.reshape(p.shape) if p.ndim else float(out[0])

    def _quantile_start(self):
        return 0.0

    def _scale_hint(self):
        return 1.0

    def sample(self, n, rng):
        return self.quantile(rng.uniform(P_CLAMP, 1 - P_CLAMP, size=n))

    @property
    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        lo, hi = self.support
        return {"family": self.family, "params": self.params,
                "support": [_json_float(lo), _json_float(hi)]}

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.params.items()
                          if not isinstance(v, list))
        return f"{type(self).__name__}({inner})"


def _json_float(v):
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def margin_from_dict(spec: dict) -> Margin:
    family = spec.get("family")
    if family not in _REGISTRY:
        raise DomainError(f"unknown margin family {family!r}")
    return _REGISTRY[family].from_params(spec.get("params", {}))


@_register
class NormalMargin(Margin):
    family = "normal"

    def __init__(self, loc=0.0, scale=1.0):
        if not scale > 0:
            raise DomainError("normal scale must be positive")
        self.loc, self.scale = float(loc), float(scale)

    @classmethod
    def from_params(cls, p):
        return cls(p.get("loc", 0.0), p.get("scale", 1.0))

    @property
    def params(self):
        return {"loc": self.loc, "scale": self.scale}

    def logpdf(self, y):
        x = (self._check_support(y) - self.loc) / self.scale
        return -0.5 * x * x - _LOG_SQRT_2PI - math.log(self.scale)

    def cdf(self, y):
        return special.ndtr((np.asarray(y, float) - self.loc) / self.scale)

    def quantile(self, p):
        p = clamp_prob(_check_open_unit(p))
        out = self.loc + self.scale * special.ndtri(p)
        return out if np.ndim(out) else float(out)

    def sample(self, n, rng):
        return self.loc + self.scale * rng.standard_normal(n)


@_register
class UniformMargin(Margin):
    family = "uniform"

    def __init__(self, lo=0.0, hi=1.0):
        if not hi > lo:
            raise DomainError("uniform margin requires hi > lo")
        self.lo, self.hi = float(lo), float(hi)
        self.support = (self.lo, self.hi)

    @classmethod
    def from_params(cls, p):
        return cls(p.get("lo", 0.0), p.get("hi", 1.0))

    @property
    def params(self):
        return {"lo": self.lo, "hi": self.hi}

    def logpdf(self, y):
        y = self._check_support(y)
        return np.full(y.shape, -math.log(self.hi - self.lo)) if y.ndim \
            else -math.log(self.hi - self.lo)

    def cdf(self, y):
        return np.clip((np.asarray(y, float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def quantile(self, p):
        p = clamp_prob(_check_open_unit(p))
        out = self.lo + (self.hi - self.lo) * p
        return out if np.ndim(out) else float(out)


@_register
class StudentTMargin(Margin):
    family = "student-t"

    def __init__(self, df, loc=0.0, scale=1.0):
        if not df > 0:
            raise DomainError("student-t degrees of freedom must be positive")
        if not scale > 0:
            raise DomainError("student-t scale must be positive")
        self.df, self.loc, self.scale = float(df), float(loc), float(scale)
        self._const = (special.gammaln(0.5 * (self.df + 1)) - special.gammaln(0.5 * self.df)
                       - 0.5 * math.log(self.df * math.pi) - math.log(self.scale))

    @classmethod
    def from_params(cls, p):
        return cls(p["df"], p.get("loc", 0.0), p.get("scale", 1.0))

    @property
    def params(self):
        return {"df": self.df, "loc": self.loc, "scale": self.scale}

    def logpdf(self, y):
        x = (self._check_support(y) - self.loc) / self.scale
        return self._const - 0.5 * (self.df + 1) * np.log1p(x * x / self.df)

    def cdf(self, y):
        return special.stdtr(self.df, (np.asarray(y, float) - self.loc) / self.scale)

    def quantile(self, p):
        p = clamp_prob(_check_open_unit(p))
        out = self.loc + self.scale * special.stdtrit(self.df, p)
        return out if np.ndim(out) else float(out)

    def sample(self, n, rng):
        return self.loc + self.scale * rng.standard_t(self.df, size=n)


def sahu_skewt_logpdf(z, delta, nu):
    """Log density of the univariate hidden-conditioning skew t (unit Gamma).

    ``2/s * t_nu(z/s) * T_{nu+1}(delta * x * sqrt((nu+1)/(x^2+nu)))`` with
    ``s = sqrt(1 + delta^2)`` and ``x = z/s``.
    """
    if not nu > 0:
        raise DomainError("skew-t degrees of freedom must be positive")
    z = np.asarray(z, dtype=float)
    s = math.sqrt(1.0 + delta * delta)
    x = z / s
    log_t = (special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu)
             - 0.5 * math.log(nu * math.pi) - 0.5 * (nu + 1) * np.log1p(x * x / nu))
    arg = delta * x * np.sqrt((nu + 1.0) / (x * x + nu))
    with np.errstate(divide="ignore"):
        log_prob = np.log(special.stdtr(nu + 1.0, arg))
    return math.log(2.0) - math.log(s) + log_t + log_prob


@_register
class SkewTMargin(Margin):
    """Univariate skew t with unit Gamma; the F_Zj of the skew-t copula."""

    family = "skew-t-univariate"

    def __init__(self, delta, nu):
        if not nu > 0:
            raise DomainError("skew-t degrees of freedom must be positive")
        self.delta, self.nu = float(delta), float(nu)
        self._cdf_grid = None

    @classmethod
    def from_params(cls, p):
        return cls(p["delta"], p["nu"])

    @property
    def params(self):
        return {"delta": self.delta, "nu": self.nu}

    def logpdf(self, y):
        return sahu_skewt_logpdf(self._check_support(y), self.delta, self.nu)

    def _grid(self):
        if self._cdf_grid is None:
            nu, s = self.nu, math.sqrt(1.0 + self.delta**2)
            # 2/s t_nu(z/s) bounds the density, so these knots straddle the 1e-4 anchors
            v = np.linspace(2.5e-5, 1 - 2.5e-5, 257)
            knots = s * special.stdtrit(nu, v)
            self._cdf_grid = GridCdf(self.pdf, knots)
        return self._cdf_grid

    def cdf(self, y):
        return self._grid().cdf(y)

    def quantile(self, p):
        p = clamp_prob(_check_open_unit(p))
        out = self._grid().quantile(p.ravel())
        return out.reshape(p.shape) if p.ndim else float(out[0])

    def sample(self, n, rng):
        w = rng.gamma(0.5 * self.nu, 2.0 / self.nu, size=n)
        q = np.abs(rng.standard_normal(n))
        return (self.delta * q + rng.standard_normal(n)) / np.sqrt(w)


def _check_loss(u, p):
    return u * (p - (u < 0))


@_register
class AsymLaplaceMargin(Margin):
    """Three-parameter asymmetric Laplace in the quantile parameterization.

    ``f(y) = p(1-p)/sigma * exp(-rho_p((y-mu)/sigma))`` with check function
    ``rho_p``, so that ``F(mu) = p``.
    """

    family = "asymmetric-laplace"

    def __init__(self, mu, sigma, p):
        if not sigma > 0:
            raise DomainError("asymmetric Laplace scale must be positive")
        if not 0 < p < 1:
            raise DomainError("asymmetric Laplace p must lie in (0, 1)")
        self.mu, self.sigma, self.p = float(mu), float(sigma), float(p)

    @classmethod
    def from_params(cls, p):
        return cls(p["mu"], p["sigma"], p["p"])

    @property
    def params(self):
        return {"mu": self.mu, "sigma": self.sigma, "p": self.p}

    def logpdf(self, y):
        u = (self._check_support(y) - self.mu) / self.sigma
        return math.log(self.p * (1 - self.p) / self.sigma) - _check_loss(u, self.p)

    def cdf(self, y):
        u = (np.asarray(y, float) - self.mu) / self.sigma
        p = self.p
        with np.errstate(over="ignore"):
            left = p * np.exp(np.minimum((1 - p) * u, 0.0))
            right = 1 - (1 - p) * np.exp(np.minimum(-p * u, 0.0))
        return np.where(u < 0, left, right)

    def quantile(self, q):
        q = clamp_prob(_check_open_unit(q))
        p = self.p
        lower = self.mu + self.sigma / (1 - p) * np.log(np.minimum(q, p) / p)
        upper = self.mu - self.sigma / p * np.log((1 - np.maximum(q, p)) / (1 - p))
        out = np.where(q <= p, lower, upper)
        return out if np.ndim(out) else float(out)

    def loglik(self, data):
        return float(np.sum(self.logpdf(data)))


@_register
class KdeMargin(Margin):
    """Gaussian-kernel density with per-observation bandwidths.

    The CDF integrates the kernels analytically.
    """

    family = "kde"
    _CHUNK = 4_000_000

    def __init__(self, data, bandwidths):
        self.data = np.asarray(data, dtype=float)
        self.bandwidths = np.broadcast_to(np.asarray(bandwidths, float), self.data.shape).copy()
        self._sd = float(np.std(self.data))

    @classmethod
    def from_params(cls, p):
        return cls(p["data"], p["bandwidths"])

    @property
    def params(self):
        return {"data": self.data.tolist(), "bandwidths": self.bandwidths.tolist()}

    def _kernel_sum(self, y, fn):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        out = np.empty(flat.shape)
        step = max(1, self._CHUNK // self.data.size)
        for s in range(0, flat.size, step):
            blk = flat[s:s + step, None]
            out[s:s + step] = fn((blk - self.data[None, :]) / self.bandwidths[None, :])
        return out.reshape(y.shape)

    def pdf(self, y):
        h = self.bandwidths
        return self._kernel_sum(self._check_support(y), lambda x: np.mean(
            np.exp(-0.5 * x * x) / h, axis=1)) / math.sqrt(2 * math.pi)

    def logpdf(self, y):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(y))

    def cdf(self, y):
        return self._kernel_sum(y, lambda x: np.mean(special.ndtr(x), axis=1))

    def _quantile_start(self):
        return float(np.median(self.data))

    def _scale_hint(self):
        return float(np.max(np.abs(self.data)) + 5 * np.max(self.bandwidths))

    def sample(self, n, rng):
        idx = rng.integers(0, self.data.size, size=n)
        return self.data[idx] + self.bandwidths[idx] * rng.standard_normal(n)

    def effective_support(self):
        pad = 5.0 * float(np.max(self.bandwidths))
        return float(self.data.min() - pad), float(self.data.max() + pad)


def _binned_fixed_kde(data, h, points, n_bins=4096):
    """Fixed-bandwidth Gaussian KDE at ``points`` via linear binning + FFT."""
    lo, hi = data.min() - 4 * h, data.max() + 4 * h
    grid = np.linspace(lo, hi, n_bins)
    dx = grid[1] - grid[0]
    pos = (data - lo) / dx
    left = np.floor(pos).astype(int)
    frac = pos - left
    counts = np.bincount(left, weights=1 - frac, minlength=n_bins)[:n_bins]
    counts += np.bincount(np.minimum(left + 1, n_bins - 1), weights=frac, minlength=n_bins)[:n_bins]
    half = int(min(n_bins - 1, math.ceil(5 * h / dx)))
    kx = np.arange(-half, half + 1) * dx
    kern = np.exp(-0.5 * (kx / h) ** 2) / (h * math.sqrt(2 * math.pi))
    dens = signal.fftconvolve(counts, kern, mode="same") / data.size
    return np.interp(points, grid, np.maximum(dens, 0.0))


def silverman_bandwidth(data) -> float:
    data = np.asarray(data, dtype=float)
    sd = float(np.std(data, ddof=1))
    iqr = float(np.subtract(*np.percentile(data, [75, 25])))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * data.size ** (-0.2)


def fit_kde(data, bandwidth_mode: str = "adaptive") -> KdeMargin:
    """Gaussian KDE margin: Silverman pilot, optionally Abramson-adapted.

    Adaptive mode rescales each kernel by ``(pilot(x_i)/g)^(-1/2)`` with
    ``g`` the geometric mean of the pilot density at the data.
    """
    data = np.asarray(data, dtype=float).ravel()
    if data.size < 20:
        raise FitError(f"KDE needs at least 20 observations, got {data.size}")
    if not np.all(np.isfinite(data)):
        raise FitError("KDE data must be finite")
    if np.std(data) == 0:
        raise FitError("KDE data have zero variance")
    h = silverman_bandwidth(data)
    if bandwidth_mode == "fixed":
        return KdeMargin(data, h)
    if bandwidth_mode != "adaptive":
        raise DomainError(f"unknown bandwidth mode {bandwidth_mode!r}")
    if data.size <= 2000:
        diff = (data[:, None] - data[None, :]) / h
        pilot = np.mean(np.exp(-0.5 * diff * diff), axis=1) / (h * math.sqrt(2 * math.pi))
    else:
        pilot = _binned_fixed_kde(data, h, data)
    pilot = np.maximum(pilot, 1e-300)
    g = math.exp(float(np.mean(np.log(pilot))))
    return KdeMargin(data, h * np.sqrt(g / pilot))


def fit_asym_laplace(data) -> AsymLaplaceMargin:
    """Maximum-likelihood asymmetric Laplace fit.

    For fixed ``p`` the MLE of ``mu`` is the sample p-quantile and ``sigma``
    is the mean check loss, so only a one-dimensional profile over ``p``
    is optimized numerically.
    """
    data = np.asarray(data, dtype=float).ravel()
    n = data.size
    if n < 10:
        raise FitError(f"asymmetric Laplace fit needs at least 10 observations, got {n}")
    if not np.all(np.isfinite(data)) or np.std(data) == 0:
        raise FitError("asymmetric Laplace data must be finite with positive variance")
    ys = np.sort(data)

    def profile(p):
        # any point between the order statistics bracketing p*n minimises the check loss
        mu = ys[min(n - 1, max(0, int(math.ceil(n * p)) - 1))]
        sigma = float(np.mean(_check_loss(ys - mu, p)))
        return mu, sigma

    def negll(p):
        mu, sigma = profile(p)
        if sigma <= 0:
            return np.inf
        return -(n * math.log(p * (1 - p)) - n * math.log(sigma) - n)

    start = AsymLaplaceMargin(float(np.median(data)), float(np.std(data)) / math.sqrt(8.0), 0.5)
    # the profile is piecewise smooth in p; a grid scan locates the basin
    grid = np.linspace(0.01, 0.99, 99)
    vals = np.array([negll(p) for p in grid])
    k = int(np.argmin(vals))
    res = optimize.minimize_scalar(negll, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, 98)]),
                                   method="bounded", options={"xatol": 1e-10})
    if not res.success or not np.isfinite(res.fun):
        raise FitError(f"asymmetric Laplace optimizer failed: {res.message}")
    p = float(res.x) if res.fun <= vals[k] else float(grid[k])
    mu, sigma = profile(p)
    fitted = AsymLaplaceMargin(mu, sigma, p)
    if fitted.loglik(data) < start.loglik(data) - 1e-9:
        raise FitError("asymmetric Laplace fit is worse than its moment-matched start")
    return fitted


# --------------------------------------------------------------------------
# Interpolation tables
# --------------------------------------------------------------------------

def _monotone_slopes(x, y, m):
    """Fritsch-Carlson limiter: clip Hermite slopes so the cubic stays monotone."""
    m = np.maximum(np.array(m, dtype=float), 0.0)
    secant = np.diff(y) / np.diff(x)
    for k in range(secant.size):
        d = secant[k]
        if d <= 0:
            m[k] = m[k + 1] = 0.0
            continue
        a, b = m[k] / d, m[k + 1] / d
        r = a * a + b * b
        if r > 9.0:
            t = 3.0 / math.sqrt(r)
            m[k], m[k + 1] = t * a * d, t * b * d
    return m


@dataclass(frozen=True)
class InterpTable:
    """Tabulated quantile and log-density of a continuous distribution.

    Inside ``[p1, pN]`` the quantile is a monotone cubic Hermite interpolant
    through ``(grid_p, grid_q)`` using the exact slopes ``1/f``; the
    log-density is a cubic spline through ``(grid_q, grid_logf)``. Outside
    the anchors the distribution continues with exponential tails matched
    to the anchor density.
    """

    grid_q: np.ndarray
    grid_p: np.ndarray
    grid_logf: np.ndarray
    p1: float = TABLE_P1
    pN: float = TABLE_PN
    _q_of_p: object = field(default=None, repr=False, compare=False)
    _p_of_q: object = field(default=None, repr=False, compare=False)
    _logf_of_q: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.grid_q, float)
        p = np.asarray(self.grid_p, float)
        b = np.asarray(self.grid_logf, float)
        if q.ndim != 1 or q.size < 2 or not (q.shape == p.shape == b.shape):
            raise DomainError("interpolation table grids must be 1-D and equally sized")
        if np.any(np.diff(q) <= 0) or np.any(np.diff(p) <= 0):
            raise DomainError("interpolation table grids must be strictly increasing")
        f = np.exp(b)
        object.__setattr__(self, "grid_q", q)
        object.__setattr__(self, "grid_p", p)
        object.__setattr__(self, "grid_logf", b)
        object.__setattr__(self, "_q_of_p",
                           CubicHermiteSpline(p, q, _monotone_slopes(p, q, 1.0 / f)))
        object.__setattr__(self, "_p_of_q",
                           CubicHermiteSpline(q, p, _monotone_slopes(q, p, f)))
        object.__setattr__(self, "_logf_of_q", CubicSpline(q, b))

    # tails: F(q) = p_lo * exp(k_lo (q - q_lo)) below, 1-F = (1-p_hi) exp(-k_hi (q - q_hi)) above
    @property
    def _k_lo(self):
        return math.exp(self.grid_logf[0]) / self.grid_p[0]

    @property
    def _k_hi(self):
        return math.exp(self.grid_logf[-1]) / (1.0 - self.grid_p[-1])

    def quantile(self, p):
        p = clamp_prob(np.asarray(p, dtype=float))
        pl, ph = self.grid_p[0], self.grid_p[-1]
        out = self._q_of_p(np.clip(p, pl, ph))
        with np.errstate(divide="ignore"):
            lo_tail = self.grid_q[0] + np.log(p / pl) / self._k_lo
            hi_tail = self.grid_q[-1] - np.log((1 - p) / (1 - ph)) / self._k_hi
        out = np.where(p < pl, lo_tail, np.where(p > ph, hi_tail, out))
        return out if out.ndim else float(out)

    def _invert_inside(self, z):
        # invert the quantile spline so cdf and quantile round-trip exactly
        gp = self.grid_p
        k = np.clip(np.searchsorted(self.grid_q, z, side="right") - 1, 0, gp.size - 2)
        lo, hi = gp[k].copy(), gp[k + 1].copy()
        p = np.clip(self._p_of_q(z), lo, hi)
        dq = self._q_of_p.derivative()
        for _ in range(60):
            err = self._q_of_p(p) - z
            lo = np.where(err < 0, p, lo)
            hi = np.where(err < 0, hi, p)
            slope = dq(p)
            with np.errstate(divide="ignore", invalid="ignore"):
                pn = p - err / slope
            pn = np.where((slope > 0) & (pn > lo) & (pn < hi), pn, 0.5 * (lo + hi))
            if np.all(np.abs(pn - p) <= 1e-16 + 1e-15 * p):
                return pn
            p = pn
        return p

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        ql, qh = self.grid_q[0], self.grid_q[-1]
        mid = self._invert_inside(np.clip(z, ql, qh))
        lo_tail = self.grid_p[0] * np.exp(np.minimum(self._k_lo * (z - ql), 0.0))
        hi_tail = 1.0 - (1.0 - self.grid_p[-1]) * np.exp(np.minimum(-self._k_hi * (z - qh), 0.0))
        out = np.where(z < ql, lo_tail, np.where(z > qh, hi_tail, mid))
        out = np.clip(out, 0.0, 1.0)
        return out if out.ndim else float(out)

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        ql, qh = self.grid_q[0], self.grid_q[-1]
        mid = self._logf_of_q(np.clip(z, ql, qh))
        lo_tail = self.grid_logf[0] + self._k_lo * (z - ql)
        hi_tail = self.grid_logf[-1] - self._k_hi * (z - qh)
        out = np.where(z < ql, lo_tail, np.where(z > qh, hi_tail, mid))
        return out if out.ndim else float(out)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def to_dict(self) -> dict:
        return {"grid_q": self.grid_q.tolist(), "grid_p": self.grid_p.tolist(),
                "grid_logf": self.grid_logf.tolist(), "p1": self.p1, "pN": self.pN}

    @classmethod
    def from_dict(cls, d) -> "InterpTable":
        return cls(np.array(d["grid_q"]), np.array(d["grid_p"]), np.array(d["grid_logf"]),
                   d.get("p1", TABLE_P1), d.get("pN", TABLE_PN))


def _parallel_eval(fn, x, workers):
    if workers <= 1 or x.size < 2 * workers:
        return np.asarray(fn(x), dtype=float)
    chunks = np.array_split(x, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, chunks))
    return np.concatenate(parts)


def build_interp_table(cdf_fn, logpdf_fn, N: int = 100, quantile_fn=None,
                       x0: float = 0.0, scale: float = 1.0, workers: int = 1,
                       p1: float = TABLE_P1, pN: float = TABLE_PN) -> InterpTable:
    """Tabulate a distribution on N equally spaced quantile nodes.

    The anchors ``q_1 = F^-1(p1)`` and ``q_N = F^-1(pN)`` come from
    ``quantile_fn`` if given, otherwise from Newton root finding on
    ``cdf_fn``. The CDF and log-density are then evaluated on the uniform
    grid between them (optionally fanned out over ``workers`` threads).
    """
    if N < 2:
        raise DomainError("interpolation tables need at least two nodes")
    if quantile_fn is not None:
        q1, qN = (float(v) for v in np.atleast_1d(quantile_fn(np.array([p1, pN]))))
    else:
        def pdf(x):
            return np.exp(logpdf_fn(x))
        try:
            q1, qN = solve_quantile(cdf_fn, pdf, np.array([p1, pN]), x0=x0, scale=scale)
        except NumericError as exc:
            raise NumericError(f"anchor root finding failed: {exc}") from None
    if not (np.isfinite(q1) and np.isfinite(qN) and qN > q1):
        raise NumericError("invalid interpolation anchors", q1=q1, qN=qN)
    grid_q = q1 + (qN - q1) / (N - 1) * np.arange(N)
    grid_q[-1] = qN
    grid_p = _parallel_eval(cdf_fn, grid_q, workers)
    grid_logf = _parallel_eval(logpdf_fn, grid_q, workers)
    # the table is anchored at the requested probabilities by construction
    grid_p[0], grid_p[-1] = p1, pN
    bad = np.diff(grid_p) <= 0
    if np.any(bad):
        raise NumericError("tabulated CDF is not strictly increasing",
                           first_bad=int(np.argmax(bad)))
    return InterpTable(grid_q, grid_p, grid_logf, p1, pN)


@_register
class TableMargin(Margin):
    """A margin backed by an :class:`InterpTable`."""

    family = "interp-table"

    def __init__(self, table: InterpTable):
        self.table = table

    @classmethod
    def from_params(cls, p):
        return cls(InterpTable.from_dict(p))

    @property
    def params(self):
        return self.table.to_dict()

    def logpdf(self, y):
        return self.table.logpdf(self._check_support(y))

    def cdf(self, y):
        return self.table.cdf(y)

    def quantile(self, p):
        return self.table.quantile(_check_open_unit(p))


# --------------------------------------------------------------------------
# Functional front door
# --------------------------------------------------------------------------

def margin_logpdf(margin: Margin, y):
    return margin.logpdf(y)


def margin_cdf(margin: Margin, y):
    return margin.cdf(y)


def margin_quantile(margin: Margin, p):
    return margin.quantile(p)


def fit_margin(data, family: str = "kde", **options) -> Margin:
    """Fit a margin of the named family to ``data``."""
    data = np.asarray(data, dtype=float).ravel()
    if family == "kde":
        return fit_kde(data, options.get("bandwidth_mode", "adaptive"))
    if family == "asymmetric-laplace":
        return fit_asym_laplace(data)
    if family == "normal":
        if data.size < 2 or np.std(data) == 0:
            raise FitError("normal margin needs non-constant data")
        return NormalMargin(float(np.mean(data)), float(np.std(data, ddof=1)))
    if family == "uniform":
        return UniformMargin(0.0, 1.0)
    raise DomainError(f"cannot fit margin family {family!r}")
