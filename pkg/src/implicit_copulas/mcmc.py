"""Sampling infrastructure shared by the MCMC fitters.

Seeded RNG streams, truncated-normal draws, the banded precision sampler,
adaptive random-walk Metropolis-Hastings and chain storage/summaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

from .errors import ContractError, DomainError, MatrixError

DEFAULT_SEED = 20211015

# Robbins-Monro step exponent; any value in (0.5, 1] gives diminishing adaptation.
_RM_EXPONENT = 0.6
_TAIL_SWITCH = 4.0


# --------------------------------------------------------------------------
# RNG streams
# --------------------------------------------------------------------------

def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator; ``None`` maps to the package default seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(DEFAULT_SEED if seed is None else seed))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """Independent, reproducible streams for parallel chains or workers."""
    ss = np.random.SeedSequence(DEFAULT_SEED if seed is None else seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n)]


# --------------------------------------------------------------------------
# Truncated normal
# --------------------------------------------------------------------------

def _std_trunc_inverse(a, b, u):
    # inverse-CDF on whichever side of zero keeps the probabilities away from 1
    x = np.empty_like(a)
    right = a >= 0
    if np.any(right):
        sa, sb = ndtr(-a[right]), ndtr(-b[right])
        x[right] = -ndtri(sa - u[right] * (sa - sb))
    left = ~right
    if np.any(left):
        pa, pb = ndtr(a[left]), ndtr(b[left])
        x[left] = ndtri(pa + u[left] * (pb - pa))
    return x


def _std_trunc_upper_tail(a, b, rng):
    """Robert (1995) rejection for a >= _TAIL_SWITCH, optional finite b."""
    x = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        aa, bb = a[todo], b[todo]
        narrow = (bb - aa) * (aa + bb) <= 2.0
        prop = np.empty_like(aa)
        logacc = np.empty_like(aa)
        if np.any(narrow):
            an, bn = aa[narrow], bb[narrow]
            prop[narrow] = an + (bn - an) * rng.random(an.size)
            logacc[narrow] = 0.5 * (an**2 - prop[narrow] ** 2)
        wide = ~narrow
        if np.any(wide):
            aw = aa[wide]
            alpha = 0.5 * (aw + np.sqrt(aw**2 + 4.0))
            prop[wide] = aw + rng.exponential(1.0 / alpha)
            logacc[wide] = -0.5 * (prop[wide] - alpha) ** 2
        ok = (np.log(rng.random(aa.size)) <= logacc) & (prop < bb)
        x[todo[ok]] = prop[ok]
        todo = todo[~ok]
    return x


def truncated_normal(mean, sd, lo, hi, rng, size=None):
    """Draw from N(mean, sd^2) restricted to [lo, hi).

    Inverse-CDF sampling for central intervals; exponential rejection when the
    interval lies more than four standard deviations out, where the inverse
    CDF loses precision. All arguments broadcast.
    """
    mean, sd, lo, hi = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean, sd, lo, hi))
    )
    if size is not None:
        mean, sd, lo, hi = (np.broadcast_to(v, size) for v in (mean, sd, lo, hi))
    if np.any(~(lo < hi)):
        raise DomainError("truncated_normal requires lo < hi")
    if np.any(~(sd > 0)):
        raise DomainError("truncated_normal requires sd > 0")
    shape = mean.shape
    a = ((lo - mean) / sd).ravel()
    b = ((hi - mean) / sd).ravel()
    x = np.empty(a.size)

    upper = a >= _TAIL_SWITCH
    lower = b <= -_TAIL_SWITCH
    mid = ~(upper | lower)
    if np.any(upper):
        x[upper] = _std_trunc_upper_tail(a[upper], b[upper], rng)
    if np.any(lower):
        x[lower] = -_std_trunc_upper_tail(-b[lower], -a[lower], rng)
    if np.any(mid):
        x[mid] = _std_trunc_inverse(a[mid], b[mid], rng.random(int(mid.sum())))
    # guard the half-open interval against rounding at the edges
    x = np.clip(x, a, np.nextafter(b, -np.inf))
    out = mean.ravel() + sd.ravel() * x
    out = np.clip(out, lo.ravel(), np.nextafter(hi.ravel(), -np.inf))
    out = out.reshape(shape)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Banded precision sampler
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BandedPrecision:
    """Symmetric banded matrix in LAPACK lower storage.

    ``bands[k, t]`` holds the entry ``(t + k, t)``; row 0 is the diagonal.
    """

    bands: np.ndarray

    @property
    def dim(self) -> int:
        return self.bands.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.bands.shape[0] - 1

    @classmethod
    def from_dense(cls, mat, bandwidth: int) -> "BandedPrecision":
        mat = np.asarray(mat, dtype=float)
        n = mat.shape[0]
        bands = np.zeros((bandwidth + 1, n))
        for k in range(bandwidth + 1):
            bands[k, : n - k] = np.diagonal(mat, -k)
        return cls(bands)

    def to_dense(self) -> np.ndarray:
        n, out = self.dim, np.zeros((self.dim, self.dim))
        for k in range(self.bandwidth + 1):
            idx = np.arange(n - k)
            out[idx + k, idx] = self.bands[k, : n - k]
            out[idx, idx + k] = self.bands[k, : n - k]
        return out

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = self.bands[0] * v
        n = self.dim
        for k in range(1, self.bandwidth + 1):
            off = self.bands[k, : n - k]
            out[k:] += off * v[: n - k]
            out[: n - k] += off * v[k:]
        return out


class BandedFactor(NamedTuple):
    chol: np.ndarray  # lower Cholesky factor, same storage as BandedPrecision
    logdet: float  # log-determinant of the precision


def banded_cholesky(prec: BandedPrecision) -> BandedFactor:
    try:
        cb = linalg.cholesky_banded(prec.bands, lower=True)
    except linalg.LinAlgError as exc:
        raise MatrixError(f"banded precision is not positive definite: {exc}") from None
    return BandedFactor(cb, 2.0 * float(np.sum(np.log(cb[0]))))


def _chol_t_solve(cb, rhs):
    """Solve L^T x = rhs for banded lower L."""
    bw, n = cb.shape[0] - 1, cb.shape[1]
    upper = np.zeros_like(cb)
    for k in range(bw + 1):
        upper[bw - k, k:] = cb[k, : n - k]
    return linalg.solve_banded((0, bw), upper, rhs, check_finite=False)


def _chol_t_matvec(cb, v):
    """Compute L^T v for banded lower L."""
    bw, n = cb.shape[0] - 1, cb.shape[1]
    out = cb[0] * v
    for k in range(1, bw + 1):
        out[: n - k] += cb[k, : n - k] * v[k:]
    return out


def banded_gaussian_mean(factor: BandedFactor, linear_term) -> np.ndarray:
    return linalg.cho_solve_banded((factor.chol, True), np.asarray(linear_term, float),
                                   check_finite=False)


def banded_gaussian_sample(prec, linear_term, rng, factor: BandedFactor | None = None,
                           return_mean=False):
    """Draw from N(prec^-1 b, prec^-1) through the banded Cholesky factor.

    Cost is O(T b^2). Pass a precomputed ``factor`` to reuse a factorization.
    """
    if factor is None:
        factor = banded_cholesky(prec)
    mean = banded_gaussian_mean(factor, linear_term)
    eps = rng.standard_normal(mean.shape[0])
    x = mean + _chol_t_solve(factor.chol, eps)
    return (x, mean) if return_mean else x


def banded_gaussian_draw(mean, factor: BandedFactor, rng) -> np.ndarray:
    """Draw from N(mean, P^-1) given the banded factor of P."""
    mean = np.asarray(mean, dtype=float)
    return mean + _chol_t_solve(factor.chol, rng.standard_normal(mean.shape[0]))


def banded_gaussian_logpdf(x, mean, factor: BandedFactor) -> float:
    r = _chol_t_matvec(factor.chol, np.asarray(x, float) - mean)
    n = r.shape[0]
    return 0.5 * factor.logdet - 0.5 * n * np.log(2 * np.pi) - 0.5 * float(r @ r)


def ar1_precision(n: int, rho: float, sigma2: float) -> BandedPrecision:
    """Precision of a stationary zero-mean AR(1) path of length ``n``."""
    bands = np.zeros((2, n))
    bands[0, :] = 1.0 + rho**2
    bands[0, 0] = bands[0, -1] = 1.0
    if n == 1:
        bands[0, 0] = 1.0 - rho**2
    bands[1, : n - 1] = -rho
    return BandedPrecision(bands / sigma2)


# --------------------------------------------------------------------------
# Adaptive random-walk Metropolis-Hastings
# --------------------------------------------------------------------------

class MHState(NamedTuple):
    x: np.ndarray
    logp: float


@dataclass(frozen=True)
class ProposalScale:
    """Random-walk proposal: ``step = exp(log_scale) * shape @ N(0, I)``."""

    log_scale: float = 0.0
    target: float = 0.44
    n: int = 0
    adapting: bool = True
    shape: np.ndarray | None = None

    @classmethod
    def for_dim(cls, dim: int, scale: float = 1.0, shape=None) -> "ProposalScale":
        target = 0.44 if dim == 1 else 0.234
        return cls(log_scale=float(np.log(scale)), target=target, shape=shape)

    def frozen(self) -> "ProposalScale":
        return replace(self, adapting=False)

    def with_shape(self, cov) -> "ProposalScale":
        """Adopt a proposal shape from an (empirical) covariance."""
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = cov.shape[0]
        try:
            chol = np.linalg.cholesky(cov + 1e-10 * np.eye(d))
        except np.linalg.LinAlgError:
            return self
        return replace(self, shape=chol)


def adaptive_rw_mh(logpost: Callable, state: MHState, scale: ProposalScale, rng):
    """One random-walk MH step with Robbins-Monro scale adaptation.

    ``state.x`` lives on the working (unconstrained) scale. Non-finite
    proposal log-posteriors are rejections. Returns ``(state, accepted, scale)``.
    """
    if not np.isfinite(state.logp):
        raise ContractError("current log-posterior must be finite")
    x = np.atleast_1d(np.asarray(state.x, dtype=float))
    z = rng.standard_normal(x.shape[0])
    step = z if scale.shape is None else scale.shape @ z
    prop = x + np.exp(scale.log_scale) * step
    lp = logpost(prop)
    log_ratio = lp - state.logp if np.isfinite(lp) else -np.inf
    accepted = bool(np.log(rng.random()) < log_ratio)
    if accepted:
        state = MHState(prop, float(lp))
    if scale.adapting:
        n = scale.n + 1
        alpha = float(np.exp(min(0.0, log_ratio)))
        scale = replace(scale, n=n, log_scale=scale.log_scale
                        + n ** (-_RM_EXPONENT) * (alpha - scale.target))
    return state, accepted, scale


class RunningMoments:
    """Welford accumulator used to learn proposal shapes during burn-in."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))

    def push(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self._m2 += np.outer(delta, x - self.mean)

    @property
    def cov(self):
        return self._m2 / max(self.n - 1, 1)


# --------------------------------------------------------------------------
# Chains
# --------------------------------------------------------------------------

@dataclass
class Chain:
    """Retained posterior draws plus bookkeeping.

    ``draws`` has one row per retained iterate (burn-in already discarded).
    ``blocks`` maps parameter names to the MH block whose acceptance rate
    describes them; Gibbs-updated parameters are absent.
    """

    names: list
    draws: np.ndarray
    latents: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    burn_in: int = 0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.draws = np.asarray(self.draws, dtype=float).reshape(-1, len(self.names))

    def __len__(self):
        return self.draws.shape[0]

    def __getitem__(self, name) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def columns(self, prefix: str) -> np.ndarray:
        """All columns named ``prefix_<k>`` (or ``prefix[k]``), in order."""
        idx = [i for i, n in enumerate(self.names)
               if n.startswith(prefix + "_") or n.startswith(prefix + "[")]
        return self.draws[:, idx]

    def accept_rates(self) -> dict:
        return {k: (self.accepted.get(k, 0) / v if v else float("nan"))
                for k, v in self.proposed.items()}

    def to_csv(self, path):
        write_csv(path, self.names, self.draws)

    def sidecar(self) -> dict:
        return {"burn_in": self.burn_in, "seed": self.seed, "retained": len(self),
                "accept_rates": self.accept_rates(), "proposed": self.proposed,
                "blocks": self.blocks, "meta": self.meta}


class ChainRecorder:
    """Preallocated storage that keeps only post-burn-in iterates."""

    def __init__(self, names, iters: int, burn_in: int):
        self.names = list(names)
        self.burn_in = min(burn_in, iters)
        self.draws = np.empty((iters - self.burn_in, len(self.names)))
        self.accepted: dict = {}
        self.proposed: dict = {}

    def record(self, it: int, values):
        if it >= self.burn_in:
            self.draws[it - self.burn_in] = values

    def count(self, block: str, accepted: bool):
        self.proposed[block] = self.proposed.get(block, 0) + 1
        self.accepted[block] = self.accepted.get(block, 0) + int(accepted)

    def finish(self, **kwargs) -> Chain:
        return Chain(self.names, self.draws, accepted=self.accepted,
                     proposed=self.proposed, burn_in=self.burn_in, **kwargs)


def default_burn_in(iters: int, fraction: float = 0.2) -> int:
    return int(np.floor(iters * fraction))


def chain_summary(chain: Chain) -> dict:
    """Posterior mean, quantiles and acceptance rate per parameter."""
    if len(chain) == 0:
        raise DomainError("cannot summarise an empty chain")
    rates = chain.accept_rates()
    out = {}
    qs = np.quantile(chain.draws, [0.025, 0.05, 0.5, 0.95, 0.975], axis=0)
    means = chain.draws.mean(axis=0)
    for j, name in enumerate(chain.names):
        block = chain.blocks.get(name)
        rate = rates.get(block) if block is not None else None
        out[name] = {"mean": float(means[j]), "q025": float(qs[0, j]),
                     "q05": float(qs[1, j]), "q50": float(qs[2, j]),
                     "q95": float(qs[3, j]), "q975": float(qs[4, j]),
                     "accept_rate": None if rate is None else float(rate)}
    return out


# --------------------------------------------------------------------------
# CSV / JSON helpers
# --------------------------------------------------------------------------

def write_csv(path, header, rows):
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(format(v, ".17g") for v in r) + "\n")


def read_csv(path):
    """Return ``(header, values)`` for a numeric CSV with a header row."""
    with open(path, encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
        if header == [""]:
            raise DomainError(f"{path}: empty file")
        vals = np.loadtxt(fh, delimiter=",", ndmin=2)
    if vals.size == 0:
        vals = np.empty((0, len(header)))
    return header, vals


def read_chain_csv(path, sidecar_path=None) -> Chain:
    names, draws = read_csv(path)
    chain = Chain(names, draws)
    if sidecar_path is not None:
        with open(sidecar_path, encoding="utf-8") as fh:
            side = json.load(fh)
        chain.burn_in = side.get("burn_in", 0)
        chain.seed = side.get("seed")
        chain.proposed = side.get("proposed", {})
        rates = side.get("accept_rates", {})
        chain.accepted = {k: int(round(rates[k] * v)) for k, v in chain.proposed.items()
                          if rates.get(k) is not None}
        chain.blocks = side.get("blocks", {})
        chain.meta = side.get("meta", {})
    return chain
