"""Sampling kernels and normal-distribution helpers used by the sampler and
the data generators.

All samplers take an explicit ``numpy.random.Generator``; use
:func:`make_rng` to build one from a ``(seed, stream_id)`` pair so that
independent replicates get independent, reproducible streams.

Inverse gamma is parametrized by ``(shape, rate)`` with density proportional
to ``x**(-shape - 1) * exp(-rate / x)`` everywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# one-sided truncation points beyond this many sds use exponential rejection
TAIL_SWITCH = 4.0


class ParameterError(ValueError):
    """Invalid distribution parameters."""


class NumericalError(ArithmeticError):
    """A matrix factorization failed even after diagonal jitter."""


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for stream ``stream_id`` of master ``seed``.

    Distinct stream ids are derived with ``SeedSequence`` spawn keys, so they
    are statistically independent of each other.
    """
    if seed < 0 or stream_id < 0:
        raise ParameterError("seed and stream_id must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class TruncInterval:
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper) or not self.lower < self.upper:
            raise ParameterError(f"invalid interval ({self.lower}, {self.upper})")


# ---------------------------------------------------------------------------
# normal density / cdf

def normal_pdf_cdf(t: float) -> tuple[float, float]:
    """Standard normal density and cumulative distribution at ``t``."""
    t = float(t)
    return math.exp(-0.5 * t * t - LOG_SQRT_2PI), float(ndtr(t))


def normal_logpdf(t):
    t = np.asarray(t, dtype=float)
    return -0.5 * t * t - LOG_SQRT_2PI


def normal_logcdf(t):
    """log Phi(t), accurate far into the lower tail."""
    return log_ndtr(t)


def normal_logpdf_scaled(x, sd):
    """log N(x; 0, sd**2) including the ``1/sd`` normalization."""
    x = np.asarray(x, dtype=float)
    sd = np.asarray(sd, dtype=float)
    z = x / sd
    return -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI


# ---------------------------------------------------------------------------
# truncated normal

def _exp_tail(a, b, rng):
    """Standard normal truncated to [a, b] with a > 0, via a translated
    exponential proposal (Robert 1995). b may be +inf."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(a.shape)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    idx = np.arange(a.size)
    while idx.size:
        aa, bb, ll = a[idx], b[idx], lam[idx]
        # exponential truncated to [0, b - a]; exact inverse cdf
        span = np.where(np.isfinite(bb), -np.expm1(-ll * (bb - aa)), 1.0)
        u = rng.random(idx.size)
        x = aa - np.log1p(-u * span) / ll
        ok = (rng.random(idx.size) <= np.exp(-0.5 * (x - ll) ** 2)) & (x > aa) & (x < bb)
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def _inv_cdf(a, b, rng):
    """Standard normal truncated to (a, b) by cdf inversion, using the tail
    that keeps the most precision."""
    out = np.empty(a.shape)
    idx = np.arange(a.size)
    while idx.size:
        aa, bb = a[idx], b[idx]
        u = rng.random(idx.size)
        upper = aa >= 0.0
        x = np.empty(idx.size)
        # interval in the upper half: invert the survival function
        if upper.any():
            pa, pb = ndtr(-aa[upper]), ndtr(-bb[upper])
            x[upper] = -ndtri(pb + u[upper] * (pa - pb))
        lo = ~upper
        if lo.any():
            pa, pb = ndtr(aa[lo]), ndtr(bb[lo])
            x[lo] = ndtri(pa + u[lo] * (pb - pa))
        ok = (x > aa) & (x < bb)
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def std_truncnorm(a, b, rng: np.random.Generator) -> np.ndarray:
    """Vectorized standard normal draws truncated to ``(a, b)``.

    ``a`` and ``b`` broadcast against each other; infinite bounds allowed.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a, b = a.ravel(), b.ravel()
    out = np.empty(a.size)
    hi_tail = a > TAIL_SWITCH
    lo_tail = b < -TAIL_SWITCH
    mid = ~(hi_tail | lo_tail)
    if hi_tail.any():
        out[hi_tail] = _exp_tail(a[hi_tail], b[hi_tail], rng)
    if lo_tail.any():
        out[lo_tail] = -_exp_tail(-b[lo_tail], -a[lo_tail], rng)
    if mid.any():
        out[mid] = _inv_cdf(a[mid], b[mid], rng)
    return out.reshape(shape)


def std_truncnorm_above(a, rng: np.random.Generator) -> np.ndarray:
    """Standard normal draws conditioned on ``Z > a`` (vector ``a``).

    Fast path for one-sided truncation: one cdf inversion per entry, with
    exponential rejection for entries beyond the tail switch.
    """
    a = np.asarray(a, dtype=float)
    tail = a > TAIL_SWITCH
    x = -ndtri(rng.random(a.size) * ndtr(-a))
    if tail.any():
        x[tail] = _exp_tail(a[tail], np.full(int(tail.sum()), np.inf), rng)
    bad = ~(x > a)
    if bad.any():
        x[bad] = _inv_cdf(a[bad], np.full(int(bad.sum()), np.inf), rng)
    return x


def truncnorm_draws(mu, sd, lower, upper, rng: np.random.Generator) -> np.ndarray:
    """Vectorized N(mu, sd**2) draws truncated to ``(lower, upper)``.

    No validation; the sampler's hot path calls this directly.
    """
    z = std_truncnorm((lower - mu) / sd, (upper - mu) / sd, rng)
    x = mu + sd * z
    # rounding can land exactly on a finite bound when sd is tiny
    return np.clip(x, np.nextafter(lower, np.inf), np.nextafter(upper, -np.inf))


def sample_truncated_normal(mu: float, var: float, interval: TruncInterval,
                            rng: np.random.Generator, size=None):
    """Draw from N(mu, var) restricted to ``interval``."""
    if not isinstance(interval, TruncInterval):
        interval = TruncInterval(*interval)
    if not var > 0 or not math.isfinite(var):
        raise ParameterError(f"variance must be positive, got {var}")
    if not math.isfinite(mu):
        raise ParameterError(f"mean must be finite, got {mu}")
    n = 1 if size is None else size
    x = truncnorm_draws(np.full(n, float(mu)), math.sqrt(var),
                        interval.lower, interval.upper, rng)
    return float(x[0]) if size is None else x


# ---------------------------------------------------------------------------
# scalar families

def _check_positive(**kw):
    for name, val in kw.items():
        if not np.all(np.asarray(val) > 0) or not np.all(np.isfinite(val)):
            raise ParameterError(f"{name} must be positive and finite, got {val}")


def sample_inverse_gamma(shape, rate, rng: np.random.Generator, size=None):
    """Inverse gamma with density proportional to x**(-shape-1) exp(-rate/x)."""
    _check_positive(shape=shape, rate=rate)
    return rate / rng.standard_gamma(shape, size=size)


def sample_inverse_gaussian(mean, shape, rng: np.random.Generator, size=None):
    """Inverse Gaussian (Wald) draws by the Michael-Schucany-Haas
    transformation.

    The root is written as ``mean / (1 + t + sqrt(t*t + 2t))`` which stays
    accurate when ``mean`` is huge (coefficients near zero in the Laplace
    mixing update).
    """
    _check_positive(mean=mean, shape=shape)
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = np.broadcast(mean, shape).shape
    z = rng.standard_normal(size)
    t = mean * z * z / (2.0 * shape)
    x = mean / (1.0 + t + np.sqrt(t * t + 2.0 * t))
    u = rng.random(size)
    out = np.where(u <= mean / (mean + x), x, mean * mean / x)
    return out if out.ndim else float(out)


def sample_beta(a, b, rng: np.random.Generator, size=None):
    _check_positive(a=a, b=b)
    return rng.beta(a, b, size=size)


# ---------------------------------------------------------------------------
# multivariate normal

def _cholesky_jitter(mat: np.ndarray, tries: int = 3) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * float(np.mean(np.diag(mat)))
    if not jitter > 0:
        jitter = 1e-10
    for _ in range(tries):
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(mat) if np.all(np.isfinite(mat)) else math.inf
    raise NumericalError(
        f"cholesky failed for {mat.shape[0]}x{mat.shape[0]} matrix "
        f"(condition number {cond:.3e}, min diagonal {np.min(np.diag(mat)):.3e})")


def sample_mvn(mean, cov, rng: np.random.Generator, size=None) -> np.ndarray:
    """One draw from N(mean, cov), or ``size`` draws stacked in rows."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise ParameterError("covariance shape does not match mean")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise ParameterError("covariance must be symmetric")
    L = _cholesky_jitter(cov)
    if size is None:
        return mean + L @ rng.standard_normal(mean.size)
    return mean + rng.standard_normal((size, mean.size)) @ L.T


def sample_mvn_precision(prec: np.ndarray, rhs: np.ndarray, rng: np.random.Generator):
    """One draw from N(prec^-1 rhs, prec^-1) without forming the inverse.

    Returns ``(draw, mean)``.
    """
    L = _cholesky_jitter(prec)
    w = solve_triangular(L, rhs, lower=True, check_finite=False)
    mean = solve_triangular(L.T, w, lower=False, check_finite=False)
    z = rng.standard_normal(rhs.size)
    draw = mean + solve_triangular(L.T, z, lower=False, check_finite=False)
    return draw, mean
