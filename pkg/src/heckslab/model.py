"""Bivariate-normal sample selection model: data container, parameters,
exact log-likelihood and the frequentist two-step / maximum-likelihood fits.

Model::

    y*_i = beta0 + x_i'beta + e1_i          (outcome)
    s*_i = alpha0 + w_i'alpha + e2_i        (selection)
    (e1, e2) ~ N(0, [[sigma^2, sigma*rho], [sigma*rho, 1]])

with ``s_i = 1(s*_i > 0)`` and ``y_i = y*_i`` observed only when ``s_i = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.special import log_ndtr, ndtr

from .distkit import LOG_SQRT_2PI, NumericalError

GRAD_TOL = 1e-6


class DataError(ValueError):
    """Dataset violates the observability rule or has bad entries."""


# ---------------------------------------------------------------------------
# data

@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates for both equations, selection indicators and the observed
    outcomes.

    Outcomes are stored compactly: ``y_obs[k]`` belongs to the k-th row with
    ``s == 1``. There is no placeholder value for missing outcomes.
    """

    X: np.ndarray
    W: np.ndarray
    s: np.ndarray
    y_obs: np.ndarray
    x_names: tuple = ()
    w_names: tuple = ()
    obs_idx: np.ndarray = field(init=False, repr=False)
    miss_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        W = np.array(self.W, dtype=float, ndmin=2)
        s = np.asarray(self.s).astype(bool)
        y_obs = np.array(self.y_obs, dtype=float, ndmin=1)
        n = s.size
        if n < 1:
            raise DataError("dataset needs at least one row")
        if X.shape[0] != n and X.size == 0:
            X = np.zeros((n, 0))
        if W.shape[0] != n and W.size == 0:
            W = np.zeros((n, 0))
        if X.shape[0] != n or W.shape[0] != n:
            raise DataError(f"row counts differ: X {X.shape[0]}, W {W.shape[0]}, s {n}")
        if y_obs.size != int(s.sum()):
            raise DataError(f"{y_obs.size} observed outcomes but {int(s.sum())} selected rows")
        for name, arr in (("X", X), ("W", W), ("y", y_obs)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")
        for arr in (X, W, s, y_obs):
            arr.setflags(write=False)
        x_names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        w_names = tuple(self.w_names) or tuple(f"w{k + 1}" for k in range(W.shape[1]))
        if len(x_names) != X.shape[1] or len(w_names) != W.shape[1]:
            raise DataError("column name count does not match covariates")
        obs_idx = np.flatnonzero(s)
        miss_idx = np.flatnonzero(~s)
        obs_idx.setflags(write=False)
        miss_idx.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y_obs", y_obs)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "w_names", w_names)
        object.__setattr__(self, "obs_idx", obs_idx)
        object.__setattr__(self, "miss_idx", miss_idx)

    @classmethod
    def from_arrays(cls, X, W, s, y, **kw) -> "Dataset":
        """Build from a full-length ``y`` in which missing entries are NaN or
        None. Presence of ``y_i`` must coincide with ``s_i == 1``."""
        s = np.asarray(s)
        if not np.all(np.isin(s, (0, 1))):
            raise DataError("selection indicators must be 0/1")
        s = s.astype(bool)
        y = np.array([math.nan if v is None else v for v in y], dtype=float)
        if y.size != s.size:
            raise DataError("y and s lengths differ")
        present = ~np.isnan(y)
        bad = np.flatnonzero(present != s)
        if bad.size:
            raise DataError(f"outcome presence must match s == 1; first violation at row {bad[0]}")
        return cls(X, W, s, y[s], **kw)

    @property
    def n(self) -> int:
        return self.s.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def n_obs(self) -> int:
        return self.obs_idx.size

    def y_full(self) -> np.ma.MaskedArray:
        y = np.zeros(self.n)
        y[self.obs_idx] = self.y_obs
        return np.ma.masked_array(y, mask=~self.s)

    def check_fittable(self):
        if self.n_obs == 0 or self.n_obs == self.n:
            raise DataError("model fitting needs both selected and unselected rows")

    def subset(self, x_cols, w_cols) -> "Dataset":
        x_cols, w_cols = list(x_cols), list(w_cols)
        return Dataset(self.X[:, x_cols], self.W[:, w_cols], self.s, self.y_obs,
                       tuple(self.x_names[j] for j in x_cols),
                       tuple(self.w_names[k] for k in w_cols))


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class NaturalParams:
    alpha0: float
    alpha: np.ndarray
    beta0: float
    beta: np.ndarray
    sigma: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=float)))
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")

    def to_vector(self) -> np.ndarray:
        """(alpha0, alpha, beta0, beta, sigma, rho)."""
        return np.concatenate([[self.alpha0], self.alpha, [self.beta0], self.beta,
                               [self.sigma, self.rho]])

    @classmethod
    def from_vector(cls, vec, q: int, p: int) -> "NaturalParams":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[0], vec[1:1 + q], vec[1 + q], vec[2 + q:2 + q + p],
                   vec[2 + q + p], vec[3 + q + p])


@dataclass(frozen=True)
class WorkingParams:
    alpha0: float
    alpha: np.ndarray
    beta0: float
    beta: np.ndarray
    rho_tilde: float
    sigma_tilde_sq: float

    def __post_init__(self):
        if not self.sigma_tilde_sq > 0:
            raise ValueError("sigma_tilde_sq must be positive")


def to_working(nat: NaturalParams) -> WorkingParams:
    return WorkingParams(nat.alpha0, nat.alpha, nat.beta0, nat.beta,
                         rho_tilde=nat.rho * nat.sigma,
                         sigma_tilde_sq=nat.sigma ** 2 * (1.0 - nat.rho ** 2))


def to_natural(wp: WorkingParams) -> NaturalParams:
    sigma = math.sqrt(wp.sigma_tilde_sq + wp.rho_tilde ** 2)
    return NaturalParams(wp.alpha0, wp.alpha, wp.beta0, wp.beta,
                         sigma=sigma, rho=wp.rho_tilde / sigma)


def inverse_mills(t):
    """phi(t) / Phi(t), evaluated in log space so the lower tail stays finite."""
    t = np.asarray(t, dtype=float)
    out = np.exp(-0.5 * t * t - LOG_SQRT_2PI - log_ndtr(t))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# likelihood

def _pointwise(data: Dataset, alpha0, alpha, beta0, beta, sigma, rho):
    """Per-row log-likelihood contributions (length n)."""
    a = alpha0 + data.W @ alpha
    out = np.empty(data.n)
    out[data.miss_idx] = log_ndtr(-a[data.miss_idx])
    if data.n_obs:
        io = data.obs_idx
        e = (data.y_obs - beta0 - data.X[io] @ beta) / sigma
        A = (a[io] + rho * e) / math.sqrt(1.0 - rho * rho)
        out[io] = log_ndtr(A) - 0.5 * e * e - math.log(sigma) - LOG_SQRT_2PI
    return out


def pointwise_loglik(params: NaturalParams, data: Dataset) -> np.ndarray:
    return _pointwise(data, params.alpha0, params.alpha, params.beta0, params.beta,
                      params.sigma, params.rho)


def log_likelihood(params: NaturalParams, data: Dataset) -> float:
    """Exact observed-data log-likelihood."""
    return float(np.sum(pointwise_loglik(params, data)))


def _unpack_free(theta, q, p):
    alpha0 = theta[0]
    alpha = theta[1:1 + q]
    beta0 = theta[1 + q]
    beta = theta[2 + q:2 + q + p]
    with np.errstate(over="ignore"):
        sigma = float(np.exp(theta[2 + q + p]))
    rho = math.tanh(theta[3 + q + p])
    return alpha0, alpha, beta0, beta, sigma, rho


def _to_free(params: NaturalParams) -> np.ndarray:
    vec = params.to_vector()
    vec[-2] = math.log(params.sigma)
    vec[-1] = math.atanh(params.rho)
    return vec


def _from_free(theta, q, p) -> NaturalParams:
    alpha0, alpha, beta0, beta, sigma, rho = _unpack_free(theta, q, p)
    return NaturalParams(alpha0, alpha.copy(), beta0, beta.copy(), sigma, rho)


class _Objective:
    """Log-likelihood and its analytic gradient on the unconstrained scale
    (raw coefficients, log sigma, atanh rho)."""

    def __init__(self, data: Dataset):
        self.data = data
        self.q, self.p = data.q, data.p
        self.W0 = data.W[data.miss_idx]
        self.W1 = data.W[data.obs_idx]
        self.X1 = data.X[data.obs_idx]
        self.y1 = data.y_obs

    def value_grad(self, theta):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._value_grad(theta)

    def _value_grad(self, theta):
        q, p = self.q, self.p
        alpha0, alpha, beta0, beta, sigma, rho = _unpack_free(theta, q, p)
        if not (np.isfinite(sigma) and sigma > 0 and abs(rho) < 1):
            return -math.inf, np.full(theta.size, np.nan)
        a0 = alpha0 + self.W0 @ alpha
        a1 = alpha0 + self.W1 @ alpha
        e = (self.y1 - beta0 - self.X1 @ beta) / sigma
        c = math.sqrt(1.0 - rho * rho)
        A = (a1 + rho * e) / c
        ll = (np.sum(log_ndtr(-a0)) + np.sum(log_ndtr(A))
              - 0.5 * np.dot(e, e) - self.y1.size * (math.log(sigma) + LOG_SQRT_2PI))
        lam0 = np.exp(-0.5 * a0 * a0 - LOG_SQRT_2PI - log_ndtr(-a0))
        lam1 = np.exp(-0.5 * A * A - LOG_SQRT_2PI - log_ndtr(A))
        d_a0 = -lam0
        d_a1 = lam1 / c
        d_e = lam1 * rho / c - e
        g = np.empty(theta.size)
        g[0] = d_a0.sum() + d_a1.sum()
        g[1:1 + q] = self.W0.T @ d_a0 + self.W1.T @ d_a1
        g[1 + q] = -d_e.sum() / sigma
        g[2 + q:2 + q + p] = -(self.X1.T @ d_e) / sigma
        g[2 + q + p] = -np.dot(d_e, e) - self.y1.size
        g[3 + q + p] = np.dot(lam1, e * c + A * rho)
        return float(ll), g

    def neg(self, theta):
        ll, g = self.value_grad(theta)
        if not (np.isfinite(ll) and np.all(np.isfinite(g))):
            return math.inf, np.zeros(theta.size)
        return -ll, -g

    def grad(self, theta):
        return self.value_grad(theta)[1]

    def hessian(self, theta):
        """Central differences of the analytic gradient, symmetrized."""
        k = theta.size
        H = np.empty((k, k))
        for j in range(k):
            h = 1e-5 * (1.0 + abs(theta[j]))
            tp = theta.copy()
            tm = theta.copy()
            tp[j] += h
            tm[j] -= h
            H[:, j] = (self.grad(tp) - self.grad(tm)) / (2.0 * h)
        return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# fits

@dataclass
class FitResult:
    params: NaturalParams
    loglik: float
    converged: bool
    stderr: np.ndarray | None = None
    iterations: int = 0
    grad_norm: float = math.nan
    message: str = ""

    def wald_pvalues(self) -> np.ndarray | None:
        """Two-sided p-values for every entry of ``params.to_vector()``."""
        if self.stderr is None:
            return None
        z = self.params.to_vector() / self.stderr
        return 2.0 * ndtr(-np.abs(z))


def _probit_fit(Wd: np.ndarray, s: np.ndarray, max_iter: int = 100):
    """Newton-Raphson probit MLE. Returns (coef, converged)."""
    coef = np.zeros(Wd.shape[1])
    sgn = np.where(s, 1.0, -1.0)
    for it in range(max_iter):
        eta = sgn * (Wd @ coef)
        lam = np.exp(-0.5 * eta * eta - LOG_SQRT_2PI - log_ndtr(eta))
        grad = Wd.T @ (sgn * lam)
        wts = lam * (lam + eta)
        H = (Wd * wts[:, None]).T @ Wd
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            return coef, False
        coef = coef + step
        if not np.all(np.isfinite(coef)) or np.max(np.abs(coef)) > 1e3:
            return coef, False
        if np.max(np.abs(grad)) < 1e-9 or np.max(np.abs(step)) < 1e-12:
            return coef, True
    return coef, False


def two_step_fit(data: Dataset) -> FitResult:
    """Probit for the selection equation, then least squares of the observed
    outcomes on (1, x, inverse Mills ratio). The Mills coefficient estimates
    rho * sigma."""
    data.check_fittable()
    Wd = np.column_stack([np.ones(data.n), data.W])
    if np.linalg.matrix_rank(Wd) < Wd.shape[1]:
        raise NumericalError("selection design matrix is rank deficient")
    gamma, ok = _probit_fit(Wd, data.s)
    idx = Wd[data.obs_idx] @ gamma
    lam = inverse_mills(np.atleast_1d(idx))
    Z = np.column_stack([np.ones(data.n_obs), data.X[data.obs_idx], lam])
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise NumericalError("outcome design with Mills column is rank deficient")
    coef, *_ = np.linalg.lstsq(Z, data.y_obs, rcond=None)
    beta_lam = coef[-1]
    resid = data.y_obs - Z @ coef
    delta = lam * (lam + idx)
    sigma2 = resid @ resid / data.n_obs + beta_lam ** 2 * np.mean(delta)
    sigma = math.sqrt(max(sigma2, 1e-12))
    rho = float(np.clip(beta_lam / sigma, -0.99, 0.99))
    params = NaturalParams(gamma[0], gamma[1:], coef[0], coef[1:-1], sigma, rho)
    return FitResult(params, log_likelihood(params, data), converged=ok,
                     message="two-step", iterations=0)


def _null_init(data: Dataset) -> NaturalParams:
    return NaturalParams(0.0, np.zeros(data.q), 0.0, np.zeros(data.p), 1.0, 0.0)


def _starts(data: Dataset, init, obj) -> list:
    """Finite-likelihood starting points: the given init, the two-step
    estimate, then zeros with sigma = 1 and rho = 0."""
    out = []
    cands = ([init] if init is not None else []) + ["two-step", _null_init(data)]
    for cand in cands:
        if isinstance(cand, str):
            try:
                cand = two_step_fit(data).params
            except (NumericalError, ValueError, np.linalg.LinAlgError):
                continue
        try:
            theta0 = _to_free(cand)
        except ValueError:
            continue
        if np.isfinite(obj.value_grad(theta0)[0]):
            out.append(theta0)
    return out or [_to_free(_null_init(data))]


def _optimize(obj: "_Objective", data: Dataset, start, max_iter, newton_steps) -> FitResult:
    q, p = data.q, data.p
    res = optimize.minimize(obj.neg, start, jac=True, method="BFGS",
                            options={"gtol": 1e-7, "maxiter": max_iter})
    theta = res.x
    iters = int(res.nit)
    ll, g = obj.value_grad(theta)
    H = None
    for _ in range(newton_steps):
        if np.max(np.abs(g)) < GRAD_TOL * 1e-2:
            break
        H = obj.hessian(theta)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        # backtrack so the polish never decreases the likelihood
        t = 1.0
        while t > 1e-4:
            cand = theta + t * step
            ll_c, g_c = obj.value_grad(cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-10:
                break
            t *= 0.5
        else:
            break
        theta, ll, g = cand, ll_c, g_c
        iters += 1
        H = None

    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    params = None
    try:
        params = _from_free(theta, q, p)
    except ValueError:
        pass
    if params is None or not np.isfinite(ll):
        nat = _null_init(data)
        return FitResult(nat, log_likelihood(nat, data), False, None, iters, math.inf,
                         "non-finite optimum")

    stderr = None
    converged = gmax < GRAD_TOL
    msg = "ok"
    if H is None:
        H = obj.hessian(theta)
    try:
        L = np.linalg.cholesky(-H)
        Linv = np.linalg.inv(L)
        cov_free = Linv.T @ Linv
        se_free = np.sqrt(np.diag(cov_free))
        jac = np.ones(theta.size)
        jac[-2] = params.sigma
        jac[-1] = 1.0 - params.rho ** 2
        stderr = se_free * jac
        if not np.all(np.isfinite(stderr)):
            converged, msg = False, "non-finite standard errors"
    except np.linalg.LinAlgError:
        converged, msg = False, "hessian not negative definite"
    if gmax >= GRAD_TOL:
        converged, msg = False, f"gradient max-norm {gmax:.2e}"
    return FitResult(params, float(ll), converged, stderr, iters, gmax, msg)


def mle_fit(data: Dataset, init: NaturalParams | None = None, *,
            max_iter: int = 2000, newton_steps: int = 20) -> FitResult:
    """Maximum likelihood by BFGS on the unconstrained scale, polished with
    Newton steps on a finite-difference Hessian of the analytic gradient.

    ``converged`` requires a gradient max-norm below 1e-6, a negative
    definite Hessian and finite standard errors. Starting points are tried
    in turn (``init``, two-step, zeros) until one converges; otherwise the
    highest-likelihood attempt is returned.
    """
    data.check_fittable()
    obj = _Objective(data)
    best = None
    for start in _starts(data, init, obj):
        fit = _optimize(obj, data, start, max_iter, newton_steps)
        if fit.converged:
            return fit
        if best is None or fit.loglik > best.loglik:
            best = fit
    return best


def n_free_params(data: Dataset) -> int:
    return data.p + data.q + 4
