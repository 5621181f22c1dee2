"""Data-augmentation Gibbs sampler for the sample selection model under
Class I and Class II spike-and-slab priors.

One sweep runs, in order:

 1. latent selection utilities ``s*`` (truncated normals),
 2. selection coefficients ``(alpha0, alpha)``,
 3. outcome coefficients and correlation term ``(beta0, beta, rho_tilde)``,
 4. ``sigma_tilde^2``,
 5-6. outcome / selection inclusion indicators,
 7. the common inclusion rate ``r``,
 8-10. mixing variances of the coefficients and intercepts.

Conditional on ``s*`` the selection equation is a Gaussian regression and
the outcome equation is a Gaussian regression with the extra covariate
``s* - alpha0 - w'alpha`` whose coefficient is ``rho_tilde``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lapack

from .distkit import (
    NumericalError,
    _cholesky_jitter,
    normal_logpdf_scaled,
    sample_inverse_gaussian,
    std_truncnorm_above,
)
from .model import Dataset, FitResult, NaturalParams, mle_fit, to_working
from .priors import EXPONENTIAL, POINT_MASS, MixingFamily, PriorSpec

# |coef| floor for the exponential-mixing update (inverse Gaussian mean ~ 1/|coef|)
COEF_FLOOR = 1e-8
_TINY = np.finfo(float).tiny


@dataclass
class ParameterState:
    alpha0: float
    alpha: np.ndarray
    beta0: float
    beta: np.ndarray
    rho_tilde: float
    sigma_tilde_sq: float
    gamma_O: np.ndarray
    gamma_S: np.ndarray
    v_O: np.ndarray
    v_S: np.ndarray
    v_O0: float
    v_S0: float
    r: float
    s_star: np.ndarray

    def copy(self) -> "ParameterState":
        return ParameterState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                                 for k, v in self.__dict__.items()})

    def check(self, data: Dataset | None = None):
        """Raise AssertionError if a state invariant is violated."""
        assert self.sigma_tilde_sq > 0
        assert np.all(self.v_O > 0) and np.all(self.v_S > 0)
        assert self.v_O0 > 0 and self.v_S0 > 0
        assert 0 < self.r < 1
        if data is not None:
            assert np.array_equal(self.s_star > 0, data.s)

    def natural(self) -> NaturalParams:
        sigma = math.sqrt(self.sigma_tilde_sq + self.rho_tilde ** 2)
        return NaturalParams(self.alpha0, self.alpha, self.beta0, self.beta,
                             sigma, self.rho_tilde / sigma)


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 10_000
    burn_in: int = 1_250
    thin: int = 1
    seed: int = 0
    init: str = "mle-based"
    keep_latent: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1:
            raise ValueError("iterations and thin must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.init not in ("mle-based", "null"):
            raise ValueError(f"unknown init strategy {self.init!r}")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    """Post-burn-in, thinned draws stored column-wise (first axis = draw)."""

    alpha0: np.ndarray
    alpha: np.ndarray
    beta0: np.ndarray
    beta: np.ndarray
    rho_tilde: np.ndarray
    sigma_tilde_sq: np.ndarray
    gamma_S: np.ndarray
    gamma_O: np.ndarray
    r: np.ndarray
    v_O: np.ndarray | None = None
    v_S: np.ndarray | None = None
    v_O0: np.ndarray | None = None
    v_S0: np.ndarray | None = None
    s_star: np.ndarray | None = None
    config: GibbsConfig | None = None
    prior: PriorSpec | None = None
    wall_time: float = 0.0
    x_names: tuple = ()
    w_names: tuple = ()

    @property
    def n_draws(self) -> int:
        return self.alpha0.size

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def q(self) -> int:
        return self.alpha.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma_tilde_sq + self.rho_tilde ** 2)

    @property
    def rho(self) -> np.ndarray:
        return self.rho_tilde / self.sigma

    def subset(self, idx) -> "ChainOutput":
        def take(a):
            return None if a is None else a[idx]
        return replace(self, alpha0=take(self.alpha0), alpha=take(self.alpha),
                       beta0=take(self.beta0), beta=take(self.beta),
                       rho_tilde=take(self.rho_tilde),
                       sigma_tilde_sq=take(self.sigma_tilde_sq),
                       gamma_S=take(self.gamma_S), gamma_O=take(self.gamma_O),
                       r=take(self.r), v_O=take(self.v_O), v_S=take(self.v_S),
                       v_O0=take(self.v_O0), v_S0=take(self.v_S0),
                       s_star=take(self.s_star))


class GibbsSampler:
    """Holds the data-dependent constants of one (dataset, prior) pair and
    performs the individual conditional updates in place on a
    :class:`ParameterState`."""

    def __init__(self, data: Dataset, prior: PriorSpec):
        self.data = data
        self.prior = prior
        self.class2 = prior.prior_class == 2
        n, p, q = data.n, data.p, data.q
        self.n, self.p, self.q = n, p, q
        self.Wd = np.column_stack([np.ones(n), data.W])
        Xd = np.column_stack([np.ones(n), data.X])
        io, im = data.obs_idx, data.miss_idx
        self.io, self.im = io, im
        self.W0d = np.ascontiguousarray(self.Wd[im])
        self.W1d = np.ascontiguousarray(self.Wd[io])
        self.X1d = np.ascontiguousarray(Xd[io])
        self.y1 = data.y_obs
        self.n1 = io.size
        self.n0 = im.size
        self.G0 = self.W0d.T @ self.W0d
        self.G1 = self.W1d.T @ self.W1d
        self.XtX1 = self.X1d.T @ self.X1d
        self.Xty1 = self.X1d.T @ self.y1
        # +1 for selected rows (s* > 0), -1 otherwise; draws are mirrored so
        # every row becomes a "Z > a" problem
        self._sign = np.where(data.s, 1.0, -1.0)
        self._diag_q = np.diag_indices(q + 1)
        self._diag_p = np.diag_indices(p + 2)
        self._zz = np.empty((p + 2, p + 2))
        self._zz[:p + 1, :p + 1] = self.XtX1

        pr = prior
        self.tau_beta = np.array([pr.tau0_beta, pr.tau1_beta])
        self.tau_alpha = np.array([pr.tau0_alpha, pr.tau1_alpha])
        # how the inclusion step treats v: conditional on v when both branches
        # carry a density for it, marginalized over v when exactly one branch
        # is a point mass
        self.incl_mode_beta = self._incl_mode(pr.spike_mix_beta, pr.slab_mix_beta)
        self.incl_mode_alpha = self._incl_mode(pr.spike_mix_alpha, pr.slab_mix_alpha)
        fams = set(pr.mixing_families)
        self.uniform_mix = fams.pop() if len(fams) == 1 else None

    @staticmethod
    def _incl_mode(spike: MixingFamily, slab: MixingFamily) -> str:
        if spike == slab:
            return "same"
        if spike.is_point_mass or slab.is_point_mass:
            return "collapsed"
        return "conditional"

    # -- prior variances -------------------------------------------------
    def outcome_prior_var(self, st: ParameterState) -> np.ndarray:
        """Diagonal prior variances of (beta0, beta)."""
        tau = self.tau_beta[st.gamma_O]
        var = np.empty(self.p + 1)
        var[0] = self.prior.eta_O * st.v_O0
        var[1:] = tau * tau * st.v_O
        if self.class2:
            var *= st.sigma_tilde_sq
        return var

    def selection_prior_var(self, st: ParameterState) -> np.ndarray:
        tau = self.tau_alpha[st.gamma_S]
        var = np.empty(self.q + 1)
        var[0] = self.prior.eta_S * st.v_S0
        var[1:] = tau * tau * st.v_S
        return var

    # -- latent utilities ------------------------------------------------
    def latent(self, st: ParameterState, rng: np.random.Generator):
        a = np.concatenate([[st.alpha0], st.alpha])
        b = np.concatenate([[st.beta0], st.beta])
        mu = self.Wd @ a
        s2, rt = st.sigma_tilde_sq, st.rho_tilde
        denom = s2 + rt * rt
        sd = np.ones(self.n)
        if self.n1:
            mu[self.io] += rt / denom * (self.y1 - self.X1d @ b)
            sd[self.io] = math.sqrt(s2 / denom)
        sign = self._sign
        # selected rows: s* > 0; others: -s* > 0
        z = std_truncnorm_above(-sign * mu / sd, rng)
        x = sign * np.maximum(sign * mu + sd * z, _TINY)
        st.s_star = x

    # -- selection coefficients ------------------------------------------
    def selection_coefs(self, st: ParameterState, rng: np.random.Generator):
        s2, rt = st.sigma_tilde_sq, st.rho_tilde
        k = (s2 + rt * rt) / s2
        b = np.concatenate([[st.beta0], st.beta])
        prec = self.G0 + k * self.G1
        prec[self._diag_q] += 1.0 / self.selection_prior_var(st)
        s0 = st.s_star[self.im]
        s1 = st.s_star[self.io]
        rhs = self.W0d.T @ s0 + self.W1d.T @ (k * s1 - (rt / s2) * (self.y1 - self.X1d @ b))
        draw = _draw_precision(prec, rhs, rng)
        st.alpha0 = float(draw[0])
        st.alpha = draw[1:]

    # -- outcome coefficients --------------------------------------------
    def outcome_coefs(self, st: ParameterState, rng: np.random.Generator):
        p = self.p
        s2 = st.sigma_tilde_sq
        a = np.concatenate([[st.alpha0], st.alpha])
        u = st.s_star[self.io] - self.W1d @ a
        zz = self._zz
        xu = self.X1d.T @ u
        zz[:p + 1, p + 1] = xu
        zz[p + 1, :p + 1] = xu
        zz[p + 1, p + 1] = u @ u
        prec = zz / s2
        prior_var = np.empty(p + 2)
        prior_var[:p + 1] = self.outcome_prior_var(st)
        prior_var[p + 1] = self.prior.tau * s2
        prec[self._diag_p] += 1.0 / prior_var
        rhs = np.empty(p + 2)
        rhs[:p + 1] = self.Xty1
        rhs[p + 1] = u @ self.y1
        rhs /= s2
        draw = _draw_precision(prec, rhs, rng)
        st.beta0 = float(draw[0])
        st.beta = draw[1:p + 1]
        st.rho_tilde = float(draw[p + 1])

    # -- variance --------------------------------------------------------
    def variance_params(self, st: ParameterState) -> tuple[float, float]:
        """Shape and rate of the inverse-gamma conditional of sigma_tilde^2."""
        pr = self.prior
        rt = st.rho_tilde
        c_star = pr.c + 0.5 * (1 + self.n1)
        d_star = pr.d + rt * rt / (2.0 * pr.tau)
        if self.n1:
            a = np.concatenate([[st.alpha0], st.alpha])
            b = np.concatenate([[st.beta0], st.beta])
            u = st.s_star[self.io] - self.W1d @ a
            resid = self.y1 - self.X1d @ b - rt * u
            d_star += 0.5 * (resid @ resid)
        if self.class2:
            c_star += 0.5 * (self.p + 1)
            tau = self.tau_beta[st.gamma_O]
            d_star += st.beta0 ** 2 / (2.0 * pr.eta_O * st.v_O0)
            d_star += float(np.sum(st.beta ** 2 / (2.0 * st.v_O * tau * tau)))
        return c_star, d_star

    def variance(self, st: ParameterState, rng: np.random.Generator):
        c_star, d_star = self.variance_params(st)
        st.sigma_tilde_sq = d_star / rng.standard_gamma(c_star)

    # -- inclusion indicators and rate -----------------------------------
    def _incl_logodds(self, coef, v, tau, spike, slab, mode, scale=1.0):
        t0 = tau[0] * scale
        t1 = tau[1] * scale
        if mode == "collapsed":
            return slab.marginal_logpdf(coef, t1) - spike.marginal_logpdf(coef, t0)
        sv = np.sqrt(v)
        lo = normal_logpdf_scaled(coef, t1 * sv) - normal_logpdf_scaled(coef, t0 * sv)
        if mode == "conditional":
            lo = lo + slab.log_density(v) - spike.log_density(v)
        return lo

    def inclusion_probs(self, st: ParameterState) -> tuple[np.ndarray, np.ndarray]:
        """Bernoulli probabilities for gamma_O and gamma_S at the current state."""
        pr = self.prior
        prior_lo = math.log(st.r) - math.log1p(-st.r)
        scale = math.sqrt(st.sigma_tilde_sq) if self.class2 else 1.0
        lo_O = prior_lo + self._incl_logodds(st.beta, st.v_O, self.tau_beta,
                                             pr.spike_mix_beta, pr.slab_mix_beta,
                                             self.incl_mode_beta, scale)
        lo_S = prior_lo + self._incl_logodds(st.alpha, st.v_S, self.tau_alpha,
                                             pr.spike_mix_alpha, pr.slab_mix_alpha,
                                             self.incl_mode_alpha)
        return _expit(lo_O), _expit(lo_S)

    def inclusion(self, st: ParameterState, rng: np.random.Generator):
        prob_O, prob_S = self.inclusion_probs(st)
        st.gamma_O = (rng.random(self.p) < prob_O).astype(np.intp)
        st.gamma_S = (rng.random(self.q) < prob_S).astype(np.intp)
        k = int(st.gamma_O.sum() + st.gamma_S.sum())
        r = rng.beta(self.prior.a0 + k, self.prior.b0 + self.p + self.q - k)
        # Beta draws can round to 0 or 1 for extreme shape parameters
        st.r = min(max(r, 1e-300), 1.0 - 1e-16)

    # -- mixing variables ------------------------------------------------
    def mixing(self, st: ParameterState, rng: np.random.Generator):
        pr = self.prior
        scale = math.sqrt(st.sigma_tilde_sq) if self.class2 else 1.0
        if self.uniform_mix is not None:
            fam = self.uniform_mix
            if fam.is_point_mass:
                return
            p, q = self.p, self.q
            coef = np.concatenate([[st.beta0], st.beta, [st.alpha0], st.alpha])
            sd = np.empty(p + q + 2)
            sd[0] = math.sqrt(pr.eta_O) * scale
            sd[1:p + 1] = self.tau_beta[st.gamma_O] * scale
            sd[p + 1] = math.sqrt(pr.eta_S)
            sd[p + 2:] = self.tau_alpha[st.gamma_S]
            v = _mixing_draw(coef, sd, fam, rng)
            st.v_O0 = float(v[0])
            st.v_O = v[1:p + 1]
            st.v_S0 = float(v[p + 1])
            st.v_S = v[p + 2:]
            return
        st.v_O = _update_mixing(st.beta, self.tau_beta[st.gamma_O] * scale,
                                pr.spike_mix_beta, pr.slab_mix_beta, st.gamma_O, rng)
        st.v_S = _update_mixing(st.alpha, self.tau_alpha[st.gamma_S],
                                pr.spike_mix_alpha, pr.slab_mix_alpha, st.gamma_S, rng)
        st.v_O0 = float(_update_mixing(np.array([st.beta0]),
                                       np.array([math.sqrt(pr.eta_O) * scale]),
                                       pr.intercept_mix_beta, pr.intercept_mix_beta,
                                       np.ones(1, dtype=np.intp), rng)[0])
        st.v_S0 = float(_update_mixing(np.array([st.alpha0]),
                                       np.array([math.sqrt(pr.eta_S)]),
                                       pr.intercept_mix_alpha, pr.intercept_mix_alpha,
                                       np.ones(1, dtype=np.intp), rng)[0])

    def sweep(self, st: ParameterState, rng: np.random.Generator):
        self.latent(st, rng)
        self.selection_coefs(st, rng)
        self.outcome_coefs(st, rng)
        self.variance(st, rng)
        self.inclusion(st, rng)
        self.mixing(st, rng)


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _draw_precision(prec, rhs, rng):
    """Draw from N(prec^-1 rhs, prec^-1)."""
    L, info = lapack.dpotrf(prec, lower=1, clean=1)
    if info != 0:
        L = _cholesky_jitter(prec)
    w, _ = lapack.dtrtrs(L, rhs, lower=1)
    w += rng.standard_normal(rhs.size)
    x, _ = lapack.dtrtrs(L, w, lower=1, trans=1)
    return x


def _mixing_draw(coef, sd, fam: MixingFamily, rng):
    if fam.kind == POINT_MASS:
        return np.ones(coef.size)
    if fam.kind == EXPONENTIAL:
        absc = np.maximum(np.abs(coef), COEF_FLOOR)
        return 1.0 / sample_inverse_gaussian(sd / absc, 1.0, rng, size=coef.size)
    rate = fam.b + coef * coef / (2.0 * sd * sd)
    return rate / rng.standard_gamma(fam.a + 0.5, size=coef.size)


def _update_mixing(coef, sd, spike: MixingFamily, slab: MixingFamily, gamma, rng):
    """Draw v_j from p(v | coef_j) ∝ N(coef_j; 0, sd_j^2 v) pi(v), where pi is
    the slab family if gamma_j = 1 and the spike family otherwise."""
    if spike == slab:
        return _mixing_draw(coef, sd, slab, rng)
    out = np.empty(coef.size)
    on = gamma.astype(bool)
    out[on] = _mixing_draw(coef[on], sd[on], slab, rng)
    out[~on] = _mixing_draw(coef[~on], sd[~on], spike, rng)
    return out


# ---------------------------------------------------------------------------
# public operations

def null_state(data: Dataset) -> ParameterState:
    return ParameterState(
        alpha0=0.0, alpha=np.zeros(data.q), beta0=0.0, beta=np.zeros(data.p),
        rho_tilde=0.0, sigma_tilde_sq=1.0,
        gamma_O=np.zeros(data.p, dtype=np.intp), gamma_S=np.zeros(data.q, dtype=np.intp),
        v_O=np.ones(data.p), v_S=np.ones(data.q), v_O0=1.0, v_S0=1.0, r=0.5,
        s_star=np.where(data.s, 1.0, -1.0))


def initialize(data: Dataset, prior: PriorSpec, strategy: str = "mle-based",
               rng: np.random.Generator | None = None,
               fit: FitResult | None = None) -> ParameterState:
    """Starting state.

    ``mle-based`` starts from the maximum likelihood fit (``fit`` if given)
    with an indicator switched on iff its Wald p-value is below 0.05. A
    non-converged fit, or ``strategy='null'``, gives all coefficients 0,
    sigma_tilde = 1, rho_tilde = 0, r = 0.5 and the empty model.
    """
    st = null_state(data)
    if strategy == "mle-based":
        if fit is None:
            try:
                fit = mle_fit(data)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError):
                fit = None
        if fit is not None and fit.converged:
            wp = to_working(fit.params)
            pv = fit.wald_pvalues()
            q, p = data.q, data.p
            st.alpha0, st.alpha = float(wp.alpha0), np.array(wp.alpha, dtype=float)
            st.beta0, st.beta = float(wp.beta0), np.array(wp.beta, dtype=float)
            st.rho_tilde, st.sigma_tilde_sq = float(wp.rho_tilde), float(wp.sigma_tilde_sq)
            st.gamma_S = (pv[1:1 + q] < 0.05).astype(np.intp)
            st.gamma_O = (pv[2 + q:2 + q + p] < 0.05).astype(np.intp)
    elif strategy != "null":
        raise ValueError(f"unknown init strategy {strategy!r}")
    if rng is not None:
        GibbsSampler(data, prior).latent(st, rng)
    return st


def latent_update(state: ParameterState, data: Dataset, rng, prior: PriorSpec | None = None):
    """Latent update in place; returns the new ``s_star``."""
    GibbsSampler(data, prior or PriorSpec()).latent(state, rng)
    return state.s_star


def coefficient_update(state: ParameterState, data: Dataset, prior: PriorSpec, rng):
    """Steps 2 and 3 in place."""
    smp = GibbsSampler(data, prior)
    smp.selection_coefs(state, rng)
    smp.outcome_coefs(state, rng)
    return state


def variance_update(state: ParameterState, data: Dataset, prior: PriorSpec, rng):
    """Variance update in place; returns the new ``sigma_tilde_sq``."""
    GibbsSampler(data, prior).variance(state, rng)
    return state.sigma_tilde_sq


def inclusion_update(state: ParameterState, data: Dataset, prior: PriorSpec, rng):
    """Steps 5-7 in place."""
    GibbsSampler(data, prior).inclusion(state, rng)
    return state


def mixing_update(state: ParameterState, data: Dataset, prior: PriorSpec, rng):
    """Steps 8-10 in place."""
    GibbsSampler(data, prior).mixing(state, rng)
    return state


def _allocate(T, data: Dataset, keep_latent: bool) -> dict:
    p, q = data.p, data.q
    out = {
        "alpha0": np.empty(T), "alpha": np.empty((T, q)),
        "beta0": np.empty(T), "beta": np.empty((T, p)),
        "rho_tilde": np.empty(T), "sigma_tilde_sq": np.empty(T),
        "gamma_S": np.empty((T, q), dtype=np.int8), "gamma_O": np.empty((T, p), dtype=np.int8),
        "r": np.empty(T), "v_O": np.empty((T, p)), "v_S": np.empty((T, q)),
        "v_O0": np.empty(T), "v_S0": np.empty(T),
    }
    if keep_latent:
        out["s_star"] = np.empty((T, data.n))
    return out


def _record(store: dict, t: int, st: ParameterState):
    for key, arr in store.items():
        arr[t] = getattr(st, key)


def run_chain(data: Dataset, prior: PriorSpec, config: GibbsConfig = GibbsConfig(),
              init_state: ParameterState | None = None,
              fit: FitResult | None = None) -> ChainOutput:
    """Run one chain; deterministic given ``config.seed``."""
    from .distkit import make_rng

    t_start = time.perf_counter()
    rng = make_rng(config.seed)
    smp = GibbsSampler(data, prior)
    if init_state is None:
        st = initialize(data, prior, config.init, fit=fit)
    else:
        st = init_state.copy()
    store = _allocate(config.n_draws, data, config.keep_latent)
    k = 0
    for it in range(1, config.iterations + 1):
        try:
            smp.sweep(st, rng)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            _record(store, k, st)
            k += 1
    return ChainOutput(**store, config=config, prior=prior,
                       wall_time=time.perf_counter() - t_start,
                       x_names=data.x_names, w_names=data.w_names)
