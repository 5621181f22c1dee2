"""Spike-and-slab prior specifications, default calibration and the induced
prior on the error correlation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.special import gammaln

from .distkit import LOG_SQRT_2PI, normal_logpdf_scaled, sample_inverse_gamma

POINT_MASS = "point-mass"
EXPONENTIAL = "exponential"
INVERSE_GAMMA = "inverse-gamma"


@dataclass(frozen=True)
class MixingFamily:
    """Distribution of the variance multiplier ``v`` in ``N(0, tau^2 v)``.

    ``point-mass`` (v = 1) gives a normal marginal, ``exponential`` (rate 1/2)
    a Laplace marginal, ``inverse-gamma(a, b)`` a Student-t marginal.
    """

    kind: str = POINT_MASS
    a: float = 1.5
    b: float = 1.5

    def __post_init__(self):
        if self.kind not in (POINT_MASS, EXPONENTIAL, INVERSE_GAMMA):
            raise ValueError(f"unknown mixing family {self.kind!r}")
        if self.kind == INVERSE_GAMMA and not (self.a > 0 and self.b > 0):
            raise ValueError("inverse-gamma mixing needs a, b > 0")

    @classmethod
    def point_mass(cls):
        return cls(POINT_MASS)

    @classmethod
    def exponential(cls):
        return cls(EXPONENTIAL)

    @classmethod
    def inverse_gamma(cls, a: float = 1.5, b: float = 1.5):
        return cls(INVERSE_GAMMA, a, b)

    @property
    def is_point_mass(self) -> bool:
        return self.kind == POINT_MASS

    def mean_v(self) -> float:
        if self.kind == POINT_MASS:
            return 1.0
        if self.kind == EXPONENTIAL:
            return 2.0
        return self.b / (self.a - 1.0) if self.a > 1 else math.inf

    def log_density(self, v):
        """log pi(v); zero for the point mass (only used where it cancels)."""
        v = np.asarray(v, dtype=float)
        if self.kind == POINT_MASS:
            return np.zeros_like(v)
        if self.kind == EXPONENTIAL:
            return math.log(0.5) - 0.5 * v
        a, b = self.a, self.b
        return a * math.log(b) - gammaln(a) - (a + 1.0) * np.log(v) - b / v

    def marginal_logpdf(self, x, tau):
        """log density of x after integrating v out of N(0, tau^2 v)."""
        x = np.asarray(x, dtype=float)
        tau = np.asarray(tau, dtype=float)
        if self.kind == POINT_MASS:
            return normal_logpdf_scaled(x, tau)
        if self.kind == EXPONENTIAL:
            return -np.log(2.0 * tau) - np.abs(x) / tau
        # Student-t: 2a degrees of freedom, scale tau * sqrt(b / a)
        a, b = self.a, self.b
        nu = 2.0 * a
        scale = tau * math.sqrt(b / a)
        z = x / scale
        return (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
                - np.log(scale) - (nu + 1) / 2 * np.log1p(z * z / nu))

    def to_text(self) -> str:
        if self.kind == INVERSE_GAMMA:
            return f"inverse-gamma({self.a:g},{self.b:g})"
        return self.kind

    @classmethod
    def from_text(cls, text: str) -> "MixingFamily":
        text = text.strip().lower()
        if text.startswith(INVERSE_GAMMA):
            inner = text[len(INVERSE_GAMMA):].strip("() ")
            if not inner:
                return cls.inverse_gamma()
            a, b = (float(t) for t in inner.split(","))
            return cls.inverse_gamma(a, b)
        aliases = {"normal": POINT_MASS, "laplace": EXPONENTIAL, "exp": EXPONENTIAL}
        return cls(aliases.get(text, text))


def spike_slab_logdensity(value, tau, mix: MixingFamily, v):
    """log N(value; 0, tau^2 v), one branch of the spike-and-slab prior
    conditional on the mixing variable. ``mix`` only documents which branch
    the caller is on; the normal density does not depend on it."""
    return normal_logpdf_scaled(value, np.asarray(tau) * np.sqrt(v))


@dataclass(frozen=True)
class PriorSpec:
    """Full hyperparameter bundle.

    ``prior_class`` 1 or 2; class 2 scales outcome coefficient and outcome
    intercept prior variances by the working residual variance.
    ``tau`` is the variance multiplier of the correlation-parameter prior
    ``rho_tilde ~ N(0, tau * sigma_tilde^2)``; ``eta_O``/``eta_S`` are the
    intercept prior variances.
    """

    prior_class: int = 1
    tau0_beta: float = 0.01
    tau1_beta: float = 0.5
    tau0_alpha: float = 0.01
    tau1_alpha: float = 0.5
    spike_mix_beta: MixingFamily = field(default_factory=MixingFamily)
    slab_mix_beta: MixingFamily = field(default_factory=MixingFamily)
    spike_mix_alpha: MixingFamily = field(default_factory=MixingFamily)
    slab_mix_alpha: MixingFamily = field(default_factory=MixingFamily)
    intercept_mix_beta: MixingFamily = field(default_factory=MixingFamily)
    intercept_mix_alpha: MixingFamily = field(default_factory=MixingFamily)
    a0: float = 1.0
    b0: float = 1.0
    c: float = 1.0
    d: float = 1.0
    tau: float = 5.0
    eta_O: float = 100.0
    eta_S: float = 100.0

    def __post_init__(self):
        if self.prior_class not in (1, 2):
            raise ValueError(f"prior_class must be 1 or 2, got {self.prior_class}")
        for f in ("tau0_beta", "tau1_beta", "tau0_alpha", "tau1_alpha", "a0", "b0",
                  "c", "d", "tau", "eta_O", "eta_S"):
            val = getattr(self, f)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{f} must be positive and finite, got {val}")
        if not self.tau1_beta > self.tau0_beta:
            raise ValueError("tau1_beta must exceed tau0_beta")
        if not self.tau1_alpha > self.tau0_alpha:
            raise ValueError("tau1_alpha must exceed tau0_alpha")

    @property
    def mixing_families(self):
        return (self.spike_mix_beta, self.slab_mix_beta, self.spike_mix_alpha,
                self.slab_mix_alpha, self.intercept_mix_beta, self.intercept_mix_alpha)

    def to_items(self) -> dict:
        """Flat ``key -> text`` mapping (the ``prior.*`` config keys)."""
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.to_text() if isinstance(val, MixingFamily) else repr(val)
        return out

    @classmethod
    def from_items(cls, items: dict, base: "PriorSpec | None" = None) -> "PriorSpec":
        base = base or cls()
        kw = {}
        types = {f.name: f for f in fields(cls)}
        for key, text in items.items():
            if key not in types:
                raise KeyError(key)
            cur = getattr(base, key)
            if isinstance(cur, MixingFamily):
                kw[key] = MixingFamily.from_text(text)
            elif key == "prior_class":
                kw[key] = int(text)
            else:
                kw[key] = float(text)
        return replace(base, **kw)


FAMILIES = ("normal", "laplace", "student-t")


def default_calibration(n: int, p: int, q: int, family: str = "normal",
                        context: str = "simulation", prior_class: int = 1) -> PriorSpec:
    """Default hyperparameters for sample size ``n`` and dimensions ``p``
    (outcome) and ``q`` (selection).

    Spike sds shrink like ``1/sqrt(n * dim)``. In the simulation context both
    slab sds are 0.5, the inclusion rate prior is Beta(1, 1) and the
    intercepts share the slab prior; in the application context the selection
    slab sd is sqrt(3)/pi, the outcome slab sd grows like sqrt(log n), the
    inclusion rate prior is Beta(1, p + q) and intercepts get N(0, 100).
    Non-normal families rescale every sd so the marginal variances match the
    normal family.
    """
    if min(n, p, q) < 1:
        raise ValueError("n, p and q must be at least 1")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    if context not in ("simulation", "application"):
        raise ValueError(f"unknown context {context!r}")

    tau0_beta = 1.0 / math.sqrt(n * p)
    tau0_alpha = 1.0 / math.sqrt(n * q)
    if context == "simulation":
        tau1_alpha = tau1_beta = 0.5
    else:
        tau1_alpha = math.sqrt(3.0) / math.pi
        tau1_beta = math.sqrt(math.log(n) / (4.0 * math.log(500.0)))

    if family == "normal":
        mix = MixingFamily.point_mass()
    elif family == "laplace":
        mix = MixingFamily.exponential()
    else:
        mix = MixingFamily.inverse_gamma(1.5, 1.5)
    shrink = math.sqrt(mix.mean_v())
    tau0_beta, tau1_beta, tau0_alpha, tau1_alpha = (
        t / shrink for t in (tau0_beta, tau1_beta, tau0_alpha, tau1_alpha))
    # slab must stay wider than spike even in tiny samples
    tau1_beta = max(tau1_beta, 1.01 * tau0_beta)
    tau1_alpha = max(tau1_alpha, 1.01 * tau0_alpha)

    if context == "simulation":
        a0, b0 = 1.0, 1.0
        eta_O, eta_S = tau1_beta ** 2, tau1_alpha ** 2
        int_mix = mix
    else:
        a0, b0 = 1.0, float(p + q)
        eta_O = eta_S = 100.0
        int_mix = MixingFamily.point_mass()

    return PriorSpec(prior_class=prior_class,
                     tau0_beta=tau0_beta, tau1_beta=tau1_beta,
                     tau0_alpha=tau0_alpha, tau1_alpha=tau1_alpha,
                     spike_mix_beta=mix, slab_mix_beta=mix,
                     spike_mix_alpha=mix, slab_mix_alpha=mix,
                     intercept_mix_beta=int_mix, intercept_mix_alpha=int_mix,
                     a0=a0, b0=b0, c=1.0, d=1.0, tau=5.0, eta_O=eta_O, eta_S=eta_S)


def sample_induced_rho_prior(spec: PriorSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of rho implied by sigma_tilde^2 ~ IG(c, d) and
    rho_tilde | sigma_tilde^2 ~ N(0, tau * sigma_tilde^2)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    s2 = sample_inverse_gamma(spec.c, spec.d, rng, size=count)
    rt = rng.standard_normal(count) * np.sqrt(spec.tau * s2)
    return rt / np.sqrt(s2 + rt * rt)
