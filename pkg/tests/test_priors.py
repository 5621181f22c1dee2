import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from heckslab.distkit import make_rng, sample_inverse_gamma
from heckslab.priors import (
    EXPONENTIAL,
    INVERSE_GAMMA,
    POINT_MASS,
    MixingFamily,
    PriorSpec,
    default_calibration,
    sample_induced_rho_prior,
    spike_slab_logdensity,
)


def test_simulation_context_slab_sds():
    spec = default_calibration(500, 10, 10, context="simulation")
    # the application formula for the outcome slab also gives 0.5 at n = 500
    assert math.sqrt(math.log(500) / (4 * math.log(500))) == pytest.approx(0.5)
    assert spec.tau1_beta == pytest.approx(0.5)
    assert spec.tau1_alpha == pytest.approx(0.5)
    assert (spec.a0, spec.b0) == (1.0, 1.0)
    assert spec.eta_O == pytest.approx(0.25)
    assert spec.slab_mix_beta.kind == POINT_MASS


def test_application_context():
    spec = default_calibration(500, 10, 10, context="application")
    assert spec.tau1_alpha == pytest.approx(0.5513288954217921, abs=1e-12)
    assert spec.tau1_beta == pytest.approx(0.5)
    assert (spec.a0, spec.b0) == (1.0, 20.0)
    assert spec.eta_O == spec.eta_S == 100.0
    assert spec.intercept_mix_beta.kind == POINT_MASS
    big = default_calibration(5000, 10, 10, context="application")
    assert big.tau1_beta == pytest.approx(math.sqrt(math.log(5000) / (4 * math.log(500))))


def test_spike_sds():
    spec = default_calibration(500, 10, 10)
    assert spec.tau0_beta == pytest.approx(0.0141421356, abs=1e-9)
    assert spec.tau0_alpha == pytest.approx(0.0141421356, abs=1e-9)
    # each equation uses its own dimension
    spec = default_calibration(100, 4, 25)
    assert spec.tau0_beta == pytest.approx(1 / math.sqrt(400))
    assert spec.tau0_alpha == pytest.approx(1 / math.sqrt(2500))


def test_remaining_defaults():
    spec = default_calibration(1000, 5, 5)
    assert (spec.c, spec.d, spec.tau) == (1.0, 1.0, 5.0)


def test_laplace_divides_by_sqrt2():
    nrm = default_calibration(500, 10, 10)
    lap = default_calibration(500, 10, 10, family="laplace")
    for f in ("tau0_beta", "tau1_beta", "tau0_alpha", "tau1_alpha"):
        assert getattr(lap, f) == pytest.approx(getattr(nrm, f) / math.sqrt(2))
    assert lap.slab_mix_beta.kind == EXPONENTIAL
    assert lap.intercept_mix_alpha.kind == EXPONENTIAL


def test_student_t_defaults():
    spec = default_calibration(500, 10, 10, family="student-t")
    assert spec.slab_mix_alpha == MixingFamily(INVERSE_GAMMA, 1.5, 1.5)
    nrm = default_calibration(500, 10, 10)
    assert spec.tau1_beta == pytest.approx(nrm.tau1_beta / math.sqrt(3))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**6), st.integers(1, 500), st.integers(1, 500),
       st.sampled_from(["normal", "laplace", "student-t"]),
       st.sampled_from(["simulation", "application"]), st.sampled_from([1, 2]))
def test_calibration_always_valid(n, p, q, family, context, cls):
    spec = default_calibration(n, p, q, family, context, cls)
    assert spec.tau1_beta > spec.tau0_beta > 0
    assert spec.tau1_alpha > spec.tau0_alpha > 0


@pytest.mark.parametrize("family", ["laplace", "student-t"])
def test_equal_marginal_variance(family):
    rng = make_rng(3)
    nrm = default_calibration(500, 10, 10)
    spec = default_calibration(500, 10, 10, family=family)
    mix = spec.slab_mix_beta
    m = 2_000_000
    if mix.kind == EXPONENTIAL:
        v = rng.exponential(2.0, m)
    else:
        v = sample_inverse_gamma(mix.a, mix.b, rng, size=m)
    x = rng.standard_normal(m) * spec.tau1_beta * np.sqrt(v)
    if family == "laplace":
        assert x.var() == pytest.approx(nrm.tau1_beta ** 2, rel=0.01)
    else:
        # t with 3 dof has infinite fourth moment; use the exact mixture variance
        assert (spec.tau1_beta ** 2) * mix.mean_v() == pytest.approx(nrm.tau1_beta ** 2, rel=1e-12)
        assert np.mean(spec.tau1_beta ** 2 * v) == pytest.approx(nrm.tau1_beta ** 2, rel=0.02)


def test_spike_slab_logdensity_origin():
    assert spike_slab_logdensity(0.0, 1.0, MixingFamily.point_mass(), 1.0) == \
        pytest.approx(-0.918938533, abs=1e-9)
    assert spike_slab_logdensity(0.3, 0.5, MixingFamily.point_mass(), 2.0) == \
        pytest.approx(stats.norm.logpdf(0.3, scale=0.5 * math.sqrt(2)))


def test_laplace_mixture_density():
    rng = make_rng(4)
    v = rng.exponential(2.0, 1_000_000)
    mc = np.mean(np.exp(spike_slab_logdensity(1.0, 1.0, MixingFamily.exponential(), v)))
    quad = integrate.quad(lambda u: stats.norm.pdf(1.0 / math.sqrt(u)) / math.sqrt(u) * 0.5 * math.exp(-u / 2),
                          0, np.inf)[0]
    assert mc == pytest.approx(quad, rel=0.01)
    assert quad == pytest.approx(0.5 * math.exp(-1.0), rel=1e-8)
    assert math.exp(MixingFamily.exponential().marginal_logpdf(1.0, 1.0)) == pytest.approx(quad, rel=1e-8)


def test_student_marginal_matches_quadrature():
    mix = MixingFamily.inverse_gamma(1.5, 1.5)
    for x in (0.0, 0.7, 3.0):
        quad = integrate.quad(
            lambda u: stats.norm.pdf(x, scale=0.4 * math.sqrt(u)) * stats.invgamma.pdf(u, 1.5, scale=1.5),
            0, np.inf)[0]
        assert math.exp(mix.marginal_logpdf(x, 0.4)) == pytest.approx(quad, rel=1e-7)


def test_mixing_log_density_normalized():
    for mix in (MixingFamily.exponential(), MixingFamily.inverse_gamma(2.0, 0.5)):
        total = integrate.quad(lambda u: math.exp(mix.log_density(u)), 0, np.inf)[0]
        assert total == pytest.approx(1.0, rel=1e-8)


def test_prior_spec_invariants():
    with pytest.raises(ValueError):
        PriorSpec(tau0_beta=0.5, tau1_beta=0.5)
    with pytest.raises(ValueError):
        PriorSpec(tau0_alpha=1.0, tau1_alpha=0.5)
    with pytest.raises(ValueError):
        PriorSpec(c=0.0)
    with pytest.raises(ValueError):
        PriorSpec(prior_class=3)
    with pytest.raises(ValueError):
        MixingFamily(INVERSE_GAMMA, -1.0, 1.0)
    with pytest.raises(ValueError):
        MixingFamily("gamma")


def test_prior_items_round_trip():
    spec = default_calibration(321, 7, 9, family="student-t", context="application", prior_class=2)
    back = PriorSpec.from_items(spec.to_items())
    assert back == spec
    with pytest.raises(KeyError):
        PriorSpec.from_items({"nonsense": "1"})


def test_induced_rho_prior_bounds_and_symmetry():
    spec = default_calibration(500, 10, 10)
    rho = sample_induced_rho_prior(spec, 1_000_000, make_rng(5))
    assert np.all(np.abs(rho) < 1)
    assert abs(rho.mean()) < 0.005


def test_induced_rho_prior_shape_depends_on_tau():
    from dataclasses import replace
    spec = default_calibration(500, 10, 10)
    wide = sample_induced_rho_prior(spec, 1_000_000, make_rng(6))
    narrow = sample_induced_rho_prior(replace(spec, tau=0.5), 1_000_000, make_rng(7))
    assert np.mean(np.abs(wide) > 0.8) > np.mean(np.abs(wide) < 0.2)
    assert np.mean(np.abs(narrow) > 0.8) < np.mean(np.abs(narrow) < 0.2)


def test_induced_rho_histogram_mass():
    rho = sample_induced_rho_prior(default_calibration(500, 10, 10), 500_000, make_rng(8))
    dens, edges = np.histogram(rho, bins=200, range=(-1, 1), density=True)
    assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0, abs=0.005)


def test_induced_rho_matches_closed_form_cdf():
    # rho = T / sqrt(1 + T^2) with T = rho_tilde / sigma_tilde ~ N(0, tau) whatever (c, d) are
    from dataclasses import replace
    spec = replace(default_calibration(500, 10, 10), c=2.0, d=3.0, tau=1.7)
    rho = sample_induced_rho_prior(spec, 100_000, make_rng(9))
    ref = stats.norm(scale=math.sqrt(spec.tau))
    cdf = lambda r: ref.cdf(r / np.sqrt(1 - r * r))  # noqa: E731
    assert stats.kstest(rho, cdf).pvalue > 1e-3


def test_count_validation():
    with pytest.raises(ValueError):
        sample_induced_rho_prior(PriorSpec(), 0, make_rng(0))
