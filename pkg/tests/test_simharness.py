import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from heckslab.distkit import make_rng
from heckslab.model import inverse_mills
from heckslab.simharness import (
    ScenarioConfig,
    calibrate_intercept,
    gen_covariates,
    gen_dataset,
    default_alpha,
    default_beta,
    run_experiment,
    run_replicate,
    scenario_covariates,
)


def test_covariate_correlation_structure():
    W = gen_covariates(100_000, 5, make_rng(1))
    C = np.corrcoef(W, rowvar=False)
    assert C[0, 1] == pytest.approx(0.5, abs=0.01)
    assert C[0, 3] == pytest.approx(0.125, abs=0.01)
    assert np.allclose(W.std(axis=0), 1.0, atol=0.01)
    assert np.allclose(C, 0.5 ** np.abs(np.subtract.outer(np.arange(5), np.arange(5))), atol=0.01)


def test_covariates_are_gaussian():
    W = gen_covariates(20_000, 4, make_rng(2))
    for j in range(4):
        assert stats.kstest(W[:, j], "norm").pvalue > 1e-3


def test_calibration_closed_form_at_zero_alpha():
    W = gen_covariates(50, 3, make_rng(3))
    a0 = calibrate_intercept(W, np.zeros(3), 0.3)
    assert a0 == pytest.approx(stats.norm.ppf(0.7), abs=1e-10)
    assert a0 == pytest.approx(0.52440, abs=1e-5)


def test_calibration_round_trip():
    rng = make_rng(4)
    W = gen_covariates(500, 10, rng)
    for target in (0.05, 0.3, 0.8):
        a0 = calibrate_intercept(W, default_alpha(10), target)
        assert np.mean(ndtr(-a0 - W @ default_alpha(10))) == pytest.approx(target, abs=1e-8)


def test_default_effect_vectors():
    assert np.allclose(default_alpha(10)[:4] * math.sqrt(2), [0.5, 1.0, 1.5, 0.0])
    assert np.allclose(default_beta(10)[:4], [0.25, 0.5, 1.0, 0.0])
    assert np.all(default_alpha(10)[3:] == 0) and np.all(default_beta(10)[3:] == 0)
    assert default_alpha(2).size == 2


def test_missing_fraction_with_fixed_covariates():
    cfg = ScenarioConfig()
    W, a0 = scenario_covariates(cfg, 5)
    rng = make_rng(5, 99)
    reps = 1000
    miss = np.array([1 - gen_dataset(cfg, W, rng, a0).n_obs / cfg.n for _ in range(reps)])
    # binomial sd of the pooled fraction, using the per-row missing probabilities
    pr = ndtr(-a0 - W @ cfg.alpha)
    sd = math.sqrt(np.sum(pr * (1 - pr))) / (cfg.n * math.sqrt(reps))
    assert abs(miss.mean() - 0.3) < 2 * sd
    assert abs(miss.mean() - 0.3) < 0.01


def test_independent_errors_at_zero_rho():
    cfg = ScenarioConfig(n=50_000, p=3, rho=0.0)
    W = gen_covariates(cfg.n, 3, make_rng(6))
    data, e1, e2 = gen_dataset(cfg, W, make_rng(7), return_errors=True)
    r = np.corrcoef(e1, e2)[0, 1]
    assert abs(r) < 4 / math.sqrt(cfg.n)
    assert np.array_equal(data.X, data.W)


def test_error_covariance():
    cfg = ScenarioConfig(n=200_000, p=2, rho=-0.6, sigma=2.0)
    W = gen_covariates(cfg.n, 2, make_rng(8))
    _, e1, e2 = gen_dataset(cfg, W, make_rng(9), return_errors=True)
    C = np.cov(e1, e2)
    assert C == pytest.approx(np.array([[4.0, -1.2], [-1.2, 1.0]]), abs=0.03)


def test_selection_bias_sign_matches_mills_term():
    # OLS on selected rows is biased by rho*sigma times the projection of the
    # inverse Mills ratio on the covariates
    cfg = ScenarioConfig(n=200_000, p=10, rho=0.7)
    W = gen_covariates(cfg.n, cfg.p, make_rng(10))
    a0 = calibrate_intercept(W, cfg.alpha, cfg.target_missing)
    data = gen_dataset(cfg, W, make_rng(11), alpha0=a0)
    Xd = np.column_stack([np.ones(data.n_obs), data.X[data.obs_idx]])
    coef = np.linalg.lstsq(Xd, data.y_obs, rcond=None)[0]
    lam = inverse_mills(a0 + data.W[data.obs_idx] @ cfg.alpha)
    predicted = 0.7 * np.linalg.lstsq(Xd, lam, rcond=None)[0]
    bias = coef[1] - 0.25
    assert np.sign(bias) == np.sign(predicted[1])
    assert abs(bias) > 5 * 0.005
    assert bias == pytest.approx(predicted[1], abs=0.01)


def test_config_validation():
    with pytest.raises(ValueError, match="rho"):
        ScenarioConfig(rho=1.5)
    with pytest.raises(ValueError):
        ScenarioConfig(methods=("lasso",))
    with pytest.raises(ValueError):
        ScenarioConfig(target_missing=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig(p=3, alpha_effects=(1.0, 0.0))
    cfg = ScenarioConfig(p=4, alpha_effects=(1, 0, 0, 0), beta_effects=(0, 0, 2, 0))
    assert cfg.q == 4
    assert cfg.truth().included_S == (True, False, False, False)
    assert cfg.truth().included_O == (False, False, True, False)


def test_empty_methods_do_no_work():
    res = run_experiment(ScenarioConfig(methods=()), master_seed=1)
    assert res.metrics == {} and res.replicates == [] and res.wall_time == 0.0
    res = run_experiment(ScenarioConfig(replicates=0), master_seed=1)
    assert res.metrics == {}


SMOKE = ScenarioConfig(n=120, p=3, replicates=3, iterations=300, burn_in=50,
                       methods=("ss-normal", "ss-laplace-II", "stepwise"))


def test_experiment_reproducible_and_complete():
    a = run_experiment(SMOKE, master_seed=7)
    b = run_experiment(SMOKE, master_seed=7)
    assert a.table_rows() == b.table_rows()
    assert [r.selected for r in a.replicates] == [r.selected for r in b.replicates]
    assert len(a.table_rows()) == 2 * len(SMOKE.methods)
    for method in ("ss-normal", "ss-laplace-II"):
        for m in a.metrics[method].values():
            assert m.failure_rate == 0.0 and m.n_ok == 3
        assert -1 < a.rho_posterior_mean[method] < 1
    text = a.format_table()
    assert text.splitlines()[0].split("\t")[:6] == ["method", "equation", "TMR", "Size", "Sens.", "Spec."]


def test_covariates_shared_across_replicates():
    W1, a1 = scenario_covariates(SMOKE, 3)
    W2, a2 = scenario_covariates(SMOKE, 3)
    assert np.array_equal(W1, W2) and a1 == a2
    r0 = run_replicate(SMOKE, W1, a1, 3, 0)
    r0b = run_replicate(SMOKE, W1, a1, 3, 0)
    assert r0.selected == r0b.selected and r0.missing_fraction == r0b.missing_fraction


def test_replicate_errors_are_recorded(monkeypatch):
    from heckslab import simharness

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(simharness, "run_chain", boom)
    cfg = ScenarioConfig(n=100, p=2, replicates=2, iterations=50, burn_in=10, methods=("ss-normal",))
    res = run_experiment(cfg, master_seed=1)
    m = res.metrics["ss-normal"]["selection"]
    assert m.failure_rate == 1.0 and m.n_ok == 0
    assert "boom" in res.replicates[0].errors["ss-normal"]


@pytest.mark.slow
def test_large_effect_sensitivity_near_one():
    cfg = ScenarioConfig(n=1000, p=10, replicates=5, iterations=2000, burn_in=500)
    res = run_experiment(cfg, master_seed=11)
    for rep in res.replicates:
        sel = rep.selected["ss-normal"]
        assert sel.included_S[1] and sel.included_S[2]
        assert sel.included_O[1] and sel.included_O[2]
