import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats
from scipy.special import log_ndtr

from heckslab import baselines
from heckslab.baselines import (
    OUTCOME,
    SELECTION,
    ConvergenceFailure,
    Score,
    aggregate_scores,
    forward_stepwise,
    score_selection,
)
from heckslab.distkit import make_rng
from heckslab.model import Dataset
from heckslab.posterior import ModelId


def heckman_data(rng, n, alpha, beta, alpha0=0.5, beta0=0.5, rho=0.5):
    q, p = len(alpha), len(beta)
    W = rng.standard_normal((n, q))
    X = rng.standard_normal((n, p))
    e2 = rng.standard_normal(n)
    e1 = rho * e2 + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
    s = alpha0 + W @ np.asarray(alpha, float) + e2 > 0
    y = beta0 + X @ np.asarray(beta, float) + e1
    return Dataset(X, W, s, y[s])


def _null_loglik(theta, data):
    """Intercepts-only log-likelihood written directly from the bivariate
    normal factorization; theta = (alpha0, beta0, log sigma, atanh rho)."""
    a0, b0, ls, ar = theta
    sig, rho = math.exp(ls), math.tanh(ar)
    e = (data.y_obs - b0) / sig
    ll = (data.n - data.n_obs) * log_ndtr(-a0)
    ll += np.sum(stats.norm.logpdf(e) - ls + log_ndtr((a0 + rho * e) / math.sqrt(1 - rho * rho)))
    return float(ll)


def test_null_aic_matches_direct_recomputation():
    rng = make_rng(1)
    data = heckman_data(rng, 500, [0.8, 0.0], [1.0, 0.0])
    trace = forward_stepwise(data, max_steps=0)
    best = None
    for start in ([0.0, 0.0, 0.0, 0.0], [0.5, 1.0, 0.3, 0.5], [0.5, 1.0, 0.3, -0.5]):
        res = optimize.minimize(lambda t: -_null_loglik(t, data), start, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20_000})
        if best is None or res.fun < best.fun:
            best = res
    assert trace.null_aic == pytest.approx(2 * 4 + 2 * best.fun, abs=1e-6)
    assert trace.steps == []


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_aic_path_strictly_decreasing(seed):
    rng = make_rng(seed)
    alpha = rng.choice([0.0, 0.6], 3)
    beta = rng.choice([0.0, 0.8], 3)
    trace = forward_stepwise(heckman_data(rng, 300, alpha, beta))
    path = trace.aic_path()
    assert all(b < a for a, b in zip(path, path[1:]))
    assert path[-1] <= trace.null_aic
    k = 4 + trace.final_model.size_S + trace.final_model.size_O
    assert path[-1] == pytest.approx(2 * k - 2 * trace.final_fit.loglik, abs=1e-9)


@pytest.mark.slow
def test_null_truth_mostly_empty():
    # one null candidate: AIC adds it when the LR statistic exceeds 2,
    # i.e. with probability P(chi2_1 > 2) = 0.157
    rng = make_rng(2)
    empty = 0
    for _ in range(50):
        data = heckman_data(rng, 2000, [0.0], [])
        trace = forward_stepwise(data)
        empty += trace.final_model.size_S + trace.final_model.size_O == 0
    assert empty >= 40


@pytest.mark.slow
def test_strong_selection_effect_found():
    rng = make_rng(3)
    hits = 0
    for _ in range(30):
        data = heckman_data(rng, 1000, [1.5 / math.sqrt(2), 0.0, 0.0], [0.5, 0.0, 0.0])
        hits += forward_stepwise(data).final_model.included_S[0]
    assert hits == 30


def test_tie_goes_to_lower_index():
    rng = make_rng(4)
    data = heckman_data(rng, 400, [0.9], [0.0])
    W2 = np.column_stack([data.W, data.W])
    dup = Dataset(data.X, W2, data.s, data.y_obs)
    trace = forward_stepwise(dup, max_steps=1)
    assert trace.steps[0][:2] == (SELECTION, 0)


def test_null_failure_raises(monkeypatch):
    rng = make_rng(5)
    data = heckman_data(rng, 200, [0.5], [0.5])
    real = baselines.mle_fit

    def broken(d, init=None, **kw):
        from dataclasses import replace
        return replace(real(d, init=init), converged=False, message="forced")

    monkeypatch.setattr(baselines, "mle_fit", broken)
    with pytest.raises(ConvergenceFailure, match="forced"):
        forward_stepwise(data)


def test_trace_format():
    rng = make_rng(6)
    trace = forward_stepwise(heckman_data(rng, 400, [1.0], [1.0]))
    text = trace.format(w_names=("w1",), x_names=("x1",))
    assert text.startswith("step 0  null model")
    assert len(text.strip().splitlines()) == 1 + len(trace.steps)


def _mid(S, O):
    return ModelId.from_masks(S, O)


def _mask(idx, width=10):
    m = np.zeros(width, bool)
    m[list(idx)] = True
    return m


def test_score_examples():
    truth = _mid(_mask([0, 1, 2]), _mask([0, 1, 2]))
    sc = score_selection(truth, truth)[SELECTION]
    assert (sc.tpr, sc.tnr, sc.match, sc.size) == (1.0, 1.0, True, 3)
    sc = score_selection(_mid(_mask([0, 1]), _mask([0, 1, 2])), truth)
    assert sc[SELECTION].tpr == pytest.approx(2 / 3) and sc[SELECTION].tnr == 1.0
    assert not sc[SELECTION].match and sc[OUTCOME].match
    sc = score_selection(_mid(np.ones(10), np.ones(10)), truth)[OUTCOME]
    assert (sc.tpr, sc.tnr, sc.size) == (1.0, 0.0, 10)


def test_score_width_mismatch():
    with pytest.raises(ValueError):
        score_selection(_mid(_mask([0], 5), _mask([0])), _mid(_mask([0]), _mask([0])))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=12).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.booleans(), min_size=len(a), max_size=len(a)),
                        st.permutations(range(len(a))))))
def test_score_permutation_symmetry(args):
    sel, truth, perm = args
    sel, truth, perm = np.array(sel), np.array(truth), list(perm)
    a = score_selection(_mid(sel, sel), _mid(truth, truth))[SELECTION]
    b = score_selection(_mid(sel[perm], sel[perm]), _mid(truth[perm], truth[perm]))[SELECTION]
    assert a == b or (math.isnan(a.tpr) and math.isnan(b.tpr)) or (math.isnan(a.tnr) and math.isnan(b.tnr))


def test_aggregate_with_failures():
    scores = [Score(1.0, 1.0, True, 3), Score(0.5, 1.0, False, 2), Score(1.0, 0.5, False, 5)]
    m = aggregate_scores(scores, n_failed=1)
    assert m.tmr == pytest.approx(1 / 3)
    assert m.tpr == pytest.approx(2.5 / 3)
    assert m.mean_size == pytest.approx(10 / 3)
    assert m.failure_rate == 0.25 and m.n_ok == 3 and m.n_total == 4
    for v in (m.tpr, m.tnr, m.tmr, m.failure_rate):
        assert 0 <= v <= 1
    empty = aggregate_scores([], n_failed=2)
    assert empty.failure_rate == 1.0 and math.isnan(empty.tmr)
