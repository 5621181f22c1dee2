"""Forward stepwise AIC selection over both equations and selection-accuracy
metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Dataset, FitResult, NaturalParams, mle_fit
from .posterior import ModelId

SELECTION = "selection"
OUTCOME = "outcome"


class ConvergenceFailure(RuntimeError):
    """The intercepts-only model could not be fitted."""


@dataclass
class StepwiseTrace:
    steps: list            # (equation, zero-based variable index, AIC after adding)
    final_model: ModelId
    final_fit: FitResult
    null_aic: float
    skipped_fits: int = 0

    def aic_path(self) -> list:
        return [self.null_aic] + [s[2] for s in self.steps]

    def format(self, w_names=(), x_names=()) -> str:
        lines = [f"step 0  null model  AIC {self.null_aic:.6f}"]
        for i, (eq, idx, aic) in enumerate(self.steps, start=1):
            names = w_names if eq == SELECTION else x_names
            label = names[idx] if names else str(idx + 1)
            lines.append(f"step {i}  add {eq}:{label}  AIC {aic:.6f}")
        return "\n".join(lines) + "\n"


def aic(fit: FitResult, n_params: int) -> float:
    return 2.0 * n_params - 2.0 * fit.loglik


def _expand_init(fit: FitResult, w_cols, x_cols, eq, idx) -> NaturalParams:
    """Incumbent estimates with a zero coefficient for the candidate."""
    par = fit.params
    alpha = dict(zip(w_cols, par.alpha))
    beta = dict(zip(x_cols, par.beta))
    if eq == SELECTION:
        alpha[idx] = 0.0
    else:
        beta[idx] = 0.0
    return NaturalParams(par.alpha0, [alpha[k] for k in sorted(alpha)], par.beta0,
                         [beta[j] for j in sorted(beta)], par.sigma, par.rho)


def forward_stepwise(data: Dataset, max_steps: int | None = None) -> StepwiseTrace:
    """Greedy forward selection from the intercepts-only model.

    Each round fits every single-variable addition to either equation by
    maximum likelihood (warm-started from the incumbent) and keeps the one
    with the lowest AIC if it improves on the incumbent. Candidate fits that
    do not converge are skipped. Ties go to the selection equation, then the
    lower index.
    """
    w_cols: list[int] = []
    x_cols: list[int] = []
    fit = mle_fit(data.subset([], []))
    if not fit.converged:
        raise ConvergenceFailure(f"null model did not converge: {fit.message}")
    best_aic = aic(fit, 4)
    null_aic = best_aic
    steps = []
    skipped = 0
    while max_steps is None or len(steps) < max_steps:
        cands = [(SELECTION, k) for k in range(data.q) if k not in w_cols]
        cands += [(OUTCOME, j) for j in range(data.p) if j not in x_cols]
        if not cands:
            break
        round_best = None
        for eq, idx in cands:
            wc = sorted(w_cols + [idx]) if eq == SELECTION else list(w_cols)
            xc = sorted(x_cols + [idx]) if eq == OUTCOME else list(x_cols)
            init = _expand_init(fit, w_cols, x_cols, eq, idx)
            try:
                cfit = mle_fit(data.subset(xc, wc), init=init)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError):
                skipped += 1
                continue
            if not cfit.converged:
                skipped += 1
                continue
            c_aic = aic(cfit, len(wc) + len(xc) + 4)
            # strict < keeps the earliest candidate on ties
            if round_best is None or c_aic < round_best[0]:
                round_best = (c_aic, eq, idx, cfit, wc, xc)
        if round_best is None or not round_best[0] < best_aic:
            break
        best_aic, eq, idx, fit, w_cols, x_cols = round_best
        steps.append((eq, idx, best_aic))

    mask_S = np.zeros(data.q, dtype=bool)
    mask_O = np.zeros(data.p, dtype=bool)
    mask_S[w_cols] = True
    mask_O[x_cols] = True
    return StepwiseTrace(steps, ModelId.from_masks(mask_S, mask_O), fit, null_aic, skipped)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class Score:
    """Per-replicate contribution for one equation."""

    tpr: float
    tnr: float
    match: bool
    size: int


def _score_mask(sel, truth) -> Score:
    sel = np.asarray(sel, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if sel.shape != truth.shape:
        raise ValueError(f"mask widths differ: {sel.size} vs {truth.size}")
    active = truth.sum()
    inactive = truth.size - active
    tpr = float((sel & truth).sum() / active) if active else math.nan
    tnr = float((~sel & ~truth).sum() / inactive) if inactive else math.nan
    return Score(tpr, tnr, bool(np.array_equal(sel, truth)), int(sel.sum()))


def score_selection(selected: ModelId, truth: ModelId) -> dict:
    """``{"selection": Score, "outcome": Score}``."""
    return {SELECTION: _score_mask(selected.included_S, truth.included_S),
            OUTCOME: _score_mask(selected.included_O, truth.included_O)}


@dataclass
class SelectionMetrics:
    """Averages over replicates for one equation. ``failure_rate`` is the
    share of replicates where the method failed; the other fields average
    over the successful ones only."""

    tpr: float
    tnr: float
    tmr: float
    mean_size: float
    failure_rate: float
    n_ok: int
    n_total: int


def _nanmean(vals) -> float:
    arr = np.asarray(vals, dtype=float)
    return float(np.nanmean(arr)) if np.any(~np.isnan(arr)) else math.nan


def aggregate_scores(scores: list, n_failed: int = 0) -> SelectionMetrics:
    n_ok = len(scores)
    n_total = n_ok + n_failed
    fail = n_failed / n_total if n_total else 0.0
    if not n_ok:
        return SelectionMetrics(math.nan, math.nan, math.nan, math.nan, fail, 0, n_total)
    return SelectionMetrics(
        tpr=_nanmean([s.tpr for s in scores]),
        tnr=_nanmean([s.tnr for s in scores]),
        tmr=float(np.mean([s.match for s in scores])),
        mean_size=float(np.mean([s.size for s in scores])),
        failure_rate=fail, n_ok=n_ok, n_total=n_total)
