"""Posterior summaries: inclusion probabilities, median model, model
frequency table, conditional-on-model summaries and importance-sampling
leave-one-out predictive density."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .distkit import LOG_SQRT_2PI
from .gibbs import ChainOutput
from .model import Dataset


class PosteriorError(ValueError):
    pass


@dataclass(frozen=True)
class ModelId:
    """Inclusion masks of a model: selection equation, then outcome."""

    included_S: tuple
    included_O: tuple

    @classmethod
    def from_masks(cls, mask_S, mask_O) -> "ModelId":
        return cls(tuple(bool(b) for b in mask_S), tuple(bool(b) for b in mask_O))

    @property
    def size_S(self) -> int:
        return sum(self.included_S)

    @property
    def size_O(self) -> int:
        return sum(self.included_O)

    def label(self) -> str:
        bits = lambda m: "".join("1" if b else "0" for b in m)  # noqa: E731
        return f"S:{bits(self.included_S)} O:{bits(self.included_O)}"


@dataclass
class PosteriorSummary:
    """Posterior means / sds of the coefficients (restricted to ``index_S`` /
    ``index_O``, zero-based covariate positions), of sigma and rho, the
    inclusion probabilities and the ranked model table."""

    pip_S: np.ndarray
    pip_O: np.ndarray
    index_S: np.ndarray
    index_O: np.ndarray
    alpha0: tuple
    alpha_mean: np.ndarray
    alpha_sd: np.ndarray
    beta0: tuple
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    sigma: tuple
    rho: tuple
    model_table: list
    n_draws: int
    w_names: tuple = ()
    x_names: tuple = ()


def _model_keys(chain: ChainOutput):
    gs = np.asarray(chain.gamma_S, dtype=np.uint8)
    go = np.asarray(chain.gamma_O, dtype=np.uint8)
    return [(a.tobytes(), b.tobytes()) for a, b in zip(gs, go)]


def model_table(chain: ChainOutput) -> list:
    """``[(ModelId, count), ...]`` sorted by decreasing count (ties broken by
    first appearance)."""
    keys = _model_keys(chain)
    counts = Counter(keys)
    first = {}
    for i, k in enumerate(keys):
        first.setdefault(k, i)
    ranked = sorted(counts, key=lambda k: (-counts[k], first[k]))
    out = []
    for k in ranked:
        ms = np.frombuffer(k[0], dtype=np.uint8)
        mo = np.frombuffer(k[1], dtype=np.uint8)
        out.append((ModelId.from_masks(ms, mo), counts[k]))
    return out


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    # shift by the first draw so constant columns give exactly zero sd
    dev = x - x[0]
    m = dev.mean(axis=0)
    sd = dev.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros_like(m)
    return x[0] + m, sd


def _summarize(chain: ChainOutput, index_S, index_O) -> PosteriorSummary:
    if chain.n_draws < 1:
        raise PosteriorError("chain has no draws")
    a_m, a_s = _mean_sd(chain.alpha[:, index_S])
    b_m, b_s = _mean_sd(chain.beta[:, index_O])
    sig = chain.sigma
    rho = chain.rho
    names_S = tuple(chain.w_names[k] for k in index_S) if chain.w_names else ()
    names_O = tuple(chain.x_names[j] for j in index_O) if chain.x_names else ()
    return PosteriorSummary(
        pip_S=chain.gamma_S.mean(axis=0)[index_S],
        pip_O=chain.gamma_O.mean(axis=0)[index_O],
        index_S=np.asarray(index_S), index_O=np.asarray(index_O),
        alpha0=tuple(float(v) for v in _mean_sd(chain.alpha0)),
        alpha_mean=a_m, alpha_sd=a_s,
        beta0=tuple(float(v) for v in _mean_sd(chain.beta0)),
        beta_mean=b_m, beta_sd=b_s,
        sigma=tuple(float(v) for v in _mean_sd(sig)),
        rho=tuple(float(v) for v in _mean_sd(rho)),
        model_table=model_table(chain), n_draws=chain.n_draws,
        w_names=names_S, x_names=names_O)


def summarize(chain: ChainOutput) -> PosteriorSummary:
    """Inclusion probabilities and posterior mean/sd of every parameter;
    sigma and rho are transformed per draw before averaging."""
    return _summarize(chain, np.arange(chain.q), np.arange(chain.p))


def median_model(summary: PosteriorSummary) -> ModelId:
    """Variables with inclusion probability strictly above 0.5."""
    return ModelId.from_masks(summary.pip_S > 0.5, summary.pip_O > 0.5)


def conditional_summary(chain: ChainOutput, model: ModelId) -> PosteriorSummary:
    """Summary over the draws whose sampled model equals ``model``, for the
    coordinates that model includes."""
    ms = np.array(model.included_S, dtype=bool)
    mo = np.array(model.included_O, dtype=bool)
    if ms.size != chain.q or mo.size != chain.p:
        raise PosteriorError("model widths do not match the chain")
    hit = np.all(chain.gamma_S.astype(bool) == ms, axis=1) & \
        np.all(chain.gamma_O.astype(bool) == mo, axis=1)
    if not hit.any():
        raise PosteriorError(f"model {model.label()} was never sampled")
    return _summarize(chain.subset(hit), np.flatnonzero(ms), np.flatnonzero(mo))


def pointwise_log_predictive(chain: ChainOutput, data: Dataset) -> np.ndarray:
    """n x T matrix of log p(row i | draw t) under the observed-data
    likelihood."""
    sigma = chain.sigma
    rho = chain.rho
    A = chain.alpha0[None, :] + data.W @ chain.alpha.T          # n x T
    out = np.empty_like(A)
    im, io = data.miss_idx, data.obs_idx
    out[im] = log_ndtr(-A[im])
    if io.size:
        mu = chain.beta0[None, :] + data.X[io] @ chain.beta.T
        e = (data.y_obs[:, None] - mu) / sigma[None, :]
        arg = (A[io] + rho[None, :] * e) / np.sqrt(1.0 - rho * rho)[None, :]
        out[io] = log_ndtr(arg) - 0.5 * e * e - np.log(sigma)[None, :] - LOG_SQRT_2PI
    return out


def loo_estimate(lpd: np.ndarray, min_draws: int = 100) -> tuple[float, np.ndarray]:
    """Plain importance-sampling LOO: ``-log mean_t exp(-lpd[i, t])`` per
    row, summed. No Pareto smoothing, so heavy-tailed weights (influential
    rows) are not corrected."""
    lpd = np.asarray(lpd, dtype=float)
    if lpd.ndim != 2:
        raise PosteriorError("lpd must be an n x T matrix")
    if lpd.shape[1] < min_draws:
        raise PosteriorError(f"need at least {min_draws} draws, got {lpd.shape[1]}")
    if not np.all(np.isfinite(lpd)):
        raise PosteriorError("lpd contains non-finite values")
    # shift by the row maximum so a constant row returns its value exactly
    neg = -lpd
    m = neg.max(axis=1)
    per_point = -(m + np.log(np.mean(np.exp(neg - m[:, None]), axis=1)))
    return float(per_point.sum()), per_point


def lpd_in_sample(lpd: np.ndarray) -> np.ndarray:
    """log mean_t exp(lpd[i, t]) per row."""
    return logsumexp(lpd, axis=1) - math.log(lpd.shape[1])


def format_summary_table(summary: PosteriorSummary) -> str:
    """Plain-text table with PIP, Est. and S.D. columns per equation."""
    lines = [f"{'Selection equation':<24}{'PIP':>10}{'Est.':>12}{'S.D.':>12}"]
    lines.append(f"{'(Intercept)':<24}{'':>10}{summary.alpha0[0]:>12.4f}{summary.alpha0[1]:>12.4f}")
    for k, idx in enumerate(summary.index_S):
        name = summary.w_names[k] if summary.w_names else f"w{idx + 1}"
        lines.append(f"{name:<24}{summary.pip_S[k]:>10.3f}"
                     f"{summary.alpha_mean[k]:>12.4f}{summary.alpha_sd[k]:>12.4f}")
    lines.append("")
    lines.append(f"{'Outcome equation':<24}{'PIP':>10}{'Est.':>12}{'S.D.':>12}")
    lines.append(f"{'(Intercept)':<24}{'':>10}{summary.beta0[0]:>12.4f}{summary.beta0[1]:>12.4f}")
    for j, idx in enumerate(summary.index_O):
        name = summary.x_names[j] if summary.x_names else f"x{idx + 1}"
        lines.append(f"{name:<24}{summary.pip_O[j]:>10.3f}"
                     f"{summary.beta_mean[j]:>12.4f}{summary.beta_sd[j]:>12.4f}")
    lines.append("")
    lines.append(f"{'sigma':<24}{'':>10}{summary.sigma[0]:>12.4f}{summary.sigma[1]:>12.4f}")
    lines.append(f"{'rho':<24}{'':>10}{summary.rho[0]:>12.4f}{summary.rho[1]:>12.4f}")
    return "\n".join(lines) + "\n"


def summary_items(summary: PosteriorSummary) -> dict:
    """Machine-readable ``key -> value`` view of a summary."""
    out = {"n_draws": summary.n_draws,
           "alpha0.mean": summary.alpha0[0], "alpha0.sd": summary.alpha0[1],
           "beta0.mean": summary.beta0[0], "beta0.sd": summary.beta0[1],
           "sigma.mean": summary.sigma[0], "sigma.sd": summary.sigma[1],
           "rho.mean": summary.rho[0], "rho.sd": summary.rho[1]}
    for k, idx in enumerate(summary.index_S):
        out[f"alpha.{idx + 1}.pip"] = summary.pip_S[k]
        out[f"alpha.{idx + 1}.mean"] = summary.alpha_mean[k]
        out[f"alpha.{idx + 1}.sd"] = summary.alpha_sd[k]
    for j, idx in enumerate(summary.index_O):
        out[f"beta.{idx + 1}.pip"] = summary.pip_O[j]
        out[f"beta.{idx + 1}.mean"] = summary.beta_mean[j]
        out[f"beta.{idx + 1}.sd"] = summary.beta_sd[j]
    return out


def format_model_table(table: list, n_draws: int, top: int | None = 20) -> str:
    lines = [f"{'rank':>4}  {'count':>7}  {'freq':>7}  {'size_S':>6}  {'size_O':>6}  model"]
    for rank, (mid, cnt) in enumerate(table[:top] if top else table, start=1):
        lines.append(f"{rank:>4}  {cnt:>7}  {cnt / n_draws:>7.4f}  {mid.size_S:>6}  "
                     f"{mid.size_O:>6}  {mid.label()}")
    return "\n".join(lines) + "\n"
