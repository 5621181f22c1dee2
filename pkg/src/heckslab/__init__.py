"""Bayesian variable selection for sample selection models with
spike-and-slab priors and a Gibbs sampler."""

__version__ = "0.1.0"

from .distkit import make_rng  # noqa: E402
from .gibbs import ChainOutput, GibbsConfig, run_chain  # noqa: E402
from .model import Dataset, NaturalParams, log_likelihood, mle_fit, two_step_fit  # noqa: E402
from .posterior import median_model, summarize  # noqa: E402
from .priors import MixingFamily, PriorSpec, default_calibration  # noqa: E402

__all__ = ["make_rng", "ChainOutput", "GibbsConfig", "run_chain", "Dataset",
           "NaturalParams", "log_likelihood", "mle_fit", "two_step_fit",
           "median_model", "summarize", "MixingFamily", "PriorSpec",
           "default_calibration"]
