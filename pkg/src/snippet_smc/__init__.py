"""Integrator-snippet sequential Monte Carlo samplers."""
from ._kernels import HAS_NUMBA, set_threads
from .adaptation import (
    ContractionData,
    estimate_tau,
    fit_epsilon_distribution,
    ig_logpdf,
    next_gamma,
    sample_epsilon,
    snippet_variance_criterion,
)
from .core import PhaseState, RandomStream, StandardNormalVelocity, TemperedTarget, grad_log_mu_x, log_mu
from .estimators import (
    SnippetBatch,
    WeightedEstimate,
    bound_ess,
    esjd,
    estimate_folded,
    estimate_unfolded,
    rao_blackwell_oracle,
    relative_efficiency,
    unfolded_ess,
    variance_decomposition_check,
)
from .integrators import (
    ExactGaussianFlow,
    Leapfrog,
    MixtureIntegrator,
    Snippet,
    Snug,
    Thug,
    build_snippet,
    leapfrog_step,
    mixture_select,
    snug_step,
    thug_step,
)
from .markov_snippet import MarkovSnippet, markov_snippet_weights, run_markov_snippet_iteration, run_waste_free, rwmh_step
from .models import (
    FilamentaryTarget,
    FlatTarget,
    GaussianTarget,
    LogisticRegressionTarget,
    exact_gaussian_flow,
    load_sonar,
    loglik_logistic,
)
from .smc import DegeneracyError, ParticleCloud, SMCConfig, resample_multinomial, resample_systematic, run, run_iteration

__version__ = "0.1.0"
