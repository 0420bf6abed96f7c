"""Unfolded integrator-snippet SMC engine.

Each iteration grows a snippet of T integration steps from every seed,
weights all N(T+1) states against the next target, resamples N new seeds
among them and refreshes their velocities (and, optionally, stepsizes and
integrator labels). The running sum of log-normalizing-constant increments
estimates ``log Z_1 - log Z_0``.

Random numbers come from a :class:`~snippet_smc.core.RandomStream` tree:
``root.substream(0)`` initializes the cloud and ``root.substream(n)``
drives iteration ``n``, split further by purpose. No draw depends on
thread scheduling.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .adaptation import estimate_tau, fit_epsilon_distribution, next_gamma, sample_epsilon, snippet_variance_criterion
from .core import RandomStream, StandardNormalVelocity, _generator, finite_or_neg_inf
from .estimators import SnippetBatch, ess, estimate_unfolded
from .integrators import Leapfrog, MixtureIntegrator

# substream purposes within an iteration
RESAMPLE, VELOCITY, EPSILON, LABEL, TAU = range(5)
INIT_POSITION = 4


class DegeneracyError(RuntimeError):
    pass


@dataclass
class ParticleCloud:
    X: np.ndarray  # (N, d)
    V: np.ndarray  # (N, d)
    eps: np.ndarray  # (N,)
    labels: np.ndarray  # (N,)
    gamma: float
    log_pi: np.ndarray  # log pi(X; gamma), cached
    n: int = 0
    log_Z: float = 0.0

    def __post_init__(self):
        if self.X.shape[0] < 2:
            raise ValueError("a particle cloud needs N >= 2")
        if not (self.eps > 0).all():
            raise ValueError("all stepsizes must be positive")

    @property
    def N(self) -> int:
        return self.X.shape[0]


@dataclass
class IterationRecord:
    iter: int
    gamma: float
    theta: float
    T: int
    tau: float
    logZ_inc: float
    logZ_cum: float
    ess_unfolded: float
    ess_seed: float
    median_eps: float
    min_log_w: float
    max_log_w: float
    n_grad: int
    wall_ms: float
    acceptance: float = float("nan")


@dataclass
class SMCConfig:
    """Engine settings.

    ``epsilon`` is the fixed stepsize used when ``theta0`` is None;
    otherwise stepsizes are drawn from the inverse Gaussian with mean
    ``theta0`` and skewness ``skewness``, refitted every iteration.
    """

    N: int = 500
    T: int = 30
    epsilon: float = 0.1
    theta0: float | None = None
    skewness: float = 3.0
    ess_target: float = 0.8
    adapt_tau: bool = False
    T_max: int = 100
    tau_bins: int = 50
    integrator: object = field(default_factory=Leapfrog)
    resampling: str = "multinomial"
    max_iter: int = 1000
    gamma0: float = 0.0
    schedule: tuple | None = None
    seed: int = 0
    replication: int = 0
    timing: bool = False

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.theta0 is None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.theta0 is not None and not self.theta0 > 0:
            raise ValueError("theta0 must be positive")
        if not 0.0 < self.ess_target < 1.0:
            raise ValueError("ess_target must lie in (0, 1)")
        if self.resampling not in RESAMPLERS:
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")
        if self.adapt_tau and self.T_max < 1:
            raise ValueError("T_max must be at least 1")


@dataclass
class RunResult:
    cloud: ParticleCloud
    records: list
    log_Z: float
    posterior_mean: np.ndarray | None
    n_grad: int
    last_batch: SnippetBatch | None
    theta: float | None
    T: int


# --------------------------------------------------------------------------
# resampling


def resample_multinomial(log_weights, N, rng):
    """N iid draws from the categorical law proportional to exp(log_weights)."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    m = np.max(lw)
    if not np.isfinite(m):
        raise DegeneracyError("cannot resample: every weight is zero")
    w = np.exp(lw - m)
    cdf = np.cumsum(w)
    u = _generator(rng).random(N) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), lw.size - 1)


def resample_systematic(log_weights, N, rng):
    lw = np.asarray(log_weights, dtype=float).ravel()
    m = np.max(lw)
    if not np.isfinite(m):
        raise DegeneracyError("cannot resample: every weight is zero")
    w = np.exp(lw - m)
    cdf = np.cumsum(w)
    u = (_generator(rng).random() + np.arange(N)) / N * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), lw.size - 1)


RESAMPLERS = {"multinomial": resample_multinomial, "systematic": resample_systematic}


# --------------------------------------------------------------------------
# engine


def init_cloud(target, config: SMCConfig, rng: RandomStream, vel=None):
    """Draw the initial cloud at ``config.gamma0``. Returns ``(cloud, target)``.

    Targets with a ``calibrated`` method are calibrated on the initial
    positions (the filamentary tolerance schedule uses this).
    """
    vel = StandardNormalVelocity(target.dim) if vel is None else vel
    N = config.N
    X = np.asarray(target.sample_initial(N, rng.substream(INIT_POSITION)), dtype=float)
    if hasattr(target, "calibrated"):
        target = target.calibrated(X)
    V = vel.sample(rng.substream(VELOCITY), N)
    if config.theta0 is None:
        eps = np.full(N, float(config.epsilon))
    else:
        eps = sample_epsilon(config.theta0, config.skewness, rng.substream(EPSILON), N)
    if isinstance(config.integrator, MixtureIntegrator):
        labels = config.integrator.draw_labels(rng.substream(LABEL), N)
    else:
        labels = np.zeros(N, dtype=int)
    log_pi = target.log_target(X, config.gamma0)
    if not np.isfinite(log_pi).all():
        raise ValueError("initial particles fall outside the support of the initial target")
    return ParticleCloud(X, V, eps, labels, float(config.gamma0), log_pi), target


def run_iteration(cloud: ParticleCloud, target, vel, gamma_next, T, rng: RandomStream, integrator=None,
                  theta=None, skewness=3.0, resampling="multinomial"):
    """One unfolded snippet SMC step from ``cloud.gamma`` to ``gamma_next``.

    Returns ``(new_cloud, record, batch, theta_next)``. ``theta`` is None
    for fixed stepsizes; otherwise new stepsizes are drawn from the refit
    inverse Gaussian and ``theta_next`` is its mean.
    """
    if not cloud.gamma < gamma_next <= 1.0:
        raise ValueError(f"gamma_next must lie in ({cloud.gamma}, 1], got {gamma_next}")
    if T < 1:
        raise ValueError("T must be at least 1")
    integrator = Leapfrog() if integrator is None else integrator
    t0 = time.perf_counter()
    N = cloud.N
    K = T + 1

    tr = integrator.trajectory(target, gamma_next, cloud.X, cloud.V, cloud.eps, T, cloud.labels)
    with np.errstate(invalid="ignore", over="ignore"):
        log_mu_next = finite_or_neg_inf(tr.log_pi + vel.log_density(tr.V))
        log_mu_prev = cloud.log_pi + vel.log_density(cloud.V)
        if not np.isfinite(log_mu_prev).all():
            raise ValueError("a seed lies outside the support of the previous target")
        log_w = finite_or_neg_inf(log_mu_next - log_mu_prev[:, None])
    if not np.isfinite(log_w).any():
        raise DegeneracyError(
            f"total degeneracy at gamma={gamma_next:.6g}: every snippet state has zero weight; "
            "use a smaller tempering step (higher ess_target) or smaller stepsizes"
        )
    batch = SnippetBatch(tr.X, tr.V, log_mu_next, log_mu_prev, log_w, cloud.eps.copy(), cloud.labels.copy())

    log_Z_inc = float(logsumexp(log_w) - math.log(N * K))
    flat = RESAMPLERS[resampling](log_w.ravel(), N, rng.substream(RESAMPLE))
    b, a = np.divmod(flat, K)

    X_new = tr.X[b, a]
    log_pi_new = tr.log_pi[b, a]
    eps_new = cloud.eps[b]
    labels_new = cloud.labels[b]

    theta_next = None
    if theta is not None:
        vcrit = snippet_variance_criterion(tr.X, log_w)
        theta_next = fit_epsilon_distribution(cloud.eps[b], vcrit[b], skewness, theta_prev=theta)
        eps_new = sample_epsilon(theta_next, skewness, rng.substream(EPSILON), N)
    if isinstance(integrator, MixtureIntegrator):
        labels_new = integrator.draw_labels(rng.substream(LABEL), N)
    V_new = vel.sample(rng.substream(VELOCITY), N)

    seed_lw = logsumexp(log_w, axis=1)
    new = ParticleCloud(X_new, V_new, eps_new, labels_new, float(gamma_next), log_pi_new,
                        cloud.n + 1, cloud.log_Z + log_Z_inc)
    finite = log_w[np.isfinite(log_w)]
    record = IterationRecord(
        iter=new.n,
        gamma=float(gamma_next),
        theta=float("nan") if theta_next is None else float(theta_next),
        T=int(T),
        tau=float("nan"),
        logZ_inc=log_Z_inc,
        logZ_cum=new.log_Z,
        ess_unfolded=ess(log_w),
        ess_seed=ess(seed_lw),
        median_eps=float(np.median(cloud.eps)),
        min_log_w=float(finite.min()),
        max_log_w=float(finite.max()),
        n_grad=int(tr.n_grad),
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    return new, record, batch, theta_next


def run(target, config: SMCConfig, vel=None, callback=None) -> RunResult:
    """Temper from ``config.gamma0`` to 1 and return the final cloud and estimates."""
    vel = StandardNormalVelocity(target.dim) if vel is None else vel
    root = RandomStream(config.seed, key=(config.replication,))
    cloud, target = init_cloud(target, config, root.substream(0), vel)
    theta = config.theta0
    T = int(config.T if not config.adapt_tau else min(config.T, config.T_max))
    records = []
    batch = None
    n_grad = 0
    schedule = None if config.schedule is None else [g for g in config.schedule if g > cloud.gamma]
    while cloud.gamma < 1.0:
        if cloud.n >= config.max_iter:
            raise RuntimeError(f"iteration cap {config.max_iter} reached at gamma={cloud.gamma:.6g}")
        t0 = time.perf_counter()
        it_rng = root.substream(cloud.n + 1)
        if schedule is not None:
            gamma_next = float(schedule.pop(0)) if schedule else 1.0
        else:
            gamma_next = next_gamma(target.log_increment_fn(cloud.X, cloud.gamma), cloud.gamma, config.ess_target)
        cloud, rec, batch, theta_next = run_iteration(
            cloud, target, vel, gamma_next, T, it_rng, config.integrator, theta, config.skewness, config.resampling
        )
        n_grad += rec.n_grad
        if theta_next is not None:
            theta = theta_next
        if config.adapt_tau:
            tau, T_next, _, g_tau = estimate_tau(
                target, cloud.gamma, cloud.X, cloud.V, cloud.eps, T, config.T_max, it_rng.substream(TAU),
                bins=config.tau_bins, integrator=_leapfrog_of(config.integrator),
            )
            n_grad += g_tau
            rec.n_grad += g_tau
            if tau is not None:
                rec.tau = tau
                T = T_next
        rec.wall_ms = (time.perf_counter() - t0) * 1e3 if config.timing else 0.0
        records.append(rec)
        if callback is not None:
            callback(rec)
    mean = None if batch is None else np.asarray(estimate_unfolded(batch).value)
    return RunResult(cloud, records, cloud.log_Z, mean, n_grad, batch, theta, T)


def _leapfrog_of(integrator):
    if isinstance(integrator, MixtureIntegrator):
        return integrator.integrators[0]
    return integrator


def with_seed(config: SMCConfig, seed=None, replication=None) -> SMCConfig:
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if replication is not None:
        kw["replication"] = replication
    return replace(config, **kw)
