"""Markov snippets: chains grown by a Markov kernel instead of an integrator.

Weights follow the reference-measure form ``log dmu_n/dups(z_k) - log
dmu_{n-1}/dups(z_0)``. For a deterministic volume-preserving map the
reference is Lebesgue measure and the weights are the integrator-snippet
weights. For a random-walk Metropolis kernel that leaves ``mu_{n-1}``
invariant the reference is ``mu_{n-1}`` itself, so the seed term is zero and
each state carries ``mu_n / mu_{n-1}`` evaluated at that state; this is the
waste-free SMC sampler.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .adaptation import next_gamma
from .core import RandomStream, _generator, finite_or_neg_inf
from .estimators import ess
from .smc import RESAMPLE, RESAMPLERS, DegeneracyError, IterationRecord

PROPOSAL, ACCEPT = 5, 6


@dataclass(frozen=True)
class MarkovSnippet:
    states: np.ndarray  # (T+1, ...) chain z_0..z_T
    log_dmu_next: np.ndarray  # (T+1,) log dmu_n/dups(z_k)
    log_dmu_prev_seed: float  # log dmu_{n-1}/dups(z_0)


def markov_snippet_weights(snippet: MarkovSnippet):
    """Per-state log weights and the log of their mean."""
    lp0 = float(snippet.log_dmu_prev_seed)
    if lp0 == -np.inf or np.isnan(lp0):
        raise ValueError("seed lies outside the support of the previous target")
    with np.errstate(invalid="ignore"):
        lw = finite_or_neg_inf(np.asarray(snippet.log_dmu_next, dtype=float) - lp0)
    return lw, float(logsumexp(lw) - math.log(lw.size))


def proposal_cholesky(X, scale=2.38):
    """Cholesky factor of ``scale^2 cov(X) / d`` with diagonal loading."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    cov = cov + 1e-9 * max(np.trace(cov), 1e-300) / d * np.eye(d)
    cov *= scale**2 / d
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("proposal covariance is not positive definite after loading") from exc


def rwmh_step(log_target, chol, X, log_p, rng):
    """One Gaussian random-walk Metropolis step for each row of ``X``.

    ``chol`` is the proposal covariance's Cholesky factor (a scalar is a
    multiple of the identity). Returns ``(X_new, log_p_new, accepted)``.
    """
    g = _generator(rng)
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    z = g.standard_normal((N, d))
    step = z * chol if np.ndim(chol) == 0 else z @ np.asarray(chol).T
    prop = X + step
    lp_prop = finite_or_neg_inf(log_target(prop))
    with np.errstate(invalid="ignore"):
        log_ratio = lp_prop - log_p
    accept = np.log(g.random(N)) < log_ratio
    accept |= lp_prop == log_p  # zero-scale and flat-density proposals
    X_new = np.where(accept[:, None], prop, X)
    lp_new = np.where(accept, lp_prop, log_p)
    return X_new, lp_new, accept


def grow_chains(log_target, chol, X0, log_p0, T, rng: RandomStream):
    """Run T RWMH steps from each row; returns (chains (N, T+1, d), log_p (N, T+1), acceptance rate)."""
    N, d = X0.shape
    chains = np.empty((N, T + 1, d))
    lps = np.empty((N, T + 1))
    chains[:, 0], lps[:, 0] = X0, log_p0
    acc = 0
    for k in range(1, T + 1):
        chains[:, k], lps[:, k], a = rwmh_step(log_target, chol, chains[:, k - 1], lps[:, k - 1], rng.substream(k))
        acc += int(a.sum())
    return chains, lps, acc / max(1, N * T)


@dataclass
class WasteFreeCloud:
    X: np.ndarray  # (N, d) seeds approximately distributed as pi(.; gamma)
    log_pi: np.ndarray
    gamma: float
    chol: np.ndarray  # proposal factor from the previous particles
    n: int = 0
    log_Z: float = 0.0


def run_markov_snippet_iteration(cloud: WasteFreeCloud, target, gamma_next, T, rng: RandomStream, resampling="multinomial"):
    """Grow chains under ``pi(.; gamma)``, weight every state towards ``gamma_next``, resample.

    Returns ``(new_cloud, record, log_w, chains)``.
    """
    if not cloud.gamma < gamma_next <= 1.0:
        raise ValueError(f"gamma_next must lie in ({cloud.gamma}, 1], got {gamma_next}")
    t0 = time.perf_counter()
    N = cloud.X.shape[0]
    K = T + 1
    chains, lps, acc = grow_chains(lambda x: target.log_target(x, cloud.gamma), cloud.chol, cloud.X, cloud.log_pi,
                                   T, rng.substream(PROPOSAL))
    lp_next = finite_or_neg_inf(target.log_target(chains, gamma_next))
    # reference measure = pi(.; gamma): weight is the density ratio at each state
    with np.errstate(invalid="ignore"):
        log_w = finite_or_neg_inf(lp_next - lps)
    if not np.isfinite(log_w).any():
        raise DegeneracyError(f"total degeneracy at gamma={gamma_next:.6g}")
    log_Z_inc = float(logsumexp(log_w) - math.log(N * K))
    flat = RESAMPLERS[resampling](log_w.ravel(), N, rng.substream(RESAMPLE))
    b, a = np.divmod(flat, K)
    X_new = chains[b, a]
    # next proposal scale from this iteration's weighted particles only
    chol = proposal_cholesky(X_new)
    new = WasteFreeCloud(X_new, lp_next[b, a], float(gamma_next), chol, cloud.n + 1, cloud.log_Z + log_Z_inc)
    finite = log_w[np.isfinite(log_w)]
    rec = IterationRecord(
        iter=new.n, gamma=float(gamma_next), theta=float("nan"), T=int(T), tau=float("nan"),
        logZ_inc=log_Z_inc, logZ_cum=new.log_Z, ess_unfolded=ess(log_w),
        ess_seed=ess(logsumexp(log_w, axis=1)), median_eps=float("nan"),
        min_log_w=float(finite.min()), max_log_w=float(finite.max()), n_grad=0,
        wall_ms=(time.perf_counter() - t0) * 1e3, acceptance=acc,
    )
    return new, rec, log_w, chains


def run_waste_free(target, N, T, seed=0, replication=0, ess_target=0.8, max_iter=1000, timing=False):
    """Waste-free SMC along the tempering path. Returns ``(cloud, records)``."""
    root = RandomStream(seed, key=(replication,))
    X = np.asarray(target.sample_initial(N, root.substream(0)), dtype=float)
    if hasattr(target, "calibrated"):
        target = target.calibrated(X)
    cloud = WasteFreeCloud(X, target.log_target(X, 0.0), 0.0, proposal_cholesky(X))
    records = []
    while cloud.gamma < 1.0:
        if cloud.n >= max_iter:
            raise RuntimeError(f"iteration cap {max_iter} reached at gamma={cloud.gamma:.6g}")
        t0 = time.perf_counter()
        g = next_gamma(target.log_increment_fn(cloud.X, cloud.gamma), cloud.gamma, ess_target)
        cloud, rec, _, _ = run_markov_snippet_iteration(cloud, target, g, T, root.substream(cloud.n + 1))
        rec.wall_ms = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        records.append(rec)
    return cloud, records
