"""Self-tuning: tempering schedule, stepsize distribution, integration time.

* :func:`next_gamma` picks the next inverse temperature by bisection on the
  effective sample size of the seed weights.
* :func:`fit_epsilon_distribution` projects the stepsize population, skewed
  by the within-snippet variance criterion, onto an inverse Gaussian family
  with fixed skewness ``s`` (mean ``theta``, shape ``9 theta / s**2``).
* :func:`estimate_tau` couples pairs of particles, follows how fast their
  trajectories contract and turns the trough of the averaged contraction
  curve into a number of integration steps.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import LOG_2PI, _generator
from .integrators import Leapfrog, Snippet

EPS_MIN, EPS_MAX = 1e-12, 1e12


def _ess_of_log(lw):
    lw = np.asarray(lw, dtype=float)
    m = np.max(lw)
    if not np.isfinite(m):
        return 0.0
    w = np.exp(lw - m)
    return float(w.sum() ** 2 / np.dot(w, w))


def next_gamma(log_increment, gamma_n, alpha=0.8, tol=1e-8, min_increment=1e-8):
    """Largest ``gamma <= 1`` keeping the seed ESS at least ``alpha * N``.

    ``log_increment`` is either a callable ``g -> log pi(x_i; g) - log
    pi(x_i; gamma_n)`` over the seeds or, for tempered targets, the array
    of seed log-likelihoods.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if gamma_n >= 1.0:
        return 1.0
    if callable(log_increment):
        incr = log_increment
    else:
        ll = np.asarray(log_increment, dtype=float)
        incr = lambda g: (g - gamma_n) * ll  # noqa: E731
    n = np.size(incr(gamma_n))
    target = alpha * n

    def ok(g):
        with np.errstate(invalid="ignore", over="ignore"):
            lw = np.asarray(incr(g), dtype=float)
        lw = np.where(np.isnan(lw), -np.inf, lw)
        return _ess_of_log(lw) >= target

    if ok(1.0):
        return 1.0
    lo, hi = gamma_n, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return min(1.0, max(lo, gamma_n + min_increment))


def snippet_variance_criterion(snippet, log_w=None):
    """Weighted variance of positions along a snippet (within-snippet weights).

    Accepts a :class:`~snippet_smc.integrators.Snippet`, or a position array
    of shape (K, d) or (N, K, d) together with ``log_w`` of shape (K,) or
    (N, K). All -inf weights give 0.
    """
    if isinstance(snippet, Snippet):
        X, lw = snippet.positions, snippet.log_w
    else:
        X, lw = np.asarray(snippet, dtype=float), np.asarray(log_w, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    single = X.ndim == 2
    if single:
        X, lw = X[None], lw[None]
    out = _kernels.weighted_position_variance(np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(lw, dtype=float))
    return float(out[0]) if single else out


def ig_logpdf(eps, theta, s):
    """Log density of the inverse Gaussian with mean ``theta``, skewness ``s``."""
    eps = np.asarray(eps, dtype=float)
    lam = 9.0 * theta / s**2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * (np.log(lam) - LOG_2PI - 3.0 * np.log(eps)) - lam * (eps - theta) ** 2 / (2.0 * theta**2 * eps)
    return np.where(eps > 0, out, -np.inf)


def fit_epsilon_distribution(eps, v, s, theta_prev=None):
    """Closed-form mean of the inverse Gaussian closest (in KL) to the v-skewed stepsizes."""
    eps = np.asarray(eps, dtype=float)
    v = np.asarray(v, dtype=float)
    if eps.shape != v.shape:
        raise ValueError("eps and v must have the same shape")
    if (eps <= 0).any() or not np.isfinite(eps).all():
        raise ValueError("stepsizes must be finite and positive")
    if (v < 0).any() or not np.isfinite(v).all():
        raise ValueError("variance criterion values must be finite and nonnegative")
    tot = v.sum()
    if tot <= 0:
        if theta_prev is None:
            raise ValueError("all variance criterion values are zero and no previous theta given")
        return float(theta_prev)
    m1 = float(np.dot(v, eps) / tot)
    m_1 = float(np.dot(v, 1.0 / eps) / tot)
    a = s**2 / 9.0
    return (a + math.sqrt(a * a + 4.0 * m_1 * m1)) / (2.0 * m_1)


def sample_epsilon(theta, s, rng, size=None):
    """Inverse Gaussian draws (transformation with a uniform correction)."""
    if theta <= 0 or s <= 0:
        raise ValueError("theta and s must be positive")
    g = _generator(rng)
    mu = float(theta)
    lam = 9.0 * mu / s**2
    y = g.standard_normal(size) ** 2
    u = g.random(size)
    a = mu * y / (2.0 * lam)
    # smaller root of the quadratic, written without cancellation
    x = mu / (1.0 + a + np.sqrt(a * (a + 2.0)))
    out = np.where(u <= mu / (mu + x), x, mu * mu / x)
    out = np.clip(out, EPS_MIN, EPS_MAX)
    return float(out) if size is None else out


@dataclass
class ContractionData:
    pairs: np.ndarray  # (M, 2) particle indices
    eps: np.ndarray  # (M,)
    tau: np.ndarray  # (M, T)  tau[j, m-1] = m * eps[j]
    kappa: np.ndarray  # (M, T)
    bin_centers: np.ndarray
    bin_means: np.ndarray  # nan for empty bins


def contraction_curves(X1, X2, eps):
    """kappa[j, m-1] = m^-1 sum_{k=0}^m |x1_k - x2_k| / |x1_0 - x2_0| for m = 1..T."""
    dist = np.linalg.norm(X1 - X2, axis=-1)
    ratio = dist / dist[:, :1]
    T = ratio.shape[1] - 1
    m = np.arange(1, T + 1)
    kappa = np.cumsum(ratio, axis=1)[:, 1:] / m
    tau = np.asarray(eps, dtype=float)[:, None] * m
    return tau, kappa


def bin_contractions(tau, kappa, bins=50):
    tau = tau.ravel()
    kappa = kappa.ravel()
    keep = np.isfinite(tau) & np.isfinite(kappa)
    tau, kappa = tau[keep], kappa[keep]
    width = tau.max() / bins
    idx = np.minimum((tau / width).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=kappa, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    centers = (np.arange(bins) + 0.5) * width
    return centers, means


def estimate_tau(target, gamma, X, V, eps, T_n, T_max, rng, bins=50, integrator=None):
    """Choose the next number of integration steps from coupled trajectories.

    Returns ``(tau, T_next, data, n_grad)``; when no usable pair exists
    ``tau`` is None, ``T_next == T_n`` and a warning is issued.
    """
    integrator = Leapfrog() if integrator is None else integrator
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (X.shape[0],))
    N = X.shape[0]
    M = N // 2
    if M < 1 or T_n < 1:
        warnings.warn("estimate_tau: too few particles or steps; keeping T", RuntimeWarning)
        return None, T_n, None, 0
    perm = _generator(rng).permutation(N)
    pairs = perm[: 2 * M].reshape(M, 2)
    distinct = np.any(X[pairs[:, 0]] != X[pairs[:, 1]], axis=1)
    pairs = pairs[distinct]
    if pairs.shape[0] == 0:
        warnings.warn("estimate_tau: no pair with distinct positions; keeping T", RuntimeWarning)
        return None, T_n, None, 0
    first = pairs[:, 0]
    x0 = np.concatenate([X[first], X[pairs[:, 1]]])
    v0 = np.concatenate([V[first], V[first]])
    e0 = np.concatenate([eps[first], eps[first]])
    tr = integrator.trajectory(target, gamma, x0, v0, e0, T_n)
    Mp = pairs.shape[0]
    ok = ~tr.frozen[:Mp] & ~tr.frozen[Mp:]
    if not ok.any():
        warnings.warn("estimate_tau: every coupled trajectory diverged; keeping T", RuntimeWarning)
        return None, T_n, None, tr.n_grad
    tau, kappa = contraction_curves(tr.X[:Mp][ok], tr.X[Mp:][ok], eps[first][ok])
    centers, means = bin_contractions(tau, kappa, bins)
    best = np.nanmin(means)
    tau_n = float(centers[np.flatnonzero(means == best)[0]])
    T_next = int(min(T_max, max(1, math.ceil(tau_n / float(np.median(eps))))))
    data = ContractionData(pairs[ok], eps[first][ok], tau, kappa, centers, means)
    return tau_n, T_next, data, tr.n_grad
