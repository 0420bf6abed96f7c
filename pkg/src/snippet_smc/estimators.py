"""Estimators from snippet clouds, weight diagnostics and exact oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import PhaseState, _generator
from .integrators import Snippet
from .models import GaussianTarget, exact_gaussian_flow


@dataclass
class SnippetBatch:
    """All N snippets of one iteration, stored as arrays.

    ``X`` and ``V`` have shape (N, T+1, d); ``log_w`` has shape (N, T+1).
    """

    X: np.ndarray
    V: np.ndarray
    log_mu_next: np.ndarray
    log_mu_prev_seed: np.ndarray
    log_w: np.ndarray
    eps: np.ndarray
    labels: np.ndarray

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1] - 1

    def snippet(self, i) -> Snippet:
        states = tuple(PhaseState.unchecked(x, v) for x, v in zip(self.X[i], self.V[i]))
        return Snippet(states, self.log_mu_next[i].copy(), float(self.log_mu_prev_seed[i]),
                       self.log_w[i].copy(), float(self.eps[i]), int(self.labels[i]))

    @classmethod
    def from_snippets(cls, snippets):
        snippets = list(snippets)
        return cls(
            X=np.stack([s.positions for s in snippets]),
            V=np.stack([s.velocities for s in snippets]),
            log_mu_next=np.stack([s.log_mu_next for s in snippets]),
            log_mu_prev_seed=np.array([s.log_mu_prev_seed for s in snippets]),
            log_w=np.stack([s.log_w for s in snippets]),
            eps=np.array([s.epsilon for s in snippets]),
            labels=np.array([s.label for s in snippets]),
        )


@dataclass
class WeightedEstimate:
    value: np.ndarray | float
    self_normalized: bool
    ess: float
    n_states: int


def _parts(batch, f):
    """(log_w (N, K), values (N, K, ...)) from a batch/snippet list/arrays."""
    if isinstance(batch, SnippetBatch):
        lw, X = batch.log_w, batch.X
    elif isinstance(batch, Snippet):
        lw, X = batch.log_w[None], batch.positions[None]
    elif isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Snippet):
        b = SnippetBatch.from_snippets(batch)
        lw, X = b.log_w, b.X
    else:
        lw, X = batch
        lw = np.asarray(lw, dtype=float)
        X = np.asarray(X, dtype=float)
    vals = X if f is None else np.asarray(f(X), dtype=float)
    return np.asarray(lw, dtype=float), vals


def _normalize(lw):
    m = np.max(lw)
    if not np.isfinite(m):
        raise ValueError("all weights are zero (log weight -inf)")
    w = np.exp(lw - m)
    return w / w.sum()


def ess(log_w):
    """Self-normalized effective sample size ``(sum w)^2 / sum w^2``."""
    w = _normalize(np.ravel(np.asarray(log_w, dtype=float)))
    return float(1.0 / np.dot(w, w))


unfolded_ess = ess


def bound_ess(log_w):
    """ESS derived from the variance bound on the folded estimator.

    ``(N/2) E[S]^2 / (2 E[S^2] - E[S]^2)`` with ``S_i`` the sum of the
    weights of snippet ``i``; invariant to rescaling the weights.
    """
    lw = np.asarray(log_w, dtype=float)
    N = lw.shape[0]
    m = np.max(lw)
    if not np.isfinite(m):
        raise ValueError("all weights are zero (log weight -inf)")
    S = np.exp(lw - m).sum(axis=1)
    m1 = S.mean()
    m2 = np.mean(S * S)
    return float(0.5 * N * m1 * m1 / (2.0 * m2 - m1 * m1))


def estimate_unfolded(batch, f=None) -> WeightedEstimate:
    """Jointly self-normalized estimate over all N(T+1) snippet states.

    ``f`` maps positions of shape (N, K, d) to values of shape (N, K) or
    (N, K, p); the default is the position itself.
    """
    lw, vals = _parts(batch, f)
    p = _normalize(lw.ravel()).reshape(lw.shape)
    value = np.tensordot(p, vals, axes=([0, 1], [0, 1]))
    return WeightedEstimate(value, True, float(1.0 / np.sum(p * p)), lw.size)


def folded_weights(lw):
    """Within-snippet normalized weights; raises naming any all -inf snippet."""
    lw = np.asarray(lw, dtype=float)
    m = np.max(lw, axis=1)
    bad = np.flatnonzero(~np.isfinite(m))
    if bad.size:
        raise ValueError(f"snippet(s) {bad.tolist()} have no finite weight")
    q = np.exp(lw - m[:, None])
    return q / q.sum(axis=1, keepdims=True)


def estimate_folded(batch, f=None) -> WeightedEstimate:
    """Average over snippets of the within-snippet weighted mean."""
    lw, vals = _parts(batch, f)
    q = folded_weights(lw)
    per = np.einsum("nk,nk...->n...", q, vals)
    ess_per = 1.0 / np.sum(q * q, axis=1)
    return WeightedEstimate(per.mean(axis=0), True, float(ess_per.sum()), lw.size)


def _folded_values(lw, vals):
    return np.einsum("nk,nk...->n...", folded_weights(lw), vals)


def rao_blackwell_oracle(batch, f=None, folded_values=_folded_values, max_outcomes=2_000_000):
    """Exact ``|E[folded estimate | seeds] - unfolded estimate|``.

    Enumerates every N-tuple of resampled candidates ``(b_j, a_j)`` over the
    N(T+1) states, with its multinomial probability; the folded estimate
    after resampling averages the within-snippet means of snippets
    ``b_1..b_N``. ``folded_values`` maps ``(log_w, values)`` to per-snippet
    means and exists so a deliberately broken version can be plugged in.
    """
    lw, vals = _parts(batch, f)
    N, K = lw.shape
    C = N * K
    if C > 64:
        raise ValueError(f"instance too large for enumeration: N(T+1) = {C} > 64")
    if C**N > max_outcomes:
        raise ValueError(f"instance too large for enumeration: {C}^{N} outcomes")
    p = _normalize(lw.ravel())
    g = np.asarray(folded_values(lw, vals))
    g_state = np.repeat(g, K, axis=0)  # per flattened candidate
    # E[(1/N) sum_j g(c_j)] with c_j iid ~ p, by explicit enumeration
    grids = np.indices((C,) * N).reshape(N, -1)
    probs = np.prod(p[grids], axis=0)
    means = g_state[grids].mean(axis=0)
    expectation = np.tensordot(probs, means, axes=(0, 0))
    unfolded = estimate_unfolded((lw, vals)).value
    return float(np.max(np.abs(expectation - unfolded)))


def sample_mu_bar_exact(target: GaussianTarget, T, eps, n, rng, gamma=1.0):
    """Exact draws from the snippet mixture for a Gaussian with exact flow.

    ``z ~ mu``, ``k ~ U{0..T}``, return ``psi^{-k}(z)`` along with ``z`` and ``k``.
    """
    g = _generator(rng)
    sd = np.sqrt(target.effective_variances(gamma))
    x = g.standard_normal((n, target.dim)) * sd
    v = g.standard_normal((n, target.dim))
    k = g.integers(0, T + 1, size=n)
    xb, vb = exact_gaussian_flow(target, -k * eps, (x, v), gamma)
    return (xb, vb), (x, v), k


def variance_decomposition_check(target: GaussianTarget, T, eps, n, rng, f=None, gamma=1.0):
    """Monte Carlo terms of ``var(f) = var(E[fbar|Z]) + E[var(fbar|Z)]`` under exact flow.

    ``f`` maps positions (..., d) to scalars; default is the first coordinate.
    Returns a dict with the three terms, their standard errors and the
    standard errors of ``term1 + term2 - var_f`` and ``var_f - term1``.
    """
    f = (lambda x: x[..., 0]) if f is None else f
    (xb, vb), (x, _), _ = sample_mu_bar_exact(target, T, eps, n, rng, gamma)
    ks = np.arange(T + 1)
    Xs, Vs = exact_gaussian_flow(target, ks[None, :] * eps, (xb[:, None, :], vb[:, None, :]), gamma)
    lw = target.log_target(Xs, gamma) - 0.5 * np.sum(Vs * Vs, axis=-1)
    q = np.exp(lw - lw.max(axis=1, keepdims=True))
    q /= q.sum(axis=1, keepdims=True)
    fv = f(Xs)
    a = np.sum(q * fv, axis=1)
    b = np.sum(q * (fv - a[:, None]) ** 2, axis=1)
    c = f(x)
    ia = (a - a.mean()) ** 2
    ic = (c - c.mean()) ** 2
    se = lambda u: float(np.std(u, ddof=1) / math.sqrt(n))  # noqa: E731
    return {
        "term1": float(ia.mean()),
        "term2": float(b.mean()),
        "var_f": float(ic.mean()),
        "se_term1": se(ia),
        "se_term2": se(b),
        "se_var_f": se(ic),
        "se_identity": se(ia + b - ic),
        "se_reduction": se(ic - ia),
    }


def esjd(batch, f=None):
    """``sum_i sum_{k<l} (f_l W_l - f_k W_k)^2`` with within-snippet weights W.

    For vector ``f`` the squared Euclidean norm is used.
    """
    lw, vals = _parts(batch, f)
    W = folded_weights(lw)
    g = vals * W.reshape(W.shape + (1,) * (vals.ndim - 2))
    K = lw.shape[1]
    # sum_{k<l} (g_l - g_k)^2 = K sum g^2 - (sum g)^2
    s1 = g.sum(axis=1)
    s2 = (g * g).sum(axis=1)
    return float(np.sum(K * s2 - s1 * s1))


def relative_efficiency(log_w):
    """Empirical RE0, RE1, RE2 of the unfolded estimator from snippet weights.

    Weights are rescaled so their overall mean is one, standing in for the
    normalized density ratios. Returns a dict.
    """
    lw = np.asarray(log_w, dtype=float)
    N, K = lw.shape
    m = np.max(lw)
    if not np.isfinite(m):
        raise ValueError("all weights are zero (log weight -inf)")
    r = np.exp(lw - m)
    r /= r.mean()
    S = r.sum(axis=1)
    ES2 = np.mean(S * S)
    pisa = 2.0 * ES2 / K - K
    iid = 2.0 * np.mean(np.sum(r * r, axis=1)) / K - K
    ends = np.mean((r[:, 0] + r[:, -1]) ** 2)
    return {
        "RE0": float(2.0 * pisa),
        "RE1": float(pisa / iid) if iid != 0 else math.inf,
        "RE2": float((4.0 * ES2 / K**2 - 2.0) / (ends - 2.0)) if ends != 2.0 else math.inf,
    }


def log_mean_exp(a, axis=None):
    a = np.asarray(a, dtype=float)
    n = a.size if axis is None else a.shape[axis]
    return logsumexp(a, axis=axis) - math.log(n)
