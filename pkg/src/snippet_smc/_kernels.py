"""Hot numeric kernels.

Each kernel has a pure-numpy implementation and, when numba is importable,
an ``@njit`` twin that loops over particles with ``prange``. The compiled
path is used by default; set ``SNIPPET_SMC_DISABLE_NUMBA=1`` to force the
numpy path. Margins ``x @ A.T`` go through BLAS on both paths; the rest
of each particle's result is a serial loop owned by one thread, so the
output does not depend on how many worker threads run.
"""
import os

import numpy as np
from scipy.special import expit

_FALSEY = ("", "0", "false", "no", "off")

try:
    if os.environ.get("SNIPPET_SMC_DISABLE_NUMBA", "").lower() not in _FALSEY:
        raise ImportError("numba disabled by SNIPPET_SMC_DISABLE_NUMBA")
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe, which warns on older TBB installs
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def set_threads(n=None):
    """Cap worker threads (numba and BLAS); ``None`` reads SNIPPET_SMC_THREADS."""
    if n is None:
        raw = os.environ.get("SNIPPET_SMC_THREADS")
        if not raw:
            return None
        n = int(raw)
    n = max(1, int(n))
    if HAS_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:  # pragma: no cover
        pass
    return n


# --------------------------------------------------------------------------
# numpy implementations


def logistic_loglik_grad_numpy(A, x):
    """Log-likelihood and gradient of a logistic model.

    ``A`` holds the label-signed design rows ``y_i * xi_i`` (shape (n, d)),
    ``x`` a batch of coefficient vectors (shape (N, d)).
    """
    Z = x @ A.T
    ll = -np.logaddexp(0.0, -Z).sum(axis=1)
    grad = expit(-Z) @ A
    return ll, grad


def logistic_loglik_numpy(A, x):
    Z = x @ A.T
    return -np.logaddexp(0.0, -Z).sum(axis=1)


def weighted_position_variance_numpy(X, log_w):
    """Within-snippet weighted variance of positions.

    ``X`` has shape (N, K, d), ``log_w`` shape (N, K). Snippets whose
    weights are all -inf get 0.
    """
    N = X.shape[0]
    out = np.zeros(N)
    m = np.max(log_w, axis=1)
    ok = np.isfinite(m)
    if not ok.any():
        return out
    p = np.exp(log_w[ok] - m[ok, None])
    p /= p.sum(axis=1, keepdims=True)
    Xo = np.where(p[:, :, None] > 0.0, X[ok], 0.0)
    mean = np.einsum("nk,nkd->nd", p, Xo)
    dev = Xo - mean[:, None, :]
    out[ok] = np.einsum("nk,nk->n", p, np.einsum("nkd,nkd->nk", dev, dev))
    return out


# --------------------------------------------------------------------------
# numba implementations

if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def logistic_loglik_grad_numba(A, x):
        N, d = x.shape
        n = A.shape[0]
        Z = x @ A.T  # margins via BLAS; each entry is one dot product
        ll = np.zeros(N)
        grad = np.zeros((N, d))
        for i in prange(N):
            acc = 0.0
            g = grad[i]
            for j in range(n):
                z = Z[i, j]
                # -log(1 + exp(-z)) and sigmoid(-z), both overflow-safe
                if z >= 0.0:
                    e = np.exp(-z)
                    acc -= np.log1p(e)
                    s = e / (1.0 + e)
                else:
                    e = np.exp(z)
                    acc -= np.log1p(e) - z
                    s = 1.0 / (1.0 + e)
                for c in range(d):
                    g[c] += s * A[j, c]
            ll[i] = acc
        return ll, grad

    @njit(cache=True, parallel=True)
    def logistic_loglik_numba(A, x):
        N = x.shape[0]
        n = A.shape[0]
        Z = x @ A.T
        ll = np.zeros(N)
        for i in prange(N):
            acc = 0.0
            for j in range(n):
                z = Z[i, j]
                if z >= 0.0:
                    acc -= np.log1p(np.exp(-z))
                else:
                    acc -= np.log1p(np.exp(z)) - z
            ll[i] = acc
        return ll

    @njit(cache=True, parallel=True)
    def weighted_position_variance_numba(X, log_w):
        N, K, d = X.shape
        out = np.zeros(N)
        for i in prange(N):
            m = -np.inf
            for k in range(K):
                if log_w[i, k] > m:
                    m = log_w[i, k]
            if not np.isfinite(m):
                continue
            p = np.empty(K)
            tot = 0.0
            for k in range(K):
                p[k] = np.exp(log_w[i, k] - m)
                tot += p[k]
            for k in range(K):
                p[k] /= tot
            mean = np.zeros(d)
            for k in range(K):
                if p[k] > 0.0:
                    for c in range(d):
                        mean[c] += p[k] * X[i, k, c]
            acc = 0.0
            for k in range(K):
                if p[k] > 0.0:
                    sq = 0.0
                    for c in range(d):
                        diff = X[i, k, c] - mean[c]
                        sq += diff * diff
                    acc += p[k] * sq
            out[i] = acc
        return out

    logistic_loglik_grad = logistic_loglik_grad_numba
    logistic_loglik = logistic_loglik_numba
    weighted_position_variance = weighted_position_variance_numba
else:
    logistic_loglik_grad_numba = None
    logistic_loglik_numba = None
    weighted_position_variance_numba = None

    logistic_loglik_grad = logistic_loglik_grad_numpy
    logistic_loglik = logistic_loglik_numpy
    weighted_position_variance = weighted_position_variance_numpy
