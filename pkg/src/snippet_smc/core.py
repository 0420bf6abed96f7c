"""Phase-space types, tempered targets, velocity law and random streams.

Targets are evaluated on batches: a position argument of shape ``(..., d)``
returns values of shape ``(...)`` (log densities) or ``(..., d)``
(gradients). All densities live in log space; a point outside the support,
or one where evaluation produced a non-finite value, has log density -inf.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PhaseState:
    """A point ``z = (x, v)`` of position-velocity space."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=1)
        v = np.array(self.v, dtype=float, ndmin=1)
        if x.ndim != 1 or x.shape != v.shape:
            raise ValueError(f"x and v must be vectors of equal length, got {x.shape} and {v.shape}")
        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            raise ValueError("PhaseState entries must be finite")
        x.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def unchecked(cls, x, v) -> "PhaseState":
        """Build without the finiteness check (integrator output may diverge)."""
        obj = object.__new__(cls)
        x = np.array(x, dtype=float, ndmin=1)
        v = np.array(v, dtype=float, ndmin=1)
        x.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(obj, "x", x)
        object.__setattr__(obj, "v", v)
        return obj

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.x).all() and np.isfinite(self.v).all())

    def flip(self) -> "PhaseState":
        """Velocity flip ``(x, v) -> (x, -v)``."""
        return PhaseState.unchecked(self.x, -self.v)


def _check_dim(x, d):
    if np.shape(x)[-1] != d:
        raise ValueError(f"dimension mismatch: expected last axis {d}, got shape {np.shape(x)}")


def finite_or_neg_inf(a):
    """Replace NaN and +inf by -inf (the out-of-support sentinel)."""
    a = np.asarray(a, dtype=float)
    return np.where(np.isnan(a) | (a == np.inf), -np.inf, a)


class PathTarget:
    """A family ``gamma -> pi(x; gamma)`` of unnormalized densities, gamma in [0, 1].

    Subclasses provide :meth:`log_target` and :meth:`log_target_and_grad`;
    ``gamma = 0`` must be easy to sample from via :meth:`sample_initial`.
    """

    dim: int

    def log_target(self, x, gamma):
        raise NotImplementedError

    def log_target_and_grad(self, x, gamma):
        raise NotImplementedError

    def grad_log_target(self, x, gamma):
        return self.log_target_and_grad(x, gamma)[1]

    def sample_initial(self, n, rng):
        raise NotImplementedError

    def log_increment_fn(self, x, gamma):
        """Return ``g -> log pi(x; g) - log pi(x; gamma)`` for fixed particles ``x``."""
        base = self.log_target(x, gamma)

        def incr(g):
            with np.errstate(invalid="ignore"):
                return finite_or_neg_inf(self.log_target(x, g) - base)

        return incr


class TemperedTarget(PathTarget):
    """``log pi(x; gamma) = gamma * loglik(x) + logprior(x)``.

    Subclasses implement the four prior/likelihood fields; the prior is a
    normalized density so that the accumulated log-normalizing constant is
    the log evidence.
    """

    def log_prior(self, x):
        raise NotImplementedError

    def log_likelihood(self, x):
        raise NotImplementedError

    def grad_log_prior(self, x):
        raise NotImplementedError

    def grad_log_likelihood(self, x):
        raise NotImplementedError

    def loglik_and_grad(self, x):
        # override when the two share costly terms
        return self.log_likelihood(x), self.grad_log_likelihood(x)

    def sample_prior(self, n, rng):
        raise NotImplementedError

    def sample_initial(self, n, rng):
        return self.sample_prior(n, rng)

    def log_target(self, x, gamma):
        _check_dim(x, self.dim)
        lp = self.log_prior(x)
        if gamma == 0.0:
            return finite_or_neg_inf(lp)
        with np.errstate(invalid="ignore", over="ignore"):
            return finite_or_neg_inf(gamma * self.log_likelihood(x) + lp)

    def log_target_and_grad(self, x, gamma):
        _check_dim(x, self.dim)
        lp = self.log_prior(x)
        gp = self.grad_log_prior(x)
        if gamma == 0.0:
            return finite_or_neg_inf(lp), gp
        ll, gl = self.loglik_and_grad(x)
        with np.errstate(invalid="ignore", over="ignore"):
            return finite_or_neg_inf(gamma * ll + lp), gamma * gl + gp

    def log_increment_fn(self, x, gamma):
        ll = np.asarray(self.log_likelihood(x), dtype=float)

        def incr(g):
            with np.errstate(invalid="ignore"):
                return finite_or_neg_inf((g - gamma) * ll)

        return incr


class StandardNormalVelocity:
    """Velocity law N(0, I_d)."""

    def __init__(self, dim: int):
        self.dim = int(dim)

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        _check_dim(v, self.dim)
        return -0.5 * np.sum(v * v, axis=-1) - 0.5 * self.dim * LOG_2PI

    def sample(self, rng, n=None):
        size = (self.dim,) if n is None else (n, self.dim)
        return _generator(rng).standard_normal(size)


class RandomStream:
    """Counter-based random stream (Philox) addressed by a key path.

    ``RandomStream(seed).substream(i).substream(j)`` is reproducible from
    ``(seed, i, j)`` alone and independent of any other path.
    """

    def __init__(self, seed: int = 0, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def substream(self, index: int) -> "RandomStream":
        return RandomStream(self.seed, self.key + (int(index),))

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def categorical(self, probs, size=None):
        """Draw indices with probabilities proportional to ``probs``."""
        p = np.asarray(probs, dtype=float)
        if (p < 0).any() or not np.isfinite(p).all():
            raise ValueError("categorical probabilities must be finite and nonnegative")
        cdf = np.cumsum(p)
        if cdf[-1] <= 0:
            raise ValueError("categorical probabilities sum to zero")
        u = self.generator.random(size) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, key={self.key})"


def _generator(rng):
    if isinstance(rng, RandomStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng).__name__}")


def log_mu(target: PathTarget, vel, gamma, z):
    """Log density of ``pi(.; gamma) x varpi`` at ``z`` (a PhaseState or an ``(x, v)`` pair)."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    x, v = (z.x, z.v) if isinstance(z, PhaseState) else z
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dim(x, target.dim)
    _check_dim(v, target.dim)
    with np.errstate(invalid="ignore", over="ignore"):
        out = target.log_target(x, gamma) + vel.log_density(v)
    out = finite_or_neg_inf(out)
    return float(out) if out.ndim == 0 else out


def grad_log_mu_x(target: PathTarget, gamma, x):
    """Gradient in ``x`` of ``log pi(x; gamma)``; NaN-filled for non-finite input."""
    x = np.asarray(x, dtype=float)
    _check_dim(x, target.dim)
    if not np.isfinite(x).all():
        return np.full(x.shape, np.nan)
    return target.grad_log_target(x, gamma)
