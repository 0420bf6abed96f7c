"""One-step maps and snippet construction.

Two layers live here. The single-state layer (``leapfrog_step``,
``thug_step``, ``snug_step``, :func:`build_snippet`) works on
:class:`~snippet_smc.core.PhaseState` objects and is the reference
definition. The batch layer (:class:`Integrator` subclasses) grows all
N snippets of an SMC iteration at once on arrays and is what the engine
uses; tests pin the two together.

A trajectory that produces a non-finite position, velocity or gradient is
frozen: the remaining states repeat the last finite state and carry log
density -inf, so they can never be resampled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PhaseState, _generator, finite_or_neg_inf
from .models import GaussianTarget, exact_gaussian_flow


# --------------------------------------------------------------------------
# single-state maps


def leapfrog_step(grad_U, epsilon, z: PhaseState, grad_x=None):
    """One leapfrog step for potential ``U``.

    ``grad_x`` may carry a cached ``grad_U(z.x)``. Returns the new state;
    see :class:`LeapfrogStep` for the chained, gradient-caching form.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    g = grad_U(z.x) if grad_x is None else grad_x
    with np.errstate(all="ignore"):
        v_half = z.v - 0.5 * epsilon * g
        x_new = z.x + epsilon * v_half
        v_new = v_half - 0.5 * epsilon * grad_U(x_new)
    return PhaseState.unchecked(x_new, v_new)


def _reflect_step(constraint_grad, epsilon, z, sign):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    with np.errstate(all="ignore"):
        x_mid = z.x + epsilon * z.v
        g = np.asarray(constraint_grad(x_mid), dtype=float)
        norm = np.sqrt(g @ g)
        if norm > 0 and np.isfinite(norm):
            n = g / norm
            v_ref = z.v - 2.0 * (z.v @ n) * n
            v_new = sign * v_ref
        else:
            # degenerate normal: reflection is the identity
            v_new = z.v
        x_new = x_mid + epsilon * v_new
    return PhaseState.unchecked(x_new, v_new)


def thug_step(constraint_grad, epsilon, z: PhaseState):
    """Drift, reflect the velocity in the constraint normal, drift."""
    return _reflect_step(constraint_grad, epsilon, z, 1.0)


def snug_step(constraint_grad, epsilon, z: PhaseState):
    """Drift, negated reflection (keeps the normal part, flips the tangential), drift."""
    return _reflect_step(constraint_grad, epsilon, z, -1.0)


class LeapfrogStep:
    """Chained leapfrog map ``(epsilon, z) -> z'`` that caches the last gradient.

    Calling it on the state it just returned costs one gradient evaluation,
    so a T-step snippet costs T + 1.
    """

    is_volume_preserving = True

    def __init__(self, grad_U):
        self.grad_U = grad_U
        self._last = None

    def __call__(self, epsilon, z: PhaseState) -> PhaseState:
        cached = None
        if self._last is not None and self._last[0] is z:
            cached = self._last[1]
        grads = []

        def counted(x):
            g = np.asarray(self.grad_U(x), dtype=float)
            grads.append(g)
            return g

        out = leapfrog_step(counted, epsilon, z, grad_x=cached)
        self._last = (out, grads[-1])
        return out


class ThugStep:
    is_volume_preserving = True

    def __init__(self, constraint_grad):
        self.constraint_grad = constraint_grad

    def __call__(self, epsilon, z):
        return thug_step(self.constraint_grad, epsilon, z)


class SnugStep(ThugStep):
    def __call__(self, epsilon, z):
        return snug_step(self.constraint_grad, epsilon, z)


class ExactFlowStep:
    is_volume_preserving = True

    def __init__(self, target: GaussianTarget, gamma=1.0):
        self.target = target
        self.gamma = gamma

    def __call__(self, epsilon, z):
        return exact_gaussian_flow(self.target, epsilon, z, self.gamma)


@dataclass(frozen=True)
class Snippet:
    """States ``z_0..z_T`` grown from one seed, with cached weights."""

    states: tuple
    log_mu_next: np.ndarray
    log_mu_prev_seed: float
    log_w: np.ndarray
    epsilon: float
    label: int = 0

    @property
    def T(self) -> int:
        return len(self.states) - 1

    @property
    def positions(self) -> np.ndarray:
        return np.stack([z.x for z in self.states])

    @property
    def velocities(self) -> np.ndarray:
        return np.stack([z.v for z in self.states])


def build_snippet(step, epsilon, T, z0: PhaseState, log_mu_next, log_mu_prev, label=0) -> Snippet:
    """Iterate ``step`` T times from ``z0`` and weight each state.

    ``log_mu_next`` and ``log_mu_prev`` map a PhaseState to a log density.
    Weights are ``log mu_next(z_k) - log mu_prev(z_0)``.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    lp0 = float(log_mu_prev(z0))
    if lp0 == -np.inf or np.isnan(lp0):
        raise ValueError("seed lies outside the support of the previous target (log density -inf)")
    states = [z0]
    lmn = [float(finite_or_neg_inf(log_mu_next(z0)))]
    z = z0
    dead = False
    for _ in range(T):
        if not dead:
            z_new = step(epsilon, z)
            if z_new.is_finite:
                z = z_new
                lmn.append(float(finite_or_neg_inf(log_mu_next(z))))
                states.append(z)
                continue
            dead = True
        states.append(z)
        lmn.append(-np.inf)
    lmn = np.asarray(lmn)
    with np.errstate(invalid="ignore"):
        log_w = finite_or_neg_inf(lmn - lp0)
    return Snippet(tuple(states), lmn, lp0, log_w, float(epsilon), int(label))


def mixture_select(proportions, rng, size=None):
    """Draw integrator labels (0-based) with the given proportions."""
    p = np.asarray(proportions, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("proportions must be a nonempty vector")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError("proportions must be finite and nonnegative")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"proportions must sum to 1, got {p.sum()!r}")
    cdf = np.cumsum(p)
    u = _generator(rng).random(size)
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), p.size - 1)


# --------------------------------------------------------------------------
# batch layer


@dataclass
class Trajectory:
    X: np.ndarray  # (N, T+1, d)
    V: np.ndarray  # (N, T+1, d)
    log_pi: np.ndarray  # (N, T+1) log pi(x_k; gamma)
    n_grad: int
    frozen: np.ndarray  # (N,) rows stopped by a non-finite state


class Integrator:
    """Batch integrator: grows N snippets of T steps under ``pi(.; gamma)``."""

    name = "integrator"
    is_volume_preserving = True

    def trajectory(self, target, gamma, x0, v0, eps, T, labels=None) -> Trajectory:
        raise NotImplementedError

    def as_step(self, target, gamma):
        """Single-state map ``(epsilon, z) -> z'`` matching :meth:`trajectory`."""
        raise NotImplementedError


def _alloc(x0, v0, T):
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    N, d = x0.shape
    X = np.empty((N, T + 1, d))
    V = np.empty((N, T + 1, d))
    X[:, 0] = x0
    V[:, 0] = v0
    return X, V, np.empty((N, T + 1))


def _freeze(X, V, LP, k, rows):
    X[rows, k] = X[rows, k - 1]
    V[rows, k] = V[rows, k - 1]
    LP[rows, k] = -np.inf


class Leapfrog(Integrator):
    name = "leapfrog"

    def trajectory(self, target, gamma, x0, v0, eps, T, labels=None):
        X, V, LP = _alloc(x0, v0, T)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (X.shape[0],))[:, None]
        with np.errstate(all="ignore"):
            lp, g = target.log_target_and_grad(X[:, 0], gamma)
            LP[:, 0] = finite_or_neg_inf(lp)
            n_grad = X.shape[0]
            alive = np.isfinite(g).all(axis=1)
            for k in range(1, T + 1):
                idx = np.flatnonzero(alive)
                if idx.size:
                    e = eps[idx]
                    v_half = V[idx, k - 1] + 0.5 * e * g[idx]
                    x_new = X[idx, k - 1] + e * v_half
                    lp_new, g_new = target.log_target_and_grad(x_new, gamma)
                    n_grad += idx.size
                    v_new = v_half + 0.5 * e * g_new
                    ok = np.isfinite(x_new).all(1) & np.isfinite(v_new).all(1) & np.isfinite(g_new).all(1)
                    good, bad = idx[ok], idx[~ok]
                    X[good, k] = x_new[ok]
                    V[good, k] = v_new[ok]
                    LP[good, k] = finite_or_neg_inf(lp_new[ok])
                    g[good] = g_new[ok]
                    alive[bad] = False
                _freeze(X, V, LP, k, np.flatnonzero(~alive))
        return Trajectory(X, V, LP, n_grad, ~alive)

    def as_step(self, target, gamma):
        return LeapfrogStep(lambda x: -target.grad_log_target(x, gamma))


class _Reflective(Integrator):
    sign = 1.0

    def trajectory(self, target, gamma, x0, v0, eps, T, labels=None):
        X, V, LP = _alloc(x0, v0, T)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (X.shape[0],))[:, None]
        n_grad = 0
        with np.errstate(all="ignore"):
            LP[:, 0] = target.log_target(X[:, 0], gamma)
            alive = np.ones(X.shape[0], dtype=bool)
            for k in range(1, T + 1):
                idx = np.flatnonzero(alive)
                if idx.size:
                    e = eps[idx]
                    v = V[idx, k - 1]
                    x_mid = X[idx, k - 1] + e * v
                    gl = target.constraint_grad(x_mid)
                    n_grad += idx.size
                    norm = np.sqrt(np.einsum("nd,nd->n", gl, gl))
                    usable = (norm > 0) & np.isfinite(norm)
                    n = np.where(usable[:, None], gl / np.where(usable, norm, 1.0)[:, None], 0.0)
                    v_ref = v - 2.0 * np.einsum("nd,nd->n", v, n)[:, None] * n
                    v_new = np.where(usable[:, None], self.sign * v_ref, v)
                    x_new = x_mid + e * v_new
                    ok = np.isfinite(x_new).all(1) & np.isfinite(v_new).all(1)
                    good, bad = idx[ok], idx[~ok]
                    X[good, k] = x_new[ok]
                    V[good, k] = v_new[ok]
                    LP[good, k] = target.log_target(x_new[ok], gamma)
                    alive[bad] = False
                _freeze(X, V, LP, k, np.flatnonzero(~alive))
        return Trajectory(X, V, LP, n_grad, ~alive)


class Thug(_Reflective):
    name = "thug"
    sign = 1.0

    def as_step(self, target, gamma):
        return ThugStep(target.constraint_grad)


class Snug(_Reflective):
    name = "snug"
    sign = -1.0

    def as_step(self, target, gamma):
        return SnugStep(target.constraint_grad)


class ExactGaussianFlow(Integrator):
    """Exact Hamiltonian flow of a :class:`GaussianTarget`; no gradients."""

    name = "exact"

    def trajectory(self, target, gamma, x0, v0, eps, T, labels=None):
        if not isinstance(target, GaussianTarget):
            raise TypeError("ExactGaussianFlow needs a GaussianTarget")
        X, V, LP = _alloc(x0, v0, T)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (X.shape[0],))
        for k in range(1, T + 1):
            X[:, k], V[:, k] = exact_gaussian_flow(target, eps, (X[:, k - 1], V[:, k - 1]), gamma)
        LP[:] = target.log_target(X, gamma)
        return Trajectory(X, V, LP, 0, np.zeros(X.shape[0], dtype=bool))

    def as_step(self, target, gamma):
        return ExactFlowStep(target, gamma)


class MixtureIntegrator(Integrator):
    """Several integrators; each particle uses the one named by its label."""

    name = "mixture"

    def __init__(self, integrators, proportions):
        if len(integrators) != len(proportions):
            raise ValueError("one proportion per integrator")
        self.integrators = list(integrators)
        self.proportions = np.asarray(proportions, dtype=float)
        mixture_select(self.proportions, np.random.default_rng(0))  # validates

    def draw_labels(self, rng, n):
        return mixture_select(self.proportions, rng, n)

    def trajectory(self, target, gamma, x0, v0, eps, T, labels=None):
        x0 = np.asarray(x0, dtype=float)
        N = x0.shape[0]
        labels = np.zeros(N, dtype=int) if labels is None else np.asarray(labels)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (N,))
        X, V, LP = _alloc(x0, v0, T)
        frozen = np.zeros(N, dtype=bool)
        n_grad = 0
        for lab, integ in enumerate(self.integrators):
            rows = np.flatnonzero(labels == lab)
            if rows.size:
                tr = integ.trajectory(target, gamma, x0[rows], np.asarray(v0)[rows], eps[rows], T)
                X[rows], V[rows], LP[rows] = tr.X, tr.V, tr.log_pi
                frozen[rows] = tr.frozen
                n_grad += tr.n_grad
        return Trajectory(X, V, LP, n_grad, frozen)

    def as_step(self, target, gamma, label=0):
        return self.integrators[label].as_step(target, gamma)


INTEGRATORS = {"leapfrog": Leapfrog, "thug": Thug, "snug": Snug, "exact": ExactGaussianFlow}
