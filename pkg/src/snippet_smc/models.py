"""Concrete targets: diagonal Gaussian, logistic regression, filamentary shell."""
from __future__ import annotations

import csv

import numpy as np

from . import _kernels
from .core import LOG_2PI, PathTarget, PhaseState, TemperedTarget, _check_dim, _generator, finite_or_neg_inf


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    _check_dim(x, d)
    return x.reshape(-1, d), x.shape[:-1]


class GaussianTarget(TemperedTarget):
    """Diagonal Gaussian prior N(0, diag(variances)).

    With ``likelihood_variances`` the likelihood is the unnormalized Gaussian
    ``exp(-sum x_i^2 / (2 l_i^2))``, so the tempered target stays Gaussian with
    precision ``1/variances + gamma/l^2`` and the evidence is known in closed
    form. Without it the likelihood is constant and the path is flat.
    """

    def __init__(self, variances, likelihood_variances=None):
        var = np.array(variances, dtype=float, ndmin=1)
        if var.ndim != 1 or not (np.isfinite(var).all() and (var > 0).all()):
            raise ValueError("variances must be a finite positive vector")
        self.variances = var
        self.dim = var.shape[0]
        if likelihood_variances is None:
            self.likelihood_variances = None
        else:
            lv = np.broadcast_to(np.asarray(likelihood_variances, dtype=float), var.shape).copy()
            if not (np.isfinite(lv).all() and (lv > 0).all()):
                raise ValueError("likelihood_variances must be finite and positive")
            self.likelihood_variances = lv

    def log_prior(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum(x * x / self.variances, axis=-1) - 0.5 * np.sum(np.log(self.variances)) - 0.5 * self.dim * LOG_2PI

    def grad_log_prior(self, x):
        return -np.asarray(x, dtype=float) / self.variances

    def log_likelihood(self, x):
        x = np.asarray(x, dtype=float)
        if self.likelihood_variances is None:
            return np.zeros(x.shape[:-1])
        return -0.5 * np.sum(x * x / self.likelihood_variances, axis=-1)

    def grad_log_likelihood(self, x):
        x = np.asarray(x, dtype=float)
        if self.likelihood_variances is None:
            return np.zeros_like(x)
        return -x / self.likelihood_variances

    def sample_prior(self, n, rng):
        return _generator(rng).standard_normal((n, self.dim)) * np.sqrt(self.variances)

    def effective_variances(self, gamma=1.0):
        if self.likelihood_variances is None:
            return self.variances.copy()
        return 1.0 / (1.0 / self.variances + gamma / self.likelihood_variances)

    def log_evidence(self, gamma=1.0):
        """log of the integral of ``L^gamma * prior``."""
        return 0.5 * float(np.sum(np.log(self.effective_variances(gamma) / self.variances)))


def exact_gaussian_flow(target: GaussianTarget, t, z, gamma=1.0):
    """Exact Hamiltonian flow for the Gaussian ``pi(.; gamma)`` over time ``t``.

    ``z`` is a PhaseState (returns a PhaseState) or an ``(x, v)`` pair of
    arrays of shape (..., d) (returns a pair).
    """
    sig = np.sqrt(target.effective_variances(gamma))
    single = isinstance(z, PhaseState)
    x, v = (z.x, z.v) if single else (np.asarray(z[0], float), np.asarray(z[1], float))
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t[..., None]
    c = np.cos(t / sig)
    s = np.sin(t / sig)
    xt = x * c + sig * v * s
    vt = v * c - (x / sig) * s
    return PhaseState(xt, vt) if single else (xt, vt)


def gaussian_hamiltonian(target: GaussianTarget, z, gamma=1.0):
    x, v = (z.x, z.v) if isinstance(z, PhaseState) else z
    var = target.effective_variances(gamma)
    return 0.5 * np.sum(np.asarray(x) ** 2 / var, axis=-1) + 0.5 * np.sum(np.asarray(v) ** 2, axis=-1)


class LogisticRegressionTarget(TemperedTarget):
    """Bayesian logistic regression with independent zero-mean Gaussian priors.

    ``design`` already contains the intercept column; ``y`` takes values in
    {-1, +1}.
    """

    def __init__(self, design, y, prior_scales):
        design = np.array(design, dtype=float, ndmin=2)
        y = np.asarray(y, dtype=float).ravel()
        n, d = design.shape
        if n < 1 or d < 1:
            raise ValueError("design must have at least one row and one column")
        if y.shape[0] != n:
            raise ValueError(f"{y.shape[0]} responses for {n} design rows")
        if not np.isin(y, (-1.0, 1.0)).all():
            raise ValueError("responses must be -1 or +1")
        scales = np.broadcast_to(np.asarray(prior_scales, dtype=float), (d,)).copy()
        if not (np.isfinite(scales).all() and (scales > 0).all()):
            raise ValueError("prior scales must be finite and positive")
        self.design = design
        self.y = y
        self.prior_scales = scales
        self.dim = d
        self.n_obs = n
        self._A = np.ascontiguousarray(y[:, None] * design)
        self._prior_const = -float(np.sum(np.log(scales))) - 0.5 * d * LOG_2PI

    def log_prior(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum((x / self.prior_scales) ** 2, axis=-1) + self._prior_const

    def grad_log_prior(self, x):
        return -np.asarray(x, dtype=float) / self.prior_scales**2

    def log_likelihood(self, x):
        xb, shape = _as_batch(x, self.dim)
        return _kernels.logistic_loglik(self._A, np.ascontiguousarray(xb)).reshape(shape)

    def grad_log_likelihood(self, x):
        return self.loglik_and_grad(x)[1]

    def loglik_and_grad(self, x):
        xb, shape = _as_batch(x, self.dim)
        ll, g = _kernels.logistic_loglik_grad(self._A, np.ascontiguousarray(xb))
        return ll.reshape(shape), g.reshape(shape + (self.dim,))

    def sample_prior(self, n, rng):
        return _generator(rng).standard_normal((n, self.dim)) * self.prior_scales


def loglik_logistic(target: LogisticRegressionTarget, x):
    out = target.log_likelihood(x)
    return float(out) if np.ndim(out) == 0 else out


def load_sonar(path, standardize=False, intercept_scale=20.0, slope_scale=5.0):
    """Read a Sonar-format CSV: 60 reals then a class token ``R`` or ``M``.

    Labels map R -> +1 and M -> -1. With ``standardize`` each covariate is
    centred and scaled to standard deviation 0.5 before the intercept is
    prepended.
    """
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 61:
                raise ValueError(f"{path}: line {lineno}: expected 61 fields, got {len(rec)}")
            token = rec[-1].strip()
            if token not in ("R", "M"):
                raise ValueError(f"{path}: line {lineno}: class token must be R or M, got {token!r}")
            try:
                vals = [float(f) for f in rec[:-1]]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if not np.isfinite(vals).all():
                raise ValueError(f"{path}: line {lineno}: non-finite covariate")
            rows.append(vals)
            labels.append(1.0 if token == "R" else -1.0)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    X = np.asarray(rows)
    if standardize:
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = 0.5 * (X - X.mean(axis=0)) / sd
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    scales = np.full(design.shape[1], float(slope_scale))
    scales[0] = intercept_scale
    return LogisticRegressionTarget(design, np.asarray(labels), scales)


class FilamentaryTarget(PathTarget):
    """``1{|l(x)| <= tol(gamma)} N(x; 0, I)`` with ``l(x) = x' Sigma^-1 x - c``.

    The tolerance shrinks geometrically from ``tol_initial`` at gamma=0 to
    ``tol_final`` at gamma=1. At gamma=0 the indicator is dropped, so the
    initial distribution is the base Gaussian; pass ``tol_initial=None`` and
    call :meth:`calibrated` to set it from the initial particles.
    """

    def __init__(self, variances, c, tol_final, tol_initial=None):
        var = np.array(variances, dtype=float, ndmin=1)
        if not (np.isfinite(var).all() and (var > 0).all()):
            raise ValueError("variances must be finite and positive")
        if tol_final <= 0:
            raise ValueError("tol_final must be positive")
        if tol_initial is not None and tol_initial < tol_final:
            raise ValueError("tol_initial must be at least tol_final")
        self.variances = var
        self.dim = var.shape[0]
        self.c = float(c)
        self.tol_final = float(tol_final)
        self.tol_initial = None if tol_initial is None else float(tol_initial)

    def calibrated(self, x0):
        """Copy with ``tol_initial = max |l(x0)|`` (at least ``tol_final``)."""
        tol0 = max(float(np.max(np.abs(self.constraint(x0)))), self.tol_final)
        return FilamentaryTarget(self.variances, self.c, self.tol_final, tol0)

    def tolerance(self, gamma):
        if gamma == 0.0:
            return np.inf
        if self.tol_initial is None:
            raise ValueError("tol_initial unset; use calibrated()")
        return self.tol_initial * (self.tol_final / self.tol_initial) ** gamma

    def constraint(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x / self.variances, axis=-1) - self.c

    def constraint_grad(self, x):
        return 2.0 * np.asarray(x, dtype=float) / self.variances

    def log_base(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum(x * x, axis=-1) - 0.5 * self.dim * LOG_2PI

    def log_target(self, x, gamma):
        _check_dim(x, self.dim)
        with np.errstate(invalid="ignore", over="ignore"):
            lb = self.log_base(x)
            inside = np.abs(self.constraint(x)) <= self.tolerance(gamma)
            return finite_or_neg_inf(np.where(inside, lb, -np.inf))

    def log_target_and_grad(self, x, gamma):
        # gradient of the smooth base part; the indicator is flat a.e.
        return self.log_target(x, gamma), -np.asarray(x, dtype=float)

    def sample_initial(self, n, rng):
        return _generator(rng).standard_normal((n, self.dim))


class FlatTarget(PathTarget):
    """Constant log density and zero gradient: the free-particle case.

    ``sample_initial`` draws standard normals so the target can seed runs
    even though the density itself is improper.
    """

    def __init__(self, dim):
        self.dim = int(dim)

    def log_target(self, x, gamma):
        _check_dim(x, self.dim)
        return np.zeros(np.shape(x)[:-1])

    def log_target_and_grad(self, x, gamma):
        return self.log_target(x, gamma), np.zeros(np.shape(x))

    def sample_initial(self, n, rng):
        return _generator(rng).standard_normal((n, self.dim))
