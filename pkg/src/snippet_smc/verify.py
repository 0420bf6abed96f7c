"""Built-in oracle checks behind ``snippet-smc verify``.

Every check returns ``(name, passed, detail)``. Sizes are kept small so
the whole table runs in well under a minute.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

from .adaptation import contraction_curves, fit_epsilon_distribution, ig_logpdf
from .core import RandomStream, StandardNormalVelocity
from .estimators import folded_weights, rao_blackwell_oracle, variance_decomposition_check
from .integrators import Leapfrog
from .models import FlatTarget, GaussianTarget
from .smc import SMCConfig, run


def random_snippet_weights(N, T, rng, gamma_prev=0.3, gamma_next=0.7, eps=0.3):
    """Leapfrog snippets from random seeds on a 1-D tempered Gaussian: ``(log_w, X)``."""
    g = rng.generator
    target = GaussianTarget([2.0], [0.5])
    vel = StandardNormalVelocity(1)
    x0 = g.standard_normal((N, 1)) * 1.5
    v0 = g.standard_normal((N, 1))
    tr = Leapfrog().trajectory(target, gamma_next, x0, v0, eps, T)
    lw = tr.log_pi + vel.log_density(tr.V) - (target.log_target(x0, gamma_prev) + vel.log_density(v0))[:, None]
    return lw, tr.X


def _sign_flipped(lw, vals):
    return np.einsum("nk,nk...->n...", folded_weights(-lw), vals)


def check_rao_blackwell(seed=0, negative_control=False):
    rng = RandomStream(seed, key=(1,))
    worst = 0.0
    count = 0
    for N in (1, 2, 3):
        for T in (0, 1, 2):
            for rep in range(3):
                lw, X = random_snippet_weights(N, T, rng.substream(100 * N + 10 * T + rep))
                kw = {"folded_values": _sign_flipped} if negative_control else {}
                worst = max(worst, rao_blackwell_oracle((lw, X[..., 0]), **kw))
                count += 1
    return "rao_blackwell_exhaustive", worst <= 1e-12, f"{count} instances, max discrepancy {worst:.2e}"


def check_variance_decomposition(seed=0, n=20000):
    target = GaussianTarget([1.0])
    r = variance_decomposition_check(target, 16, math.pi / 32, n, RandomStream(seed, key=(2,)))
    gap = r["term1"] + r["term2"] - r["var_f"]
    ok = abs(gap) <= 3 * r["se_identity"] and r["term1"] < r["var_f"] - 3 * r["se_reduction"]
    return "variance_decomposition", ok, f"gap {gap:+.2e} (3 SE {3 * r['se_identity']:.2e}), term1 {r['term1']:.4f} < var {r['var_f']:.4f}"


def numeric_theta(eps, v, s):
    """Minimize ``-sum v log nu_theta(eps)`` over theta by bounded golden-section search on log theta."""
    lo, hi = math.log(eps.min()) - 5.0, math.log(eps.max()) + 5.0
    res = minimize_scalar(lambda t: -np.dot(v, ig_logpdf(eps, math.exp(t), s)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return math.exp(res.x)


def check_ig_fit(seed=0, cases=20):
    g = RandomStream(seed, key=(3,)).generator
    worst = 0.0
    for i in range(cases):
        s = (1.0, 3.0)[i % 2]
        n = int(g.integers(2, 40))
        eps = np.exp(g.normal(-2.0, 1.0, n))
        v = g.random(n)
        a = fit_epsilon_distribution(eps, v, s)
        b = numeric_theta(eps, v, s)
        worst = max(worst, abs(a - b) / b)
    return "ig_fit_vs_numeric", worst <= 1e-6, f"{cases} cases, max rel err {worst:.2e}"


def check_free_particle(seed=0):
    g = RandomStream(seed, key=(4,)).generator
    target = FlatTarget(3)
    x = g.standard_normal((8, 3))
    v = g.standard_normal((4, 3))
    tr = Leapfrog().trajectory(target, 1.0, x, np.concatenate([v, v]), 0.2, 25)
    _, kappa = contraction_curves(tr.X[:4], tr.X[4:], np.full(4, 0.2))
    m = np.arange(1, 26)
    err = float(np.max(np.abs(kappa - (m + 1) / m)))
    return "free_particle_contraction", err <= 1e-12, f"max |kappa - (m+1)/m| = {err:.1e}"


def check_gaussian_evidence(seed=0, runs=40):
    target = GaussianTarget([1.0], [1.0])
    z = np.array([math.exp(run(target, SMCConfig(N=64, T=8, epsilon=0.1, seed=seed, replication=r)).log_Z)
                  for r in range(runs)])
    truth = math.exp(target.log_evidence())
    se = z.std(ddof=1) / math.sqrt(runs)
    return "gaussian_evidence", abs(z.mean() - truth) <= 3 * se, f"mean Z {z.mean():.5f} vs {truth:.5f} (SE {se:.1e})"


def run_checks(seed=0, negative_control=False):
    return [
        check_rao_blackwell(seed, negative_control),
        check_variance_decomposition(seed),
        check_ig_fit(seed),
        check_free_particle(seed),
        check_gaussian_evidence(seed),
    ]
