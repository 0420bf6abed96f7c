"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed in the
terminal summary under "acceptance criteria".
"""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from snippet_smc.adaptation import contraction_curves, estimate_tau, fit_epsilon_distribution
from snippet_smc.core import PhaseState, RandomStream, StandardNormalVelocity, log_mu
from snippet_smc.estimators import rao_blackwell_oracle, variance_decomposition_check
from snippet_smc.integrators import ExactFlowStep, ExactGaussianFlow, Leapfrog, build_snippet, snug_step, thug_step
from snippet_smc.markov_snippet import MarkovSnippet, markov_snippet_weights
from snippet_smc.models import FlatTarget, GaussianTarget, load_sonar
from snippet_smc.smc import SMCConfig, init_cloud, run, run_iteration
from snippet_smc.verify import numeric_theta, random_snippet_weights


def test_c01_folded_unfolded_exhaustive(record_criterion):
    t0 = time.perf_counter()
    root = RandomStream(2024)
    worst, count = 0.0, 0
    for N in (1, 2, 3):
        for T in (0, 1, 2):
            for rep in range(5):
                lw, X = random_snippet_weights(N, T, root.substream(100 * N + 10 * T + rep))
                worst = max(worst, rao_blackwell_oracle((lw, X[..., 0])))
                count += 1
    dt = time.perf_counter() - t0
    ok = record_criterion(1, worst <= 1e-12 and dt < 5.0,
                          f"{count} instances, max |E[folded] - unfolded| = {worst:.1e}, {dt:.2f} s")
    assert ok


def test_c02_variance_decomposition(record_criterion):
    t0 = time.perf_counter()
    r = variance_decomposition_check(GaussianTarget([1.0]), 16, math.pi / 32, 100_000, RandomStream(7))
    dt = time.perf_counter() - t0
    gap = r["term1"] + r["term2"] - r["var_f"]
    identity = abs(gap) <= 3 * r["se_identity"]
    reduction = r["term1"] < r["var_f"] - 3 * r["se_reduction"]
    ok = record_criterion(2, identity and reduction and dt < 30.0,
                          f"gap {gap:+.1e} vs 3 SE {3 * r['se_identity']:.1e}; "
                          f"var(E[fbar|Z]) {r['term1']:.4f} < var(f) {r['var_f']:.4f} - 3 SE; {dt:.1f} s")
    assert ok


def test_c03_unbiased_evidence(record_criterion):
    t0 = time.perf_counter()
    target = GaussianTarget([1.0], [1.0])
    runs = 100
    z = np.array([math.exp(run(target, SMCConfig(N=64, T=8, epsilon=0.1, seed=3, replication=r)).log_Z)
                  for r in range(runs)])
    dt = time.perf_counter() - t0
    truth = math.exp(-0.5 * math.log(2.0))
    se = z.std(ddof=1) / math.sqrt(runs)
    ok = record_criterion(3, abs(z.mean() - truth) <= 3 * se and dt < 120.0,
                          f"mean Z {z.mean():.5f} vs {truth:.5f}, 3 SE {3 * se:.5f}, {dt:.1f} s")
    assert ok


def test_c04_exact_flow_weights_are_one(record_criterion):
    rng = RandomStream(4)
    target = GaussianTarget([0.5, 1.0, 3.0], [1.0, 2.0, 0.7])
    vel = StandardNormalVelocity(3)
    gamma = 0.6
    worst = 0.0
    # single-state route
    for i in range(20):
        g = rng.substream(i)
        z0 = PhaseState(g.normal(3), g.normal(3))
        lmu = lambda z: log_mu(target, vel, gamma, z)  # noqa: E731
        s = build_snippet(ExactFlowStep(target, gamma), 0.3, 25, z0, lmu, lmu)
        worst = max(worst, float(np.max(np.abs(np.expm1(s.log_w)))))
    # engine route with mu_n = mu_{n-1}
    X, V = rng.substream(99).normal((50, 3)), rng.substream(98).normal((50, 3))
    tr = ExactGaussianFlow().trajectory(target, gamma, X, V, 0.3, 25)
    lw = tr.log_pi + vel.log_density(tr.V) - (target.log_target(X, gamma) + vel.log_density(V))[:, None]
    worst = max(worst, float(np.max(np.abs(np.expm1(lw)))))
    ok = record_criterion(4, worst <= 1e-12, f"max |w - 1| = {worst:.1e} over 70 snippets of 26 states")
    assert ok


def test_c05_ig_fit(record_criterion):
    g = RandomStream(5).generator
    worst = 0.0
    for i in range(100):
        s = (1.0, 3.0)[i % 2]
        n = int(g.integers(2, 60))
        eps = np.exp(g.normal(-2.0, 1.0, n))
        v = g.random(n)
        a, b = fit_epsilon_distribution(eps, v, s), numeric_theta(eps, v, s)
        worst = max(worst, abs(a - b) / b)
    e0 = 0.137
    pm = fit_epsilon_distribution(np.full(9, e0), np.ones(9), 3.0)
    pm_err = abs(pm - e0 * (1 + math.sqrt(5)) / 2)
    ok = record_criterion(5, worst <= 1e-6 and pm_err <= 1e-12,
                          f"100 cases max rel err {worst:.1e}; point mass err {pm_err:.1e}")
    assert ok


def test_c06_free_particle_contraction(record_criterion):
    rs = RandomStream(6)
    x = rs.substream(0).normal((20, 4))
    v = rs.substream(1).normal((10, 4))
    eps = np.full(10, 0.3)
    T = 40
    tr = Leapfrog().trajectory(FlatTarget(4), 1.0, x, np.concatenate([v, v]), np.concatenate([eps, eps]), T)
    _, kappa = contraction_curves(tr.X[:10], tr.X[10:], eps)
    m = np.arange(1, T + 1)
    err = float(np.max(np.abs(kappa - (m + 1) / m)))
    ok = record_criterion(6, err <= 1e-12, f"max |kappa - (m+1)/m| = {err:.1e} (rounding only)")
    assert ok


@pytest.fixture(scope="module")
def sonar(sonar_path):
    return load_sonar(sonar_path)


def test_c07_sonar_adaptive_epsilon(record_criterion, sonar):
    t0 = time.perf_counter()
    finals = {}
    for theta0 in (0.01, 1.0):
        finals[theta0] = [run(sonar, SMCConfig(N=500, T=30, theta0=theta0, skewness=3.0, seed=7, replication=r)).theta
                          for r in range(5)]
    dt = time.perf_counter() - t0
    allv = np.concatenate(list(finals.values()))
    in_band = bool(((allv >= 0.08) & (allv <= 0.35)).all())
    m1, m2 = np.median(finals[0.01]), np.median(finals[1.0])
    ratio = max(m1, m2) / min(m1, m2)
    ok = record_criterion(7, in_band and ratio < 2.0,
                          f"final theta in [{allv.min():.3f}, {allv.max():.3f}], medians {m1:.3f}/{m2:.3f}, "
                          f"{dt / 10:.0f} s per run")
    assert ok


def test_c08_sonar_logz_stability(record_criterion, sonar):
    means, ses = {}, {}
    for N, T in ((2500, 3), (1000, 9), (500, 19)):
        z = np.array([run(sonar, SMCConfig(N=N, T=T, epsilon=0.1, seed=8, replication=r)).log_Z for r in range(5)])
        means[N, T] = z.mean()
        ses[N, T] = z.std(ddof=1) / math.sqrt(5)
    spread = max(means.values()) - min(means.values())
    allowed = 2 * 3 * max(ses.values())
    detail = ", ".join(f"(N={N},T={T}) {means[N, T]:.1f}+-{ses[N, T]:.1f}" for N, T in means)
    ok = record_criterion(8, spread <= allowed, f"spread {spread:.1f} vs 2x3 SE {allowed:.1f}; {detail}")
    assert ok, f"logZ spread {spread:.1f} exceeds {allowed:.1f}: {detail}"


def test_c09_markov_snippet_matches_engine(record_criterion):
    target = GaussianTarget([1.0, 0.4, 2.5], [0.8, 1.5, 1.0])
    vel = StandardNormalVelocity(3)
    worst = 0.0
    for rep in range(5):
        cfg = SMCConfig(N=20, T=6, epsilon=0.2, gamma0=0.1 * rep, seed=rep)
        cloud, target = init_cloud(target, cfg, RandomStream(rep).substream(0))
        _, _, batch, _ = run_iteration(cloud, target, vel, 0.1 * rep + 0.35, 6, RandomStream(rep).substream(1))
        for i in range(batch.N):
            nxt = np.array([log_mu(target, vel, 0.1 * rep + 0.35, (batch.X[i, k], batch.V[i, k])) for k in range(7)])
            prev = log_mu(target, vel, 0.1 * rep, (batch.X[i, 0], batch.V[i, 0]))
            lw, _ = markov_snippet_weights(MarkovSnippet(batch.X[i], nxt, prev))
            worst = max(worst, float(np.max(np.abs(lw - batch.log_w[i]))))
    ok = record_criterion(9, worst <= 1e-12, f"max |log w_markov - log w_engine| = {worst:.1e} over 100 snippets")
    assert ok


def test_c10_thug_snug_properties(record_criterion):
    rs = RandomStream(10)
    var = np.array([1.0, 0.1])
    cg = lambda x: 2.0 * np.asarray(x) / var  # noqa: E731
    rev, vol = 0.0, 0.0
    for i in range(50):
        g = rs.substream(i)
        z = PhaseState(g.normal(2), g.normal(2))
        eps = 0.05 + 0.4 * g.uniform()
        for step in (thug_step, snug_step):
            back = step(cg, eps, step(cg, eps, z).flip()).flip()
            rev = max(rev, float(np.max(np.abs(np.concatenate([back.x - z.x, back.v - z.v])))))
            zz = np.concatenate([z.x, z.v])
            J = np.empty((4, 4))
            h = 1e-6
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                fp = step(cg, eps, PhaseState.unchecked((zz + e)[:2], (zz + e)[2:]))
                fm = step(cg, eps, PhaseState.unchecked((zz - e)[:2], (zz - e)[2:]))
                J[:, j] = (np.concatenate([fp.x, fp.v]) - np.concatenate([fm.x, fm.v])) / (2 * h)
            vol = max(vol, abs(abs(np.linalg.det(J)) - 1.0))
    # tangential velocity at the midpoint: pure drift, exactly
    eps, v = 0.2, np.array([0.0, 0.9])
    x = np.array([1.0, 0.0]) - eps * v
    out = thug_step(cg, eps, PhaseState(x, v))
    drift = np.array_equal(out.v, v) and np.array_equal(out.x, x + 2 * eps * v)
    ok = record_criterion(10, rev <= 1e-10 and vol <= 1e-6 and drift,
                          f"reversibility err {rev:.1e}, max ||det J| - 1| {vol:.1e}, tangential drift exact={drift}")
    assert ok


def test_c11_tau_oracle(record_criterion):
    # coupled exact flow in 1-D: distance ratio is |cos(t / sigma)|, so the averaged
    # curve is (1/u) int_0^u |cos|, minimized where u cos u + 2 - sin u = 0
    u_star = brentq(lambda u: u * math.cos(u) + 2.0 - math.sin(u), math.pi / 2, math.pi)
    results = []
    for sigma, eps in ((1.0, 0.05), (2.0, 0.1), (0.5, 0.02)):
        rs = RandomStream(11)
        X = rs.substream(0).normal((400, 1)) * sigma
        V = rs.substream(1).normal((400, 1))
        T = int(round(5 * sigma / eps))
        tau, _, data, _ = estimate_tau(GaussianTarget([sigma**2]), 1.0, X, V, eps, T, 10_000, rs.substream(2),
                                       integrator=ExactGaussianFlow())
        width = data.bin_centers[1] - data.bin_centers[0]
        results.append(abs(tau - u_star * sigma) / width)
    ok = record_criterion(11, max(results) <= 1.0,
                          f"|tau_hat - tau*| in bin widths: {', '.join(f'{r:.2f}' for r in results)}")
    assert ok


def _cli_run(cfg_path, out_dir, threads):
    env = {**os.environ, "SNIPPET_SMC_THREADS": str(threads), "NUMBA_NUM_THREADS": str(max(threads, 1))}
    subprocess.run([sys.executable, "-m", "snippet_smc.cli", "run", str(cfg_path), "--out", str(out_dir)],
                   env=env, check=True, capture_output=True)


def test_c12_determinism(record_criterion, tmp_path, sonar_path):
    configs = {
        "gauss": {"model": {"type": "gaussian", "variances": [1.0, 2.0], "likelihood_variances": [0.5, 1.0]},
                  "N": 64, "T": 8, "epsilon": {"theta0": 0.1, "s": 3}, "adapt_tau": True, "seed": 12},
        "sonar": {"model": {"type": "logistic", "data": str(sonar_path)},
                  "N": 64, "T": 10, "epsilon": 0.1, "seed": 12},
        "filament": {"model": {"type": "filamentary", "d": 4, "c": 3.0, "tol_final": 0.3},
                     "integrator": {"mixture": {"thug": 0.8, "snug": 0.2}}, "N": 64, "T": 8, "epsilon": 0.05,
                     "seed": 12},
    }
    same = True
    for name, cfg in configs.items():
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(cfg))
        outs = []
        for k, threads in enumerate((1, 1, 2)):
            d = tmp_path / f"{name}_{k}"
            _cli_run(p, d, threads)
            outs.append((d / "trace_rep0.csv").read_bytes())
        same &= outs[0] == outs[1] == outs[2]
    ok = record_criterion(12, same, f"{len(configs)} configs x 3 runs (threads 1, 1, 2): traces bitwise identical={same}")
    assert ok
