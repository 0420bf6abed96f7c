"""Numba vs numpy kernels, plus an end-to-end Sonar run under each path.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--no-e2e]
"""
import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from snippet_smc import _kernels
from snippet_smc.models import load_sonar

ROOT = Path(__file__).resolve().parent.parent
SONAR = ROOT / "tests" / "data" / "sonar.csv"

E2E = """
import time
from snippet_smc.models import load_sonar
from snippet_smc.smc import SMCConfig, run
t = load_sonar({path!r})
run(t, SMCConfig(N=50, T=5, epsilon=0.1, seed=0))  # warm-up / compile
t0 = time.perf_counter()
res = run(t, SMCConfig(N=500, T=30, epsilon=0.1, seed=0))
print(time.perf_counter() - t0, res.log_Z)
"""


def best_ms(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def kernel_table(repeat):
    t = load_sonar(SONAR)
    A = np.ascontiguousarray(t.y[:, None] * t.design)
    rng = np.random.default_rng(0)
    rows = []
    for N in (31, 500, 2500):
        x = rng.normal(size=(N, A.shape[1])) * 0.1
        rows.append((f"loglik+grad N={N}",
                     best_ms(lambda: _kernels.logistic_loglik_grad_numpy(A, x), repeat),
                     best_ms(lambda: _kernels.logistic_loglik_grad_numba(A, x), repeat)))
    X = rng.normal(size=(2500, 31, 61))
    lw = rng.normal(size=(2500, 31))
    rows.append(("snippet variance 2500x31x61",
                 best_ms(lambda: _kernels.weighted_position_variance_numpy(X, lw), repeat),
                 best_ms(lambda: _kernels.weighted_position_variance_numba(X, lw), repeat)))
    return rows


def e2e(disable):
    env = {**os.environ, "SNIPPET_SMC_DISABLE_NUMBA": "1" if disable else "0"}
    out = subprocess.run([sys.executable, "-c", E2E.format(path=str(SONAR))], env=env,
                         capture_output=True, text=True, check=True)
    secs, log_z = out.stdout.split()
    return float(secs), float(log_z)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-e2e", action="store_true")
    args = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        sys.exit("numba is unavailable or disabled; nothing to compare")
    _kernels.set_threads()
    print(f"{'kernel':<30}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, a, b in kernel_table(args.repeat):
        print(f"{name:<30}{a:>12.3f}{b:>12.3f}{a / b:>10.2f}")
    if not args.no_e2e:
        print()
        for label, flag in (("numpy", True), ("numba", False)):
            secs, log_z = e2e(flag)
            print(f"sonar N=500 T=30 eps=0.1 [{label}]: {secs:.2f} s, logZ {log_z:.4f}")


if __name__ == "__main__":
    main()
