"""Command line: ``snippet-smc run | verify | sonar-demo``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .integrators import INTEGRATORS, MixtureIntegrator
from .markov_snippet import run_waste_free
from .models import FilamentaryTarget, GaussianTarget, load_sonar
from .smc import SMCConfig, run

TRACE_COLUMNS = ["iter", "gamma", "theta", "T", "tau", "logZ_inc", "logZ_cum",
                 "ess_unfolded", "ess_seed", "median_eps", "wall_ms"]


class ConfigError(ValueError):
    pass


def _field(cfg, name, kind, default=None, required=False, check=None, msg=""):
    if name not in cfg:
        if required:
            raise ConfigError(f"field '{name}': required")
        return default
    val = cfg[name]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"field '{name}': expected an integer, got {val!r}")
    if kind is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise ConfigError(f"field '{name}': expected a number, got {val!r}")
    if kind is bool and not isinstance(val, bool):
        raise ConfigError(f"field '{name}': expected true or false, got {val!r}")
    if kind is str and not isinstance(val, str):
        raise ConfigError(f"field '{name}': expected a string, got {val!r}")
    if kind is float:
        val = float(val)
    if check is not None and not check(val):
        raise ConfigError(f"field '{name}': {msg} (got {val!r})")
    return val


def _vector(val, name):
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return [float(val)]
    if not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        raise ConfigError(f"field '{name}': expected a number or a list of numbers")
    return [float(v) for v in val]


def build_target(model, base_dir="."):
    if not isinstance(model, dict):
        raise ConfigError("field 'model': expected an object")
    kind = _field(model, "type", str, required=True)
    if kind == "gaussian":
        var = _vector(model.get("variances", [1.0]), "model.variances")
        lv = model.get("likelihood_variances")
        lv = None if lv is None else _vector(lv, "model.likelihood_variances")
        try:
            return GaussianTarget(var, lv)
        except ValueError as exc:
            raise ConfigError(f"field 'model': {exc}") from None
    if kind == "logistic":
        path = Path(_field(model, "data", str, required=True))
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise FileNotFoundError(f"data file not found: {path}")
        return load_sonar(path, standardize=_field(model, "standardize", bool, False))
    if kind == "filamentary":
        d = _field(model, "d", int, 50, check=lambda v: v >= 1, msg="must be at least 1")
        if "variances" in model:
            var = _vector(model["variances"], "model.variances")
        else:
            pattern = _vector(model.get("alternating", [1.0, 0.1]), "model.alternating")
            var = [pattern[i % len(pattern)] for i in range(d)]
        if len(var) != d:
            raise ConfigError(f"field 'model.variances': expected {d} entries, got {len(var)}")
        c = _field(model, "c", float, 12.0)
        tol_final = _field(model, "tol_final", float, 1e-3, check=lambda v: v > 0, msg="must be positive")
        tol_initial = _field(model, "tol_initial", float, None)
        try:
            return FilamentaryTarget(var, c, tol_final, tol_initial)
        except ValueError as exc:
            raise ConfigError(f"field 'model': {exc}") from None
    raise ConfigError(f"field 'model.type': unknown model {kind!r} (expected gaussian, logistic or filamentary)")


def build_integrator(choice):
    if choice is None:
        choice = "leapfrog"
    if isinstance(choice, str):
        if choice not in INTEGRATORS:
            raise ConfigError(f"field 'integrator': unknown integrator {choice!r}")
        return INTEGRATORS[choice]()
    if isinstance(choice, dict) and isinstance(choice.get("mixture"), dict) and choice["mixture"]:
        names = list(choice["mixture"])
        for nm in names:
            if nm not in INTEGRATORS:
                raise ConfigError(f"field 'integrator.mixture': unknown integrator {nm!r}")
        props = _vector(list(choice["mixture"].values()), "integrator.mixture")
        try:
            return MixtureIntegrator([INTEGRATORS[nm]() for nm in names], props)
        except ValueError as exc:
            raise ConfigError(f"field 'integrator.mixture': {exc}") from None
    raise ConfigError("field 'integrator': expected a name or {\"mixture\": {name: proportion}}")


def parse_config(cfg, base_dir="."):
    """Validate a config dict. Returns ``(target, SMCConfig, extras)``."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    target = build_target(cfg.get("model"), base_dir) if "model" in cfg else None
    if target is None:
        raise ConfigError("field 'model': required")
    N = _field(cfg, "N", int, 500, check=lambda v: v >= 2, msg="must be at least 2")
    T = _field(cfg, "T", int, 30, check=lambda v: v >= 1, msg="must be at least 1")
    eps_cfg = cfg.get("epsilon", 0.1)
    theta0, s, eps = None, 3.0, 0.1
    if isinstance(eps_cfg, dict):
        theta0 = _field(eps_cfg, "theta0", float, required=True, check=lambda v: v > 0, msg="must be positive")
        s = _field(eps_cfg, "s", float, 3.0, check=lambda v: v > 0, msg="must be positive")
    else:
        eps = _field(cfg, "epsilon", float, 0.1, check=lambda v: v > 0, msg="must be positive")
    kw = dict(
        N=N, T=T, epsilon=eps, theta0=theta0, skewness=s,
        ess_target=_field(cfg, "ess_target", float, 0.8, check=lambda v: 0 < v < 1, msg="must lie in (0, 1)"),
        adapt_tau=_field(cfg, "adapt_tau", bool, False),
        T_max=_field(cfg, "T_max", int, 100, check=lambda v: v >= 1, msg="must be at least 1"),
        tau_bins=_field(cfg, "tau_bins", int, 50, check=lambda v: v >= 1, msg="must be at least 1"),
        integrator=build_integrator(cfg.get("integrator")),
        resampling=_field(cfg, "resampling", str, "multinomial",
                          check=lambda v: v in ("multinomial", "systematic"), msg="must be multinomial or systematic"),
        max_iter=_field(cfg, "max_iter", int, 1000, check=lambda v: v >= 1, msg="must be at least 1"),
        seed=_field(cfg, "seed", int, 0, check=lambda v: 0 <= v < 2**64, msg="must be a 64-bit unsigned integer"),
        timing=_field(cfg, "timing", bool, False),
    )
    extras = {
        "replications": _field(cfg, "replications", int, 1, check=lambda v: v >= 1, msg="must be at least 1"),
        "output": _field(cfg, "output", str, "out"),
        "sampler": _field(cfg, "sampler", str, "snippet",
                          check=lambda v: v in ("snippet", "waste_free"), msg="must be snippet or waste_free"),
    }
    return target, SMCConfig(**kw), extras


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(cfg, base_dir=path.parent)


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_trace(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])


def _json_float(x):
    return None if x is None or not math.isfinite(x) else float(x)


def run_config(target, config, extras, out_dir, replications=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reps = extras["replications"] if replications is None else replications
    summaries = []
    for rep in range(reps):
        cfg = SMCConfig(**{**config.__dict__, "replication": rep})
        if extras["sampler"] == "waste_free":
            cloud, records = run_waste_free(target, cfg.N, cfg.T, cfg.seed, rep, cfg.ess_target, cfg.max_iter, cfg.timing)
            log_Z, mean, n_grad, theta = cloud.log_Z, cloud.X.mean(axis=0), 0, None
        else:
            res = run(target, cfg)
            records, log_Z, n_grad, theta = res.records, res.log_Z, res.n_grad, res.theta
            mean = res.posterior_mean if res.posterior_mean is not None else res.cloud.X.mean(axis=0)
        write_trace(out / f"trace_rep{rep}.csv", records)
        summaries.append({
            "replication": rep,
            "seed": cfg.seed,
            "log_Z": float(log_Z),
            "posterior_mean": [float(v) for v in np.ravel(mean)],
            "iterations": len(records),
            "gradient_evaluations": int(n_grad),
            "final_theta": _json_float(theta),
        })
    with open(out / "summary.json", "w") as fh:
        json.dump({"runs": summaries}, fh, indent=2)
    return summaries


def cmd_run(args):
    target, config, extras = load_config(args.config)
    if args.seed is not None:
        config = SMCConfig(**{**config.__dict__, "seed": args.seed})
    out = args.out if args.out is not None else extras["output"]
    summaries = run_config(target, config, extras, out, args.replications)
    for s in summaries:
        print(f"rep {s['replication']}: logZ={s['log_Z']:.6f} iterations={s['iterations']} "
              f"grad_evals={s['gradient_evaluations']}")
    return 0


def cmd_verify(args):
    from .verify import run_checks

    results = run_checks(seed=args.seed, negative_control=args.negative_control)
    width = max(len(r[0]) for r in results)
    for name, ok, detail in results:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_sonar_demo(args):
    target = load_sonar(args.csv)
    config = SMCConfig(N=500, T=30, theta0=args.theta0, skewness=3.0, seed=args.seed)
    res = run(target, config)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_trace(Path(args.out) / "trace_rep0.csv", res.records)
    print(f"logZ={res.log_Z:.4f} final_theta={res.theta:.4f} iterations={len(res.records)} "
          f"grad_evals={res.n_grad}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="snippet-smc", description="Integrator-snippet SMC samplers.")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run the experiment described by a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--replications", type=int)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="run the built-in oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negative-control", action="store_true", help="inject a weight-sign bug; checks must fail")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("sonar-demo", help="adaptive-stepsize run on a Sonar CSV")
    p.add_argument("csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta0", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sonar_demo)
    args = parser.parse_args(argv)
    if getattr(args, "replications", None) is not None and args.replications < 1:
        parser.error("--replications must be at least 1")
    _kernels.set_threads()
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"snippet-smc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
