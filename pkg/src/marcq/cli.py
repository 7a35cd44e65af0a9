"""``marc-queue`` command line: analyze, simulate, validate and sweep.

Every command writes its CSV/JSON outputs plus a ``manifest.json`` into
``--out``.  Exit codes: 0 success, 2 validation or usage error, 3 numeric
failure, 4 simulation instability.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
from scipy.stats import spearmanr

from . import __version__
from ._accel import USING_NUMBA
from .chains import ChainError, DEFAULT_CAP, build_chain
from .closed_form import K2Params, closed_form_k2
from .marc import NumericError, generator_residual, predict, solve
from .simulate import (InstabilityError, SimConfig, drift_control, simulate_atleastk, simulate_coupled,
                       simulate_mmsr, simulate_msj)
from .workload import SpecError, WorkloadSpec, exponential_class, load_spec

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_UNSTABLE = 0, 2, 3, 4
DEFAULT_LOADS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
SWEEP_LOAD = 0.8

SIMULATE_COLUMNS = ["system", "lambda", "lambda_over_lambda_star", "mean_T", "ci_T", "mean_N", "ci_N",
                    "p_empty", "ci_empty", "mismatch", "ci_mismatch", "n_arrivals", "seed"]
VALIDATE_COLUMNS = ["load", "sim_T", "pred_T", "abs_gap", "rel_error", "ci_T", "estimator", "raw_T", "raw_ci_T"]
SWEEP_COLUMNS = ["param", "delta_yd", "rel_error", "lambda_star", "sim_T", "pred_T"]


class UsageError(ValueError):
    pass


def _loads(text):
    if text is None:
        return list(DEFAULT_LOADS)
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse load grid {text!r}") from None
    if not vals:
        raise UsageError("load grid is empty")
    bad = [v for v in vals if not 0 < v < 1]
    if bad:
        raise UsageError(f"loads must lie in (0, 1): {bad}")
    return sorted(vals)


def _parser():
    p = argparse.ArgumentParser(prog="marc-queue", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["analyze", "simulate", "validate", "sweep"])
    p.add_argument("--spec", required=True, help="workload JSON file")
    p.add_argument("--loads", help="comma-separated lambda/lambda* values (default 0.5,...,0.99)")
    p.add_argument("--arrivals", type=int, default=1_000_000, help="arrivals per replication")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=10, help="replications per load")
    p.add_argument("--workers", type=int, default=1, help="threads for replications")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--closed-form-k2", action="store_true", help="cross-check against the k=2 closed form")
    p.add_argument("--full-sat", action="store_true", help="use the full saturated chain instead of the SSS")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="state-count cap for chain builders")
    p.add_argument("--system", choices=["msj", "ak", "mmsr", "coupled"], default="msj")
    p.add_argument("--plain", action="store_true", help="validate/sweep: skip the control-variate estimator")
    p.add_argument("--dump-chain", action="store_true", help="analyze: also write the chain as CSV")
    p.add_argument("--sweep-param", choices=["p1", "mu1"], default="p1")
    p.add_argument("--points", type=int, help="sweep grid size (default 99 for p1, 100 for mu1)")
    return p


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _manifest(out, args, spec, extra=None):
    doc = {
        "command": args.command,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items()},
        "spec_sha256": spec.digest(),
        "spec": spec.to_dict(),
        "seed": args.seed,
        "replication_seeds": "SeedSequence(entropy=seed, spawn_key=(rep,)) for rep < reps",
        "versions": {
            "marcq": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": _numba_version(),
        },
        "numba_kernels": USING_NUMBA,
    }
    if extra:
        doc.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _numba_version():
    try:
        import numba
    except ImportError:
        return None
    return numba.__version__


def _analysis(spec, args):
    chain = build_chain(spec, full_sat=args.full_sat, cap=args.cap)
    return chain, solve(chain)


def cmd_analyze(spec, args, out):
    chain, sol = _analysis(spec, args)
    resid = generator_residual(chain, sol)
    with open(out / "analysis.json", "w") as fh:
        json.dump({**sol.to_dict(), "chain": chain.kind, "n_states": chain.n_states,
                   "generator_residual": resid}, fh, indent=2)
    rows = [{"state": lab, "pi": sol.stationary[i], "yd": sol.departure[i], "delta": sol.delta[i]}
            for i, lab in enumerate(sol.labels)]
    _write_csv(out / "analysis.csv", ["state", "pi", "yd", "delta"], rows)
    if args.dump_chain:
        chain.dump_csv(out / "chain.csv")
    print(f"chain: {chain.kind}, {chain.n_states} states")
    print(f"lambda* = {sol.lambda_star:.10g}")
    print(f"Delta(Y_d) = {sol.delta_yd:.10g}")
    print("E[T] ~ (1/lambda*)(1+Delta(Y_d))/(1-lambda/lambda*)"
          f" = {1 / sol.lambda_star:.6g} * {1 + sol.delta_yd:.6g} / (1 - lambda/{sol.lambda_star:.6g})")
    print(f"generator residual = {resid:.3g}")
    extra = {"n_states": chain.n_states, "chain": chain.kind}
    if args.closed_form_k2:
        ref = closed_form_k2(_k2_params(spec))
        diff = _max_diff(ref, sol)
        print(f"closed form k=2: max abs difference {diff:.3g}")
        with open(out / "closed_form.json", "w") as fh:
            json.dump({**ref.to_dict(), "max_abs_difference": diff}, fh, indent=2)
        extra["closed_form_max_abs_difference"] = diff
    _manifest(out, args, spec, extra)
    return EXIT_OK


def _k2_params(spec: WorkloadSpec) -> K2Params:
    cls = spec.classes
    ok = (spec.k == 2 and len(cls) == 2 and sorted(c.need for c in cls) == [1, 2]
          and all(c.duration.is_exponential() for c in cls))
    if not ok:
        raise UsageError("--closed-form-k2 needs k=2 with one need-1 and one need-2 exponential class")
    one, two = sorted(cls, key=lambda c: c.need)
    return K2Params(one.prob, 1 / one.duration.mean, 1 / two.duration.mean)


def _max_diff(ref, sol):
    if sol.stationary.size != 3:
        raise UsageError("--closed-form-k2 compares against the 3-state SSS chain; drop --full-sat")
    parts = [abs(ref.lambda_star - sol.lambda_star), abs(ref.delta_yd - sol.delta_yd)]
    for a, b in ((ref.stationary, sol.stationary), (ref.departure, sol.departure), (ref.delta, sol.delta)):
        parts.append(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))))
    return float(max(parts))


def _cfg(args, lam):
    return SimConfig(lam=lam, n_arrivals=args.arrivals, seed=args.seed, replications=args.reps,
                     workers=args.workers)


def cmd_simulate(spec, args, out):
    loads = _loads(args.loads)
    chain, sol = _analysis(spec, args)
    rows = []
    for load in loads:
        lam = load * sol.lambda_star
        cfg = _cfg(args, lam)
        if args.system == "msj":
            r = simulate_msj(spec, cfg)
        elif args.system == "ak":
            r = simulate_atleastk(spec, cfg)
        elif args.system == "mmsr":
            r = simulate_mmsr(chain, cfg)
        else:
            r = simulate_coupled(spec, cfg)
        mm = r.mismatch_fraction
        rows.append({
            "system": args.system, "lambda": lam, "lambda_over_lambda_star": load,
            "mean_T": r.mean_T.mean, "ci_T": r.mean_T.ci, "mean_N": r.mean_N.mean, "ci_N": r.mean_N.ci,
            "p_empty": r.p_queue_empty.mean, "ci_empty": r.p_queue_empty.ci,
            "mismatch": "" if mm is None else mm.mean, "ci_mismatch": "" if mm is None else mm.ci,
            "n_arrivals": args.arrivals, "seed": args.seed,
        })
        print(f"load {load:g}: mean_T = {r.mean_T.mean:.6g} +- {r.mean_T.ci:.3g}")
    _write_csv(out / "simulate.csv", SIMULATE_COLUMNS, rows)
    _manifest(out, args, spec, {"loads": loads, "lambda_star": sol.lambda_star})
    return EXIT_OK


def _control(spec, args):
    if args.plain:
        return None
    try:
        return drift_control(spec, cap=args.cap)
    except (ChainError, NumericError, OverflowError) as exc:
        print(f"control variate unavailable ({exc}); using the plain estimator", file=sys.stderr)
        return None


def compare_point(spec, sol, load, cfg_args, control):
    """Simulate MSJ at ``load * lambda*`` and compare with the dominant term."""
    lam = load * sol.lambda_star
    r = simulate_msj(spec, _cfg(cfg_args, lam), control=control)
    pred = predict(sol, lam)[0]
    est = r.mean_T_cv if control is not None else r.mean_T
    return {
        "load": load, "sim_T": est.mean, "pred_T": pred, "abs_gap": abs(est.mean - pred),
        "rel_error": abs(est.mean - pred) / est.mean, "ci_T": est.ci,
        "estimator": "drift-cv" if control is not None else "plain",
        "raw_T": r.mean_T.mean, "raw_ci_T": r.mean_T.ci,
    }


def cmd_validate(spec, args, out):
    loads = _loads(args.loads)
    _, sol = _analysis(spec, args)
    control = _control(spec, args)
    rows = []
    for load in loads:
        row = compare_point(spec, sol, load, args, control)
        rows.append(row)
        print(f"load {load:g}: sim {row['sim_T']:.6g} +- {row['ci_T']:.3g}, pred {row['pred_T']:.6g}, "
              f"gap {row['abs_gap']:.4g}, rel {row['rel_error']:.4g}")
    _write_csv(out / "validate.csv", VALIDATE_COLUMNS, rows)
    rho = float("nan")
    if len(rows) > 1:
        rho = float(spearmanr([r["load"] for r in rows], [r["rel_error"] for r in rows])[0])
    trend = "non-increasing" if rho <= 0 else "NOT non-increasing"
    print(f"Spearman(load, rel_error) = {rho:.3f} ({trend}; reported, not enforced)")
    _manifest(out, args, spec, {"loads": loads, "lambda_star": sol.lambda_star, "spearman_rel_error": rho,
                                "estimator": rows[0]["estimator"]})
    return EXIT_OK


def _sweep_family(spec: WorkloadSpec):
    cls = spec.classes
    ok = (len(cls) == 2 and sorted(c.need for c in cls) == [1, spec.k] and spec.k > 1
          and all(c.duration.is_exponential() for c in cls))
    if not ok:
        raise UsageError("sweep needs a base spec with one need-1 and one need-k exponential class")
    one, big = sorted(cls, key=lambda c: c.need)
    return one.prob, 1 / one.duration.mean, 1 / big.duration.mean


def sweep_grid(param: str, points: int | None):
    if param == "p1":
        n = 99 if points is None else points
        grid = np.linspace(0.01, 0.99, n) if n > 1 else np.array([0.5])[:n]
    else:
        n = 100 if points is None else points
        grid = np.geomspace(0.01, 100.0, n) if n > 1 else np.array([1.0])[:n]
    if grid.size == 0:
        raise UsageError("sweep grid is empty")
    return grid


def cmd_sweep(spec, args, out):
    if args.points is not None and args.points < 1:
        raise UsageError("sweep grid is empty")
    p1, mu1, mu2 = _sweep_family(spec)
    grid = sweep_grid(args.sweep_param, args.points)
    rows = []
    for x in grid:
        q1, m1 = (x, mu1) if args.sweep_param == "p1" else (p1, x)
        fam = WorkloadSpec(spec.k, (exponential_class(1, q1, m1), exponential_class(spec.k, 1 - q1, mu2)))
        _, sol = _analysis(fam, args)
        row = compare_point(fam, sol, SWEEP_LOAD, args, _control(fam, args))
        rows.append({"param": float(x), "delta_yd": sol.delta_yd, "rel_error": row["rel_error"],
                     "lambda_star": sol.lambda_star, "sim_T": row["sim_T"], "pred_T": row["pred_T"]})
        print(f"{args.sweep_param} = {x:.6g}: Delta(Y_d) = {sol.delta_yd:.6g}, rel_error = {row['rel_error']:.4g}")
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    _manifest(out, args, spec, {"sweep_param": args.sweep_param, "grid": [float(x) for x in grid],
                                "load": SWEEP_LOAD})
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "validate": cmd_validate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.arrivals < 1000 or args.reps < 1 or args.cap < 1:
            raise UsageError("--arrivals must be >= 1000, --reps and --cap >= 1")
        spec = load_spec(args.spec)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](spec, args, out)
    except (UsageError, SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, ChainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InstabilityError as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
