"""Compare the numba kernels with the pure-Python fallback.

Runs the same simulations in this process (numba, if installed) and in a
child process with MARCQ_NO_NUMBA=1, checks that the outputs are
bit-identical, and prints events per second for both.

    python benchmarks/bench_kernels.py [--arrivals N]
"""
import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import json, sys, time
from marcq import build_chain, kernels
from marcq.simulate import SimConfig, drift_control, simulate_coupled, simulate_mmsr, simulate_msj
from marcq.workload import WorkloadSpec, exponential_class

n = int(sys.argv[1])
spec = WorkloadSpec(2, (exponential_class(1, 2 / 3, 1.0), exponential_class(2, 1 / 3, 0.5)))
cfg = SimConfig(0.81, n, replications=1, seed=3)
chain = build_chain(spec)
ctl = drift_control(spec)
cases = {
    "msj": lambda: simulate_msj(spec, cfg),
    "msj+cv": lambda: simulate_msj(spec, cfg, ctl),
    "coupled": lambda: simulate_coupled(spec, cfg),
    "mmsr": lambda: simulate_mmsr(chain, cfg),
}
# warm-up: compiles under numba
simulate_msj(spec, SimConfig(0.81, 1000, replications=1), ctl)
simulate_coupled(spec, SimConfig(0.81, 1000, replications=1))
simulate_mmsr(chain, SimConfig(0.81, 1000, replications=1))
out = {"numba": kernels.USING_NUMBA, "cases": {}}
for name, f in cases.items():
    t = time.perf_counter()
    r = f()
    dt = time.perf_counter() - t
    vals = [r.mean_T.mean, r.mean_N.mean, r.p_queue_empty.mean]
    if r.mean_T_cv is not None:
        vals.append(r.mean_T_cv.mean)
    if r.mismatch_fraction is not None:
        vals.append(r.mismatch_fraction.mean)
    out["cases"][name] = {"seconds": dt, "values": [v.hex() for v in vals]}
print(json.dumps(out))
"""


def run(arrivals, pure):
    env = dict(os.environ)
    if pure:
        env["MARCQ_NO_NUMBA"] = "1"
    else:
        env.pop("MARCQ_NO_NUMBA", None)
    p = subprocess.run([sys.executable, "-c", CHILD, str(arrivals)], env=env, capture_output=True, text=True,
                       check=True)
    return json.loads(p.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arrivals", type=int, default=20_000)
    args = ap.parse_args()
    jit, pure = run(args.arrivals, False), run(args.arrivals, True)
    if not jit["numba"]:
        print("numba is not installed; both runs used the pure-Python path")
    print(f"{'case':<10}{'numba s':>10}{'pure s':>10}{'speedup':>10}  identical")
    ok = True
    for name, a in jit["cases"].items():
        b = pure["cases"][name]
        same = a["values"] == b["values"]
        ok &= same
        print(f"{name:<10}{a['seconds']:>10.3f}{b['seconds']:>10.3f}{b['seconds'] / a['seconds']:>10.1f}  {same}")
    return 0 if ok else 1


if __name__ == "__main__":
    t = time.perf_counter()
    rc = main()
    print(f"total {time.perf_counter() - t:.1f}s")
    sys.exit(rc)
