"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line."""
import time
from functools import lru_cache

import numpy as np
import pytest

from marcq import build_chain, build_saturated_chain, build_sss_chain, generator_residual, predict, solve
from marcq.closed_form import K2Params, closed_form_k2
from marcq.marc import estimate_delta_mc
from marcq.simulate import SimConfig, drift_control, simulate_coupled, simulate_msj
from conftest import make_spec

RUNNING = make_spec(2, [(1, 2 / 3, 1.0), (2, 1 / 3, 0.5)])
K4 = make_spec(4, [(1, 0.42, 0.25), (4, 0.58, 1.0)])
K10 = make_spec(10, [(1, 0.1, 0.1), (10, 0.9, 1.0)])
K30 = make_spec(30, [(3, 0.5, 1.0), (10, 0.5, 1.0)])
MM1 = make_spec(3, [(3, 1.0, 1.0)])
N_ARR = 1_000_000


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return _report


def _timed(fn, *a):
    t = time.perf_counter()
    out = fn(*a)
    return out, time.perf_counter() - t


def _random_small_specs(n=20, seed=12345):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        k = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        w = rng.uniform(0.05, 1.0, m)
        parts = [(int(rng.integers(1, k + 1)), p, float(np.exp(rng.uniform(-1.5, 1.5)))) for p in w / w.sum()]
        out.append(make_spec(k, parts))
    return out


def _k2_draws(n=100, seed=777):
    rng = np.random.default_rng(seed)
    return [K2Params(rng.uniform(0.01, 0.99), np.exp(rng.uniform(-3, 3)), np.exp(rng.uniform(-3, 3)))
            for _ in range(n)]


def test_criterion_1_running_example(report):
    (ch, sol), dt = _timed(lambda: (lambda c: (c, solve(c)))(build_sss_chain(RUNNING)))
    errs = [abs(sol.lambda_star - 0.9),
            np.max(np.abs(sol.stationary - [0.2, 0.2, 0.6])),
            np.max(np.abs(sol.departure - [4 / 9, 2 / 9, 1 / 3])),
            np.max(np.abs(sol.delta - [1.38, -0.27, -0.37])),
            abs(sol.delta_yd - 0.43)]
    ok = max(errs) <= 1e-9 and dt < 1.0
    report(1, ok, f"max error {max(errs):.2e} (tol 1e-9), {dt:.3f}s (< 1s)")


def test_criterion_2_matched_settings(report):
    t = time.perf_counter()
    s4, s10 = solve(build_sss_chain(K4)), solve(build_sss_chain(K10))
    dt = time.perf_counter() - t
    ok = (abs(s4.lambda_star - 0.5413) <= 5e-4 and abs(s4.delta_yd - 0.3271) <= 1e-3
          and abs(s10.lambda_star - 0.5411) <= 5e-4 and abs(s10.delta_yd - 1.850) <= 2e-3 and dt < 10)
    report(2, ok, f"k=4: lambda*={s4.lambda_star:.5f} Delta(Y_d)={s4.delta_yd:.5f}; "
                  f"k=10: lambda*={s10.lambda_star:.5f} Delta(Y_d)={s10.delta_yd:.5f}; {dt:.2f}s")


def test_criterion_3_sss_sat_equivalence(report):
    t = time.perf_counter()
    worst = 0.0
    for spec in _random_small_specs():
        a, b = solve(build_sss_chain(spec)), solve(build_saturated_chain(spec))
        worst = max(worst, abs(a.lambda_star - b.lambda_star), abs(a.delta_yd - b.delta_yd))
    n30 = build_sss_chain(K30).n_states
    dt = time.perf_counter() - t
    ok = worst <= 1e-9 and n30 == 13 and dt < 30
    report(3, ok, f"20 specs max diff {worst:.2e} (tol 1e-9); k=30 SSS states {n30}; {dt:.2f}s")


def test_criterion_4_closed_form(report):
    t = time.perf_counter()
    worst = 0.0
    for p in _k2_draws():
        ref, num = closed_form_k2(p), solve(build_sss_chain(p.workload()))
        worst = max(worst, abs(ref.lambda_star - num.lambda_star), abs(ref.delta_yd - num.delta_yd),
                    *(float(np.max(np.abs(x - y))) for x, y in ((ref.stationary, num.stationary),
                                                                (ref.departure, num.departure),
                                                                (ref.delta, num.delta))))
    dt = time.perf_counter() - t
    report(4, worst <= 1e-9 and dt < 5, f"100 draws max diff {worst:.2e} (tol 1e-9); {dt:.2f}s")


def test_criterion_5_drift_identity(report):
    chains = [build_sss_chain(RUNNING), build_saturated_chain(RUNNING)]
    for spec in (K4, K10):
        chains += [build_sss_chain(spec), build_saturated_chain(spec)]
    for spec in _random_small_specs():
        chains += [build_sss_chain(spec), build_saturated_chain(spec)]
    chains.append(build_sss_chain(K30))
    worst = max(generator_residual(ch, solve(ch)) for ch in chains)
    k2 = [(build_sss_chain(p.workload()), p) for p in _k2_draws()]
    worst_cf = max(generator_residual(ch, closed_form_k2(p)) for ch, p in k2)
    worst_num = max(generator_residual(ch, solve(ch)) for ch, _ in k2)
    worst = max(worst, worst_cf, worst_num)
    report(5, worst < 1e-9, f"{len(chains) + 2 * len(k2)} residuals, max {worst:.2e} (< 1e-9)")


def test_criterion_6_monte_carlo_delta(report):
    t = time.perf_counter()
    ch = build_sss_chain(RUNNING)
    sol = solve(ch)
    lines, ok = [], True
    for s, lab in enumerate(ch.labels):
        est, half = estimate_delta_mc(ch, s, horizon=200.0, reps=100_000, seed=100 + s, level=0.99,
                                      lambda_star=sol.lambda_star)
        inside = abs(est - sol.delta[s]) <= half
        ok &= inside
        lines.append(f"{lab}: {est:.3f}+-{half:.3f} vs {sol.delta[s]:.2f}")
    dt = time.perf_counter() - t
    report(6, ok and dt < 120, "; ".join(lines) + f"; {dt:.1f}s")


@lru_cache(maxsize=None)
def _c7():
    t = time.perf_counter()
    sol = solve(build_sss_chain(RUNNING))
    ctl = drift_control(RUNNING)
    rows = []
    for load in (0.5, 0.8, 0.9, 0.95, 0.99):
        lam = load * sol.lambda_star
        r = simulate_msj(RUNNING, SimConfig(lam, N_ARR), control=ctl)
        rows.append((load, r, predict(sol, lam)[0]))
    return rows, time.perf_counter() - t


def test_criterion_7_simulation_convergence(report):
    rows, dt = _c7()
    sims = [r.mean_T_cv.mean for _, r, _ in rows]
    preds = [p for _, _, p in rows]
    gaps = [abs(s - p) for s, p in zip(sims, preds)]
    rel = [g / s for g, s in zip(gaps, sims)]
    ratio = max(gaps) / min(gaps)
    ok = rel[-1] < rel[0] and ratio < 5 and dt < 300
    detail = ", ".join(f"{l}: T={s:.3f}+-{r.mean_T_cv.ci:.3f} gap={g:.3f}"
                       for (l, r, _), s, g in zip(rows, sims, gaps))
    report(7, ok, f"rel err {rel[0]:.4f} -> {rel[-1]:.4f}; gap ratio {ratio:.2f} (< 5); {detail}; {dt:.0f}s")


@lru_cache(maxsize=None)
def _c8():
    t = time.perf_counter()
    rows = [(lam, simulate_msj(MM1, SimConfig(lam, N_ARR))) for lam in (0.3, 0.6, 0.9)]
    return rows, time.perf_counter() - t


def test_criterion_8_mm1_reduction(report):
    rows, dt = _c8()
    sol = solve(build_sss_chain(MM1))
    ok = dt < 120
    parts = []
    for lam, r in rows:
        exact = 1.0 / (1.0 - lam)
        pred = predict(sol, lam)[0]
        ok &= r.mean_T.contains(exact) and pred == pytest.approx(exact, rel=1e-14)
        parts.append(f"{lam}: {r.mean_T.mean:.4f}+-{r.mean_T.ci:.4f} vs {exact:.4f} (pred {pred:.4f})")
    report(8, ok, "; ".join(parts) + f"; {dt:.0f}s")


@lru_cache(maxsize=None)
def _c9():
    t = time.perf_counter()
    rows = [(load, simulate_coupled(RUNNING, SimConfig(0.9 * load, N_ARR)))
            for load in (0.8, 0.9, 0.95, 0.99)]
    return rows, time.perf_counter() - t


def test_criterion_9_coupling_decay(report):
    rows, dt = _c9()
    mm = np.array([r.mismatch_fraction.mean for _, r in rows])
    pe = np.array([r.p_queue_empty.mean for _, r in rows])
    gap = np.array([1 - load for load, _ in rows])
    rm, rp = mm / gap, pe / gap
    ok = (np.all(np.diff(mm) < 0) and np.all(np.diff(pe) < 0) and rm.max() / rm.min() < 3
          and rp.max() / rp.min() < 3 and dt < 300)
    report(9, ok, f"mismatch {np.round(mm, 4).tolist()} ratio spread {rm.max() / rm.min():.2f}; "
                  f"P(Q=0) {np.round(pe, 4).tolist()} ratio spread {rp.max() / rp.min():.2f}; {dt:.0f}s")


def test_criterion_10_littles_law(report):
    results = [r for _, r, _ in _c7()[0]] + [r for _, r in _c8()[0]] + [r for _, r in _c9()[0]]
    results += [r.per_rep["ak"] for _, r in _c9()[0]]
    worst = max(r.littles_law_gap() for r in results)
    report(10, worst < 0.01, f"{len(results)} runs, max |N - lambda T|/N = {worst:.2e} (< 1%)")
