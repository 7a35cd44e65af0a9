"""Discrete-event simulation of MSJ FCFS, At-least-k, MMSR and coupled systems.

Each replication is a single-threaded kernel run (see :mod:`marcq.kernels`);
replications get their own random substreams derived from the master seed,
so results do not depend on how replications are scheduled.
"""
from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels as K
from .chains import LabeledCTMC
from .workload import WorkloadSpec

RUNAWAY = 10_000_000


class InstabilityError(RuntimeError):
    """The back of the queue grew past the runaway bound (lambda >= lambda*?)."""


@dataclass(frozen=True)
class SimConfig:
    lam: float
    n_arrivals: int = 1_000_000
    warmup_fraction: float = 0.1
    seed: int = 0
    replications: int = 10
    workers: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("arrival rate must be positive")
        if not 0 <= self.warmup_fraction <= 0.9:
            raise ValueError("warmup_fraction must lie in [0, 0.9]")
        if self.n_arrivals < 1000:
            raise ValueError("n_arrivals must be at least 1000")
        if self.replications < 1:
            raise ValueError("need at least one replication")

    @property
    def warm(self) -> int:
        return int(self.warmup_fraction * self.n_arrivals)


@dataclass(frozen=True)
class Estimate:
    mean: float
    ci: float  # half-width of the 95% normal interval

    def contains(self, x) -> bool:
        return abs(x - self.mean) <= self.ci


@dataclass(frozen=True)
class SimResult:
    system: str
    lam: float
    mean_T: Estimate
    mean_N: Estimate
    mean_Q: Estimate
    p_queue_empty: Estimate
    mean_busy_period: Estimate
    mismatch_fraction: Estimate | None = None
    mean_T_cv: Estimate | None = None
    mean_Q_cv: Estimate | None = None
    n_arrivals: int = 0
    seed: int = 0
    replications: int = 0
    per_rep: dict = field(default_factory=dict, repr=False, compare=False)

    def littles_law_gap(self) -> float:
        """``|E[N] - lambda E[T]| / E[N]``."""
        return abs(self.mean_N.mean - self.lam * self.mean_T.mean) / self.mean_N.mean

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("per_rep")
        return d


def _estimate(xs) -> Estimate:
    xs = np.asarray(xs, dtype=float)
    if xs.size < 2:
        return Estimate(float(xs.mean()), float("inf"))
    return Estimate(float(xs.mean()), float(norm.ppf(0.975) * xs.std(ddof=1) / np.sqrt(xs.size)))


def stream_seeds(seed: int, rep: int, n_streams: int = K.N_STREAMS) -> np.ndarray:
    """Seed rows for the named substreams of one replication."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
    state = ss.generate_state(2 * n_streams, dtype=np.uint64).reshape(n_streams, 2)
    state[np.all(state == 0, axis=1), 1] = 1  # xoroshiro must not start at zero
    return state


def _errstate():
    # uint64 wraparound is intended; numpy only warns about it on the pure-python path
    return contextlib.nullcontext() if K.USING_NUMBA else np.errstate(over="ignore")


def workload_arrays(spec: WorkloadSpec):
    """Flatten a workload into the padded arrays the kernels use."""
    C = len(spec.classes)
    P = spec.max_phases
    cls_cum = np.cumsum(spec.probs)
    cls_cum[-1] = 1.0
    need = spec.needs.astype(np.int64)
    init_cum = np.ones((C, P))
    out_rate = np.zeros((C, P))
    jump_cum = np.ones((C, P, P + 1))
    for ci, c in enumerate(spec.classes):
        d = c.duration
        n = d.n_phases
        init_cum[ci, :n] = np.cumsum(d.init)
        init_cum[ci, n - 1:] = 1.0
        for p in range(n):
            leave = -d.subgen[p, p]
            out_rate[ci, p] = leave
            w = np.zeros(P + 1)
            w[:n] = d.subgen[p]
            w[p] = 0.0
            w[P] = d.exit[p]
            cum = np.cumsum(w) / leave
            cum[-1] = 1.0
            jump_cum[ci, p] = cum
    return cls_cum, need, init_cum, out_rate, jump_cum


def _run_reps(fn, cfg: SimConfig):
    reps = range(cfg.replications)
    if cfg.workers > 1 and K.USING_NUMBA:
        with ThreadPoolExecutor(cfg.workers) as ex:
            out = list(ex.map(fn, reps))
    else:
        out = [fn(r) for r in reps]
    return np.array(out)


@dataclass(frozen=True, eq=False)
class DriftControl:
    """Tables for the control-variate estimate of the mean back length.

    The drift of ``f(q, y) = (q - Delta(y))^2 / 2`` has stationary mean zero
    for any table ``Delta``, so subtracting its time average (scaled by
    ``1 / (lambda - lambda*)``) leaves a consistent estimator of ``E[Q]``.
    With ``Delta`` the relative completions of the saturated chain the
    subtracted term cancels the slow random-walk part of ``q`` and the
    remainder is a bounded functional of the front, so its variance is far
    smaller than that of the raw time average near ``lambda*``.
    """

    lambda_star: float
    keys: np.ndarray
    vals: np.ndarray
    jid_base: np.ndarray
    pw: np.ndarray
    fresh_id: np.ndarray
    fresh_prob: np.ndarray

    def arrays(self):
        return self.keys, self.vals, self.jid_base, self.pw, self.fresh_id, self.fresh_prob


def drift_control(spec: WorkloadSpec, cap: int | None = None) -> DriftControl:
    """Build the control-variate tables from the saturated chain of ``spec``.

    Raises :class:`~marcq.chains.StateCapExceeded` if the chain is too large
    and ``OverflowError`` if front keys do not fit in 64 bits.
    """
    from .chains import DEFAULT_CAP, build_saturated_chain
    from .marc import solve

    chain = build_saturated_chain(spec, cap=DEFAULT_CAP if cap is None else cap)
    sol = solve(chain)
    phases = np.array([c.duration.n_phases for c in spec.classes])
    J = int(phases.sum())
    if J ** (spec.k + 1) >= 2**63:
        raise OverflowError("front keys do not fit in 64 bits")
    jid_base = np.concatenate([[0], np.cumsum(phases)[:-1]]).astype(np.int64)
    pw = np.array([J**j for j in range(spec.k + 1)], dtype=np.int64)
    keys = np.array([sum(int(jid_base[js.class_id] + js.phase) * int(pw[j]) for j, js in enumerate(s.jobs))
                     for s in chain.states], dtype=np.int64)
    order = np.argsort(keys)
    fresh = spec.fresh_states()
    return DriftControl(
        lambda_star=float(sol.lambda_star),
        keys=keys[order],
        vals=np.asarray(sol.delta, dtype=float)[order],
        jid_base=jid_base,
        pw=pw,
        fresh_id=np.array([jid_base[js.class_id] + js.phase for js, _ in fresh], dtype=np.int64),
        fresh_prob=np.array([pr for _, pr in fresh], dtype=float),
    )


_NO_CV = (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(1, dtype=np.int64), np.ones(1, dtype=np.int64),
          np.zeros(0, dtype=np.int64), np.zeros(0))


def _summarise(system, cfg, accs, mismatch=None, control=None):
    if np.any(accs[..., K.A_STATUS] != 0):
        raise InstabilityError(
            f"{system}: queue exceeded {RUNAWAY} jobs at lambda={cfg.lam}; is lambda below lambda*?"
        )
    wlen = accs[:, K.A_WLEN]
    T = accs[:, K.A_SUMT] / accs[:, K.A_NT]
    N = accs[:, K.A_AREA_N] / wlen
    Q = accs[:, K.A_AREA_Q] / wlen
    empty = accs[:, K.A_AREA_EMPTY] / wlen
    with np.errstate(invalid="ignore", divide="ignore"):
        busy = accs[:, K.A_BUSY_SUM] / accs[:, K.A_BUSY_N]
    busy = busy[np.isfinite(busy)]
    per_rep = {"T": T, "N": N, "Q": Q, "empty": empty, "busy": busy}
    mm = None
    if mismatch is not None:
        per_rep["mismatch"] = mismatch
        mm = _estimate(mismatch)
    t_cv = q_cv = None
    if control is not None:
        q_c = Q - (accs[:, K.A_AREA_DRIFT] / wlen) / (cfg.lam - control.lambda_star)
        t_c = (q_c + N - Q) / cfg.lam
        per_rep["T_cv"] = t_c
        per_rep["Q_cv"] = q_c
        t_cv, q_cv = _estimate(t_c), _estimate(q_c)
    return SimResult(
        system=system,
        lam=cfg.lam,
        mean_T=_estimate(T),
        mean_N=_estimate(N),
        mean_Q=_estimate(Q),
        p_queue_empty=_estimate(empty),
        mean_busy_period=_estimate(busy) if busy.size else Estimate(float("nan"), float("inf")),
        mismatch_fraction=mm,
        mean_T_cv=t_cv,
        mean_Q_cv=q_cv,
        n_arrivals=cfg.n_arrivals,
        seed=cfg.seed,
        replications=cfg.replications,
        per_rep=per_rep,
    )


def _front(mode, name, spec, cfg, control):
    arrs = workload_arrays(spec)
    cv = _NO_CV if control is None else control.arrays()
    if control is not None and not cfg.lam < control.lambda_star:
        raise ValueError(f"control variate needs lambda < lambda* = {control.lambda_star}")

    def one(rep):
        with _errstate():
            return K.simulate_front(mode, spec.k, *arrs, float(cfg.lam), cfg.n_arrivals, cfg.warm,
                                    RUNAWAY, stream_seeds(cfg.seed, rep), *cv)

    return _summarise(name, cfg, _run_reps(one, cfg), control=control)


def simulate_msj(spec: WorkloadSpec, cfg: SimConfig, control: DriftControl | None = None) -> SimResult:
    """Open multiserver-job FCFS queue with Poisson arrivals.

    With a :class:`DriftControl` the result also carries the control-variate
    estimates ``mean_T_cv`` and ``mean_Q_cv``; the random path is unchanged.
    """
    return _front(K.MSJ, "msj", spec, cfg, control)


def simulate_atleastk(spec: WorkloadSpec, cfg: SimConfig, control: DriftControl | None = None) -> SimResult:
    """MSJ dynamics plus an auxiliary arrival whenever the front would drop below k jobs.

    ``mean_N`` counts only primary arrivals; ``mean_Q`` is the back length.
    """
    return _front(K.AK, "ak", spec, cfg, control)


def simulate_coupled(spec: WorkloadSpec, cfg: SimConfig) -> SimResult:
    """MSJ and At-least-k under the merge coupling; statistics are for the MSJ side."""
    arrs = workload_arrays(spec)

    def one(rep):
        with _errstate():
            return K.simulate_coupled(spec.k, *arrs, float(cfg.lam), cfg.n_arrivals, cfg.warm,
                                      RUNAWAY, stream_seeds(cfg.seed, rep))

    out = _run_reps(one, cfg)
    msj = out[:, 0, :]
    mismatch = msj[:, K.A_AREA_MISMATCH] / msj[:, K.A_WLEN]
    res = _summarise("coupled", cfg, msj, mismatch)
    if np.any(out[:, 1, K.A_STATUS] != 0):
        raise InstabilityError("coupled: At-least-k side exceeded the runaway bound")
    res.per_rep["ak"] = _summarise("ak", cfg, out[:, 1, :])
    return res


def simulate_mmsr(chain: LabeledCTMC, cfg: SimConfig, start: int = 0) -> SimResult:
    """M/M/1 whose service completions are the completion transitions of ``chain``."""
    indptr, dst, lab, cum = chain.csr()
    total = np.asarray(chain.total_rate, dtype=float)

    def one(rep):
        with _errstate():
            return K.simulate_mmsr(indptr, dst, lab, cum, total, start, float(cfg.lam), cfg.n_arrivals,
                                   cfg.warm, RUNAWAY, stream_seeds(cfg.seed, rep))

    return _summarise("mmsr", cfg, _run_reps(one, cfg))


def chain_completions(chain: LabeledCTMC, state: int, horizon: float, reps: int, seed: int) -> np.ndarray:
    """Completion counts of ``reps`` independent paths of ``chain`` started in ``state``."""
    indptr, dst, lab, cum = chain.csr()
    seeds = np.random.SeedSequence(seed).generate_state(2 * reps, dtype=np.uint64).reshape(reps, 2)
    seeds[np.all(seeds == 0, axis=1), 1] = 1
    with _errstate():
        return K.chain_path_counts(indptr, dst, lab, cum, np.asarray(chain.total_rate, dtype=float),
                                   int(state), float(horizon), seeds)


def completion_rate(chain: LabeledCTMC, horizon: float, seed: int = 0, start: int = 0) -> float:
    """Long-run completion rate of ``chain`` along one simulated path."""
    return float(chain_completions(chain, start, horizon, 1, seed)[0] / horizon)
