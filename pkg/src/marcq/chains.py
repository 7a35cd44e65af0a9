"""Completion-labelled CTMCs of the saturated and simplified saturated systems.

Every transition carries a completion label ``a`` in ``{0, 1}``.  The saturated
system (Sat) tracks the ordered list of the ``k`` oldest jobs; the simplified
saturated system (SSS) tracks only the multiset of jobs in service plus the
class of the single blocked job, if any.
"""
from __future__ import annotations

import csv
import itertools
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .workload import JobState, WorkloadSpec

DEFAULT_CAP = 200_000


class ChainError(RuntimeError):
    pass


class StateCapExceeded(ChainError):
    def __init__(self, count, cap):
        super().__init__(f"state count reached {count} which exceeds the cap of {cap}")
        self.count = count
        self.cap = cap


class SatState(NamedTuple):
    jobs: tuple  # of JobState, oldest first


class SssState(NamedTuple):
    in_service: tuple  # sorted JobStates
    blocked: int | None  # class id of the job waiting for servers


@dataclass(frozen=True, eq=False)
class LabeledCTMC:
    """Finite CTMC with completion-labelled transitions.

    Transitions are stored in COO form, one entry per distinct
    ``(src, dst, a)`` triple.
    """

    states: list
    src: np.ndarray
    dst: np.ndarray
    label: np.ndarray
    rate: np.ndarray
    kind: str = "generic"
    labels: list = field(default=None)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        lab = np.asarray(self.label, dtype=np.int64)
        rate = np.asarray(self.rate, dtype=float)
        n = len(self.states)
        if not (src.shape == dst.shape == lab.shape == rate.shape):
            raise ChainError("transition arrays must have equal length")
        if np.any(rate < 0):
            raise ChainError("transition rates must be non-negative")
        if np.any((lab != 0) & (lab != 1)):
            raise ChainError("completion labels must be 0 or 1")
        if src.size and (src.min() < 0 or src.max() >= n or dst.min() < 0 or dst.max() >= n):
            raise ChainError("transition endpoint out of range")
        # merge duplicate (src, dst, a) entries
        if src.size:
            key = (src * n + dst) * 2 + lab
            uniq, inv = np.unique(key, return_inverse=True)
            merged = np.zeros(uniq.size)
            np.add.at(merged, inv, rate)
            src, dst, lab, rate = uniq // 2 // n, uniq // 2 % n, uniq % 2, merged
        for name, arr in (("src", src), ("dst", dst), ("label", lab), ("rate", rate)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        total = np.bincount(src, weights=rate, minlength=n)
        comp = np.bincount(src, weights=rate * lab, minlength=n)
        if np.any(total <= 0):
            bad = int(np.flatnonzero(total <= 0)[0])
            raise ChainError(f"state {bad} has no outgoing transitions")
        object.__setattr__(self, "total_rate", total)
        object.__setattr__(self, "completion_rate", comp)
        if self.labels is None:
            object.__setattr__(self, "labels", [str(s) for s in self.states])

    @property
    def n_states(self) -> int:
        return len(self.states)

    def generator(self) -> np.ndarray:
        """Dense generator matrix ``Q`` (self-loops cancel)."""
        n = self.n_states
        Q = np.zeros((n, n))
        np.add.at(Q, (self.src, self.dst), self.rate)
        Q[np.diag_indices(n)] -= self.total_rate
        return Q

    def sparse_rates(self, label=None):
        """Sparse ``n x n`` matrix of rates, optionally restricted to one label."""
        n = self.n_states
        m = slice(None) if label is None else self.label == label
        return coo_matrix((self.rate[m], (self.src[m], self.dst[m])), shape=(n, n)).tocsr()

    def is_irreducible(self) -> bool:
        if self.n_states == 1:
            return True
        ncomp, _ = connected_components(self.sparse_rates(), directed=True, connection="strong")
        return ncomp == 1

    def scaled(self, c: float) -> "LabeledCTMC":
        return LabeledCTMC(self.states, self.src, self.dst, self.label, self.rate * c, self.kind, self.labels)

    def csr(self):
        """Row pointers plus per-row target, label and cumulative probability."""
        order = np.lexsort((self.label, self.dst, self.src))
        src, dst, lab, rate = self.src[order], self.dst[order], self.label[order], self.rate[order]
        indptr = np.zeros(self.n_states + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        cum = np.empty_like(rate)
        for s in range(self.n_states):
            lo, hi = indptr[s], indptr[s + 1]
            cum[lo:hi] = np.cumsum(rate[lo:hi]) / self.total_rate[s]
            cum[hi - 1] = 1.0
        return indptr, dst.astype(np.int64), lab.astype(np.int64), cum

    def dump_csv(self, path, legend_path=None) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from_state", "to_state", "completions", "rate"])
            for s, d, a, r in zip(self.src, self.dst, self.label, self.rate):
                w.writerow([int(s), int(d), int(a), repr(float(r))])
        legend_path = Path(legend_path) if legend_path else path.with_name(path.stem + "_states.csv")
        with legend_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "state"])
            for i, lab in enumerate(self.labels):
                w.writerow([i, lab])


def single_state_chain(rate: float) -> LabeledCTMC:
    """One state completing at ``rate``: the service process of an M/M/1."""
    return LabeledCTMC(["*"], [0], [0], [1], [rate], kind="mm1", labels=["*"])


# ---------------------------------------------------------------------------
# state helpers


def in_service_prefix(state, k: int, needs) -> range:
    """Positions of the jobs in service: the longest FCFS prefix that fits in ``k``.

    ``state`` is a sequence of JobStates (or a SatState); ``needs`` maps a
    class id to its server need.
    """
    jobs = state.jobs if isinstance(state, SatState) else state
    used = 0
    n = 0
    for job in jobs:
        need = needs[job.class_id] if isinstance(job, JobState) else needs[job]
        if used + need > k:
            break
        used += need
        n += 1
    return range(n)


def canonical_encoding(state) -> bytes:
    if isinstance(state, SatState):
        flat = [x for job in state.jobs for x in job]
        return b"S" + struct.pack(f"<{len(flat)}i", *flat)
    if isinstance(state, SssState):
        jobs = sorted(state.in_service)
        flat = [x for job in jobs for x in job]
        blocked = -1 if state.blocked is None else state.blocked
        return b"M" + struct.pack(f"<i{len(flat)}i", blocked, *flat)
    raise TypeError(f"cannot encode {type(state).__name__}")


def _job_token(spec, job):
    needs = [c.need for c in spec.classes]
    distinct = len(set(needs)) == len(needs)
    tok = str(needs[job.class_id]) if distinct else f"c{job.class_id}"
    if spec.classes[job.class_id].duration.n_phases > 1:
        tok += f".{job.phase}"
    return tok


def state_label(spec: WorkloadSpec, state) -> str:
    """Human-readable label, e.g. ``[1,2]`` (Sat) or ``[1|2]`` (SSS, 2 blocked)."""
    if isinstance(state, SatState):
        return "[" + ",".join(_job_token(spec, j) for j in state.jobs) + "]"
    inner = ",".join(_job_token(spec, j) for j in sorted(state.in_service, key=lambda j: (spec.classes[j.class_id].need, j)))
    if state.blocked is None:
        return f"[{inner}]"
    needs = [c.need for c in spec.classes]
    b = str(needs[state.blocked]) if len(set(needs)) == len(needs) else f"c{state.blocked}"
    return f"[{inner}|{b}]"


def _phase_moves(spec, job):
    """(new_phase, rate) pairs for non-completing phase changes of ``job``."""
    S = spec.classes[job.class_id].duration.subgen
    p = job.phase
    return [(q, S[p, q]) for q in range(S.shape[0]) if q != p and S[p, q] > 0]


def _exit_rate(spec, job):
    return spec.classes[job.class_id].duration.exit[job.phase]


# ---------------------------------------------------------------------------
# enumeration


def _explore(starts, successors, cap):
    index = {}
    states = []
    edges = []
    queue = deque()
    for s in starts:
        key = canonical_encoding(s)
        if key not in index:
            index[key] = len(states)
            states.append(s)
            queue.append(s)
            if len(states) > cap:
                raise StateCapExceeded(len(states), cap)
    while queue:
        s = queue.popleft()
        i = index[canonical_encoding(s)]
        for t, a, r in successors(s):
            key = canonical_encoding(t)
            j = index.get(key)
            if j is None:
                j = index[key] = len(states)
                states.append(t)
                queue.append(t)
                if len(states) > cap:
                    raise StateCapExceeded(len(states), cap)
            edges.append((i, j, a, r))
    return states, edges


def _recurrent_class(states, edges):
    """Restrict to the unique closed communicating class."""
    n = len(states)
    e = np.array(edges, dtype=float).reshape(-1, 4)
    src, dst = e[:, 0].astype(np.int64), e[:, 1].astype(np.int64)
    graph = coo_matrix((np.ones(src.size), (src, dst)), shape=(n, n)).tocsr()
    ncomp, comp = connected_components(graph, directed=True, connection="strong")
    if ncomp == 1:
        return states, edges
    leaves = set(range(ncomp))
    for s, d in zip(src, dst):
        if comp[s] != comp[d]:
            leaves.discard(comp[s])
    if len(leaves) != 1:
        raise ChainError(f"chain is reducible: {len(leaves)} closed classes")
    (leaf,) = leaves
    keep = np.flatnonzero(comp == leaf)
    remap = {int(old): new for new, old in enumerate(keep)}
    kept_edges = [(remap[s], remap[d], a, r) for s, d, a, r in edges if s in remap and d in remap]
    return [states[i] for i in keep], kept_edges


def _finish(spec, states, edges, kind):
    states, edges = _recurrent_class(states, edges)
    e = np.array(edges, dtype=float).reshape(-1, 4)
    chain = LabeledCTMC(
        states,
        e[:, 0].astype(np.int64),
        e[:, 1].astype(np.int64),
        e[:, 2].astype(np.int64),
        e[:, 3],
        kind=kind,
        labels=[state_label(spec, s) for s in states],
    )
    if not chain.is_irreducible():
        raise ChainError("constructed chain is not irreducible")
    return chain


def build_saturated_chain(spec: WorkloadSpec, cap: int = DEFAULT_CAP) -> LabeledCTMC:
    """Completion-labelled CTMC of the saturated system.

    States are ordered lists of exactly ``k`` job states.  A completion
    removes the job, shifts the list left and appends a fresh job.
    """
    k = spec.k
    needs = [c.need for c in spec.classes]
    fresh = spec.fresh_states()

    if len(fresh) ** k <= cap:
        starts = [SatState(tuple(js for js, _ in combo)) for combo in itertools.product(fresh, repeat=k)]
    else:
        starts = [SatState(tuple([fresh[0][0]] * k))]

    def successors(s):
        jobs = s.jobs
        out = []
        for pos in in_service_prefix(jobs, k, needs):
            job = jobs[pos]
            for q, r in _phase_moves(spec, job):
                moved = jobs[:pos] + (JobState(job.class_id, q),) + jobs[pos + 1:]
                out.append((SatState(moved), 0, r))
            ex = _exit_rate(spec, job)
            if ex > 0:
                rest = jobs[:pos] + jobs[pos + 1:]
                for js, p in fresh:
                    out.append((SatState(rest + (js,)), 1, ex * p))
        return out

    states, edges = _explore(starts, successors, cap)
    return _finish(spec, states, edges, "sat")


def _admit(spec, in_service, blocked):
    """Fill servers after a completion; returns {SssState: probability}.

    Sampled jobs enter service while they fit; the first that does not
    fit becomes the blocked job.  Its phase is sampled on service entry.
    """
    k = spec.k
    fresh_by_class = [
        [(ph, p0) for ph, p0 in enumerate(c.duration.init) if p0 > 0] for c in spec.classes
    ]
    done = defaultdict(float)
    frontier = {(tuple(sorted(in_service)), blocked): 1.0}
    while frontier:
        nxt = defaultdict(float)
        for (jobs, blk), prob in frontier.items():
            used = sum(spec.classes[j.class_id].need for j in jobs)
            if blk is not None:
                if used + spec.classes[blk].need > k:
                    done[SssState(jobs, blk)] += prob
                    continue
                for ph, p0 in fresh_by_class[blk]:
                    nxt[(tuple(sorted(jobs + (JobState(blk, ph),))), None)] += prob * p0
                continue
            if used >= k:
                done[SssState(jobs, None)] += prob
                continue
            for ci, c in enumerate(spec.classes):
                if used + c.need > k:
                    nxt[(jobs, ci)] += prob * c.prob
                else:
                    for ph, p0 in fresh_by_class[ci]:
                        nxt[(tuple(sorted(jobs + (JobState(ci, ph),))), None)] += prob * c.prob * p0
        frontier = nxt
    return done


def _sss_order(state):
    # in-service jobs first, then the blocked job: matches the list order of Sat states
    tail = () if state.blocked is None else ((state.blocked, -1),)
    return tuple(state.in_service) + tail


def build_sss_chain(spec: WorkloadSpec, cap: int = DEFAULT_CAP) -> LabeledCTMC:
    """Completion-labelled CTMC of the simplified saturated system."""
    starts = sorted(_admit(spec, (), None), key=_sss_order)
    cache = {}

    def successors(s):
        out = []
        jobs = s.in_service
        for pos, job in enumerate(jobs):
            if pos and jobs[pos - 1] == job:
                # identical jobs: handled once, rate multiplied below
                continue
            mult = jobs.count(job)
            for q, r in _phase_moves(spec, job):
                moved = tuple(sorted(jobs[:pos] + (JobState(job.class_id, q),) + jobs[pos + 1:]))
                out.append((SssState(moved, s.blocked), 0, mult * r))
            ex = _exit_rate(spec, job)
            if ex > 0:
                rest = jobs[:pos] + jobs[pos + 1:]
                key = (rest, s.blocked)
                if key not in cache:
                    cache[key] = _admit(spec, rest, s.blocked)
                for t, p in cache[key].items():
                    out.append((t, 1, mult * ex * p))
        return out

    states, edges = _explore(starts, successors, cap)
    return _finish(spec, states, edges, "sss")


def build_chain(spec: WorkloadSpec, full_sat: bool = False, cap: int = DEFAULT_CAP) -> LabeledCTMC:
    return build_saturated_chain(spec, cap) if full_sat else build_sss_chain(spec, cap)
