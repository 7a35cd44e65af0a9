"""Event-loop kernels for the simulators.

Everything here is written in the subset of Python that numba compiles;
with ``MARCQ_NO_NUMBA=1`` the same functions run as ordinary Python.

Random numbers come from xoroshiro128+ streams held in a ``(n_streams, 2)``
uint64 array, so each named stream can be advanced independently of the
others.
"""
import math

import numpy as np

from ._accel import USING_NUMBA, jit

# stream rows
CLOCK, SVC_A, SVC_B, SHARED = 0, 1, 2, 3
N_STREAMS = 4

# systems
MSJ, AK = 0, 1

# accumulator slots
(A_STATUS, A_SUMT, A_NT, A_AREA_N, A_AREA_Q, A_AREA_EMPTY, A_WLEN, A_BUSY_SUM, A_BUSY_N, A_TEND, A_EVENTS,
 A_AREA_MISMATCH, A_AREA_DRIFT) = range(13)
N_ACC = 13

# per-system integer state slots
S_NF, S_NEXT, S_NREAL, S_INBUSY, S_BUSYCOUNTED = range(5)

_U53 = 1.0 / 9007199254740992.0


@jit
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@jit
def uniform(rng, s):
    s0 = rng[s, 0]
    s1 = rng[s, 1]
    out = s0 + s1
    s1 ^= s0
    rng[s, 0] = _rotl(s0, 24) ^ s1 ^ (s1 << np.uint64(16))
    rng[s, 1] = _rotl(s1, 37)
    return float(out >> np.uint64(11)) * _U53


@jit
def expo(rng, s, rate):
    return -math.log(1.0 - uniform(rng, s)) / rate


@jit
def _search(cum, lo, hi, u):
    # first index i in [lo, hi) with u < cum[i]; falls back to hi - 1
    for i in range(lo, hi):
        if u < cum[i]:
            return i
    return hi - 1


# ---------------------------------------------------------------------------
# completion-labelled chain paths


@jit
def chain_path_counts(indptr, dst, lab, cum, total, start, horizon, seeds):
    """Completions of independent chain paths over ``[0, horizon]``, one per seed row."""
    reps = seeds.shape[0]
    out = np.zeros(reps)
    rng = np.empty((1, 2), dtype=np.uint64)
    for r in range(reps):
        rng[0, 0] = seeds[r, 0]
        rng[0, 1] = seeds[r, 1]
        s = start
        t = 0.0
        c = 0
        while True:
            t += expo(rng, 0, total[s])
            if t > horizon:
                break
            i = _search(cum, indptr[s], indptr[s + 1], uniform(rng, 0))
            c += lab[i]
            s = dst[i]
        out[r] = c
    return out


# ---------------------------------------------------------------------------
# front-of-queue helpers shared by the MSJ, Ak and coupled simulators


@jit
def _n_in_service(fc, nf, need, k):
    used = 0
    for j in range(nf):
        used += need[fc[j]]
        if used > k:
            return j
    return nf


@jit
def _service_rate(fc, fp, ns, out_rate):
    r = 0.0
    for j in range(ns):
        r += out_rate[fc[j], fp[j]]
    return r


@jit
def _pick(fc, fp, ns, out_rate, target):
    acc = 0.0
    for j in range(ns):
        acc += out_rate[fc[j], fp[j]]
        if target < acc:
            return j
    return ns - 1


@jit
def _jump(c, ph, jump_cum, v):
    """New phase after leaving ``ph``, or -1 for a completion."""
    P = jump_cum.shape[2] - 1
    for i in range(P + 1):
        if v < jump_cum[c, ph, i]:
            return -1 if i == P else i
    return -1


@jit
def _fresh_class(cls_cum, u):
    for c in range(cls_cum.size):
        if u < cls_cum[c]:
            return c
    return cls_cum.size - 1


@jit
def _fresh_phase(init_cum, c, u):
    for p in range(init_cum.shape[1]):
        if u < init_cum[c, p]:
            return p
    return init_cum.shape[1] - 1


@jit
def _remove(fc, fp, fi, nf, pos):
    for j in range(pos, nf - 1):
        fc[j] = fc[j + 1]
        fp[j] = fp[j + 1]
        fi[j] = fi[j + 1]


@jit
def _push(fc, fp, fi, st, c, p, idx):
    nf = st[S_NF]
    fc[nf] = c
    fp[nf] = p
    fi[nf] = idx
    st[S_NF] = nf + 1
    if idx >= 0:
        st[S_NREAL] += 1


@jit
def _accumulate(st, acc, n_arrived, dt):
    q = n_arrived - st[S_NEXT]
    acc[A_AREA_N] += (q + st[S_NREAL]) * dt
    acc[A_AREA_Q] += q * dt
    if q == 0:
        acc[A_AREA_EMPTY] += dt
    acc[A_WLEN] += dt


@jit
def _arrive(mode, st, fc, fp, fi, acc, idx, t, k, u1, u2, cls_cum, init_cum, window, runaway):
    """Job ``idx`` arrives; it joins the front if there is room, else the back."""
    if mode == MSJ and st[S_NF] < k and st[S_NEXT] == idx:
        c = _fresh_class(cls_cum, u1)
        _push(fc, fp, fi, st, c, _fresh_phase(init_cum, c, u2), idx)
        st[S_NEXT] = idx + 1
        return
    q = idx + 1 - st[S_NEXT]
    if q == 1:
        st[S_INBUSY] = 1
        st[S_BUSYCOUNTED] = 1 if window else 0
    if q > runaway:
        acc[A_STATUS] = 1.0


@jit
def _complete(mode, st, fc, fp, fi, acc, pos, t, arr_t, n_arrived, warm, n_arr, u1, u2, cls_cum, init_cum, busy_start):
    """Front job at ``pos`` completes; refill from the back (or an auxiliary job for Ak).

    Returns 1 if a tagged job departed.
    """
    idx = fi[pos]
    tagged = 0
    if idx >= 0:
        st[S_NREAL] -= 1
        if idx >= warm and idx < n_arr:
            acc[A_SUMT] += t - arr_t[idx]
            acc[A_NT] += 1.0
            tagged = 1
    nf = st[S_NF]
    _remove(fc, fp, fi, nf, pos)
    st[S_NF] = nf - 1
    nxt = st[S_NEXT]
    if nxt < n_arrived:
        c = _fresh_class(cls_cum, u1)
        _push(fc, fp, fi, st, c, _fresh_phase(init_cum, c, u2), nxt)
        st[S_NEXT] = nxt + 1
        if nxt + 1 == n_arrived and st[S_INBUSY] == 1:
            if st[S_BUSYCOUNTED] == 1:
                acc[A_BUSY_SUM] += t - busy_start
                acc[A_BUSY_N] += 1.0
            st[S_INBUSY] = 0
    elif mode == AK:
        c = _fresh_class(cls_cum, u1)
        _push(fc, fp, fi, st, c, _fresh_phase(init_cum, c, u2), -1)
    return tagged


# ---------------------------------------------------------------------------
# drift of f(q, y) = (q - Delta(y))^2 / 2, the control variate for the back length
#
# A full front y is keyed as sum_j jid(y_j) * J^j with jid(c, p) = jid_base[c] + p;
# Delta is looked up in the sorted key table of the saturated chain.  f is zero
# on fronts with fewer than k jobs.


@jit
def _front_key(fc, fp, nf, jid_base, pw):
    key = 0
    for j in range(nf):
        key += (jid_base[fc[j]] + fp[j]) * pw[j]
    return key


@jit
def _delta(keys, vals, key):
    i = np.searchsorted(keys, key)
    if i < keys.size and keys[i] == key:
        return vals[i]
    return np.nan


@jit
def _half_sq(x):
    return 0.5 * x * x


@jit
def _drift(mode, fc, fp, nf, ns, q, k, lam, out_rate, jump_cum, jid_base, pw, fresh_id, fresh_prob, keys, vals):
    """Generator of f applied at the current state, every transition enumerated."""
    key = _front_key(fc, fp, nf, jid_base, pw)
    full = nf == k
    d0 = _delta(keys, vals, key) if full else 0.0
    f0 = _half_sq(q - d0) if full else 0.0
    g = 0.0
    if full:
        g += lam * (_half_sq(q + 1 - d0) - f0)
    else:
        for i in range(fresh_id.size):
            nk = key + fresh_id[i] * pw[nf]
            f1 = _half_sq(_delta(keys, vals, nk)) if nf + 1 == k else 0.0
            g += lam * fresh_prob[i] * (f1 - f0)
    P = jump_cum.shape[2] - 1
    for j in range(ns):
        c = fc[j]
        p = fp[j]
        r = out_rate[c, p]
        prev = 0.0
        for p2 in range(P + 1):
            w = (jump_cum[c, p, p2] - prev) * r
            prev = jump_cum[c, p, p2]
            if w <= 0.0:
                continue
            if p2 < P:
                if full:
                    nk = key + (p2 - p) * pw[j]
                    g += w * (_half_sq(q - _delta(keys, vals, nk)) - f0)
                continue
            base = key % pw[j] + (key // pw[j + 1]) * pw[j]
            if q > 0 or mode == AK:
                q1 = q - 1 if q > 0 else 0
                for i in range(fresh_id.size):
                    nk = base + fresh_id[i] * pw[nf - 1]
                    g += w * fresh_prob[i] * (_half_sq(q1 - _delta(keys, vals, nk)) - f0)
            else:
                g -= w * f0
    return g


@jit
def _new_state(k):
    fc = np.zeros(k, dtype=np.int64)
    fp = np.zeros(k, dtype=np.int64)
    fi = np.full(k, -1, dtype=np.int64)
    st = np.zeros(5, dtype=np.int64)
    acc = np.zeros(N_ACC)
    return fc, fp, fi, st, acc


@jit
def _fill_aux(fc, fp, fi, st, k, rng, s, cls_cum, init_cum):
    for _ in range(k):
        c = _fresh_class(cls_cum, uniform(rng, s))
        _push(fc, fp, fi, st, c, _fresh_phase(init_cum, c, uniform(rng, s)), -1)


@jit
def simulate_front(mode, k, cls_cum, need, init_cum, out_rate, jump_cum, lam, n_arr, warm, runaway, seeds,
                   cv_keys, cv_vals, jid_base, pw, fresh_id, fresh_prob):
    """One replication of the open MSJ system (``mode=MSJ``) or the At-least-k system.

    Returns an accumulator vector indexed by the ``A_*`` constants.  When
    ``cv_keys`` is non-empty the time integral of the drift of
    ``(q - Delta(y))^2 / 2`` is accumulated in ``A_AREA_DRIFT``.
    """
    use_cv = cv_keys.size > 0
    rng = seeds.copy()
    arr_t = np.empty(n_arr)
    fc, fp, fi, st, acc = _new_state(k)
    if mode == AK:
        _fill_aux(fc, fp, fi, st, k, rng, SVC_A, cls_cum, init_cum)
    n_arrived = 0
    t = 0.0
    busy_start = 0.0
    window = warm == 0
    closed = False
    left = n_arr - warm
    events = 0
    while left > 0:
        ns = _n_in_service(fc, st[S_NF], need, k)
        rs = _service_rate(fc, fp, ns, out_rate)
        la = lam if n_arrived < n_arr else 0.0
        tot = la + rs
        dt = expo(rng, CLOCK, tot)
        if window and not closed:
            _accumulate(st, acc, n_arrived, dt)
            if use_cv:
                acc[A_AREA_DRIFT] += dt * _drift(mode, fc, fp, st[S_NF], ns, n_arrived - st[S_NEXT], k, la,
                                                 out_rate, jump_cum, jid_base, pw, fresh_id, fresh_prob,
                                                 cv_keys, cv_vals)
        t += dt
        events += 1
        u = uniform(rng, CLOCK) * tot
        if u < la:
            idx = n_arrived
            arr_t[idx] = t
            n_arrived += 1
            if idx == warm:
                window = True
            if idx == n_arr - 1:
                closed = True
            was_busy = st[S_INBUSY]
            _arrive(mode, st, fc, fp, fi, acc, idx, t, k, uniform(rng, SVC_A), uniform(rng, SVC_A),
                    cls_cum, init_cum, window and not closed, runaway)
            if st[S_INBUSY] == 1 and was_busy == 0:
                busy_start = t
            if acc[A_STATUS] != 0.0:
                break
        else:
            pos = _pick(fc, fp, ns, out_rate, u - la)
            c = fc[pos]
            nph = _jump(c, fp[pos], jump_cum, uniform(rng, SVC_A))
            if nph >= 0:
                fp[pos] = nph
            else:
                u1 = uniform(rng, SVC_A)
                u2 = uniform(rng, SVC_A)
                left -= _complete(mode, st, fc, fp, fi, acc, pos, t, arr_t, n_arrived, warm, n_arr,
                                  u1, u2, cls_cum, init_cum, busy_start)
    acc[A_TEND] = t
    acc[A_EVENTS] = events
    return acc


@jit
def _fronts_equal(fcA, fpA, nfA, fcB, fpB, nfB):
    if nfA != nfB:
        return False
    for j in range(nfA):
        if fcA[j] != fcB[j] or fpA[j] != fpB[j]:
            return False
    return True


@jit
def simulate_coupled(k, cls_cum, need, init_cum, out_rate, jump_cum, lam, n_arr, warm, runaway, seeds):
    """MSJ (system A) and At-least-k (system B) driven by one arrival stream.

    While the fronts agree and both backs are non-empty the systems are
    merged: one set of service timers and one stream of fresh jobs drives
    both.  Otherwise each system uses its own streams.  Returns the two
    accumulator vectors stacked; the time spent with unequal fronts is in
    ``A_AREA_MISMATCH`` of row 0.
    """
    rng = seeds.copy()
    arr_t = np.empty(n_arr)
    fcA, fpA, fiA, stA, accA = _new_state(k)
    fcB, fpB, fiB, stB, accB = _new_state(k)
    _fill_aux(fcB, fpB, fiB, stB, k, rng, SVC_B, cls_cum, init_cum)
    n_arrived = 0
    t = 0.0
    bsA = 0.0
    bsB = 0.0
    window = warm == 0
    closed = False
    left = n_arr - warm
    events = 0
    while left > 0:
        same = _fronts_equal(fcA, fpA, stA[S_NF], fcB, fpB, stB[S_NF])
        merged = same and n_arrived > stA[S_NEXT] and n_arrived > stB[S_NEXT]
        nsA = _n_in_service(fcA, stA[S_NF], need, k)
        rsA = _service_rate(fcA, fpA, nsA, out_rate)
        if merged:
            nsB = nsA
            rsB = 0.0
        else:
            nsB = _n_in_service(fcB, stB[S_NF], need, k)
            rsB = _service_rate(fcB, fpB, nsB, out_rate)
        la = lam if n_arrived < n_arr else 0.0
        tot = la + rsA + rsB
        dt = expo(rng, CLOCK, tot)
        if window and not closed:
            _accumulate(stA, accA, n_arrived, dt)
            _accumulate(stB, accB, n_arrived, dt)
            if not same:
                accA[A_AREA_MISMATCH] += dt
        t += dt
        events += 1
        u = uniform(rng, CLOCK) * tot
        if u < la:
            idx = n_arrived
            arr_t[idx] = t
            n_arrived += 1
            if idx == warm:
                window = True
            if idx == n_arr - 1:
                closed = True
            open_ = window and not closed
            wbA = stA[S_INBUSY]
            wbB = stB[S_INBUSY]
            _arrive(MSJ, stA, fcA, fpA, fiA, accA, idx, t, k, uniform(rng, SVC_A), uniform(rng, SVC_A),
                    cls_cum, init_cum, open_, runaway)
            _arrive(AK, stB, fcB, fpB, fiB, accB, idx, t, k, 0.0, 0.0, cls_cum, init_cum, open_, runaway)
            if stA[S_INBUSY] == 1 and wbA == 0:
                bsA = t
            if stB[S_INBUSY] == 1 and wbB == 0:
                bsB = t
            if accA[A_STATUS] != 0.0 or accB[A_STATUS] != 0.0:
                accA[A_STATUS] = 1.0
                break
        elif merged:
            pos = _pick(fcA, fpA, nsA, out_rate, u - la)
            nph = _jump(fcA[pos], fpA[pos], jump_cum, uniform(rng, SHARED))
            if nph >= 0:
                fpA[pos] = nph
                fpB[pos] = nph
            else:
                u1 = uniform(rng, SHARED)
                u2 = uniform(rng, SHARED)
                left -= _complete(MSJ, stA, fcA, fpA, fiA, accA, pos, t, arr_t, n_arrived, warm, n_arr,
                                  u1, u2, cls_cum, init_cum, bsA)
                _complete(AK, stB, fcB, fpB, fiB, accB, pos, t, arr_t, n_arrived, warm, n_arr,
                          u1, u2, cls_cum, init_cum, bsB)
        elif u < la + rsA:
            pos = _pick(fcA, fpA, nsA, out_rate, u - la)
            nph = _jump(fcA[pos], fpA[pos], jump_cum, uniform(rng, SVC_A))
            if nph >= 0:
                fpA[pos] = nph
            else:
                u1 = uniform(rng, SVC_A)
                u2 = uniform(rng, SVC_A)
                left -= _complete(MSJ, stA, fcA, fpA, fiA, accA, pos, t, arr_t, n_arrived, warm, n_arr,
                                  u1, u2, cls_cum, init_cum, bsA)
        else:
            pos = _pick(fcB, fpB, nsB, out_rate, u - la - rsA)
            nph = _jump(fcB[pos], fpB[pos], jump_cum, uniform(rng, SVC_B))
            if nph >= 0:
                fpB[pos] = nph
            else:
                u1 = uniform(rng, SVC_B)
                u2 = uniform(rng, SVC_B)
                _complete(AK, stB, fcB, fpB, fiB, accB, pos, t, arr_t, n_arrived, warm, n_arr,
                          u1, u2, cls_cum, init_cum, bsB)
    accA[A_TEND] = t
    accA[A_EVENTS] = events
    accB[A_TEND] = t
    accB[A_EVENTS] = events
    out = np.empty((2, N_ACC))
    out[0, :] = accA
    out[1, :] = accB
    return out


@jit
def simulate_mmsr(indptr, dst, lab, cum, total, start, lam, n_arr, warm, runaway, seeds):
    """M/M/1 whose completions are the ``a = 1`` transitions of a service chain.

    The chain runs regardless of the queue; a completion with an empty
    queue is lost.
    """
    rng = seeds.copy()
    arr_t = np.empty(n_arr)
    acc = np.zeros(N_ACC)
    s = start
    head = 0
    n_arrived = 0
    t = 0.0
    busy_start = 0.0
    in_busy = False
    busy_counted = False
    window = warm == 0
    closed = False
    left = n_arr - warm
    events = 0
    while left > 0:
        la = lam if n_arrived < n_arr else 0.0
        tot = la + total[s]
        dt = expo(rng, CLOCK, tot)
        if window and not closed:
            q = n_arrived - head
            acc[A_AREA_N] += q * dt
            acc[A_AREA_Q] += q * dt
            if q == 0:
                acc[A_AREA_EMPTY] += dt
            acc[A_WLEN] += dt
        t += dt
        events += 1
        u = uniform(rng, CLOCK) * tot
        if u < la:
            idx = n_arrived
            arr_t[idx] = t
            n_arrived += 1
            if idx == warm:
                window = True
            if idx == n_arr - 1:
                closed = True
            if n_arrived - head == 1:
                in_busy = True
                busy_counted = window and not closed
                busy_start = t
            if n_arrived - head > runaway:
                acc[A_STATUS] = 1.0
                break
        else:
            i = _search(cum, indptr[s], indptr[s + 1], uniform(rng, SVC_A))
            s = dst[i]
            if lab[i] == 1 and head < n_arrived:
                if head >= warm and head < n_arr:
                    acc[A_SUMT] += t - arr_t[head]
                    acc[A_NT] += 1.0
                    left -= 1
                head += 1
                if head == n_arrived and in_busy:
                    if busy_counted:
                        acc[A_BUSY_SUM] += t - busy_start
                        acc[A_BUSY_N] += 1.0
                    in_busy = False
    acc[A_TEND] = t
    acc[A_EVENTS] = events
    return acc
