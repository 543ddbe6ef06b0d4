"""Compiled event loops for the protocol and pure-queue simulations.

Each link runs its own generic-slot lattice. Counters (AP instance and
contenders) are stored as slots remaining from the link's anchor time
``ref``. An idle slot lasts ``sigma``; a busy slot lasts the exchange
duration and decrements every counter that did not transmit in it, the
trailing empty slot being part of the exchange time. Runs of idle slots are
skipped in one step, so the loop only visits transmissions, arrivals and
departures.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NEVER = np.int64(1) << np.int64(60)

# trace event codes
EV_ARRIVE = 0
EV_BACKOFF = 1
EV_ALLOCATE = 2
EV_CANCEL = 3
EV_TX = 4
EV_DEPART = 5
EV_COLLISION = 6
EV_BUSY = 7
EV_QUEUE = 8

EVENT_NAMES = ("ARRIVE", "BACKOFF", "ALLOCATE", "CANCEL", "TX", "DEPART",
               "COLLISION", "BUSY", "QUEUE")

# status codes
OK = 0
EVENT_CAP = 1
INVARIANT_BROKEN = 2


@njit(cache=True)
def _window(stage, cw_min):
    return (cw_min + 1) * (1 << stage) - 1


@njit(cache=True)
def _contender_countdown(stage, cw_min, alpha):
    # Slots until the next actual transmission. A declined expiry burns one
    # slot and redraws at the same stage, so the declines collapse into one
    # countdown without changing what the channel sees.
    if alpha <= 0.0:
        return NEVER
    total = np.int64(0)
    w = _window(stage, cw_min)
    while True:
        total += np.random.randint(0, w + 1)
        if alpha >= 1.0 or np.random.random() < alpha:
            return total
        total += 1


@njit(cache=True)
def _anchor(t, ref, l, sigma, busy_until, ap_cnt, ap_pkt, cont_cnt, n_cont, idle_slots):
    # Move link l's anchor to the first slot boundary at or after t.
    if t <= busy_until[l] or t <= ref[l]:
        return
    if ap_pkt[l] < 0:
        silent = True
        for j in range(n_cont):
            if cont_cnt[l, j] < NEVER:
                silent = False
                break
        if silent:
            # nothing counts on this link, so there is no lattice to join
            idle_slots[l] += np.int64((t - ref[l]) / sigma)
            ref[l] = t
            return
    k = np.int64(math.ceil((t - ref[l]) / sigma - 1e-9))
    if k <= 0:
        return
    ref[l] += k * sigma
    idle_slots[l] += k
    if ap_pkt[l] >= 0:
        ap_cnt[l] -= k
    for j in range(n_cont):
        if cont_cnt[l, j] < NEVER:
            cont_cnt[l, j] -= k


@njit(cache=True)
def _draw_ap(stage, cw_min, script_draws, draw_pos):
    if draw_pos[0] < script_draws.shape[0]:
        v = script_draws[draw_pos[0]]
        draw_pos[0] += 1
        return v
    return np.random.randint(0, _window(stage, cw_min) + 1)


@njit(cache=True)
def _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, e, p, v):
    if not trace_on:
        return
    i = tr_n[0]
    if i < tr_t.shape[0]:
        tr_t[i] = t
        tr_l[i] = l
        tr_e[i] = e
        tr_p[i] = p
        tr_v[i] = v
        tr_n[0] = i + 1


@njit(cache=True)
def run_protocol(arrivals, tx_time, n_links, n_cont, alpha, cw_min, m_stages,
                 sigma, t_c, t_s_cont, duration, seed, immediate_access,
                 ext_link, ext_time, ext_dur, script_draws,
                 trace_cap, check, max_events, n_samples):
    """Simulate the multi-link AP plus per-link contenders.

    Returns a tuple of arrays and counters; see ``simulator.run`` for the
    unpacking. Times are seconds. ``arrivals`` must be sorted.
    """
    np.random.seed(seed)
    n_pkt = arrivals.shape[0]
    start = np.full(n_pkt, np.nan)
    depart = np.full(n_pkt, np.nan)
    retries = np.zeros(n_pkt, np.int64)
    via_link = np.full(n_pkt, -1, np.int64)
    was_queued = np.zeros(n_pkt, np.bool_)

    ref = np.zeros(n_links)
    busy_until = np.zeros(n_links)
    ap_pkt = np.full(n_links, -1, np.int64)     # packet owning the AP instance on the link
    ap_cnt = np.zeros(n_links, np.int64)
    ap_stage = np.zeros(n_links, np.int64)
    serving = np.full(n_links, -1, np.int64)    # packet pinned to the link
    pending_dep = np.full(n_links, -1, np.int64)
    dep_time = np.full(n_links, np.inf)
    cont_cnt = np.zeros((n_links, max(n_cont, 1)), np.int64)
    cont_stage = np.zeros((n_links, max(n_cont, 1)), np.int64)
    idle_slots = np.zeros(n_links, np.int64)
    busy_slots = np.zeros(n_links, np.int64)
    cont_tx = np.zeros(n_links, np.int64)
    cont_coll = np.zeros(n_links, np.int64)
    for l in range(n_links):
        for j in range(n_cont):
            cont_cnt[l, j] = _contender_countdown(0, cw_min, alpha)

    queue = np.empty(n_pkt + 1, np.int64)
    q_head = 0
    q_tail = 0
    waiting = -1
    ap_collisions = 0
    max_in_system = 0
    in_system = 0

    sample_t = np.empty(n_samples)
    sample_n = np.empty(n_samples, np.int64)
    s_next = 0
    s_dt = duration / n_samples

    tr_t = np.empty(trace_cap)
    tr_l = np.empty(trace_cap, np.int64)
    tr_e = np.empty(trace_cap, np.int64)
    tr_p = np.empty(trace_cap, np.int64)
    tr_v = np.empty(trace_cap)
    tr_n = np.zeros(1, np.int64)
    trace_on = trace_cap > 0
    draw_pos = np.zeros(1, np.int64)

    n_ext = ext_time.shape[0]
    ext_i = 0
    a_i = 0
    events = 0
    status = OK

    while True:
        # earliest pending event; ties: departure < transmission < external busy < arrival
        t_best = np.inf
        kind = -1
        which = -1
        for l in range(n_links):
            if dep_time[l] < t_best:
                t_best = dep_time[l]
                kind = 0
                which = l
        for l in range(n_links):
            c = NEVER
            if ap_pkt[l] >= 0 and (serving[l] < 0 or pending_dep[l] < 0):
                c = ap_cnt[l]
            for j in range(n_cont):
                if cont_cnt[l, j] < c:
                    c = cont_cnt[l, j]
            if c < NEVER:
                tt = ref[l] + c * sigma
                if tt < t_best:
                    t_best = tt
                    kind = 1
                    which = l
        if ext_i < n_ext and ext_time[ext_i] < t_best:
            t_best = ext_time[ext_i]
            kind = 2
            which = ext_link[ext_i]
        if a_i < n_pkt and arrivals[a_i] < t_best:
            t_best = arrivals[a_i]
            kind = 3
            which = a_i
        if kind < 0 or t_best >= duration:
            break
        while s_next < n_samples and s_next * s_dt <= t_best:
            sample_t[s_next] = s_next * s_dt
            sample_n[s_next] = in_system
            s_next += 1
        events += 1
        if events > max_events:
            status = EVENT_CAP
            break
        t = t_best

        if kind == 0:
            l = which
            p = pending_dep[l]
            depart[p] = t
            pending_dep[l] = -1
            dep_time[l] = np.inf
            serving[l] = -1
            ap_pkt[l] = -1
            in_system -= 1
            _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_DEPART, p, 0.0)
            if q_head < q_tail:
                nxt = queue[q_head]
                q_head += 1
                serving[l] = nxt
                ap_pkt[l] = nxt
                ap_stage[l] = 0
                ap_cnt[l] = _draw_ap(0, cw_min, script_draws, draw_pos)
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_ALLOCATE, nxt, 0.0)
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_BACKOFF, nxt, ap_cnt[l])
            elif waiting >= 0:
                ap_pkt[l] = waiting
                ap_stage[l] = 0
                ap_cnt[l] = _draw_ap(0, cw_min, script_draws, draw_pos)
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_BACKOFF, waiting, ap_cnt[l])

        elif kind == 1:
            l = which
            cmin = NEVER
            ap_active = ap_pkt[l] >= 0 and (serving[l] < 0 or pending_dep[l] < 0)
            if ap_active:
                cmin = ap_cnt[l]
            for j in range(n_cont):
                if cont_cnt[l, j] < cmin:
                    cmin = cont_cnt[l, j]
            idle_slots[l] += cmin
            busy_slots[l] += 1
            if ap_active:
                ap_cnt[l] -= cmin
            n_tx = 0
            for j in range(n_cont):
                if cont_cnt[l, j] < NEVER:
                    cont_cnt[l, j] -= cmin
                    if cont_cnt[l, j] == 0:
                        n_tx += 1
            ap_tx = ap_active and ap_cnt[l] == 0
            p = ap_pkt[l]
            if ap_tx:
                n_tx += 1
                if serving[l] < 0:
                    # a waiting packet's instance fired: it leaves the buffer on this link
                    serving[l] = p
                    waiting = -1
                    _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_ALLOCATE, p, 0.0)
                    for o in range(n_links):
                        if o != l and serving[o] < 0 and ap_pkt[o] == p:
                            ap_pkt[o] = -1
                            _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, o, EV_CANCEL, p, 0.0)
                if math.isnan(start[p]):
                    start[p] = t
                    via_link[p] = l
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_TX, p, 0.0)
            cont_tx[l] += n_tx - (1 if ap_tx else 0)
            if n_tx == 1:
                dur = tx_time[p] if ap_tx else t_s_cont
            else:
                dur = t_c
            if not ap_tx:
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_BUSY, -1, dur)
            end = t + dur
            # contenders: transmitters redraw, everyone else loses one slot to the busy period
            for j in range(n_cont):
                if cont_cnt[l, j] == 0:
                    if n_tx > 1:
                        cont_coll[l] += 1
                        if cont_stage[l, j] < m_stages:
                            cont_stage[l, j] += 1
                    else:
                        cont_stage[l, j] = 0
                    cont_cnt[l, j] = _contender_countdown(cont_stage[l, j], cw_min, alpha)
                elif cont_cnt[l, j] < NEVER:
                    cont_cnt[l, j] -= 1
            if ap_tx:
                if n_tx == 1:
                    pending_dep[l] = p
                    dep_time[l] = end
                else:
                    ap_collisions += 1
                    retries[p] += 1
                    _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_COLLISION, p, 0.0)
                    if ap_stage[l] < m_stages:
                        ap_stage[l] += 1
                    ap_cnt[l] = _draw_ap(ap_stage[l], cw_min, script_draws, draw_pos)
            elif ap_active:
                ap_cnt[l] -= 1
            ref[l] = end
            busy_until[l] = end

        elif kind == 2:
            l = which
            dur = ext_dur[ext_i]
            ext_i += 1
            if t < busy_until[l]:
                t = busy_until[l]
            _anchor(t, ref, l, sigma, busy_until, ap_cnt, ap_pkt, cont_cnt, n_cont, idle_slots)
            t = ref[l] if ref[l] > t else t
            _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_BUSY, -1, dur)
            busy_slots[l] += 1
            # scripted busy periods take the slot; a counter already at zero defers past it
            ap_active = ap_pkt[l] >= 0 and (serving[l] < 0 or pending_dep[l] < 0)
            if ap_active and ap_cnt[l] > 0:
                ap_cnt[l] -= 1
            for j in range(n_cont):
                if 0 < cont_cnt[l, j] < NEVER:
                    cont_cnt[l, j] -= 1
            ref[l] = t + dur
            busy_until[l] = t + dur

        else:
            p = which
            a_i += 1
            in_system += 1
            if in_system > max_in_system:
                max_in_system = in_system
            _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, -1, EV_ARRIVE, p, 0.0)
            freed_any = False
            if waiting >= 0:
                # pin the waiting packet to its closest-to-expire instance
                best = -1
                best_t = np.inf
                for l in range(n_links):
                    if serving[l] < 0 and ap_pkt[l] == waiting:
                        tt = ref[l] + ap_cnt[l] * sigma
                        if tt < best_t:
                            best_t = tt
                            best = l
                serving[best] = waiting
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, best, EV_ALLOCATE, waiting, 0.0)
                for l in range(n_links):
                    if l != best and serving[l] < 0 and ap_pkt[l] == waiting:
                        ap_pkt[l] = -1
                        _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_CANCEL, waiting, 0.0)
                waiting = -1
            for l in range(n_links):
                if serving[l] < 0:
                    freed_any = True
                    _anchor(t, ref, l, sigma, busy_until, ap_cnt, ap_pkt, cont_cnt, n_cont, idle_slots)
                    ap_pkt[l] = p
                    ap_stage[l] = 0
                    if immediate_access and t >= busy_until[l]:
                        ap_cnt[l] = 0
                    else:
                        ap_cnt[l] = _draw_ap(0, cw_min, script_draws, draw_pos)
                    _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, l, EV_BACKOFF, p, ap_cnt[l])
            if freed_any:
                waiting = p
            else:
                queue[q_tail] = p
                q_tail += 1
                was_queued[p] = True
                _log(trace_on, tr_t, tr_l, tr_e, tr_p, tr_v, tr_n, t, -1, EV_QUEUE, p, 0.0)

        if check:
            # waiting packet holds one instance per link not serving anyone;
            # each serving packet holds exactly its own link
            n_serving = 0
            for l in range(n_links):
                if serving[l] >= 0:
                    n_serving += 1
                    if ap_pkt[l] != serving[l]:
                        status = INVARIANT_BROKEN
                    for o in range(n_links):
                        if o != l and serving[o] == serving[l]:
                            status = INVARIANT_BROKEN
                elif waiting >= 0:
                    if ap_pkt[l] != waiting:
                        status = INVARIANT_BROKEN
                elif ap_pkt[l] >= 0:
                    status = INVARIANT_BROKEN
            if q_tail > q_head and n_serving < n_links:
                status = INVARIANT_BROKEN
            if waiting >= 0 and n_serving == n_links:
                status = INVARIANT_BROKEN
            in_buffer = (q_tail - q_head) + (1 if waiting >= 0 else 0)
            if in_buffer + n_serving != in_system:
                status = INVARIANT_BROKEN
            if status != OK:
                break

    while s_next < n_samples:
        sample_t[s_next] = s_next * s_dt
        sample_n[s_next] = in_system
        s_next += 1

    n_serving = 0
    for l in range(n_links):
        if serving[l] >= 0:
            n_serving += 1
    n_queued = (q_tail - q_head) + (1 if waiting >= 0 else 0)
    k = tr_n[0]
    return (start, depart, retries, via_link, was_queued, a_i, n_queued, n_serving,
            ap_collisions, max_in_system, idle_slots, busy_slots, cont_tx, cont_coll,
            sample_t, sample_n, tr_t[:k], tr_l[:k], tr_e[:k], tr_p[:k], tr_v[:k],
            status, events)


@njit(cache=True)
def run_pure_queue(arrivals, n_servers, mean_service, seed):
    """FIFO M/M/S: returns (start, departure) per packet."""
    np.random.seed(seed)
    n = arrivals.shape[0]
    free_at = np.zeros(n_servers)
    start = np.empty(n)
    depart = np.empty(n)
    for i in range(n):
        k = 0
        for s in range(1, n_servers):
            if free_at[s] < free_at[k]:
                k = s
        st = arrivals[i] if arrivals[i] > free_at[k] else free_at[k]
        start[i] = st
        depart[i] = st + np.random.exponential(mean_service)
        free_at[k] = depart[i]
    return start, depart
