"""Compiled A* over (vertex, heading) states of a lattice roadmap.

States are encoded as ``vertex * 8 + heading``. An edge may be taken from a
state when the edge's facing direction lies within one 45-degree step of the
state's heading; the resulting heading is the edge's facing direction.
"""

import numpy as np
from numba import njit

N_HEADINGS = 8


@njit(cache=True)
def _less(hf, hs, i, j):
    if hf[i] < hf[j]:
        return True
    if hf[i] > hf[j]:
        return False
    return hs[i] < hs[j]


@njit(cache=True)
def _push(hf, hs, size, f, s):
    i = size
    hf[i] = f
    hs[i] = s
    while i > 0:
        p = (i - 1) // 2
        if _less(hf, hs, i, p):
            hf[i], hf[p] = hf[p], hf[i]
            hs[i], hs[p] = hs[p], hs[i]
            i = p
        else:
            break
    return size + 1


@njit(cache=True)
def _pop(hf, hs, size):
    f = hf[0]
    s = hs[0]
    size -= 1
    hf[0] = hf[size]
    hs[0] = hs[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        m = left
        right = left + 1
        if right < size and _less(hf, hs, right, left):
            m = right
        if _less(hf, hs, m, i):
            hf[i], hf[m] = hf[m], hf[i]
            hs[i], hs[m] = hs[m], hs[i]
            i = m
        else:
            break
    return f, s, size


@njit(cache=True)
def astar(
    out_ptr,
    out_edge,
    edge_dst,
    edge_facing,
    edge_reverse,
    edge_cost,
    vx,
    vy,
    start_v,
    start_h,
    goal_v,
    allow_reverse,
    inv_max_speed,
):
    """Minimum-cost edge sequence from (start_v, start_h) to any state at goal_v.

    ``start_h < 0`` means the start heading is unconstrained. Non-finite edge
    costs exclude the edge. Returns ``(edges, cost)``; an unreachable goal
    yields an empty edge array and ``inf``.
    """
    n_states = (out_ptr.shape[0] - 1) * N_HEADINGS
    empty = np.empty(0, dtype=np.int64)
    if start_v == goal_v:
        return empty, 0.0

    g = np.full(n_states, np.inf)
    parent_edge = np.full(n_states, -1, dtype=np.int64)
    parent_state = np.full(n_states, -1, dtype=np.int64)
    closed = np.zeros(n_states, dtype=np.bool_)
    cap = n_states * 16 + N_HEADINGS
    hf = np.empty(cap, dtype=np.float64)
    hs = np.empty(cap, dtype=np.int64)
    size = 0

    gx = vx[goal_v]
    gy = vy[goal_v]
    h0 = np.hypot(vx[start_v] - gx, vy[start_v] - gy) * inv_max_speed
    if start_h < 0:
        for h in range(N_HEADINGS):
            s = start_v * N_HEADINGS + h
            g[s] = 0.0
            size = _push(hf, hs, size, h0, s)
    else:
        s = start_v * N_HEADINGS + start_h
        g[s] = 0.0
        size = _push(hf, hs, size, h0, s)

    found = -1
    while size > 0:
        f, s, size = _pop(hf, hs, size)
        if closed[s]:
            continue
        closed[s] = True
        v = s // N_HEADINGS
        if v == goal_v:
            found = s
            break
        heading = s % N_HEADINGS
        gs = g[s]
        for k in range(out_ptr[v], out_ptr[v + 1]):
            e = out_edge[k]
            if edge_reverse[e] and not allow_reverse:
                continue
            c = edge_cost[e]
            if not np.isfinite(c):
                continue
            fac = edge_facing[e]
            d = (fac - heading) % N_HEADINGS
            if d != 0 and d != 1 and d != N_HEADINGS - 1:
                continue
            u = edge_dst[e]
            ns = u * N_HEADINGS + fac
            if closed[ns]:
                continue
            ng = gs + c
            if ng < g[ns]:
                g[ns] = ng
                parent_edge[ns] = e
                parent_state[ns] = s
                hn = np.hypot(vx[u] - gx, vy[u] - gy) * inv_max_speed
                size = _push(hf, hs, size, ng + hn, ns)

    if found < 0:
        return empty, np.inf

    n = 0
    s = found
    while parent_edge[s] >= 0:
        n += 1
        s = parent_state[s]
    path = np.empty(n, dtype=np.int64)
    s = found
    i = n - 1
    while parent_edge[s] >= 0:
        path[i] = parent_edge[s]
        s = parent_state[s]
        i -= 1
    return path, g[found]
