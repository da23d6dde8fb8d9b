"""Compiled kernels for the dense transportation simplex.

The basis is a spanning tree over n row nodes (0..n-1) and m column nodes
(n..n+m-1); basic cell k joins row ``bi[k]`` and column ``n + bj[k]``.
"""

import numpy as np
from numba import njit

BLAND = 0
DANTZIG = 1
BLOCK = 2


@njit(cache=True)
def northwest_corner(a, b):
    n, m = a.shape[0], b.shape[0]
    k_total = n + m - 1
    bi = np.empty(k_total, np.int64)
    bj = np.empty(k_total, np.int64)
    flow = np.empty(k_total, np.float64)
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    for k in range(k_total):
        x = min(ra[i], rb[j])
        bi[k] = i
        bj[k] = j
        flow[k] = x
        ra[i] -= x
        rb[j] -= x
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return bi, bj, flow


@njit(cache=True)
def _tree(bi, bj, n, m, cost, u, v, parent, parent_edge, depth):
    """Potentials, parent pointers and depths of the basis tree rooted at row 0."""
    nn = n + m
    k_total = bi.shape[0]
    deg = np.zeros(nn + 1, np.int64)
    for k in range(k_total):
        deg[bi[k] + 1] += 1
        deg[n + bj[k] + 1] += 1
    for x in range(nn):
        deg[x + 1] += deg[x]
    fill = deg[:nn].copy()
    adj_node = np.empty(2 * k_total, np.int64)
    adj_edge = np.empty(2 * k_total, np.int64)
    for k in range(k_total):
        r = bi[k]
        c = n + bj[k]
        adj_node[fill[r]] = c
        adj_edge[fill[r]] = k
        fill[r] += 1
        adj_node[fill[c]] = r
        adj_edge[fill[c]] = k
        fill[c] += 1
    seen = np.zeros(nn, np.bool_)
    queue = np.empty(nn, np.int64)
    queue[0] = 0
    seen[0] = True
    u[0] = 0.0
    parent[0] = -1
    parent_edge[0] = -1
    depth[0] = 0
    head = 0
    tail = 1
    while head < tail:
        x = queue[head]
        head += 1
        for s in range(deg[x], deg[x + 1]):
            y = adj_node[s]
            if seen[y]:
                continue
            seen[y] = True
            k = adj_edge[s]
            if y >= n:
                v[y - n] = cost[bi[k], bj[k]] - u[x]
            else:
                u[y] = cost[bi[k], bj[k]] - v[x - n]
            parent[y] = x
            parent_edge[y] = k
            depth[y] = depth[x] + 1
            queue[tail] = y
            tail += 1
    return tail == nn


@njit(cache=True)
def tree_flows(bi, bj, a, b):
    """Unique flow on a spanning-tree basis meeting marginals ``a`` and ``b``."""
    n, m = a.shape[0], b.shape[0]
    nn = n + m
    k_total = bi.shape[0]
    deg = np.zeros(nn, np.int64)
    for k in range(k_total):
        deg[bi[k]] += 1
        deg[n + bj[k]] += 1
    rest = np.empty(nn, np.float64)
    rest[:n] = a
    rest[n:] = b
    used = np.zeros(k_total, np.bool_)
    flow = np.zeros(k_total, np.float64)
    stack = np.empty(nn, np.int64)
    top = 0
    for x in range(nn):
        if deg[x] == 1:
            stack[top] = x
            top += 1
    remaining = k_total
    while top > 0 and remaining > 0:
        top -= 1
        x = stack[top]
        if deg[x] != 1:
            continue
        e = -1
        for k in range(k_total):
            if not used[k] and (bi[k] == x or n + bj[k] == x):
                e = k
                break
        if e < 0:
            continue
        y = n + bj[e] if bi[e] == x else bi[e]
        flow[e] = rest[x]
        rest[y] -= rest[x]
        rest[x] = 0.0
        used[e] = True
        remaining -= 1
        deg[x] -= 1
        deg[y] -= 1
        if deg[y] == 1:
            stack[top] = y
            top += 1
    return flow


@njit(cache=True)
def _link(h, node, head, nxt, prv):
    nxt[h] = head[node]
    prv[h] = -1
    if head[node] >= 0:
        prv[head[node]] = h
    head[node] = h


@njit(cache=True)
def _unlink(h, node, head, nxt, prv):
    if prv[h] >= 0:
        nxt[prv[h]] = nxt[h]
    else:
        head[node] = nxt[h]
    if nxt[h] >= 0:
        prv[nxt[h]] = prv[h]


@njit(cache=True)
def _far_end(h, n, bi, bj):
    # half-edge 2k sits at row bi[k], 2k+1 at column n+bj[k]
    k = h >> 1
    if h & 1:
        return bi[k]
    return n + bj[k]


@njit(cache=True)
def transport_simplex(a, b, cost, rule, max_iters, tol):
    """Solve min <F, cost> over couplings of ``a`` and ``b``.

    Potentials, parents and depths are updated only on the subtree that the
    leaving edge detaches.  Returns (bi, bj, flow, u, v, iterations, optimal).
    """
    n, m = a.shape[0], b.shape[0]
    bi, bj, flow = northwest_corner(a, b)
    nn = n + m
    k_total = n + m - 1
    u = np.zeros(n, np.float64)
    v = np.zeros(m, np.float64)
    parent = np.empty(nn, np.int64)
    parent_edge = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    _tree(bi, bj, n, m, cost, u, v, parent, parent_edge, depth)
    head = np.full(nn, -1, np.int64)
    nxt = np.full(2 * k_total, -1, np.int64)
    prv = np.full(2 * k_total, -1, np.int64)
    for k in range(k_total):
        _link(2 * k, bi[k], head, nxt, prv)
        _link(2 * k + 1, n + bj[k], head, nxt, prv)
    in_sub = np.zeros(nn, np.bool_)
    sub = np.empty(nn, np.int64)
    path_edges = np.empty(nn, np.int64)
    tail_edges = np.empty(nn, np.int64)
    iters = 0
    optimal = False
    total = n * m
    block = max(int(np.sqrt(total)), 10)
    cursor = 0
    while iters < max_iters:
        ie = -1
        je = -1
        best = -tol
        if rule == BLOCK:
            # scan cells cyclically from the last position, one block at a time
            scanned = 0
            pos = cursor
            while scanned < total:
                stop = min(scanned + block, total)
                while scanned < stop:
                    i = pos // m
                    j = pos - i * m
                    r = cost[i, j] - u[i] - v[j]
                    if r < best:
                        best = r
                        ie = i
                        je = j
                    pos += 1
                    if pos == total:
                        pos = 0
                    scanned += 1
                if ie >= 0:
                    break
            cursor = pos
        else:
            for i in range(n):
                ui = u[i]
                for j in range(m):
                    r = cost[i, j] - ui - v[j]
                    if r < best:
                        ie = i
                        je = j
                        if rule == BLAND:
                            break
                        best = r
                if rule == BLAND and ie >= 0:
                    break
        if ie < 0:
            optimal = True
            break
        iters += 1
        # cycle: entering cell, then tree path from column node to row node
        x = n + je
        y = ie
        nx = 0
        ny = 0
        while depth[x] > depth[y]:
            path_edges[nx] = parent_edge[x]
            nx += 1
            x = parent[x]
        while depth[y] > depth[x]:
            tail_edges[ny] = parent_edge[y]
            ny += 1
            y = parent[y]
        while x != y:
            path_edges[nx] = parent_edge[x]
            nx += 1
            x = parent[x]
            tail_edges[ny] = parent_edge[y]
            ny += 1
            y = parent[y]
        for t in range(ny):
            path_edges[nx + t] = tail_edges[ny - 1 - t]
        plen = nx + ny
        leave = -1
        theta = np.inf
        leave_index = 0
        for t in range(0, plen, 2):
            k = path_edges[t]
            idx = bi[k] * m + bj[k]
            if flow[k] < theta or (flow[k] == theta and idx < leave_index):
                theta = flow[k]
                leave = k
                leave_index = idx
        for t in range(plen):
            k = path_edges[t]
            if t % 2 == 0:
                flow[k] -= theta
            else:
                flow[k] += theta
        # detach the subtree hanging below the leaving edge
        lr = bi[leave]
        lc = n + bj[leave]
        child = lc if parent_edge[lc] == leave else lr
        _unlink(2 * leave, lr, head, nxt, prv)
        _unlink(2 * leave + 1, lc, head, nxt, prv)
        sub[0] = child
        in_sub[child] = True
        size = 1
        s_i = 0
        while s_i < size:
            x = sub[s_i]
            s_i += 1
            h = head[x]
            while h >= 0:
                y = _far_end(h, n, bi, bj)
                if not in_sub[y]:
                    in_sub[y] = True
                    sub[size] = y
                    size += 1
                h = nxt[h]
        rc = cost[ie, je] - u[ie] - v[je]
        if in_sub[ie]:
            q = ie
            other = n + je
            shift = rc
        else:
            q = n + je
            other = ie
            shift = -rc
        for t in range(size):
            x = sub[t]
            if x < n:
                u[x] += shift
            else:
                v[x - n] -= shift
        bi[leave] = ie
        bj[leave] = je
        flow[leave] = theta
        _link(2 * leave, ie, head, nxt, prv)
        _link(2 * leave + 1, n + je, head, nxt, prv)
        # re-root the subtree at q
        for t in range(size):
            in_sub[sub[t]] = False
        parent[q] = other
        parent_edge[q] = leave
        depth[q] = depth[other] + 1
        sub[0] = q
        in_sub[q] = True
        size2 = 1
        s_i = 0
        while s_i < size2:
            x = sub[s_i]
            s_i += 1
            h = head[x]
            while h >= 0:
                y = _far_end(h, n, bi, bj)
                if y != parent[x] and not in_sub[y]:
                    in_sub[y] = True
                    parent[y] = x
                    parent_edge[y] = h >> 1
                    depth[y] = depth[x] + 1
                    sub[size2] = y
                    size2 += 1
                h = nxt[h]
        for t in range(size2):
            in_sub[sub[t]] = False
    return bi, bj, flow, u, v, iters, optimal
