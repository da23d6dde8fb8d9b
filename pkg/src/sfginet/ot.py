"""Ground-truth transport distances.

``wasserstein_exact`` runs a transportation simplex on the cost ``D**p``:
north-west corner start on geometrically sorted rows/columns, block-search
pricing, and a rerun under Bland's rule if the pivot budget is ever exhausted.  ``wasserstein_bruteforce``
enumerates every spanning-tree basis and is only meant as a test oracle.
Sinkhorn runs entirely in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _simplex
from .core import GroundMetric, WeightedPointSet, distance_matrix
from .errors import InputError

PERTURBATION = 1e-12
BRUTEFORCE_MAX_CELLS = 20


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray

    def marginal_violation(self) -> float:
        return float(
            np.abs(self.plan.sum(axis=1) - self.row_marginals).sum()
            + np.abs(self.plan.sum(axis=0) - self.col_marginals).sum()
        )


@dataclass(frozen=True)
class OtResult:
    distance: float
    plan: TransportPlan
    iterations: int
    converged: bool
    cost: float = 0.0
    duals: tuple | None = field(default=None, repr=False)


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.1
    max_iters: int = 1000
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.marginal_tol > 0:
            raise InputError("marginal_tol must be positive")


def _check_pair(P: WeightedPointSet, Q: WeightedPointSet, p: float):
    if P.dim != Q.dim:
        raise InputError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if p < 1:
        raise InputError(f"p must be >= 1, got {p}")


def _result(plan: np.ndarray, cost_p: np.ndarray, P, Q, p, iterations, converged, duals=None):
    value = float(np.sum(plan * cost_p))
    value = max(value, 0.0)
    return OtResult(
        distance=value ** (1.0 / p),
        plan=TransportPlan(plan, np.asarray(P.weights), np.asarray(Q.weights)),
        iterations=iterations,
        converged=converged,
        cost=value,
        duals=duals,
    )


def _perturbed_rows(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    n = a.shape[0]
    if n == 1:
        return a
    bump = PERTURBATION * np.arange(1, n + 1, dtype=np.float64)
    sink = int(np.argmax(a))
    bump[sink] = 0.0
    a += bump
    a[sink] -= bump.sum()
    return a


def transport_lp(a: np.ndarray, b: np.ndarray, cost: np.ndarray, rule: str = "block",
                 max_iters: int | None = None, row_order=None, col_order=None):
    """Exact transportation simplex on raw marginals and cost matrix.

    ``row_order``/``col_order`` permute rows and columns before the
    north-west-corner start (a geometric sort gives a far better start);
    results are reported in the original order.
    Returns ``(plan, u, v, iterations, optimal)``; ``u``/``v`` are the dual
    potentials of the final basis.
    """
    if row_order is not None or col_order is not None:
        ro = np.arange(len(a)) if row_order is None else np.asarray(row_order)
        co = np.arange(len(b)) if col_order is None else np.asarray(col_order)
        plan_s, u_s, v_s, iters, optimal = transport_lp(
            np.asarray(a)[ro], np.asarray(b)[co], np.asarray(cost)[np.ix_(ro, co)], rule, max_iters
        )
        plan = np.empty_like(plan_s)
        plan[np.ix_(ro, co)] = plan_s
        u = np.empty_like(u_s)
        v = np.empty_like(v_s)
        u[ro] = u_s
        v[co] = v_s
        return plan, u, v, iters, optimal
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    rule_id = {"bland": _simplex.BLAND, "dantzig": _simplex.DANTZIG, "block": _simplex.BLOCK}.get(rule)
    if rule_id is None:
        raise InputError(f"unknown pivot rule {rule!r}")
    default_budget = 50 * n * m + 1000
    if max_iters is None:
        max_iters = default_budget
    scale = max(1.0, float(np.max(np.abs(cost)))) if cost.size else 1.0
    tol = 1e-11 * scale
    a_pert = _perturbed_rows(a)
    bi, bj, _, u, v, iters, optimal = _simplex.transport_simplex(a_pert, b, cost, rule_id, max_iters, tol)
    if not optimal and rule_id != _simplex.BLAND:
        bi, bj, _, u, v, more, optimal = _simplex.transport_simplex(
            a_pert, b, cost, _simplex.BLAND, max(max_iters, default_budget), tol
        )
        iters += more
    flow = _simplex.tree_flows(bi, bj, a, b)
    plan = np.zeros((n, m))
    np.add.at(plan, (bi, bj), np.maximum(flow, 0.0))
    return plan, u, v, int(iters), bool(optimal)


def wasserstein_exact(P: WeightedPointSet, Q: WeightedPointSet, p: float = 1,
                      metric=GroundMetric.L2, rule: str = "block") -> OtResult:
    _check_pair(P, Q, p)
    cost_p = distance_matrix(P, Q, metric) ** p
    plan, u, v, iters, optimal = transport_lp(
        P.weights, Q.weights, cost_p, rule=rule,
        row_order=_sweep_order(P.points), col_order=_sweep_order(Q.points),
    )
    return _result(plan, cost_p, P, Q, p, iters, optimal, duals=(u, v))


def _sweep_order(points: np.ndarray) -> np.ndarray:
    return np.lexsort(points.T[::-1])


def _enumerate_trees(n: int, m: int):
    """Yield every set of n+m-1 cells whose bipartite graph is a spanning tree."""
    cells = [(i, j) for i in range(n) for j in range(m)]
    need = n + m - 1
    parent = list(range(n + m))

    def find(x, par):
        while par[x] != x:
            x = par[x]
        return x

    chosen: list[int] = []

    def rec(start: int, par: list[int]):
        if len(chosen) == need:
            yield tuple(chosen)
            return
        if len(cells) - start < need - len(chosen):
            return
        for idx in range(start, len(cells)):
            if len(cells) - idx < need - len(chosen):
                break
            i, j = cells[idx]
            ri, rj = find(i, par), find(n + j, par)
            if ri == rj:
                continue
            new_par = par.copy()
            new_par[ri] = rj
            chosen.append(idx)
            yield from rec(idx + 1, new_par)
            chosen.pop()

    yield from rec(0, parent)


def _tree_solution(cells, n, m, a, b):
    rest = np.concatenate([a, b]).astype(np.float64)
    edges = [(i, n + j) for i, j in cells]
    flows = [0.0] * len(edges)
    alive = set(range(len(edges)))
    deg = [0] * (n + m)
    for x, y in edges:
        deg[x] += 1
        deg[y] += 1
    while alive:
        for k in list(alive):
            x, y = edges[k]
            leaf = x if deg[x] == 1 else (y if deg[y] == 1 else None)
            if leaf is None:
                continue
            other = y if leaf == x else x
            flows[k] = rest[leaf]
            rest[other] -= rest[leaf]
            rest[leaf] = 0.0
            deg[x] -= 1
            deg[y] -= 1
            alive.discard(k)
    return flows


def wasserstein_bruteforce(P: WeightedPointSet, Q: WeightedPointSet, p: float = 1,
                           metric=GroundMetric.L2) -> OtResult:
    """Minimum over all basic feasible solutions; n*m must not exceed 20."""
    _check_pair(P, Q, p)
    n, m = P.size, Q.size
    if n * m > BRUTEFORCE_MAX_CELLS:
        raise InputError(f"brute force limited to n*m <= {BRUTEFORCE_MAX_CELLS}, got {n * m}")
    cost_p = distance_matrix(P, Q, metric) ** p
    a, b = np.asarray(P.weights), np.asarray(Q.weights)
    cells_all = [(i, j) for i in range(n) for j in range(m)]
    best_val = math.inf
    best_plan = None
    count = 0
    for subset in _enumerate_trees(n, m):
        count += 1
        cells = [cells_all[k] for k in subset]
        flows = _tree_solution(cells, n, m, a, b)
        if min(flows) < -1e-12:
            continue
        val = sum(f * cost_p[i, j] for f, (i, j) in zip(flows, cells))
        if val < best_val:
            best_val = val
            best_plan = np.zeros((n, m))
            for f, (i, j) in zip(flows, cells):
                best_plan[i, j] += max(f, 0.0)
    return _result(best_plan, cost_p, P, Q, p, count, True)


def _log_weights(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def sinkhorn_potentials(a, b, cost, cfg: SinkhornConfig, symmetric: bool = False):
    """Log-domain Sinkhorn on marginals ``a``, ``b`` and cost matrix.

    Returns (f, g, iterations, converged, violation) where the plan is
    ``a_i b_j exp((f_i + g_j - C_ij) / eps)``.
    """
    eps = cfg.epsilon
    log_a, log_b = _log_weights(a), _log_weights(b)
    n, m = cost.shape
    f = np.zeros(n)
    g = np.zeros(m)
    scaled = cost / eps
    converged = False
    violation = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        f_new = -eps * logsumexp(log_b[None, :] + g[None, :] / eps - scaled, axis=1)
        if symmetric:
            f = 0.5 * (f + f_new)
            g = f
        else:
            f = f_new
            g = -eps * logsumexp(log_a[:, None] + f[:, None] / eps - scaled, axis=0)
        log_plan = log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :]) / eps - scaled
        plan = np.exp(log_plan)
        violation = np.abs(plan.sum(axis=1) - a).sum() + np.abs(plan.sum(axis=0) - b).sum()
        if violation < cfg.marginal_tol:
            converged = True
            break
    return f, g, it, converged, float(violation)


def _sinkhorn_plan(a, b, cost, f, g, eps):
    log_a, log_b = _log_weights(a), _log_weights(b)
    return np.exp(log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - cost) / eps)


def round_to_coupling(F: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Nearby plan with marginals exactly ``a`` and ``b``.

    Rows then columns are scaled down to fit under their marginals, and the
    leftover mass is restored by a rank-one term.  The change in L1 is at most
    twice the marginal violation, and feasibility keeps the transport cost
    above the exact optimum.
    """
    r = F.sum(axis=1)
    x = np.minimum(1.0, np.divide(a, r, out=np.ones_like(r), where=r > 0))
    F = F * x[:, None]
    c = F.sum(axis=0)
    y = np.minimum(1.0, np.divide(b, c, out=np.ones_like(c), where=c > 0))
    F = F * y[None, :]
    ea = np.maximum(a - F.sum(axis=1), 0.0)
    eb = np.maximum(b - F.sum(axis=0), 0.0)
    total = ea.sum()
    if total > 0:
        F = F + np.outer(ea, eb) / total
    return F


def sinkhorn(P: WeightedPointSet, Q: WeightedPointSet, p: float = 1, metric=GroundMetric.L2,
             cfg: SinkhornConfig | None = None) -> OtResult:
    """Entropic plan by log-domain Sinkhorn; ``distance`` is its sharp transport cost.

    The plan is rounded onto the exact marginals before its cost is taken.
    """
    cfg = cfg or SinkhornConfig()
    _check_pair(P, Q, p)
    cost_p = distance_matrix(P, Q, metric) ** p
    a, b = np.asarray(P.weights), np.asarray(Q.weights)
    f, g, iters, converged, _ = sinkhorn_potentials(a, b, cost_p, cfg)
    plan = round_to_coupling(_sinkhorn_plan(a, b, cost_p, f, g, cfg.epsilon), a, b)
    return _result(plan, cost_p, P, Q, p, iters, converged, duals=(f, g))


def entropic_ot(a, b, cost, cfg: SinkhornConfig, symmetric: bool = False) -> float:
    """Regularized objective <P, C> + eps * KL(P | a x b) via its dual at the fixed point."""
    f, g, _, _, _ = sinkhorn_potentials(a, b, cost, cfg, symmetric=symmetric)
    return float(np.dot(a, f) + np.dot(b, g))


def sinkhorn_divergence(P: WeightedPointSet, Q: WeightedPointSet, p: float = 1,
                        metric=GroundMetric.L2, cfg: SinkhornConfig | None = None) -> float:
    """Debiased S_eps(P, Q) = OT_eps(P, Q) - OT_eps(P, P)/2 - OT_eps(Q, Q)/2."""
    cfg = cfg or SinkhornConfig()
    _check_pair(P, Q, p)
    a, b = np.asarray(P.weights), np.asarray(Q.weights)
    c_pq = distance_matrix(P, Q, metric) ** p
    c_pp = distance_matrix(P, P, metric) ** p
    c_qq = distance_matrix(Q, Q, metric) ** p
    pq = entropic_ot(a, b, c_pq, cfg)
    pp = entropic_ot(a, a, c_pp, cfg, symmetric=True)
    qq = entropic_ot(b, b, c_qq, cfg, symmetric=True)
    return pq - 0.5 * pp - 0.5 * qq


def directed_hausdorff(X: np.ndarray, Y: np.ndarray, metric=GroundMetric.L2) -> float:
    from .core import pairwise_distances

    return float(pairwise_distances(X, Y, metric).min(axis=1).max())


def hausdorff(P: WeightedPointSet, Q: WeightedPointSet, metric=GroundMetric.L2) -> float:
    """Hausdorff distance between the positive-weight supports."""
    if P.dim != Q.dim:
        raise InputError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    X, Y = P.support(), Q.support()
    if len(X) == 0 or len(Y) == 0:
        raise InputError("empty support")
    return max(directed_hausdorff(X, Y, metric), directed_hausdorff(Y, X, metric))
