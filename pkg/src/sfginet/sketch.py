"""Constructive covering-net sketch of weighted point sets.

Sum mode: each point is softly assigned to grid centers through
``exp(-b0 * dist(x, ball(y_i, delta0)))``, normalized per point and pooled
with the point weights.  Decoding places the pooled mass back on the centers.
Max mode pools unnormalized indicators with an elementwise max and decodes to
the centers whose indicator reached one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainBox, GroundMetric, WeightedPointSet, pairwise_distances
from .errors import InputError, ResourceError
from .ot import hausdorff, wasserstein_exact

DEFAULT_CENTER_CAP = 10**6
SHARPNESS_MARGIN = 0.01
MAX_ACTIVE = 1.0 - 1e-9


@dataclass(frozen=True, eq=False)
class CoveringNet:
    centers: np.ndarray
    radius: float
    box: DomainBox
    metric: GroundMetric
    per_axis: tuple

    @property
    def size(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True, eq=False)
class SketchConfig:
    delta: float
    p: float
    delta0: float
    sharpness: float
    net: CoveringNet
    d_max: float
    mode: str = "sum"

    @property
    def a(self) -> int:
        return self.net.size


def _cell_spacing(delta0: float, dim: int, metric: GroundMetric) -> float:
    # largest cube side whose circumradius under ``metric`` is delta0
    if metric is GroundMetric.L2:
        return 2.0 * delta0 / math.sqrt(dim)
    if metric is GroundMetric.L1:
        return 2.0 * delta0 / dim
    return 2.0 * delta0


def build_covering_net(box: DomainBox, delta0: float, metric=GroundMetric.L2,
                       cap: int = DEFAULT_CENTER_CAP) -> CoveringNet:
    if not delta0 > 0:
        raise InputError(f"net radius must be positive, got {delta0}")
    metric = GroundMetric.parse(metric)
    s = _cell_spacing(delta0, box.dim, metric)
    counts = []
    for lo, hi in zip(box.lo, box.hi):
        # guard against (hi - lo)/s landing a hair above an integer
        k = max(1, math.ceil((hi - lo) / s - 1e-12))
        counts.append(k)
    total = math.prod(counts)
    if total > cap:
        raise ResourceError(f"covering net needs {total} centers, cap is {cap}")
    axes = [lo + (np.arange(k) + 0.5) * (hi - lo) / k for lo, hi, k in zip(box.lo, box.hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.reshape(-1) for g in mesh], axis=1)
    centers.setflags(write=False)
    return CoveringNet(centers, float(delta0), box, metric, tuple(counts))


def choose_sharpness(delta0: float, p: float, a: int, d_max: float, margin: float = SHARPNESS_MARGIN) -> float:
    """Smallest admissible b scaled by (1 + margin), so exp(-b*delta0) < delta0^p / (d_max^p * a)."""
    if min(delta0, p, a, d_max) <= 0:
        raise InputError("delta0, p, a and d_max must be positive")
    if not delta0 < d_max:
        raise InputError(f"delta0={delta0} must be below d_max={d_max}")
    log_threshold = p * math.log(delta0 / d_max) - math.log(a)
    if log_threshold >= 0:
        raise InputError("threshold delta0^p/(d_max^p a) >= 1; inequality is vacuous")
    return (1.0 + margin) * (-log_threshold) / delta0


def make_sketch(box: DomainBox, delta: float, p: float = 1, metric=GroundMetric.L2,
                cap: int = DEFAULT_CENTER_CAP) -> SketchConfig:
    """Sum-pooling sketch with net radius delta0 = (delta/2)^(1/p) / 2."""
    if not delta > 0:
        raise InputError("delta must be positive")
    metric = GroundMetric.parse(metric)
    delta0 = 0.5 * (delta / 2.0) ** (1.0 / p)
    net = build_covering_net(box, delta0, metric, cap)
    d_max = box.diameter(metric)
    b0 = choose_sharpness(delta0, p, net.size, d_max)
    return SketchConfig(delta, p, delta0, b0, net, d_max, "sum")


def make_max_sketch(box: DomainBox, radius: float, metric=GroundMetric.L2, sharpness: float = 1.0,
                    cap: int = DEFAULT_CENTER_CAP) -> SketchConfig:
    """Max-pooling sketch for Hausdorff distance; the net radius is used directly."""
    metric = GroundMetric.parse(metric)
    net = build_covering_net(box, radius, metric, cap)
    return SketchConfig(radius, math.inf, radius, sharpness, net, box.diameter(metric), "max")


def _check_in_box(points: np.ndarray, cfg: SketchConfig):
    inside = cfg.net.box.contains(points, tol=1e-9)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise InputError(f"point {bad} lies outside the sketch domain")


def soft_indicators(points: np.ndarray, cfg: SketchConfig) -> np.ndarray:
    """Rows of exp(-b0 * max(0, d(x, y_i) - delta0)) for each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    _check_in_box(pts, cfg)
    dist = pairwise_distances(pts, cfg.net.centers, cfg.net.metric)
    return np.exp(-cfg.sharpness * np.maximum(0.0, dist - cfg.delta0))


def soft_indicator(x, cfg: SketchConfig) -> np.ndarray:
    return soft_indicators(np.asarray(x, dtype=np.float64)[None, :], cfg)[0]


def encode(S: WeightedPointSet, cfg: SketchConfig, mode: str | None = None) -> np.ndarray:
    mode = mode or cfg.mode
    if mode == "max":
        # zero-weight points are not members of the set, matching hausdorff()
        return soft_indicators(S.support(), cfg).max(axis=0)
    if mode != "sum":
        raise InputError(f"unknown pooling mode {mode!r}")
    order = S.canonical_order()
    H = soft_indicators(S.points[order], cfg)
    w = S.weights[order]
    rows = H / H.sum(axis=1, keepdims=True)
    out = np.zeros(cfg.a)
    for k in range(rows.shape[0]):
        out += w[k] * rows[k]
    return out


def decode(v, cfg: SketchConfig, mode: str | None = None) -> WeightedPointSet:
    mode = mode or cfg.mode
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cfg.a,):
        raise InputError(f"expected a vector of length {cfg.a}")
    if np.any(v < 0):
        raise InputError("sketch vector must be nonnegative")
    total = v.sum()
    if not total > 0:
        raise InputError("sketch vector is all zero")
    if mode == "sum":
        keep = v > 0
        return WeightedPointSet(cfg.net.centers[keep], v[keep] / total)
    if mode != "max":
        raise InputError(f"unknown pooling mode {mode!r}")
    active = v >= MAX_ACTIVE
    if not np.any(active):
        raise InputError("no active component in max-mode sketch")
    # weights v_i / ||v||_1 over active components; WeightedPointSet renormalizes
    return WeightedPointSet(cfg.net.centers[active], v[active] / total)


def prune_light_atoms(S: WeightedPointSet, max_mass: float) -> tuple[WeightedPointSet, float]:
    """Drop the lightest atoms whose total mass stays within ``max_mass``.

    Returns the renormalized set and the dropped mass.
    """
    if max_mass <= 0:
        return S, 0.0
    order = np.argsort(S.weights, kind="stable")
    cum = np.cumsum(S.weights[order])
    n_drop = int(np.searchsorted(cum, max_mass, side="right"))
    n_drop = min(n_drop, S.size - 1)
    if n_drop == 0:
        return S, 0.0
    keep = np.sort(order[n_drop:])
    dropped = float(cum[n_drop - 1])
    return WeightedPointSet(S.points[keep], S.weights[keep]), dropped


@dataclass(frozen=True)
class RoundTrip:
    error: float
    pruned_mass: float
    upper_bound: float


def roundtrip(S: WeightedPointSet, cfg: SketchConfig, mode: str | None = None,
              prune_mass: float = 0.0) -> RoundTrip:
    """Distance between S and decode(encode(S)).

    With ``prune_mass > 0`` (sum mode only) the decoded atoms holding at most
    that much total mass are dropped before the exact solve; ``upper_bound``
    then adds the W_p cost of moving the dropped mass, a certified bound on
    the unpruned error.
    """
    mode = mode or cfg.mode
    decoded = decode(encode(S, cfg, mode), cfg, mode)
    if mode == "max":
        err = hausdorff(decoded, S, cfg.net.metric)
        return RoundTrip(err, 0.0, err)
    p = cfg.p
    decoded, dropped = prune_light_atoms(decoded, prune_mass)
    err = wasserstein_exact(decoded, S, p, cfg.net.metric, rule="block").distance
    slack = (dropped * cfg.d_max**p) ** (1.0 / p) if dropped > 0 else 0.0
    return RoundTrip(err, dropped, err + slack)


def roundtrip_error(S: WeightedPointSet, cfg: SketchConfig, mode: str | None = None) -> float:
    return roundtrip(S, cfg, mode).error
