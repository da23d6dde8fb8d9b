"""Weighted point sets, ground metrics and seeded randomness."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InputError

WEIGHT_TOL = 1e-9
DEFAULT_N_MAX = 1 << 20


class GroundMetric(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    LINF = "Linf"

    @classmethod
    def parse(cls, value: "GroundMetric | str") -> "GroundMetric":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise InputError(f"unknown ground metric {value!r}")


def _norm(diff: np.ndarray, metric: GroundMetric) -> np.ndarray:
    if metric is GroundMetric.L2:
        # scale first so tiny nonzero differences do not underflow to 0
        scale = np.max(np.abs(diff), axis=-1, keepdims=True)
        unit = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
        return scale[..., 0] * np.sqrt(np.sum(unit * unit, axis=-1))
    if metric is GroundMetric.L1:
        return np.sum(np.abs(diff), axis=-1)
    return np.max(np.abs(diff), axis=-1)


def ground_dist(metric: GroundMetric | str, x, y) -> float:
    metric = GroundMetric.parse(metric)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(_norm(x - y, metric))


@dataclass(frozen=True, eq=False)
class WeightedPointSet:
    """A finite point set in R^d with nonnegative weights summing to one.

    Weights are renormalized on construction; the arrays are made read-only.
    """

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None, *, n_max: int = DEFAULT_N_MAX):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point coordinates must be finite")
        n = pts.shape[0]
        if n > n_max:
            raise InputError(f"set has {n} points, more than N_max={n_max}")
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != n:
                raise InputError(f"{n} points but {w.shape[0]} weights")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InputError("weights must be finite and nonnegative")
            total = w.sum()
            if total <= 0:
                raise InputError("weights sum to zero")
            if abs(total - 1.0) > WEIGHT_TOL:
                w = w / total
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points, **kwargs) -> "WeightedPointSet":
        return cls(points, None, **kwargs)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.size

    def support(self) -> np.ndarray:
        """Points carrying positive weight."""
        return self.points[self.weights > 0]

    def canonical_order(self) -> np.ndarray:
        """Index order sorting (coords..., weight) lexicographically."""
        keys = [self.weights] + [self.points[:, j] for j in range(self.dim - 1, -1, -1)]
        return np.lexsort(keys)

    def same_as(self, other: "WeightedPointSet") -> bool:
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self) -> str:
        return f"WeightedPointSet(n={self.size}, d={self.dim})"


@dataclass(frozen=True)
class DomainBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise InputError("box bounds must have equal nonzero length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise InputError(f"degenerate box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "DomainBox":
        return cls((lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def diameter(self, metric: GroundMetric | str = GroundMetric.L2) -> float:
        return ground_dist(metric, np.array(self.lo), np.array(self.hi))

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.all((pts >= lo - tol) & (pts <= hi + tol), axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(np.array(self.lo), np.array(self.hi), size=(n, self.dim))


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for a 64-bit seed."""
    if seed < 0 or seed >= 2**64:
        raise InputError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def distance_matrix(P: WeightedPointSet, Q: WeightedPointSet, metric=GroundMetric.L2) -> np.ndarray:
    return pairwise_distances(P.points, Q.points, metric)


def pairwise_distances(X: np.ndarray, Y: np.ndarray, metric=GroundMetric.L2) -> np.ndarray:
    metric = GroundMetric.parse(metric)
    if X.shape[-1] != Y.shape[-1]:
        raise InputError(f"dimension mismatch: {X.shape[-1]} vs {Y.shape[-1]}")
    return _norm(X[:, None, :] - Y[None, :, :], metric)


def pad_with_zero_weight(S: WeightedPointSet, target_size: int) -> WeightedPointSet:
    """Append copies of the first point at weight zero up to ``target_size``."""
    if target_size < S.size:
        raise InputError(f"target size {target_size} below set size {S.size}")
    if target_size == S.size:
        return S
    extra = target_size - S.size
    pts = np.vstack([S.points, np.repeat(S.points[:1], extra, axis=0)])
    w = np.concatenate([S.weights, np.zeros(extra)])
    return WeightedPointSet(pts, w)
