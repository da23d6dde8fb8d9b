"""Wall-clock timing of K distance evaluations per method and set size."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass

import numpy as np

from .. import models as M
from ..core import DomainBox, GroundMetric, WeightedPointSet, seeded_rng
from ..errors import InputError, ParseError
from ..ot import SinkhornConfig, sinkhorn, wasserstein_exact
from .train import TrainConfig, build_model


@dataclass(frozen=True)
class BenchRow:
    method: str
    n: int
    seconds: float


def _method_fn(entry: dict, dim: int):
    """(name, callable(A, B) -> float) for one config entry."""
    kind = entry.get("kind")
    if kind == "sinkhorn":
        eps = float(entry.get("epsilon", 0.01))
        cfg = SinkhornConfig(epsilon=eps, max_iters=int(entry.get("max_iters", 1000)))
        p = entry.get("p", 1)
        return entry.get("name", f"sinkhorn({eps:g})"), lambda A, B: sinkhorn(A, B, p, GroundMetric.L2, cfg).distance
    if kind == "exact":
        p = entry.get("p", 1)
        return entry.get("name", "exact"), lambda A, B: wasserstein_exact(A, B, p).distance
    if kind == "model":
        if "checkpoint" in entry:
            model = M.load_model(entry["checkpoint"])
        else:
            cfg = TrainConfig.from_dict(entry.get("config", {}))
            model = build_model(cfg, dim, seeded_rng(int(entry.get("init_seed", 0))))
        return entry.get("name", model.kind), lambda A, B: float(M.predict(model, [(A, B)])[0])
    raise InputError(f"unknown bench method kind {kind!r}")


def bench(methods: list, sizes, k: int = 500, dim: int = 2, box=(-4.0, 4.0), seed: int = 0) -> list[BenchRow]:
    """Time ``k`` single-pair evaluations of each method at each size.

    Every method sees the same pairs at a given size.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    fns = [_method_fn(m, dim) for m in methods]
    domain = DomainBox.cube(box[0], box[1], dim)
    rows = []
    for n in sizes:
        rng = seeded_rng(seed + int(n))
        pairs = [(WeightedPointSet(domain.sample(rng, int(n))), WeightedPointSet(domain.sample(rng, int(n))))
                 for _ in range(k)]
        for name, fn in fns:
            fn(*pairs[0])  # warm-up: compilation and caches
            t0 = time.perf_counter()
            for A, B in pairs:
                fn(A, B)
            rows.append(BenchRow(name, int(n), time.perf_counter() - t0))
    return rows


def load_bench_config(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    if "methods" not in cfg or "sizes" not in cfg:
        raise InputError("bench config needs 'methods' and 'sizes'")
    return cfg


def run_bench_config(cfg: dict) -> list[BenchRow]:
    return bench(cfg["methods"], cfg["sizes"], int(cfg.get("k", 500)), int(cfg.get("dim", 2)),
                 tuple(cfg.get("box", (-4.0, 4.0))), int(cfg.get("seed", 0)))


def write_bench(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["method", "n", "seconds"])
    for r in rows:
        w.writerow([r.method, r.n, f"{r.seconds:.6f}"])


def per_pair_seconds(rows, method: str, n: int, k: int) -> float:
    for r in rows:
        if r.method == method and r.n == n:
            return r.seconds / k
    raise KeyError((method, n))


def ratio(rows, method: str, n_big: int, n_small: int) -> float:
    by = {(r.method, r.n): r.seconds for r in rows}
    return by[(method, n_big)] / by[(method, n_small)] if by[(method, n_small)] > 0 else np.inf
