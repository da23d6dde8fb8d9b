"""Empirical check of the covering-net sketch round-trip bounds."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from ..core import DomainBox, WeightedPointSet, seeded_rng
from ..errors import InputError, ParseError
from ..sketch import make_max_sketch, make_sketch, roundtrip

DEFAULTS = {
    "dim": 3,
    "box": [-1.0, 1.0],
    "p": 1,
    "metric": "L2",
    "deltas": [0.8, 0.4],
    "n_sets": 500,
    "size_range": [5, 200],
    "modes": ["sum", "max"],
    "prune_mass": 1e-4,
    "seed": 0,
}


@dataclass(frozen=True)
class SketchRow:
    set_id: int
    mode: str
    delta: float
    a: int
    b0: float
    roundtrip_error: float
    pruned_mass: float
    upper_bound: float

    @property
    def within(self) -> bool:
        return self.upper_bound < self.delta


def random_weighted_sets(n_sets: int, size_range, box: DomainBox, rng: np.random.Generator):
    lo, hi = size_range
    out = []
    for _ in range(n_sets):
        n = int(rng.integers(lo, hi + 1))
        out.append(WeightedPointSet(box.sample(rng, n), rng.random(n) + 1e-3))
    return out


def verify(cfg: dict) -> list[SketchRow]:
    """Round-trip every random set through each sketch.

    In sum mode ``delta`` is the W_p budget; in max mode it is the net radius
    and the Hausdorff error is compared with it.
    """
    cfg = {**DEFAULTS, **cfg}
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise InputError(f"unknown sketch-verify fields: {sorted(unknown)}")
    box = DomainBox.cube(cfg["box"][0], cfg["box"][1], int(cfg["dim"]))
    sets = random_weighted_sets(int(cfg["n_sets"]), cfg["size_range"], box, seeded_rng(int(cfg["seed"])))
    rows = []
    for mode in cfg["modes"]:
        for delta in cfg["deltas"]:
            if mode == "sum":
                sk = make_sketch(box, float(delta), cfg["p"], cfg["metric"])
            elif mode == "max":
                sk = make_max_sketch(box, float(delta), cfg["metric"])
            else:
                raise InputError(f"unknown mode {mode!r}")
            prune = float(cfg["prune_mass"]) if mode == "sum" else 0.0
            for sid, S in enumerate(sets):
                rt = roundtrip(S, sk, mode, prune_mass=prune)
                rows.append(SketchRow(sid, mode, float(delta), sk.a, sk.sharpness, rt.error, rt.pruned_mass,
                                      rt.upper_bound))
    return rows


def load_sketch_config(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc


def write_rows(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set_id", "mode", "delta", "a", "b0", "roundtrip_error", "pruned_mass", "upper_bound",
                    "within_bound"])
        for r in rows:
            w.writerow([r.set_id, r.mode, format(r.delta, "g"), r.a, format(r.b0, ".17g"),
                        format(r.roundtrip_error, ".17g"), format(r.pruned_mass, ".17g"),
                        format(r.upper_bound, ".17g"), int(r.within)])
