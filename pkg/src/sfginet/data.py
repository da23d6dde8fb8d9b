"""Synthetic point-set datasets, ground-truth labels and their on-disk format.

A dataset file is one JSON header line followed by two CSV sections::

    {"version": "1", ...}
    SETS
    set_id,point_idx,weight,c1,...,cd
    ...
    PAIRS
    pair_id,set_a,set_b,label,label_kind,solver
    ...

The first ``n_train`` pairs are the training split, the rest validation.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import DomainBox, GroundMetric, WeightedPointSet, seeded_rng
from .errors import InputError, ParseError, SfgiError, VersionError
from .ot import SinkhornConfig, sinkhorn, wasserstein_exact

FORMAT_VERSION = "1"
EXACT_CUTOFF = 600
LABEL_EPSILON = 0.01
GENERATORS = ("uniform_box", "noisy_sphere")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    dim: int
    size_range: tuple
    n_train_pairs: int
    n_val_pairs: int
    generator: str = "uniform_box"
    box: tuple = (-4.0, 4.0)
    radii: tuple = (0.25, 0.5, 0.75, 1.0)
    noise_sigma: float = 0.05
    seed: int = 0
    p: int = 1
    exact_cutoff: int = EXACT_CUTOFF
    sinkhorn_eps: float = LABEL_EPSILON
    # sets drawn per split; None means one set per pair (at least two)
    n_train_sets: int | None = None
    n_val_sets: int | None = None
    unseen_ranges: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "size_range", tuple(int(x) for x in self.size_range))
        object.__setattr__(self, "box", tuple(float(x) for x in self.box))
        object.__setattr__(self, "radii", tuple(float(x) for x in self.radii))
        object.__setattr__(self, "unseen_ranges", tuple(tuple(int(x) for x in r) for r in self.unseen_ranges))
        lo, hi = self.size_range
        if not 1 <= lo <= hi:
            raise InputError(f"size_range must satisfy 1 <= min <= max, got {self.size_range}")
        if self.dim < 1 or self.n_train_pairs < 1 or self.n_val_pairs < 1:
            raise InputError("dim and pair counts must be >= 1")
        if self.generator not in GENERATORS:
            raise InputError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.p not in (1, 2):
            raise InputError(f"labels support p in (1, 2), got {self.p}")
        if any(n is not None and n < 2 for n in (self.n_train_sets, self.n_val_sets)):
            raise InputError("each split needs at least two sets")
        if self.noise_sigma < 0 or not self.radii:
            raise InputError("noise_sigma must be >= 0 and radii nonempty")

    @property
    def label_kind(self) -> str:
        return f"W{self.p}"

    def sets_for(self, split: str) -> int:
        if split == "train":
            return self.n_train_sets or max(2, self.n_train_pairs)
        return self.n_val_sets or max(2, self.n_val_pairs)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("size_range", "box", "radii"):
            d[key] = list(d[key])
        d["unseen_ranges"] = [list(r) for r in self.unseen_ranges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown dataset spec fields: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "uniform": DatasetSpec("uniform", 2, (256, 256), 3000, 300, "uniform_box"),
    "noisy-sphere-3": DatasetSpec("noisy-sphere-3", 3, (100, 300), 2000, 200, "noisy_sphere",
                                  box=(-1.5, 1.5), unseen_ranges=((300, 500), (400, 600))),
    "noisy-sphere-6": DatasetSpec("noisy-sphere-6", 6, (100, 300), 3600, 400, "noisy_sphere",
                                  box=(-1.5, 1.5), unseen_ranges=((300, 500), (400, 600))),
    "small": DatasetSpec("small", 3, (20, 200), 3000, 300, "uniform_box", box=(-1.0, 1.0)),
    "toy": DatasetSpec("toy", 2, (8, 16), 50, 10, "uniform_box"),
}


def preset(name: str, **overrides) -> DatasetSpec:
    if name not in PRESETS:
        raise InputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def load_spec(path) -> DatasetSpec:
    """Dataset spec from JSON; ``{"preset": name, ...}`` starts from a preset."""
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    if "preset" in d:
        name = d.pop("preset")
        return preset(name, **d)
    return DatasetSpec.from_dict(d)


# ---------------------------------------------------------------------------
# generators


def _sizes(spec: DatasetSpec, rng: np.random.Generator, count: int, size_range=None) -> np.ndarray:
    lo, hi = size_range or spec.size_range
    return rng.integers(lo, hi + 1, size=count)


def gen_uniform(spec: DatasetSpec, rng: np.random.Generator, count: int | None = None,
                size_range=None) -> list[WeightedPointSet]:
    if spec.generator != "uniform_box":
        raise InputError("gen_uniform needs a uniform_box spec")
    count = spec.sets_for("train") if count is None else count
    box = DomainBox.cube(spec.box[0], spec.box[1], spec.dim)
    return [WeightedPointSet(box.sample(rng, int(n))) for n in _sizes(spec, rng, count, size_range)]


def gen_noisy_sphere(spec: DatasetSpec, rng: np.random.Generator, count: int | None = None,
                     size_range=None) -> list[WeightedPointSet]:
    """Per set: one radius from ``spec.radii``, uniform directions, Gaussian noise."""
    if spec.generator != "noisy_sphere":
        raise InputError("gen_noisy_sphere needs a noisy_sphere spec")
    count = spec.sets_for("train") if count is None else count
    out = []
    for n in _sizes(spec, rng, count, size_range):
        r = spec.radii[int(rng.integers(len(spec.radii)))]
        u = rng.standard_normal((int(n), spec.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts = r * u
        if spec.noise_sigma > 0:
            pts = pts + spec.noise_sigma * rng.standard_normal(pts.shape)
        out.append(WeightedPointSet(pts))
    return out


def generate_sets(spec: DatasetSpec, rng: np.random.Generator, count: int, size_range=None):
    gen = gen_uniform if spec.generator == "uniform_box" else gen_noisy_sphere
    return gen(spec, rng, count, size_range)


# ---------------------------------------------------------------------------
# labels


@dataclass(frozen=True, eq=False)
class PairSample:
    A: WeightedPointSet
    B: WeightedPointSet
    label: float
    label_kind: str
    solver: str
    set_a: int = -1
    set_b: int = -1

    def __post_init__(self):
        if not self.label >= 0:
            raise InputError(f"label must be nonnegative, got {self.label}")


def solver_name(P: WeightedPointSet, Q: WeightedPointSet, exact_cutoff: int, eps: float) -> str:
    if max(P.size, Q.size) <= exact_cutoff:
        return "exact"
    return f"sinkhorn({eps:g})"


_SINKHORN_RE = re.compile(r"^sinkhorn\(([^)]+)\)$")


def compute_label(P: WeightedPointSet, Q: WeightedPointSet, p: int, solver: str) -> float:
    if solver == "exact":
        return wasserstein_exact(P, Q, p).distance
    m = _SINKHORN_RE.match(solver)
    if not m:
        raise InputError(f"unknown solver {solver!r}")
    cfg = SinkhornConfig(epsilon=float(m.group(1)), max_iters=20000, marginal_tol=1e-9)
    return sinkhorn(P, Q, p, GroundMetric.L2, cfg).distance


def _label_job(args):
    index, P, Q, p, solver = args
    try:
        return compute_label(P, Q, p, solver)
    except SfgiError as exc:
        raise type(exc)(f"pair {index}: {exc}") from exc


def worker_count() -> int:
    raw = os.environ.get("SFGI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise InputError(f"SFGI_THREADS must be an integer, got {raw!r}") from exc


def label_pairs(jobs: list[tuple]) -> list[float]:
    """Labels for (index, P, Q, p, solver) jobs in job order."""
    workers = min(worker_count(), max(1, len(jobs)))
    if workers == 1:
        return [_label_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_label_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def draw_index_pairs(n_sets: int, n_pairs: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Unordered pairs i < j, without replacement while enough exist."""
    if n_sets < 2:
        raise InputError("need at least two sets to form pairs")
    total = n_sets * (n_sets - 1) // 2
    codes = rng.choice(total, size=n_pairs, replace=n_pairs > total)
    out = []
    for c in codes:
        # invert the row-major enumeration of the strict upper triangle
        c = int(c)
        i = int(n_sets - 2 - math.floor(math.sqrt(-8 * c + 4 * n_sets * (n_sets - 1) - 7) / 2.0 - 0.5))
        j = int(c + i + 1 - n_sets * (n_sets - 1) // 2 + (n_sets - i) * ((n_sets - i) - 1) // 2)
        out.append((i, j))
    return out


def sample_and_label_pairs(sets, n_pairs: int, p: int, rng: np.random.Generator,
                           exact_cutoff: int = EXACT_CUTOFF, eps: float = LABEL_EPSILON,
                           offset: int = 0) -> list[PairSample]:
    """Random labeled pairs; ``offset`` shifts the recorded set ids."""
    idx = draw_index_pairs(len(sets), n_pairs, rng)
    jobs = []
    for k, (i, j) in enumerate(idx):
        solver = solver_name(sets[i], sets[j], exact_cutoff, eps)
        jobs.append((k, sets[i], sets[j], p, solver))
    labels = label_pairs(jobs)
    return [PairSample(sets[i], sets[j], lab, f"W{p}", job[4], offset + i, offset + j)
            for (i, j), lab, job in zip(idx, labels, jobs)]


@dataclass(eq=False)
class PairDataset:
    spec: DatasetSpec
    sets: list
    train: list
    val: list = field(default_factory=list)

    @property
    def pairs(self) -> list:
        return self.train + self.val


def build_dataset(spec: DatasetSpec) -> PairDataset:
    """Pure function of ``spec`` (including its seed)."""
    rng = seeded_rng(spec.seed)
    train_sets = generate_sets(spec, rng, spec.sets_for("train"))
    val_sets = generate_sets(spec, rng, spec.sets_for("val"))
    train = sample_and_label_pairs(train_sets, spec.n_train_pairs, spec.p, rng, spec.exact_cutoff, spec.sinkhorn_eps)
    val = sample_and_label_pairs(val_sets, spec.n_val_pairs, spec.p, rng, spec.exact_cutoff, spec.sinkhorn_eps,
                                 offset=len(train_sets))
    return PairDataset(spec, train_sets + val_sets, train, val)


# ---------------------------------------------------------------------------
# persistence


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_dataset(ds: PairDataset) -> str:
    d = ds.spec.dim
    buf = io.StringIO()
    header = {
        "version": FORMAT_VERSION,
        "spec": ds.spec.to_dict(),
        "p": ds.spec.p,
        "n_sets": len(ds.sets),
        "n_train": len(ds.train),
        "n_val": len(ds.val),
    }
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    buf.write("SETS\n")
    buf.write(",".join(["set_id", "point_idx", "weight"] + [f"c{k + 1}" for k in range(d)]) + "\n")
    for sid, S in enumerate(ds.sets):
        for k in range(S.size):
            row = [str(sid), str(k), _fmt(S.weights[k])] + [_fmt(c) for c in S.points[k]]
            buf.write(",".join(row) + "\n")
    buf.write("PAIRS\n")
    buf.write("pair_id,set_a,set_b,label,label_kind,solver\n")
    for pid, pair in enumerate(ds.pairs):
        buf.write(f"{pid},{pair.set_a},{pair.set_b},{_fmt(pair.label)},{pair.label_kind},{pair.solver}\n")
    return buf.getvalue()


def save_dataset(ds: PairDataset, path):
    if any(pair.set_a < 0 or pair.set_b < 0 for pair in ds.pairs):
        raise InputError("every pair must reference stored set ids")
    with open(path, "w", newline="") as fh:
        fh.write(dumps_dataset(ds))


def _float(text: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None


def _int(text: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"not an integer: {text!r}", line) from None


def loads_dataset(text: str) -> PairDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty dataset file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not JSON: {exc.msg}", 1) from exc
    if not isinstance(header, dict):
        raise ParseError("header must be a JSON object", 1)
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"unsupported dataset version {header.get('version')!r}, expected {FORMAT_VERSION!r}", 1)
    try:
        spec = DatasetSpec.from_dict(header["spec"])
        n_sets, n_train, n_val = int(header["n_sets"]), int(header["n_train"]), int(header["n_val"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", 1) from exc
    d = spec.dim
    pos = 1

    def expect(token: str):
        nonlocal pos
        if pos >= len(lines) or lines[pos] != token:
            raise ParseError(f"expected section {token!r}", pos + 1)
        pos += 1

    expect("SETS")
    expect(",".join(["set_id", "point_idx", "weight"] + [f"c{k + 1}" for k in range(d)]))
    rows: dict[int, list] = {}
    while pos < len(lines) and lines[pos] != "PAIRS":
        line_no = pos + 1
        parts = lines[pos].split(",")
        if len(parts) != 3 + d:
            raise ParseError(f"expected {3 + d} fields, got {len(parts)}", line_no)
        sid, k = _int(parts[0], line_no), _int(parts[1], line_no)
        pts = rows.setdefault(sid, [])
        if k != len(pts):
            raise ParseError(f"point index {k} out of sequence for set {sid}", line_no)
        pts.append([_float(x, line_no) for x in parts[2:]])
        pos += 1
    if sorted(rows) != list(range(n_sets)):
        raise ParseError(f"expected sets 0..{n_sets - 1}, found {len(rows)}", pos + 1)
    expect("PAIRS")
    expect("pair_id,set_a,set_b,label,label_kind,solver")
    sets = []
    for sid in range(n_sets):
        arr = np.array(rows[sid], dtype=np.float64)
        try:
            sets.append(WeightedPointSet(arr[:, 1:], arr[:, 0]))
        except InputError as exc:
            raise ParseError(f"set {sid}: {exc}", None) from exc
    pairs = []
    while pos < len(lines):
        line_no = pos + 1
        parts = lines[pos].split(",")
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields, got {len(parts)}", line_no)
        pid, a, b = (_int(x, line_no) for x in parts[:3])
        if pid != len(pairs):
            raise ParseError(f"pair id {pid} out of sequence", line_no)
        if not (0 <= a < n_sets and 0 <= b < n_sets):
            raise ParseError("pair references an unknown set", line_no)
        label = _float(parts[3], line_no)
        try:
            pairs.append(PairSample(sets[a], sets[b], label, parts[4], parts[5], a, b))
        except InputError as exc:
            raise ParseError(str(exc), line_no) from exc
        pos += 1
    if len(pairs) != n_train + n_val:
        raise ParseError(f"expected {n_train + n_val} pairs, found {len(pairs)} (truncated file?)", pos + 1)
    return PairDataset(spec, sets, pairs[:n_train], pairs[n_train:])


def load_dataset(path) -> PairDataset:
    with open(path, newline="") as fh:
        return loads_dataset(fh.read())


def datasets_equal(d1: PairDataset, d2: PairDataset) -> bool:
    if d1.spec != d2.spec or len(d1.sets) != len(d2.sets) or len(d1.train) != len(d2.train) \
            or len(d1.val) != len(d2.val):
        return False
    if not all(s.same_as(t) for s, t in zip(d1.sets, d2.sets)):
        return False
    return all(
        (p.set_a, p.set_b, p.label, p.label_kind, p.solver) == (q.set_a, q.set_b, q.label, q.label_kind, q.solver)
        for p, q in zip(d1.pairs, d2.pairs)
    )


# ---------------------------------------------------------------------------
# external point clouds


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_pointcloud_file(path, fmt: str | None = None) -> WeightedPointSet:
    """Uniformly weighted points from whitespace (xyz) or comma separated rows."""
    fmt = fmt or ("csv" if str(path).lower().endswith(".csv") else "xyz")
    if fmt not in ("xyz", "csv"):
        raise InputError(f"unknown point cloud format {fmt!r}")
    with open(path, newline="") as fh:
        text = fh.read()
    if fmt == "csv":
        raw = [(k + 1, [c.strip() for c in row]) for k, row in enumerate(csv.reader(io.StringIO(text)))]
    else:
        raw = [(k + 1, line.split()) for k, line in enumerate(text.splitlines())]
    raw = [(n, row) for n, row in raw if row and not (len(row) == 1 and row[0] == "")]
    if raw and not all(_is_number(c) for c in raw[0][1]):
        raw = raw[1:]
    if not raw:
        raise InputError(f"{path}: no points")
    dim = len(raw[0][1])
    pts = []
    for line_no, row in raw:
        if len(row) != dim:
            raise ParseError(f"expected {dim} columns, got {len(row)}", line_no)
        pts.append([_float(c, line_no) for c in row])
    return WeightedPointSet(np.array(pts, dtype=np.float64))
