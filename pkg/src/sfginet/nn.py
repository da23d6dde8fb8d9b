"""Tape-based reverse-mode autodiff over numpy arrays, MLPs and Adam.

Every op accepts plain arrays or :class:`Var`; with no ``Var`` among the
arguments it returns a plain array, so one forward code path serves both
inference and training.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as _np_logsumexp

from . import _softmin
from .errors import InputError, NumericError, ParseError, UsageError

DEFAULT_SLOPE = 0.01


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "_tape")

    def __init__(self, value, tape: "Tape", parents=(), backward_fn=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        # weak, so a finished tape and its buffers are freed without the cycle collector
        self._tape = weakref.ref(tape)

    @property
    def tape(self) -> "Tape":
        return self._tape()

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def __repr__(self):
        return f"Var(shape={self.shape})"


class Tape:
    """Records operations in execution order, which is a topological order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._watched: dict[int, Var] = {}

    def watch(self, obj) -> Var:
        """Leaf for a ParamStore (its flat vector) or an input array; cached per object."""
        key = id(obj)
        if key not in self._watched:
            value = obj.flat if isinstance(obj, ParamStore) else np.asarray(obj, dtype=np.float64)
            leaf = Var(value, self)
            self._watched[key] = leaf
            self.nodes.append(leaf)
        return self._watched[key]

    def grad(self, obj) -> np.ndarray:
        leaf = self._watched.get(id(obj))
        if leaf is None:
            raise UsageError("object was never watched on this tape")
        if leaf.grad is None:
            return np.zeros_like(leaf.value)
        return leaf.grad

    def record(self, value, parents, backward_fn) -> Var:
        node = Var(value, self, parents, backward_fn)
        self.nodes.append(node)
        return node


def backward(tape: Tape, output: Var, output_grad=None) -> Tape:
    """Accumulate d(output . output_grad)/d(leaf) into every leaf's ``grad``."""
    if not tape.nodes or not isinstance(output, Var) or output.tape is not tape:
        raise UsageError("backward called before a forward pass was recorded on this tape")
    for node in tape.nodes:
        node.grad = None
    seed = np.ones_like(output.value) if output_grad is None else np.broadcast_to(
        np.asarray(output_grad, dtype=np.float64), np.shape(output.value)
    ).copy()
    output.grad = seed
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not isinstance(parent, Var):
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    return tape


# ---------------------------------------------------------------------------
# ops


def _val(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(x, y):
    xv, yv = _val(x), _val(y)
    out = xv + yv
    tape = _tape_of(x, y)
    if tape is None:
        return out
    sx, sy = np.shape(xv), np.shape(yv)
    return tape.record(out, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(g, sy)))


def sub(x, y):
    xv, yv = _val(x), _val(y)
    out = xv - yv
    tape = _tape_of(x, y)
    if tape is None:
        return out
    sx, sy = np.shape(xv), np.shape(yv)
    return tape.record(out, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(-g, sy)))


def mul(x, y):
    xv, yv = _val(x), _val(y)
    out = xv * yv
    tape = _tape_of(x, y)
    if tape is None:
        return out
    sx, sy = np.shape(xv), np.shape(yv)
    return tape.record(out, (x, y), lambda g: (_unbroadcast(g * yv, sx), _unbroadcast(g * xv, sy)))


def getitem(x, index):
    xv = _val(x)
    out = xv[index]
    tape = _tape_of(x)
    if tape is None:
        return out

    def fn(g):
        full = np.zeros_like(xv)
        np.add.at(full, index, g)
        return (full,)

    return tape.record(out, (x,), fn)


def reshape(x, shape):
    xv = _val(x)
    out = np.reshape(xv, shape)
    tape = _tape_of(x)
    if tape is None:
        return out
    orig = np.shape(xv)
    return tape.record(out, (x,), lambda g: (np.reshape(g, orig),))


def linear(x, W, b):
    """x @ W.T + b with W stored as (fan_out, fan_in)."""
    xv, Wv, bv = _val(x), _val(W), _val(b)
    out = xv @ Wv.T + bv
    tape = _tape_of(x, W, b)
    if tape is None:
        return out

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        gx = g @ Wv if isinstance(x, Var) else None
        return gx, g2.T @ x2, g2.sum(axis=0)

    return tape.record(out, (x, W, b), fn)


def leaky_relu(x, slope: float = DEFAULT_SLOPE):
    xv = _val(x)
    scale = np.where(xv > 0, 1.0, slope)
    out = xv * scale
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * scale,))


def exp(x):
    xv = _val(x)
    out = np.exp(xv)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * out,))


def square(x):
    xv = _val(x)
    out = xv * xv
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (2.0 * g * xv,))


def absolute(x):
    xv = _val(x)
    out = np.abs(xv)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * np.sign(xv),))


def sqrt(x):
    """Square root whose derivative is taken as zero at exactly zero."""
    xv = _val(x)
    out = np.sqrt(xv)
    tape = _tape_of(x)
    if tape is None:
        return out

    def fn(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return tape.record(out, (x,), fn)


def sum_(x, axis=None, keepdims=False):
    xv = _val(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    tape = _tape_of(x)
    if tape is None:
        return out
    shape = np.shape(xv)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return tape.record(out, (x,), fn)


def mean(x, axis=None):
    xv = _val(x)
    count = np.size(xv) if axis is None else np.shape(xv)[axis]
    return mul(sum_(x, axis=axis), 1.0 / count)


def logsumexp(x, axis):
    xv = _val(x)
    out = _np_logsumexp(xv, axis=axis)
    tape = _tape_of(x)
    if tape is None:
        return out

    def fn(g):
        with np.errstate(invalid="ignore"):
            soft = np.exp(xv - np.expand_dims(out, axis))
        soft = np.nan_to_num(soft, nan=0.0)
        return (np.expand_dims(g, axis) * soft,)

    return tape.record(out, (x,), fn)


def softmin(h, log_w, C, eps: float, axis: int):
    """Batched Sinkhorn half-step: -eps * logsumexp over ``axis`` of (log_w + h/eps - C/eps).

    ``C`` is (B, n, m); ``axis`` is -1 (``h``, ``log_w`` of shape (B, m), result
    (B, n)) or -2 (shapes (B, n) and (B, m)).  Keeps one softmax buffer for
    the backward pass.
    """
    hv = np.ascontiguousarray(_val(h), dtype=np.float64)
    Cv = np.ascontiguousarray(_val(C), dtype=np.float64)
    lw = np.ascontiguousarray(log_w, dtype=np.float64)
    if Cv.ndim != 3 or axis not in (-1, -2, 1, 2):
        raise InputError("softmin expects a (B, n, m) cost and axis -1 or -2")
    rows = axis in (-1, 2)
    tape = _tape_of(h, C)
    soft = np.empty(Cv.shape if tape is not None else (0, 0, 0))
    out = (_softmin.softmin_rows if rows else _softmin.softmin_cols)(hv, lw, Cv, float(eps), soft)
    if tape is None:
        return out

    def fn(g):
        gs = soft * (g[:, :, None] if rows else g[:, None, :])
        gh = -gs.sum(axis=1 if rows else 2) if isinstance(h, Var) else None
        return gh, (gs if isinstance(C, Var) else None)

    return tape.record(out, (h, C), fn)


def weighted_pool(H, w):
    """Sum over axis -2 of ``w[..., None] * H``, accumulated front to back.

    Fixed sequential order makes the result exact under appended zero-weight
    rows and, on canonically ordered input, under permutation.
    """
    Hv, wv = _val(H), _val(w)
    n = Hv.shape[-2]
    out = np.zeros(Hv.shape[:-2] + Hv.shape[-1:])
    for k in range(n):
        out = out + wv[..., k, None] * Hv[..., k, :]
    tape = _tape_of(H, w)
    if tape is None:
        return out

    def fn(g):
        gH = g[..., None, :] * wv[..., :, None] if isinstance(H, Var) else None
        gw = np.einsum("...nk,...k->...n", Hv, g) if isinstance(w, Var) else None
        return gH, gw

    return tape.record(out, (H, w), fn)


def max_pool(H):
    """Elementwise max over axis -2; gradient routed to the first maximizer."""
    Hv = _val(H)
    idx = np.argmax(Hv, axis=-2)
    out = np.take_along_axis(Hv, idx[..., None, :], axis=-2)[..., 0, :]
    tape = _tape_of(H)
    if tape is None:
        return out

    def fn(g):
        full = np.zeros_like(Hv)
        np.put_along_axis(full, idx[..., None, :], g[..., None, :], axis=-2)
        return (full,)

    return tape.record(out, (H,), fn)


def l2_norm(x, axis=-1):
    return sqrt(sum_(square(x), axis=axis))


def sq_dists(X, Y):
    """Batched squared Euclidean distances: (..., n, d) x (..., m, d) -> (..., n, m)."""
    Xv, Yv = _val(X), _val(Y)
    diff = Xv[..., :, None, :] - Yv[..., None, :, :]
    out = np.einsum("...ijk,...ijk->...ij", diff, diff)
    tape = _tape_of(X, Y)
    if tape is None:
        return out

    def fn(g):
        gX = 2.0 * (g.sum(axis=-1)[..., None] * Xv - g @ Yv) if isinstance(X, Var) else None
        gY = 2.0 * (np.swapaxes(g, -1, -2).sum(axis=-1)[..., None] * Yv - np.swapaxes(g, -1, -2) @ Xv) \
            if isinstance(Y, Var) else None
        return gX, gY

    return tape.record(out, (X, Y), fn)


def value_of(x) -> np.ndarray:
    return _val(x)


# ---------------------------------------------------------------------------
# MLPs


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_widths: tuple = ()
    slope: float = DEFAULT_SLOPE
    final_activation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        dims = (self.input_dim, self.output_dim) + self.hidden_widths
        if any(int(d) < 1 for d in dims):
            raise InputError(f"all layer widths must be >= 1, got {dims}")
        if not 0 < self.slope < 1:
            raise InputError(f"LeakyReLU slope must lie in (0, 1), got {self.slope}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_widths, self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_widths": list(self.hidden_widths),
            "slope": self.slope,
            "final_activation": self.final_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            int(d["input_dim"]),
            int(d["output_dim"]),
            tuple(d.get("hidden_widths", ())),
            float(d.get("slope", DEFAULT_SLOPE)),
            bool(d.get("final_activation", False)),
        )

    @classmethod
    def from_widths(cls, widths, **kwargs) -> "MlpSpec":
        """``[in, h1, ..., out]`` shorthand."""
        widths = list(widths)
        if len(widths) < 2:
            raise InputError("need at least input and output widths")
        return cls(widths[0], widths[-1], tuple(widths[1:-1]), **kwargs)


@dataclass(eq=False)
class ParamStore:
    """Flat parameter vector with per-layer (weight, bias) slices."""

    spec: MlpSpec
    flat: np.ndarray
    layout: list = field(init=False, repr=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.param_count,):
            raise InputError(f"expected {self.spec.param_count} parameters, got {self.flat.shape}")
        layout = []
        offset = 0
        for fan_in, fan_out in self.spec.layer_dims:
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            layout.append((w, (fan_out, fan_in), b))
        self.layout = layout

    @property
    def param_count(self) -> int:
        return self.flat.shape[0]

    def layer(self, k: int):
        w, shape, b = self.layout[k]
        return self.flat[w].reshape(shape), self.flat[b]

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, self.flat.copy())

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "params": [format(float(x), ".17g") for x in self.flat]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamStore":
        try:
            spec = MlpSpec.from_dict(d["spec"])
            flat = np.array([float(s) for s in d["params"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed network checkpoint: {exc}") from exc
        return cls(spec, flat)


def mlp_init(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    """Weights uniform in +-sqrt(6/fan_in), biases zero."""
    flat = np.zeros(spec.param_count)
    store = ParamStore(spec, flat)
    for (w, shape, _), (fan_in, _) in zip(store.layout, spec.layer_dims):
        bound = math.sqrt(6.0 / fan_in)
        flat[w] = rng.uniform(-bound, bound, size=shape[0] * shape[1])
    return store


def mlp_forward(spec: MlpSpec, params: ParamStore, x, tape: Tape | None = None):
    """Apply the MLP to the trailing axis of ``x``; record on ``tape`` if given."""
    if np.shape(_val(x))[-1] != spec.input_dim:
        raise InputError(f"MLP expects input dim {spec.input_dim}, got {np.shape(_val(x))[-1]}")
    if tape is not None:
        theta = tape.watch(params)
    n_layers = len(params.layout)
    h = x
    for k, (w, shape, b) in enumerate(params.layout):
        if tape is None:
            W, bias = params.flat[w].reshape(shape), params.flat[b]
        else:
            W, bias = reshape(getitem(theta, w), shape), getitem(theta, b)
        h = linear(h, W, bias)
        if k < n_layers - 1 or spec.final_activation:
            h = leaky_relu(h, spec.slope)
    return h


def mlp_preactivations(spec: MlpSpec, params: ParamStore, x) -> list[np.ndarray]:
    """Inputs to every LeakyReLU of the MLP (no tape); used to locate kinks."""
    out = []
    h = np.asarray(_val(x), dtype=np.float64)
    n_layers = len(params.layout)
    for k in range(n_layers):
        W, bias = params.layer(k)
        h = h @ W.T + bias
        if k < n_layers - 1 or spec.final_activation:
            out.append(h)
            h = np.where(h > 0, h, spec.slope * h)
    return out


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, lr, **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """Bias-corrected Adam update of ``params`` in place; returns (params, state)."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise InputError(f"gradient length {grads.shape} != parameter length {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = state.m / (1 - state.beta1**t)
    v_hat = state.v / (1 - state.beta2**t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    return params, state


def dumps_params(store: ParamStore) -> str:
    return json.dumps(store.to_dict())


def loads_params(text: str) -> ParamStore:
    try:
        return ParamStore.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
