"""ProductNet and the two Siamese baselines (DeepSets embedding, WPCE autoencoder).

All three share :class:`SetEncoder`, a DeepSets-style map
``S -> phi(pool_{x in S} h(x))``.  Zero-weight points are not members of a
set and never reach ``h``.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass

import numpy as np

from . import nn
from .core import WeightedPointSet
from .errors import InputError, ParseError
from .nn import MlpSpec, ParamStore, Tape

POOLINGS = ("sum", "max")
SINKHORN_UNROLL = 50


@dataclass(eq=False)
class SetEncoder:
    """phi(pool h(x)).

    ``weighted`` selects the pooled sum ``sum w_x h(x)`` (ProductNet) versus the
    plain sum over members (DeepSets baselines); max pooling ignores weights.
    """

    h_spec: MlpSpec
    h_params: ParamStore
    phi_spec: MlpSpec
    phi_params: ParamStore
    pooling: str = "sum"
    weighted: bool = True
    weight_as_feature: bool = False
    canonical: bool = True

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise InputError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.h_spec.output_dim != self.phi_spec.input_dim:
            raise InputError("h output width must equal phi input width")

    @property
    def point_dim(self) -> int:
        return self.h_spec.input_dim - (1 if self.weight_as_feature else 0)

    @property
    def embed_dim(self) -> int:
        return self.phi_spec.output_dim

    def stores(self) -> list[ParamStore]:
        return [self.h_params, self.phi_params]

    def pack(self, sets) -> tuple[np.ndarray, np.ndarray]:
        """Stack member points into (B, n, d) with their weights (B, n).

        Shorter sets are padded at the end with copies of their first member at
        weight zero, which changes neither a sequential sum nor a max.
        """
        members = []
        for S in sets:
            if S.dim != self.point_dim:
                raise InputError(f"model expects {self.point_dim}-dimensional points, got {S.dim}")
            order = S.canonical_order() if self.canonical else np.arange(S.size)
            order = order[S.weights[order] > 0]
            members.append((S.points[order], S.weights[order]))
        n = max(len(w) for _, w in members)
        d = self.h_spec.input_dim
        X = np.empty((len(members), n, d))
        W = np.zeros((len(members), n))
        for k, (pts, w) in enumerate(members):
            m = len(w)
            feats = np.column_stack([pts, w]) if self.weight_as_feature else pts
            X[k, :m] = feats
            X[k, m:] = feats[0]
            W[k, :m] = w
        return X, W

    def embed_packed(self, X, W, tape: Tape | None = None):
        """Embeddings of packed sets; ``W`` holds the true weights, zero on padding."""
        H = nn.mlp_forward(self.h_spec, self.h_params, X, tape)
        if self.pooling == "max":
            pooled = nn.max_pool(H)
        else:
            pooled = nn.weighted_pool(H, W if self.weighted else (W > 0).astype(np.float64))
        return nn.mlp_forward(self.phi_spec, self.phi_params, pooled, tape)

    def embed(self, sets, tape: Tape | None = None):
        X, W = self.pack(sets)
        return self.embed_packed(X, W, tape)

    def to_dict(self) -> dict:
        return {
            "h": self.h_params.to_dict(),
            "phi": self.phi_params.to_dict(),
            "pooling": self.pooling,
            "weighted": self.weighted,
            "weight_as_feature": self.weight_as_feature,
            "canonical": self.canonical,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SetEncoder":
        h = ParamStore.from_dict(d["h"])
        phi = ParamStore.from_dict(d["phi"])
        return cls(h.spec, h, phi.spec, phi, d["pooling"], bool(d["weighted"]),
                   bool(d["weight_as_feature"]), bool(d["canonical"]))


def make_encoder(dim: int, h_widths, phi_widths, rng: np.random.Generator, pooling="sum",
                 weighted=True, weight_as_feature=False, canonical=True) -> SetEncoder:
    """``h_widths``/``phi_widths`` list hidden widths followed by the output width."""
    h_widths, phi_widths = list(h_widths), list(phi_widths)
    if not h_widths or not phi_widths:
        raise InputError("h and phi need at least an output width")
    in_dim = dim + (1 if weight_as_feature else 0)
    h_spec = MlpSpec(in_dim, h_widths[-1], tuple(h_widths[:-1]))
    phi_spec = MlpSpec(h_widths[-1], phi_widths[-1], tuple(phi_widths[:-1]))
    return SetEncoder(h_spec, nn.mlp_init(h_spec, rng), phi_spec, nn.mlp_init(phi_spec, rng),
                      pooling, weighted, weight_as_feature, canonical)


# ---------------------------------------------------------------------------
# models


@dataclass(eq=False)
class ProductNetModel:
    encoder: SetEncoder
    rho_spec: MlpSpec
    rho_params: ParamStore

    kind = "productnet"

    def stores(self) -> list[ParamStore]:
        return self.encoder.stores() + [self.rho_params]


@dataclass(eq=False)
class SiameseDeepSetsModel:
    encoder: SetEncoder

    kind = "siamese_deepsets"

    def stores(self) -> list[ParamStore]:
        return self.encoder.stores()


@dataclass(eq=False)
class WpceModel:
    encoder: SetEncoder
    decoder_spec: MlpSpec
    decoder_params: ParamStore
    n_out: int

    kind = "wpce"

    def __post_init__(self):
        if self.decoder_spec.output_dim != self.n_out * self.encoder.point_dim:
            raise InputError("decoder output must hold n_out points")

    def stores(self) -> list[ParamStore]:
        return self.encoder.stores() + [self.decoder_params]


def make_productnet(dim: int, rng: np.random.Generator, h_widths=(128, 128, 64), phi_widths=(128, 64),
                    rho_widths=(64,), pooling="sum", weight_as_feature=False, canonical=True) -> ProductNetModel:
    """``rho_widths`` lists rho's hidden widths; its output is the scalar distance."""
    enc = make_encoder(dim, h_widths, phi_widths, rng, pooling, True, weight_as_feature, canonical)
    rho_spec = MlpSpec(enc.embed_dim, 1, tuple(rho_widths))
    return ProductNetModel(enc, rho_spec, nn.mlp_init(rho_spec, rng))


def make_siamese(dim: int, rng: np.random.Generator, h_widths=(128, 128, 64), phi_widths=(128, 64),
                 weighted=False, canonical=True) -> SiameseDeepSetsModel:
    return SiameseDeepSetsModel(make_encoder(dim, h_widths, phi_widths, rng, "sum", weighted, False, canonical))


def make_wpce(dim: int, rng: np.random.Generator, n_out: int, h_widths=(128, 128, 64), phi_widths=(128, 64),
              decoder_widths=(100, 100), weighted=False, canonical=True) -> WpceModel:
    enc = make_encoder(dim, h_widths, phi_widths, rng, "sum", weighted, False, canonical)
    dec_spec = MlpSpec(enc.embed_dim, n_out * dim, tuple(decoder_widths))
    return WpceModel(enc, dec_spec, nn.mlp_init(dec_spec, rng), int(n_out))


def param_count(model) -> int:
    return sum(s.param_count for s in model.stores())


def get_flat(model) -> np.ndarray:
    return np.concatenate([s.flat for s in model.stores()])


def set_flat(model, flat: np.ndarray):
    offset = 0
    for s in model.stores():
        s.flat[:] = flat[offset: offset + s.param_count]
        offset += s.param_count
    if offset != len(flat):
        raise InputError(f"expected {offset} parameters, got {len(flat)}")


def flat_grad(model, tape: Tape) -> np.ndarray:
    return np.concatenate([tape.grad(s) for s in model.stores()])


# ---------------------------------------------------------------------------
# forward passes


def _scalar(x):
    return nn.reshape(x, ()) if isinstance(x, nn.Var) else float(np.reshape(x, ()))


def _rho(model: ProductNetModel, summed, tape):
    out = nn.mlp_forward(model.rho_spec, model.rho_params, summed, tape)
    return nn.absolute(out)


def productnet_forward(model: ProductNetModel, A: WeightedPointSet, B: WeightedPointSet, tape: Tape | None = None):
    """|rho(e(A) + e(B))|; each set is embedded on its own so swapping is exact."""
    eA = model.encoder.embed([A], tape)
    eB = model.encoder.embed([B], tape)
    return _scalar(_rho(model, nn.add(eA, eB), tape))


def _pair_embeddings(encoder: SetEncoder, As, Bs, tape):
    if len(As) != len(Bs) or not As:
        raise InputError("need equally many, and at least one, left and right sets")
    E = encoder.embed(list(As) + list(Bs), tape)
    k = len(As)
    return nn.getitem(E, slice(0, k)), nn.getitem(E, slice(k, 2 * k))


def productnet_batch(model: ProductNetModel, As, Bs, tape: Tape | None = None):
    eA, eB = _pair_embeddings(model.encoder, As, Bs, tape)
    return nn.reshape(_rho(model, nn.add(eA, eB), tape), (len(As),))


def _embed_distance(eA, eB):
    return nn.l2_norm(nn.sub(eA, eB), axis=-1)


def siamese_forward(model, A: WeightedPointSet, B: WeightedPointSet, tape: Tape | None = None):
    """||e(A) - e(B)||_2 with one shared encoder (also the WPCE prediction)."""
    eA = model.encoder.embed([A], tape)
    eB = model.encoder.embed([B], tape)
    return _scalar(_embed_distance(eA, eB))


def siamese_batch(model, As, Bs, tape: Tape | None = None):
    eA, eB = _pair_embeddings(model.encoder, As, Bs, tape)
    return _embed_distance(eA, eB)


wpce_forward = siamese_forward
wpce_batch = siamese_batch


def predict_batch(model, As, Bs, tape: Tape | None = None):
    if isinstance(model, ProductNetModel):
        return productnet_batch(model, As, Bs, tape)
    return siamese_batch(model, As, Bs, tape)


def predict(model, pairs, batch_size: int = 256) -> np.ndarray:
    """Predictions for (A, B) pairs in input order."""
    out = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start: start + batch_size]
        out.append(predict_batch(model, [a for a, _ in chunk], [b for _, b in chunk]))
    return np.concatenate(out) if out else np.zeros(0)


def _decode_packed(model: WpceModel, E, tape):
    raw = nn.mlp_forward(model.decoder_spec, model.decoder_params, E, tape)
    lead = np.shape(nn.value_of(raw))[:-1]
    return nn.reshape(raw, lead + (model.n_out, model.encoder.point_dim))


def wpce_decode(model: WpceModel, A: WeightedPointSet) -> WeightedPointSet:
    pts = _decode_packed(model, model.encoder.embed([A]), None)[0]
    return WeightedPointSet(pts)


# ---------------------------------------------------------------------------
# losses


def mse_loss(predictions, labels):
    labels = np.asarray(labels, dtype=np.float64)
    n = np.shape(nn.value_of(predictions))[0] if np.ndim(nn.value_of(predictions)) else 1
    if labels.size == 0 or n == 0:
        raise InputError("empty batch")
    if n != labels.shape[0]:
        raise InputError(f"{n} predictions for {labels.shape[0]} labels")
    return nn.mean(nn.square(nn.sub(predictions, labels)))


def _log_weights(W):
    with np.errstate(divide="ignore"):
        return np.log(W)


def entropic_dual(X, wa, Y, wb, eps: float, iters: int = SINKHORN_UNROLL, symmetric: bool = False):
    """Batched <a, f> + <b, g> after ``iters`` unrolled log-domain Sinkhorn steps.

    X (B, n, d), Y (B, m, d), weights (B, n) and (B, m) with zeros for padding.
    Cost is the squared Euclidean distance.  Returns (values (B,), violation).
    """
    C = nn.sq_dists(X, Y)
    log_a, log_b = _log_weights(wa), _log_weights(wb)
    f = np.zeros(np.shape(wa))
    g = np.zeros(np.shape(wb))
    for _ in range(iters):
        f_new = nn.softmin(g, log_b, C, eps, axis=-1)
        if symmetric:
            f = nn.mul(nn.add(f, f_new), 0.5)
            g = f
        else:
            f = f_new
            g = nn.softmin(f, log_a, C, eps, axis=-2)
    fv, gv, Cv = nn.value_of(f), nn.value_of(g), nn.value_of(C)
    with np.errstate(invalid="ignore"):
        log_plan = log_a[:, :, None] + log_b[:, None, :] + (fv[:, :, None] + gv[:, None, :] - Cv) / eps
    plan = np.nan_to_num(np.exp(log_plan))
    violation = float(np.max(np.abs(plan.sum(axis=2) - wa).sum(axis=1) + np.abs(plan.sum(axis=1) - wb).sum(axis=1)))
    value = nn.add(nn.sum_(nn.mul(f, wa), axis=1), nn.sum_(nn.mul(g, wb), axis=1))
    return value, violation


def sinkhorn_divergence_batch(X, wa, Y, wb, eps: float, iters: int = SINKHORN_UNROLL, yy=None):
    """Debiased divergence OT(X,Y) - OT(X,X)/2 - OT(Y,Y)/2 per batch row.

    ``yy`` may supply OT(Y,Y) when Y is a constant.
    """
    xy, v1 = entropic_dual(X, wa, Y, wb, eps, iters)
    xx, v2 = entropic_dual(X, wa, X, wa, eps, iters, symmetric=True)
    v3 = 0.0
    if yy is None:
        yy, v3 = entropic_dual(Y, wb, Y, wb, eps, iters, symmetric=True)
    div = nn.sub(xy, nn.mul(nn.add(xx, yy), 0.5))
    return div, max(v1, v2, v3)


def _chunked_divergence(X, wa, Y, wb, yy, eps, iters, tape, chunk):
    """sinkhorn_divergence_batch with X on ``tape``, in row chunks.

    Row r of the result depends only on X[r], so each chunk is differentiated
    on a private tape right away and the outer tape keeps just dX.
    """
    Xv = nn.value_of(X)
    values = np.empty(Xv.shape[0])
    grads = np.zeros_like(Xv) if tape is not None else None
    violation = 0.0
    for lo in range(0, Xv.shape[0], chunk):
        rows = slice(lo, lo + chunk)
        inner = Tape() if tape is not None else None
        Xc = inner.watch(Xv[rows]) if inner is not None else Xv[rows]
        div, v = sinkhorn_divergence_batch(Xc, wa[rows], Y[rows], wb[rows], eps, iters, yy[rows])
        values[rows] = nn.value_of(div)
        violation = max(violation, v)
        if inner is not None:
            nn.backward(inner, div)
            if Xc.grad is not None:
                grads[rows] = Xc.grad
    if tape is None:
        return values, violation
    return tape.record(values, (X,), lambda g: (g[:, None, None] * grads,)), violation


_SELF_TERMS = weakref.WeakKeyDictionary()


def _self_term(S: WeightedPointSet, eps: float, iters: int) -> float:
    """OT_eps(S, S) of an input set; parameter-free, so cached per set object."""
    cache = _SELF_TERMS.setdefault(S, {})
    key = (eps, iters)
    if key not in cache:
        w = S.weights[S.weights > 0][None, :]
        pts = S.points[S.weights > 0][None, :, :]
        cache[key] = float(entropic_dual(pts, w, pts, w, eps, iters, symmetric=True)[0][0])
    return cache[key]


@dataclass(frozen=True)
class WpceLossInfo:
    mse: float
    reconstruction: float
    sinkhorn_violation: float
    sinkhorn_converged: bool


def wpce_loss(model: WpceModel, As, Bs, labels, epsilon: float = 0.1, lam: float = 0.1,
              tape: Tape | None = None, iters: int = SINKHORN_UNROLL, marginal_tol: float = 1e-3,
              chunk: int = 16):
    """MSE of the embedding distance plus lam times the mean reconstruction divergences.

    The reconstruction of each input S is compared with S itself through an
    unrolled Sinkhorn divergence, so gradients flow through ``iters`` steps.
    Non-convergence within the unroll is reported in the info, not raised.
    """
    if len(As) == 0:
        raise InputError("empty batch")
    enc = model.encoder
    sets = list(As) + list(Bs)
    X, W = enc.pack(sets)
    E = enc.embed_packed(X, W, tape)
    k = len(As)
    pred = _embed_distance(nn.getitem(E, slice(0, k)), nn.getitem(E, slice(k, 2 * k)))
    mse = mse_loss(pred, labels)
    if lam == 0:
        return mse, WpceLossInfo(float(nn.value_of(mse)), 0.0, 0.0, True)
    decoded = _decode_packed(model, E, tape)
    pts = X[..., : enc.point_dim]
    w_dec = np.full((len(sets), model.n_out), 1.0 / model.n_out)
    yy = np.array([_self_term(S, epsilon, iters) for S in sets])
    div, violation = _chunked_divergence(decoded, w_dec, pts, W, yy, epsilon, iters, tape, chunk)
    recon = nn.mul(nn.add(nn.mean(nn.getitem(div, slice(0, k))), nn.mean(nn.getitem(div, slice(k, 2 * k)))), lam)
    loss = nn.add(mse, recon)
    info = WpceLossInfo(float(nn.value_of(mse)), float(nn.value_of(recon)), violation, violation < marginal_tol)
    return loss, info


def batch_loss(model, As, Bs, labels, tape: Tape | None = None, epsilon: float = 0.1, lam: float = 0.1):
    """Training loss for any model kind; returns (loss, info or None)."""
    if isinstance(model, WpceModel):
        return wpce_loss(model, As, Bs, labels, epsilon, lam, tape)
    return mse_loss(predict_batch(model, As, Bs, tape), labels), None


# ---------------------------------------------------------------------------
# checkpoints


def model_to_dict(model) -> dict:
    d = {"kind": model.kind, "encoder": model.encoder.to_dict()}
    if isinstance(model, ProductNetModel):
        d["rho"] = model.rho_params.to_dict()
    elif isinstance(model, WpceModel):
        d["decoder"] = model.decoder_params.to_dict()
        d["n_out"] = model.n_out
    return d


def model_from_dict(d: dict):
    try:
        kind = d["kind"]
        enc = SetEncoder.from_dict(d["encoder"])
        if kind == "productnet":
            rho = ParamStore.from_dict(d["rho"])
            return ProductNetModel(enc, rho.spec, rho)
        if kind == "siamese_deepsets":
            return SiameseDeepSetsModel(enc)
        if kind == "wpce":
            dec = ParamStore.from_dict(d["decoder"])
            return WpceModel(enc, dec.spec, dec, int(d["n_out"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed model checkpoint: {exc}") from exc
    raise ParseError(f"unknown model kind {kind!r}")


def save_model(model, path, extra: dict | None = None):
    payload = {"version": "1", "model": model_to_dict(model)}
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        text = fh.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid checkpoint JSON: {exc.msg}", exc.lineno) from exc
    if not isinstance(payload, dict) or "model" not in payload:
        raise ParseError("checkpoint has no model entry")
    return model_from_dict(payload["model"])


def models_equal(m1, m2) -> bool:
    return (m1.kind == m2.kind and len(m1.stores()) == len(m2.stores())
            and all(a.spec == b.spec and np.array_equal(a.flat, b.flat) for a, b in zip(m1.stores(), m2.stores())))
