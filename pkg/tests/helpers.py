"""Finite-difference oracle shared by the model and acceptance tests."""

import numpy as np

from sfginet import models as M
from sfginet import nn

FD_STEP = 1e-5
FD_RTOL = 1e-4
GRAD_FLOOR = 1e-8


def kink_signature(model, As, Bs):
    """Signs of every LeakyReLU input and of each |.| argument in the forward pass."""
    enc = model.encoder
    X, W = enc.pack(list(As) + list(Bs))
    pre = nn.mlp_preactivations(enc.h_spec, enc.h_params, X)
    E = enc.embed_packed(X, W)
    H = nn.mlp_forward(enc.h_spec, enc.h_params, X)
    pooled = H.max(axis=-2) if enc.pooling == "max" else None
    pre += nn.mlp_preactivations(enc.phi_spec, enc.phi_params, pooled if pooled is not None
                                 else nn.weighted_pool(H, W if enc.weighted else (W > 0).astype(float)))
    k = len(As)
    if isinstance(model, M.ProductNetModel):
        s = E[:k] + E[k:]
        pre += nn.mlp_preactivations(model.rho_spec, model.rho_params, s)
        pre.append(nn.mlp_forward(model.rho_spec, model.rho_params, s))
    if isinstance(model, M.WpceModel):
        pre += nn.mlp_preactivations(model.decoder_spec, model.decoder_params, E)
    sig = [np.sign(p).ravel() for p in pre]
    if pooled is not None:
        sig.append(np.argmax(H, axis=-2).ravel().astype(float))
    return np.concatenate(sig)


def fd_check(model, loss_fn, signature_fn, coords, need=None, step=FD_STEP):
    """Compare tape gradients of ``loss_fn(model, tape)`` with central differences.

    Coordinates whose +-step perturbation changes any activation sign, or
    whose derivative is below GRAD_FLOOR, are skipped.  Stops once ``need``
    coordinates were compared.  Returns (checked, worst relative error).
    """
    tape = nn.Tape()
    loss = loss_fn(model, tape)
    nn.backward(tape, loss)
    grad = M.flat_grad(model, tape)
    flat = M.get_flat(model)
    checked, worst = 0, 0.0
    for i in coords:
        if need is not None and checked >= need:
            break
        sigs, vals = [], []
        for sgn in (1, -1):
            theta = flat.copy()
            theta[i] += sgn * step
            M.set_flat(model, theta)
            vals.append(float(nn.value_of(loss_fn(model, None))))
            sigs.append(signature_fn(model))
        M.set_flat(model, flat)
        if not np.array_equal(sigs[0], sigs[1]):
            continue
        fd = (vals[0] - vals[1]) / (2 * step)
        scale = max(abs(grad[i]), abs(fd))
        if scale < GRAD_FLOOR:
            continue
        worst = max(worst, abs(grad[i] - fd) / scale)
        checked += 1
    return checked, worst


def gradient_check(model, As, Bs, labels, n_coords=50, seed=0, **loss_kw):
    """fd_check of the model's training loss on ``n_coords`` random coordinates."""
    def loss_fn(m, tape):
        return M.batch_loss(m, As, Bs, labels, tape, **loss_kw)[0]

    rng = np.random.default_rng(seed)
    coords = rng.permutation(M.param_count(model))
    return fd_check(model, loss_fn, lambda m: kink_signature(m, As, Bs), coords, need=n_coords)


# acceptance results, printed by conftest in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str):
    """Store the criterion's PASS/FAIL line, then fail the test if needed."""
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, detail
