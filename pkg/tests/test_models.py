import numpy as np
import pytest

from helpers import FD_RTOL, gradient_check
from sfginet import models as M
from sfginet import nn
from sfginet.core import WeightedPointSet, pad_with_zero_weight, seeded_rng
from sfginet.errors import InputError, ParseError
from sfginet.ot import SinkhornConfig, sinkhorn_divergence

SMALL = dict(h_widths=(16, 12), phi_widths=(12, 8))


def rand_set(rng, n, d=2, weighted=True):
    w = rng.random(n) + 0.1 if weighted else None
    return WeightedPointSet(rng.uniform(-1, 1, size=(n, d)), w)


def small_productnet(seed=0, **kw):
    return M.make_productnet(2, seeded_rng(seed), rho_widths=(8,), **{**SMALL, **kw})


def small_siamese(seed=0):
    return M.make_siamese(2, seeded_rng(seed), **SMALL)


def small_wpce(seed=0, n_out=5):
    return M.make_wpce(2, seeded_rng(seed), n_out, decoder_widths=(10,), **SMALL)


@pytest.mark.parametrize("pooling", ["sum", "max"])
def test_productnet_symmetric_exactly(pooling):
    model = small_productnet(pooling=pooling)
    rng = seeded_rng(1)
    for _ in range(20):
        A, B = rand_set(rng, int(rng.integers(1, 30))), rand_set(rng, int(rng.integers(1, 30)))
        assert M.productnet_forward(model, A, B) == M.productnet_forward(model, B, A)
        assert M.productnet_forward(model, A, B) >= 0.0


def test_productnet_padding_bit_identical():
    model = small_productnet()
    rng = seeded_rng(2)
    for _ in range(10):
        A, B = rand_set(rng, 17), rand_set(rng, 9)
        ref = M.productnet_forward(model, A, B)
        assert M.productnet_forward(model, pad_with_zero_weight(A, A.size + 5), B) == ref
        assert M.productnet_forward(model, A, pad_with_zero_weight(B, 64)) == ref
        # the batched path pads internally to the largest set
        batch = M.productnet_batch(model, [A, pad_with_zero_weight(A, 40)], [B, B])
        assert batch[0] == batch[1]


def test_productnet_shuffle_invariance():
    rng = seeded_rng(3)
    A, B = rand_set(rng, 25), rand_set(rng, 13)
    perm = rng.permutation(A.size)
    A2 = WeightedPointSet(A.points[perm], A.weights[perm])
    canon = small_productnet()
    assert M.productnet_forward(canon, A2, B) == M.productnet_forward(canon, A, B)
    raw = small_productnet(canonical=False)
    assert abs(M.productnet_forward(raw, A2, B) - M.productnet_forward(raw, A, B)) <= 1e-10


def test_zero_parameters_give_zero():
    model = small_productnet()
    M.set_flat(model, np.zeros(M.param_count(model)))
    rng = seeded_rng(4)
    assert M.productnet_forward(model, rand_set(rng, 5), rand_set(rng, 8)) == 0.0


def test_max_pooling_ignores_weights():
    model = small_productnet(pooling="max")
    rng = seeded_rng(5)
    A, B = rand_set(rng, 10), rand_set(rng, 7)
    A2 = WeightedPointSet(A.points, rng.random(A.size) + 0.1)
    assert M.productnet_forward(model, A2, B) == M.productnet_forward(model, A, B)


@pytest.mark.parametrize("make", [small_siamese, small_wpce])
def test_siamese_style_metric_properties(make):
    model = make()
    rng = seeded_rng(6)
    sets = [rand_set(rng, int(rng.integers(3, 20))) for _ in range(30)]
    for S in sets[:5]:
        assert M.siamese_forward(model, S, S) == 0.0
    A, B = sets[0], sets[1]
    assert M.siamese_forward(model, A, B) == M.siamese_forward(model, B, A)
    for _ in range(100):
        i, j, k = rng.choice(len(sets), 3, replace=False)
        dij = M.siamese_forward(model, sets[i], sets[j])
        djk = M.siamese_forward(model, sets[j], sets[k])
        dik = M.siamese_forward(model, sets[i], sets[k])
        assert dik <= dij + djk + 1e-12


def test_batch_matches_single_pair():
    rng = seeded_rng(7)
    As = [rand_set(rng, int(rng.integers(2, 15))) for _ in range(6)]
    Bs = [rand_set(rng, int(rng.integers(2, 15))) for _ in range(6)]
    for model, single in [(small_productnet(), M.productnet_forward), (small_siamese(), M.siamese_forward)]:
        batch = M.predict(model, list(zip(As, Bs)), batch_size=4)
        ref = [single(model, a, b) for a, b in zip(As, Bs)]
        np.testing.assert_allclose(batch, ref, rtol=1e-12, atol=1e-14)


def test_dimension_mismatch():
    model = small_productnet()
    rng = seeded_rng(8)
    with pytest.raises(InputError):
        M.productnet_forward(model, rand_set(rng, 4, d=3), rand_set(rng, 4, d=3))


def test_parameter_count_independent_of_set_size():
    rng = seeded_rng(9)
    counts = set()
    for n_max in (64, 256, 2048):
        model = M.make_productnet(2, seeded_rng(0))
        A, B = rand_set(rng, n_max), rand_set(rng, n_max // 2)
        assert np.isfinite(M.productnet_forward(model, A, B))
        counts.add(M.param_count(model))
    assert len(counts) == 1


def test_wpce_decode():
    model = small_wpce(n_out=7)
    rng = seeded_rng(10)
    for n in (3, 50):
        D = M.wpce_decode(model, rand_set(rng, n))
        assert D.size == 7 and D.dim == 2
        np.testing.assert_array_equal(D.weights, np.full(7, 1 / 7))
    A = rand_set(rng, 5)
    assert np.array_equal(M.wpce_decode(model, A).points, M.wpce_decode(model, A).points)


def test_mse_examples():
    assert float(M.mse_loss(np.array([1.0, 2.0]), [1.0, 2.0])) == 0.0
    assert float(M.mse_loss(np.array([0.0]), [2.0])) == 4.0
    assert float(M.mse_loss(np.array([1.0, 0.0]), [0.0, 1.0])) == 1.0
    with pytest.raises(InputError):
        M.mse_loss(np.zeros(0), [])
    with pytest.raises(InputError):
        M.mse_loss(np.zeros(2), [1.0])


def test_unrolled_divergence_matches_solver():
    rng = seeded_rng(11)
    A, B = rand_set(rng, 6), rand_set(rng, 9)
    div, violation = M.sinkhorn_divergence_batch(A.points[None], A.weights[None], B.points[None],
                                                 B.weights[None], 0.1, iters=2000)
    ref = sinkhorn_divergence(A, B, p=2, cfg=SinkhornConfig(epsilon=0.1, max_iters=10_000, marginal_tol=1e-12))
    assert float(div[0]) == pytest.approx(ref, abs=1e-9)
    assert violation < 1e-9


def test_wpce_loss_lambda_zero_is_mse():
    model = small_wpce()
    rng = seeded_rng(12)
    As = [rand_set(rng, 6) for _ in range(3)]
    Bs = [rand_set(rng, 4) for _ in range(3)]
    labels = rng.random(3)
    loss, info = M.wpce_loss(model, As, Bs, labels, lam=0.0)
    pred = M.predict(model, list(zip(As, Bs)))
    assert float(loss) == pytest.approx(float(np.mean((pred - labels) ** 2)), rel=1e-14)
    assert info.reconstruction == 0.0
    with pytest.raises(InputError):
        M.wpce_loss(model, [], [], [])


def test_wpce_loss_perfect_model_is_near_zero():
    # constant zero embedding predicts 0 for identical pairs; the decoder's
    # final bias reproduces the input set exactly
    n_out = 4
    model = small_wpce(n_out=n_out)
    A = WeightedPointSet(seeded_rng(13).uniform(-1, 1, size=(n_out, 2)))
    model.encoder.phi_params.flat[:] = 0.0
    model.decoder_params.flat[:] = 0.0
    _, _, b = model.decoder_params.layout[-1]
    model.decoder_params.flat[b] = A.points.ravel()
    loss, info = M.wpce_loss(model, [A, A], [A, A], [0.0, 0.0])
    assert float(loss) <= 1e-4
    assert info.mse == 0.0


def test_wpce_loss_reports_convergence():
    model = small_wpce()
    rng = seeded_rng(14)
    As, Bs = [rand_set(rng, 5)], [rand_set(rng, 5)]
    _, info = M.wpce_loss(model, As, Bs, [0.5], epsilon=0.1)
    assert info.sinkhorn_violation >= 0.0
    _, tight = M.wpce_loss(model, As, Bs, [0.5], epsilon=1e-3, iters=2, marginal_tol=1e-12)
    assert not tight.sinkhorn_converged


@pytest.mark.parametrize("kind", ["productnet", "productnet-max", "siamese", "wpce"])
def test_loss_gradients_match_finite_differences(kind):
    rng = seeded_rng(15)
    As = [rand_set(rng, int(rng.integers(3, 8))) for _ in range(3)]
    Bs = [rand_set(rng, int(rng.integers(3, 8))) for _ in range(3)]
    labels = rng.random(3) + 0.2
    model = {"productnet": lambda: small_productnet(1), "productnet-max": lambda: small_productnet(1, pooling="max"),
             "siamese": lambda: small_siamese(1), "wpce": lambda: small_wpce(1)}[kind]()
    checked, worst = gradient_check(model, As, Bs, labels, n_coords=50, seed=2)
    assert checked >= 50
    assert worst <= FD_RTOL


def test_tape_gradient_of_input_points_through_divergence():
    rng = seeded_rng(16)
    X = rng.normal(size=(1, 4, 2))
    Y = rng.normal(size=(1, 5, 2))
    wa, wb = np.full((1, 4), 0.25), np.full((1, 5), 0.2)

    def f(Xv, tape=None):
        leaf = tape.watch(Xv) if tape is not None else Xv
        return M.sinkhorn_divergence_batch(leaf, wa, Y, wb, 0.1)[0]

    tape = nn.Tape()
    nn.backward(tape, f(X, tape))
    g = tape.grad(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += 1e-6
        Xm[idx] -= 1e-6
        fd = (float(f(Xp)[0]) - float(f(Xm)[0])) / 2e-6
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("make", [small_productnet, small_siamese, small_wpce])
def test_checkpoint_roundtrip(make, tmp_path):
    model = make()
    path = tmp_path / "model.json"
    M.save_model(model, path, {"note": "x"})
    back = M.load_model(path)
    assert M.models_equal(model, back)
    rng = seeded_rng(17)
    A, B = rand_set(rng, 6), rand_set(rng, 6)
    assert M.predict(back, [(A, B)])[0] == M.predict(model, [(A, B)])[0]


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ParseError):
        M.load_model(bad)
    bad.write_text('{"model": {"kind": "mystery", "encoder": {}}}')
    with pytest.raises(ParseError):
        M.load_model(bad)
    d = M.model_to_dict(small_productnet())
    d["kind"] = "mystery"
    with pytest.raises(ParseError):
        M.model_from_dict(d)
