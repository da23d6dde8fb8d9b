import math

import numpy as np
import pytest

from sfginet.core import DomainBox, WeightedPointSet, pairwise_distances, seeded_rng
from sfginet.errors import InputError, ResourceError
from sfginet.sketch import (
    MAX_ACTIVE,
    build_covering_net,
    choose_sharpness,
    decode,
    encode,
    make_max_sketch,
    make_sketch,
    roundtrip,
    roundtrip_error,
    soft_indicator,
)

CUBE3 = DomainBox.cube(-1.0, 1.0, 3)


def random_sets(rng, count, lo=5, hi=60, box=CUBE3):
    out = []
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        out.append(WeightedPointSet(box.sample(rng, n), rng.random(n) + 1e-3))
    return out


def covers(net, points):
    return pairwise_distances(points, net.centers, net.metric).min(axis=1) <= net.radius + 1e-12


def test_net_1d_four_centers():
    net = build_covering_net(DomainBox.cube(-1, 1, 1), 0.25)
    assert net.size == 4
    np.testing.assert_allclose(net.centers[:, 0], [-0.75, -0.25, 0.25, 0.75], atol=1e-15)
    grid = np.linspace(-1, 1, 2001)[:, None]
    assert covers(net, grid).all()


def test_net_2d_nine_centers():
    box = DomainBox.cube(-1, 1, 2)
    net = build_covering_net(box, 0.5)
    assert net.per_axis == (3, 3) and net.size == 9
    assert covers(net, box.sample(seeded_rng(1), 10_000)).all()


def test_net_single_center_and_cap():
    box = DomainBox.cube(-1, 1, 2)
    assert build_covering_net(box, math.sqrt(2) + 1e-9).size == 1
    with pytest.raises(ResourceError):
        build_covering_net(DomainBox.cube(-1, 1, 3), 1e-3, cap=1000)
    with pytest.raises(InputError):
        build_covering_net(box, 0.0)


@pytest.mark.parametrize("metric", ["L1", "L2", "Linf"])
def test_net_covers_under_each_metric(metric):
    net = build_covering_net(CUBE3, 0.3, metric)
    assert covers(net, CUBE3.sample(seeded_rng(2), 10_000)).all()


def test_choose_sharpness_example():
    b = choose_sharpness(0.5, 1, 4, 2.0)
    assert b == pytest.approx(1.01 * math.log(16) / 0.5, rel=1e-14)
    assert b == pytest.approx(5.600, abs=1e-3)
    assert math.exp(-b * 0.5) < 0.0625
    assert choose_sharpness(0.5, 1, 8, 2.0) - b == pytest.approx(1.01 * math.log(2) / 0.5, rel=1e-12)
    with pytest.raises(InputError):
        choose_sharpness(1.0, 1, 1, 1.0)


@pytest.mark.parametrize("delta,p", [(0.8, 1), (0.4, 1), (0.5, 2)])
def test_sketch_config_invariants(delta, p):
    cfg = make_sketch(CUBE3, delta, p)
    assert cfg.delta0 == pytest.approx(0.5 * (delta / 2) ** (1 / p), abs=1e-12)
    assert math.exp(-cfg.sharpness * cfg.delta0) * cfg.a * cfg.d_max**p < cfg.delta0**p


def test_soft_indicator_values():
    cfg = make_sketch(CUBE3, 0.8)
    rng = seeded_rng(3)
    for x in CUBE3.sample(rng, 200):
        h = soft_indicator(x, cfg)
        assert h.max() == 1.0 and h.min() > 0.0
    y = cfg.net.centers[0]
    assert soft_indicator(y, cfg)[0] == 1.0
    # a point at distance delta0 + t from the center decays as exp(-b0 t)
    x = cfg.net.centers[-1].copy()
    dist = np.linalg.norm(x - y)
    t = dist - cfg.delta0
    assert soft_indicator(x, cfg)[0] == pytest.approx(math.exp(-cfg.sharpness * t), rel=1e-12)
    with pytest.raises(InputError):
        soft_indicator(np.array([1.5, 0.0, 0.0]), cfg)


def test_encode_sum_mode_norm_and_invariance():
    cfg = make_sketch(CUBE3, 0.8)
    rng = seeded_rng(4)
    for S in random_sets(rng, 20):
        v = encode(S, cfg)
        assert v.shape == (cfg.a,)
        assert abs(v.sum() - 1.0) <= 1e-9
        perm = rng.permutation(S.size)
        assert np.array_equal(encode(WeightedPointSet(S.points[perm], S.weights[perm]), cfg), v)


def test_encode_single_isolated_center():
    # every off-center distance is at least one grid spacing, so the leakage
    # from the active center to any other is bounded by exp(-b0 * (s - delta0))
    cfg = make_sketch(DomainBox.cube(-1, 1, 1), 0.8)
    k = 1
    v = encode(WeightedPointSet(cfg.net.centers[k:k + 1]), cfg)
    gap = np.abs(cfg.net.centers[:, 0] - cfg.net.centers[k, 0])
    gap[k] = np.inf
    bound = math.exp(-cfg.sharpness * (gap.min() - cfg.delta0))
    off = np.delete(v, k)
    assert np.all(off <= bound)
    assert v[k] == pytest.approx(1.0, abs=cfg.a * bound)


def test_max_mode_encode_properties():
    cfg = make_max_sketch(CUBE3, 0.4)
    rng = seeded_rng(5)
    S = random_sets(rng, 1)[0]
    v = encode(S, cfg)
    assert v.max() == 1.0 and v.min() > 0.0
    dup = WeightedPointSet(np.vstack([S.points, S.points[:3]]), np.concatenate([S.weights, S.weights[:3]]))
    assert np.array_equal(encode(dup, cfg), v)


def test_decode_examples():
    cfg = make_sketch(CUBE3, 0.8)
    e = np.zeros(cfg.a)
    e[5] = 1.0
    D = decode(e, cfg)
    assert D.size == 1 and np.array_equal(D.points[0], cfg.net.centers[5])
    with pytest.raises(InputError):
        decode(np.zeros(cfg.a), cfg)
    with pytest.raises(InputError):
        decode(-e, cfg)

    mcfg = make_max_sketch(DomainBox.cube(-1, 1, 1), 1 / 3)
    assert mcfg.a == 3
    D = decode(np.array([0.1, 1.0, 0.1]), mcfg)
    assert D.size == 1 and D.points[0, 0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InputError):
        decode(np.array([0.1, 0.5, 0.1]), mcfg)
    assert MAX_ACTIVE < 1.0


def test_decoded_support_is_subset_of_centers():
    cfg = make_sketch(CUBE3, 0.8)
    S = random_sets(seeded_rng(6), 1)[0]
    D = decode(encode(S, cfg), cfg)
    d = pairwise_distances(D.points, cfg.net.centers).min(axis=1)
    assert np.all(d == 0.0)


def test_roundtrip_single_center_point():
    # radius 0.45 gives grid spacing 0.5, so no other center lies within the radius
    cfg = make_max_sketch(CUBE3, 0.45)
    S = WeightedPointSet(cfg.net.centers[7:8])
    assert pairwise_distances(S.points, np.delete(cfg.net.centers, 7, axis=0)).min() > 0.45
    assert roundtrip_error(S, cfg) == 0.0
    scfg = make_sketch(CUBE3, 0.4)
    assert roundtrip_error(WeightedPointSet(scfg.net.centers[7:8]), scfg) < 0.4


def test_roundtrip_sum_bound_100_sets():
    cfg = make_sketch(CUBE3, 0.4)
    for S in random_sets(seeded_rng(7), 100):
        assert roundtrip(S, cfg, prune_mass=1e-4).upper_bound < 0.4


def test_roundtrip_max_bound():
    cfg = make_max_sketch(CUBE3, 0.4)
    for S in random_sets(seeded_rng(8), 50):
        assert roundtrip_error(S, cfg) < 0.4


def test_pruned_bound_dominates_unpruned_error():
    cfg = make_sketch(CUBE3, 0.8)
    for S in random_sets(seeded_rng(9), 5, hi=20):
        full = roundtrip(S, cfg)
        pruned = roundtrip(S, cfg, prune_mass=1e-3)
        assert full.pruned_mass == 0.0
        assert pruned.upper_bound >= full.error - 1e-9


def test_shrinking_delta_does_not_increase_max_error():
    sets = random_sets(seeded_rng(10), 20, hi=30)
    worst = [max(roundtrip(S, make_sketch(CUBE3, d), prune_mass=1e-4).upper_bound for S in sets)
             for d in (0.8, 0.4, 0.2)]
    assert worst[0] >= worst[1] >= worst[2]


def test_sketch_length_independent_of_set_size():
    cfg = make_sketch(CUBE3, 0.8)
    rng = seeded_rng(11)
    small = WeightedPointSet(CUBE3.sample(rng, 10))
    large = WeightedPointSet(CUBE3.sample(rng, 10_000))
    assert encode(small, cfg).shape == encode(large, cfg).shape == (cfg.a,)
