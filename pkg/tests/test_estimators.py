import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot import grid
from oneshot.estimators import (
    ESTIMATORS,
    EncodedSignal,
    SignalBatch,
    avgm_machine,
    avgm_server,
    boost_confidence,
    centralized,
    constbit_machine,
    constbit_server,
    dequantize_point,
    get_estimator,
    mrec_machine,
    mrec_machines,
    mrec_server,
    quantize_point,
    redundancy_elimination,
)
from oneshot.losses import (
    DomainCube,
    MachineDataset,
    SquaredDistanceLoss,
    make_cubic_pair_distribution,
    make_quadratic_distribution,
    make_ridge_distribution,
)

CUBE2 = DomainCube(2)


def params_at(m, n, d, delta, exact=False):
    """Parameters with the smallest feasible budget and the given ``delta``."""
    logmn = math.log2(m * n)
    B = math.ceil(d * logmn)
    raw = 2 * d * logmn**3 * max((m * B) ** (-1 / d), 2 ** (d / 2) / math.sqrt(m))
    return grid.derive_params(m, n, d, B, delta_scale=delta / raw, exact=exact)


def replicated(data: MachineDataset, m: int) -> MachineDataset:
    return MachineDataset(data.samples.take(np.zeros(m, dtype=np.int64)))


def fixed_points_dataset(points, m=1):
    """Every machine holds the squared-distance losses centred at ``points``."""
    z = np.broadcast_to(np.asarray(points, dtype=float), (m,) + np.shape(points)).copy()
    return MachineDataset(SquaredDistanceLoss(z))


# ---------------------------------------------------------------------------
# MRE-C machine side


def test_single_level_signals_carry_anchor_gradient():
    params = grid.derive_params(1000, 2, 2, 22)
    assert params.t == 0
    c = np.array([0.3, -0.4])
    data = fixed_points_dataset([c, c])
    sig = mrec_machine(data, params, np.random.default_rng(0))
    assert len(sig.bits) == params.sub_signals * params.sub_signal_bits
    s, levels, cells, codes = grid.decode_fields(sig.bits.reshape(params.sub_signals, -1), params)
    assert np.all(levels == 0) and np.all(cells == 0)
    expected_s = grid.nearest_grid_indices(c[None], params)[0]
    assert np.all(s == expected_s)
    anchor = grid.anchor_position(expected_s, params)
    delta = grid.dequantize_codes(codes, 0, params)
    assert np.allclose(delta, (anchor - c) / (2 * math.sqrt(2)), atol=params.accuracy)


def test_anchor_is_nearest_lattice_point_to_local_minimizer():
    params = grid.derive_params(1000, 1000, 2, 40, delta_scale=1e-4)
    assert params.s_max > params.s_min
    c = np.array([0.55, -0.2])
    data = fixed_points_dataset(np.tile(c, (1000, 1)))
    sig = mrec_machine(data, params, np.random.default_rng(0))
    s, *_ = grid.decode_fields(sig.bits.reshape(params.sub_signals, -1), params)
    assert np.all(s == [1, 0])


def test_signal_length_matches_budget_for_every_machine():
    params = grid.derive_params(500, 1, 2, 40, delta_scale=1e-3)
    data = make_ridge_distribution(2).dataset(500, 1, np.random.default_rng(0))
    batch, _ = mrec_machines(data, params, np.random.default_rng(1))
    assert np.all(batch.bit_lengths() == params.machine_budget)
    assert batch.bits.shape == (500, params.sub_signals * params.sub_signal_bits)


def test_mrec_machine_rejects_many_machines():
    params = grid.derive_params(100, 1, 2, 20)
    data = make_ridge_distribution(2).dataset(3, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mrec_machine(data, params, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# MRE-C server side


def test_single_level_estimate_is_anchor():
    params = grid.derive_params(200, 1, 2, 20)
    data = make_ridge_distribution(2).dataset(200, 1, np.random.default_rng(0))
    batch, _ = mrec_machines(data, params, np.random.default_rng(1))
    result = mrec_server(batch, params)
    assert np.array_equal(result.theta, grid.anchor_position(result.s_star, params))


def exact_replica_run(m=3000, seed=0):
    params = params_at(m, 1000, 2, 0.2, exact=True)
    one = make_ridge_distribution(2, seed=3).dataset(1, 1000, np.random.default_rng(seed))
    batch, clamped = mrec_machines(replicated(one, m), params, np.random.default_rng(seed + 1))
    return params, one, mrec_server(batch, params)


def test_replicated_machine_gradient_field_is_reproduced():
    params, one, result = exact_replica_run()
    assert params.t == 2
    second = one.second_half()
    for level in range(params.t + 1):
        pts = DomainCube(2).project(result.field.positions(level))
        truth = second.mean_grad(pts[None])[0]
        assert not result.field.orphaned[level].any()
        assert np.abs(result.field.estimates[level] - truth).max() <= 1e-13


def test_replicated_machine_argmin_is_brute_force():
    params, one, result = exact_replica_run()
    pts = DomainCube(2).project(result.field.positions(params.t))
    norms = np.linalg.norm(one.second_half().mean_grad(pts[None])[0], axis=1)
    assert np.array_equal(result.theta, pts[np.argmin(norms)])


def test_quantized_replicas_track_quantized_gradients():
    params = params_at(3000, 1000, 2, 0.2)
    one = make_ridge_distribution(2, seed=3).dataset(1, 1000, np.random.default_rng(0))
    batch, _ = mrec_machines(replicated(one, 3000), params, np.random.default_rng(1))
    result = mrec_server(batch, params)
    truth = one.second_half().mean_grad(DomainCube(2).project(result.field.positions(params.t))[None])[0]
    # each level adds at most one quantization error
    assert np.abs(result.field.estimates[params.t] - truth).max() <= (params.t + 1) * params.accuracy


def test_duplicate_subsignals_do_not_change_output():
    params = grid.derive_params(400, 1, 2, 40, delta_scale=1e-3)
    data = make_ridge_distribution(2).dataset(400, 1, np.random.default_rng(0))
    batch, _ = mrec_machines(data, params, np.random.default_rng(1))
    base = mrec_server(batch, params)
    # the first 50 machines send their signal twice
    extra = SignalBatch(
        np.concatenate([batch.bits, batch.bits[:50]]),
        np.concatenate([batch.machine_ids, batch.machine_ids[:50]]),
    )
    again = mrec_server(extra, params)
    assert np.array_equal(base.theta, again.theta)
    for a, b in zip(base.field.estimates, again.field.estimates):
        assert np.array_equal(a, b)
    assert again.surviving == base.surviving
    assert again.received == base.received + 50 * params.sub_signals


def test_modal_anchor_with_lexicographic_ties():
    params = grid.derive_params(1, 256, 1, 8)
    code = grid.quantize_codes(np.zeros((1, 1)), 0, params)[0]
    rows = [grid.encode_fields([[s]], [0], [[0]], code, params)[0] for s in (1, -1, 1, -1, 2)]
    result = mrec_server([EncodedSignal(r, i) for i, r in enumerate(rows)], params)
    assert result.s_star == (-1,)


def test_fallback_when_level_zero_is_empty():
    params = grid.derive_params(10**4, 1, 2, 27, delta_scale=2.5e-4)
    code = np.zeros((1, 2), dtype=np.uint64)
    row = grid.encode_fields([[0, 0]], [2], [[1, 1]], code, params)[0]
    result = mrec_server([EncodedSignal(row, 0)], params)
    assert result.fallback
    assert np.array_equal(result.theta, [0.0, 0.0])


def test_orphans_inherit_parent_estimate():
    params = grid.derive_params(10**4, 1, 2, 27, delta_scale=2.5e-4)
    v0 = grid.quantize_codes(np.array([[0.5, -0.25]]), 0, params)[0]
    row = grid.encode_fields([[0, 0]], [0], [[0, 0]], v0, params)[0]
    result = mrec_server([EncodedSignal(row, 0)], params)
    est0 = result.field.estimates[0][0]
    for level in range(1, params.t + 1):
        assert result.field.orphaned[level].all()
        assert np.allclose(result.field.estimates[level], est0)
    # all level-t estimates tie, so the first cell wins
    assert np.allclose(result.theta, result.field.positions(params.t)[0])


def test_server_rejects_bad_lengths():
    params = grid.derive_params(100, 1, 2, 20)
    with pytest.raises(grid.MalformedSignalError):
        mrec_server([EncodedSignal(np.zeros(params.width + 1, np.uint8), 0)], params)
    with pytest.raises(grid.MalformedSignalError):
        SignalBatch.from_signals([EncodedSignal(np.zeros(3, np.uint8), 0), EncodedSignal(np.zeros(4, np.uint8), 1)])


def test_argmin_invariant_under_gradient_rescaling():
    # doubling every loss doubles every gradient difference; argmin point stays put
    params = params_at(2000, 1000, 2, 0.2, exact=True)
    rng = np.random.default_rng(0)
    z = rng.uniform(-0.5, 0.5, (1, 1000, 2))
    one = MachineDataset(SquaredDistanceLoss(z))

    class Doubled(SquaredDistanceLoss):
        @property
        def coef(self):
            return 2 * super().coef

    two = MachineDataset(Doubled(z))
    a = mrec_server(mrec_machines(replicated(one, 2000), params, np.random.default_rng(1))[0], params)
    b = mrec_server(mrec_machines(replicated(two, 2000), params, np.random.default_rng(1))[0], params)
    assert np.array_equal(a.theta, b.theta)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 2), st.integers(0, 5)), min_size=1, max_size=40))
def test_redundancy_elimination_idempotent(rows):
    ids, levels, ords = (np.array(c) for c in zip(*rows))
    keep = redundancy_elimination(ids, levels, ords)
    again = redundancy_elimination(ids[keep], levels[keep], ords[keep])
    assert np.array_equal(again, np.arange(len(keep)))
    assert len(keep) == len(set(rows))
    # first occurrence survives
    seen = set()
    firsts = [i for i, r in enumerate(rows) if not (r in seen or seen.add(r))]
    assert keep.tolist() == firsts


def test_mrec_is_deterministic():
    params = grid.derive_params(1000, 1, 2, 20, delta_scale=1e-3)
    dist = make_ridge_distribution(2)
    out = []
    for _ in range(2):
        data = dist.dataset(1000, 1, np.random.default_rng(5))
        out.append(mrec_server(mrec_machines(data, params, np.random.default_rng(6))[0], params).theta)
    assert np.array_equal(*out)


# ---------------------------------------------------------------------------
# averaging


def test_avgm_constant_and_pair():
    assert np.array_equal(avgm_server([[0.2, 0.3]] * 5), [0.2, 0.3])
    assert avgm_server([[0.0], [1.0]]) == pytest.approx([0.5])


def test_avgm_machines_return_their_minimizer():
    c = np.array([0.25, -0.5])
    data = fixed_points_dataset([c, c], m=4)
    assert np.allclose(avgm_machine(data, CUBE2), c, atol=1e-7)


def test_point_quantizer_grid_and_round_trip():
    cube = DomainCube(1, 0.0, 1.0)
    assert np.array_equal(quantize_point([0.0, 1.0], cube, 4), [0, 15])
    back = dequantize_point(quantize_point(np.linspace(0, 1, 101), cube, 4), cube, 4)
    assert np.abs(back - np.linspace(0, 1, 101)).max() <= 0.5 / 15 + 1e-12


def binomial_mean_abs_error(m, p, target):
    k = np.arange(m + 1)
    logpmf = np.array([math.lgamma(m + 1) - math.lgamma(i + 1) - math.lgamma(m - i + 1) for i in k])
    logpmf += k * math.log(p) + (m - k) * math.log(1 - p)
    return float(np.sum(np.exp(logpmf) * np.abs(k / m - target)))


def test_avgm_cubic_pair_bias():
    dist = make_cubic_pair_distribution()
    oracle = binomial_mean_abs_error(10**4, 0.5, dist.true_minimizer[0])
    assert oracle == pytest.approx(0.0635, abs=5e-4)
    errs = []
    for seed in range(20):
        data = dist.dataset(10**4, 1, np.random.default_rng(seed))
        theta = avgm_server(avgm_machine(data, dist.cube, 14))
        errs.append(abs(theta[0] - dist.true_minimizer[0]))
    assert np.mean(errs) > 0.06
    assert abs(np.mean(errs) - oracle) < 4 * 0.005 / math.sqrt(20)


# ---------------------------------------------------------------------------
# constant-bit


def constbit_for(theta, m, seed=0):
    data = fixed_points_dataset(np.tile(theta, (2, 1)), m=m)
    return constbit_machine(data, DomainCube(len(theta)), np.random.default_rng(seed))


def test_constbit_extremes_and_probabilities():
    assert constbit_for([1.0, -1.0], 1000).tolist() == [[1, 0]] * 1000
    assert constbit_for([0.0], 10**5).mean() == pytest.approx(0.5, abs=0.005)
    bits = constbit_for([0.5, -0.5], 10**5)
    assert bits.mean(axis=0) == pytest.approx([0.75, 0.25], abs=0.005)
    assert bits.shape[1] == 2 and bits.dtype == np.uint8


def test_constbit_unit_interval_convention():
    data = fixed_points_dataset(np.tile([0.3], (2, 1)), m=10**5)
    bits = constbit_machine(data, DomainCube(1, 0.0, 1.0), np.random.default_rng(0))
    assert bits.mean() == pytest.approx(0.3, abs=0.005)
    assert constbit_server(bits, DomainCube(1, 0.0, 1.0))[0] == pytest.approx(0.3, abs=0.005)


def test_constbit_server():
    assert np.array_equal(constbit_server(np.ones((7, 3), np.uint8)), [1.0, 1.0, 1.0])
    theta = constbit_server(constbit_for([0.2], 10**5))
    assert theta[0] == pytest.approx(0.2, abs=0.01)
    with pytest.raises(ValueError):
        constbit_server([[1, 0], [1]])
    with pytest.raises(ValueError):
        constbit_server(np.ones((3, 2)), DomainCube(3))


def test_constbit_unbiased_with_small_variance():
    m, trials = 50, 10**4
    rng = np.random.default_rng(0)
    theta_i = rng.uniform(-1, 1, (m, 2))
    prob = (1 + theta_i) / 2
    est = np.array([2 * (rng.random((m, 2)) < prob).mean(axis=0) - 1 for _ in range(trials)])
    bias = np.abs(est.mean(axis=0) - theta_i.mean(axis=0))
    assert np.all(bias <= 3 / (2 * math.sqrt(trials * m)))
    assert np.all(est.var(axis=0) <= 1 / m)


# ---------------------------------------------------------------------------
# centralized


def test_centralized_single_machine_matches_avgm():
    dist = make_ridge_distribution(2)
    data = dist.dataset(1, 30, np.random.default_rng(0))
    assert np.allclose(centralized(data, dist.cube), avgm_machine(data, dist.cube)[0], atol=1e-9)


def test_centralized_duplicated_sample():
    data = fixed_points_dataset(np.tile([0.1, 0.7], (3, 1)), m=4)
    assert np.allclose(centralized(data, CUBE2), [0.1, 0.7], atol=1e-8)


def test_centralized_cubic_pair_error():
    dist = make_cubic_pair_distribution()
    errs = [abs(centralized(dist.dataset(10**4, 1, np.random.default_rng(s)), dist.cube)[0] - dist.true_minimizer[0])
            for s in range(50)]
    assert np.mean(errs) <= 0.02


# ---------------------------------------------------------------------------
# confidence boosting


def test_boost_examples():
    assert np.array_equal(boost_confidence([[0.3, 0.3]] * 4), [0.3, 0.3])
    assert np.array_equal(boost_confidence([[0.0]] * 4 + [[1.0]]), [0.0])
    with pytest.raises(ValueError):
        boost_confidence([[0.0], [1.0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 30), st.floats(0.001, 0.1), st.integers(0, 2**31))
def test_boost_with_planted_majority(k, r, seed):
    rng = np.random.default_rng(seed)
    good = int(math.ceil(0.6 * k))
    if good < k // 2 + 1:
        good = k // 2 + 1
    center = rng.uniform(-0.5, 0.5, 2)
    direction = rng.standard_normal((good, 2))
    inliers = center + r * rng.random((good, 1)) * direction / np.linalg.norm(direction, axis=1, keepdims=True)
    outliers = rng.uniform(5, 10, (k - good, 2)) * rng.choice([-1, 1], (k - good, 2))
    pts = rng.permutation(np.vstack([inliers, outliers]))
    assert np.linalg.norm(boost_confidence(pts) - center) <= 3 * r


def test_registry():
    assert sorted(ESTIMATORS) == ["avgm", "centralized", "const-bit", "mre-c"]
    with pytest.raises(ValueError):
        get_estimator("median")
    dist = make_quadratic_distribution(2, theta=[0.2, 0.1])
    data = dist.dataset(64, 4, np.random.default_rng(0))
    out = get_estimator("const-bit")(data, dist.cube, np.random.default_rng(1), B=2)
    assert out.budget == 2 and np.all(out.machine_bits == 2)
    out = get_estimator("avgm")(data, dist.cube, np.random.default_rng(1), B=16)
    assert out.budget == 2 * math.ceil(math.log2(64 * 4))
    out = get_estimator("mre-c")(data, dist.cube, np.random.default_rng(1), B=16, delta_scale=1.0)
    assert np.all(out.machine_bits <= out.budget)
