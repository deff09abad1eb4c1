import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import mereology.partition as partition
from mereology.moments import dos_histogram, dos_l1_distance
from mereology.partition import (
    PartitionOptions,
    assemble_partitioned_diagonal,
    cost_and_gradient,
    cost_implied_l1_bound,
    evaluate_partition,
    minimize_partition,
    outer_sum,
    peel_factors,
    recursive_partition,
    spectral_norm_error,
)
from mereology.spectra import Spectrum, sample_goe


def composed(d_a, d_b, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=d_a), rng.normal(size=d_b)
    return a, b, Spectrum.from_values(outer_sum(a, b))


def matches_up_to_shift(x, y, tol=1e-6):
    d = np.sort(x) - np.sort(y)
    return np.max(np.abs(d - d.mean())) <= tol


def test_outer_sum_examples():
    assert outer_sum([0, 1], [0, 2]).tolist() == [0, 2, 1, 3]
    assert outer_sum([5.0], [1, 2, 3]).tolist() == [6, 7, 8]
    assert np.sort(outer_sum([0, 1], [0, 2])).tolist() == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        outer_sum([], [1])


def test_cost_exact_and_offset():
    a, b, e = composed(3, 4, 0)
    c, ga, gb = cost_and_gradient(e.energies, a, b)
    assert c == pytest.approx(0.0, abs=1e-28)
    assert np.max(np.abs(ga)) < 1e-14 and np.max(np.abs(gb)) < 1e-14
    delta = np.random.default_rng(1).normal(scale=1e-4, size=12)
    shifted = np.sort(outer_sum(a, b)) + delta
    c, _, _ = cost_and_gradient(shifted, a, b)
    assert c == pytest.approx(np.mean(delta**2), rel=1e-9)
    with pytest.raises(ValueError):
        cost_and_gradient(e.energies, a[:2], b)


def _fd_gradient(e, a, b, h=1e-6):
    x = np.concatenate([a, b])
    g = np.empty_like(x)
    for k in range(x.size):
        up, dn = x.copy(), x.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (cost_and_gradient(e, up[: a.size], up[a.size :])[0] - cost_and_gradient(e, dn[: a.size], dn[a.size :])[0]) / (2 * h)
    return g


def test_gradient_matches_finite_differences_at_twenty_points():
    rng = np.random.default_rng(3)
    e = np.sort(sample_goe(4, 0).energies)
    for _ in range(20):
        a, b = rng.normal(size=4) * 2, rng.normal(size=4) * 2
        _, ga, gb = cost_and_gradient(e, a, b)
        assert np.max(np.abs(np.concatenate([ga, gb]) - _fd_gradient(e, a, b))) < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_gradient_property(d_a, d_b, seed):
    rng = np.random.default_rng(seed)
    e = np.sort(rng.normal(size=d_a * d_b) * 3)
    a, b = rng.normal(size=d_a), rng.normal(size=d_b)
    s = np.sort(outer_sum(a, b))
    # finite differences are only valid away from ties of the outer sum
    assume(np.min(np.diff(s)) >= 1e-4)
    _, ga, gb = cost_and_gradient(e, a, b)
    assert np.max(np.abs(np.concatenate([ga, gb]) - _fd_gradient(e, a, b))) < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_cost_gauge_invariance(d_a, d_b, seed, c):
    rng = np.random.default_rng(seed)
    e = np.sort(rng.normal(size=d_a * d_b))
    a, b = rng.normal(size=d_a), rng.normal(size=d_b)
    assert abs(cost_and_gradient(e, a + c, b - c)[0] - cost_and_gradient(e, a, b)[0]) <= 1e-12 * (1 + c * c)


def test_self_composition_recovery_16():
    a, b, e = composed(16, 16, 0)
    res = minimize_partition(e, 16, 16, PartitionOptions(init_scheme="peel", restarts=1))
    assert res.cost <= 1e-16
    ra = res.a.energies
    assert matches_up_to_shift(ra, a) or matches_up_to_shift(ra, b)


def test_unequal_factor_dimensions():
    a, b, e = composed(4, 8, 5)
    res = minimize_partition(e, 4, 8, PartitionOptions(init_scheme="peel", restarts=1))
    assert res.cost <= 1e-16
    assert matches_up_to_shift(res.a.energies, a) and matches_up_to_shift(res.b.energies, b)


def test_two_scale_example():
    res = minimize_partition(Spectrum([0.0, 1.0, 10.0, 11.0]), 2, 2, PartitionOptions(restarts=4))
    assert res.cost <= 1e-12
    np.testing.assert_allclose(res.b.energies, [-0.5, 0.5], atol=1e-6)
    np.testing.assert_allclose(res.a.energies, [0.5, 10.5], atol=1e-6)


def test_result_invariants():
    e = sample_goe(6, 4)
    res = minimize_partition(e, 8, 8, PartitionOptions(restarts=2, seed=3))
    assert len(res.a) * len(res.b) == len(e)
    assert res.cost == pytest.approx(np.mean(res.epsilon**2), abs=1e-12)
    assert res.h_int_norm == pytest.approx(np.max(np.abs(res.epsilon)))
    assert abs(res.b.energies.mean()) < 1e-12
    s = outer_sum(res.a.energies, res.b.energies)
    assert np.all(np.diff(e.energies[res.p1]) >= 0)
    assert np.all(np.diff(s[res.p2]) >= 0)
    np.testing.assert_allclose(e.energies[res.p1] - s[res.p2], res.epsilon, atol=1e-12)
    assert res.restarts_used == 2 and len(res.restart_costs) == 2
    assert res.cost == pytest.approx(min(res.restart_costs), rel=1e-9)


def test_trace_is_monotone():
    e = sample_goe(8, 1)
    res = minimize_partition(e, 16, 16, PartitionOptions(restarts=1))
    costs = np.array([c for _, c in res.trace])
    assert len(costs) > 2
    assert np.all(np.diff(costs) <= 1e-12 * costs[0])
    assert costs[-1] == pytest.approx(res.cost, rel=1e-9)


def test_deterministic_and_job_independent():
    e = sample_goe(6, 9)
    opts = PartitionOptions(restarts=3, seed=42)
    r1 = minimize_partition(e, 8, 8, opts)
    r2 = minimize_partition(e, 8, 8, opts)
    r3 = minimize_partition(e, 8, 8, opts, jobs=2)
    np.testing.assert_array_equal(r1.a.energies, r2.a.energies)
    np.testing.assert_array_equal(r1.a.energies, r3.a.energies)
    assert r1.restart_costs == r3.restart_costs


def test_target_cost_stops_early():
    _, _, e = composed(8, 8, 2)
    res = minimize_partition(e, 8, 8, PartitionOptions(init_scheme="peel", restarts=8, target_cost=1e-20))
    assert res.restarts_used == 1 and res.init_used == "peel"


def test_quantile_block_start():
    e = sample_goe(6, 0)
    res = minimize_partition(e, 8, 8, PartitionOptions(init_scheme="quantile-block", restarts=1))
    assert np.isfinite(res.cost)
    assert res.init_used == "quantile-block"


def test_peel_factors():
    a, b, e = composed(8, 8, 11)
    found = peel_factors(e.energies, 8, 8)
    assert found is not None
    fa, fb = found
    assert np.allclose(np.sort(outer_sum(fa, fb)), e.energies, atol=1e-12)
    assert peel_factors(sample_goe(6, 0).energies, 8, 8) is None
    # degenerate input: every level equal
    fa, fb = peel_factors(np.zeros(4), 2, 2)
    assert np.allclose(outer_sum(fa, fb), 0)


def test_peel_falls_back_on_generic_spectra():
    res = minimize_partition(sample_goe(6, 7), 8, 8, PartitionOptions(init_scheme="peel", restarts=1))
    assert res.init_used == "random-gaussian"


def test_dimension_errors():
    e = sample_goe(4, 0)
    with pytest.raises(ValueError):
        minimize_partition(e, 3, 5)
    with pytest.raises(ValueError):
        minimize_partition(e, 1, 16)
    with pytest.raises(ValueError):
        PartitionOptions(restarts=0)
    with pytest.raises(ValueError):
        PartitionOptions(init_scheme="psychic")


def test_non_finite_restart_is_skipped(monkeypatch):
    real = partition._solve_once
    calls = []

    def flaky(e0, x0, d_a, opts):
        calls.append(1)
        if len(calls) == 1:
            return x0, float("nan"), []
        return real(e0, x0, d_a, opts)

    monkeypatch.setattr(partition, "_solve_once", flaky)
    res = minimize_partition(sample_goe(4, 0), 4, 4, PartitionOptions(restarts=2))
    assert np.isinf(res.restart_costs[0]) and np.isfinite(res.cost)


def test_all_restarts_failing_raises(monkeypatch):
    monkeypatch.setattr(partition, "_solve_once", lambda e0, x0, d_a, opts: (x0, float("inf"), []))
    with pytest.raises(FloatingPointError):
        minimize_partition(sample_goe(4, 0), 4, 4, PartitionOptions(restarts=2))


def test_spectral_norm_error_examples():
    a, b, e = composed(4, 4, 1)
    exact = evaluate_partition(e, a, b)
    assert spectral_norm_error(e, exact) == -52.0
    # E differs from sorted(A+B) = [0, 1, 10, 11] by a quarter of max|E| at one level
    e2 = Spectrum([0.0, 1.0 + 0.25 * 11.0, 10.0, 11.0])
    res = evaluate_partition(e2, [0.0, 10.0], [0.0, 1.0])
    assert spectral_norm_error(e2, res) == pytest.approx(-2.0)


def test_goe_spectral_norm_improves_with_size():
    err = {}
    for n in (4, 8):
        vals = []
        for k in range(8):
            e = sample_goe(n, 100 + k)
            d = 2 ** (n // 2)
            vals.append(spectral_norm_error(e, minimize_partition(e, d, d, PartitionOptions(restarts=1, seed=k))))
        err[n] = np.mean(vals)
    assert err[8] < err[4]


def test_assembled_diagonal():
    a, b, e = composed(4, 4, 6)
    res = minimize_partition(e, 4, 4, PartitionOptions(init_scheme="peel", restarts=1))
    diag = assemble_partitioned_diagonal(e, res)
    np.testing.assert_allclose(diag, outer_sum(res.a.energies, res.b.energies), atol=1e-12)

    g = sample_goe(6, 2)
    res = minimize_partition(g, 8, 8, PartitionOptions(restarts=1))
    diag = assemble_partitioned_diagonal(g, res)
    np.testing.assert_array_equal(np.sort(diag), g.energies)
    resid = diag - outer_sum(res.a.energies, res.b.energies)
    assert np.max(np.abs(resid)) == pytest.approx(res.h_int_norm, rel=1e-12)
    np.testing.assert_allclose(np.sort(resid), np.sort(res.epsilon), atol=1e-12)


def test_recursive_partition_nested_composition():
    rng = np.random.default_rng(8)
    parts = [rng.normal(size=4) * s for s in (1.0, 1.3, 0.7, 1.1)]
    e = Spectrum.from_values(outer_sum(outer_sum(parts[0], parts[1]), outer_sum(parts[2], parts[3])))
    tree = recursive_partition(e, max_depth=3, opts=PartitionOptions(init_scheme="peel", restarts=2))
    assert tree.max_depth() == 2
    splits = [n for n in tree.iter_nodes() if n.result is not None]
    assert len(splits) == 3
    assert all(n.result.cost <= 1e-12 for n in splits)
    leaves = [n for n in tree.iter_nodes() if n.is_leaf]
    assert len(leaves) == 4 and all(len(n.spectrum) == 4 for n in leaves)
    levels = tree.level_summary()
    assert [row["depth"] for row in levels] == [0, 1]
    json.dumps(tree.to_json_dict())


def test_recursive_partition_respects_max_depth():
    tree = recursive_partition(sample_goe(8, 0), max_depth=1, opts=PartitionOptions(restarts=1))
    assert tree.max_depth() <= 1
    assert all(n.depth <= 1 for n in tree.iter_nodes())
    with pytest.raises(ValueError):
        recursive_partition(sample_goe(3, 0), max_depth=1)
    with pytest.raises(ValueError):
        recursive_partition(sample_goe(4, 0), max_depth=0)


def test_result_json():
    e = sample_goe(4, 0)
    res = minimize_partition(e, 4, 4, PartitionOptions(restarts=1))
    data = json.loads(json.dumps(res.to_json_dict(e)))
    assert {"a", "b", "cost", "spectral_norm", "epsilon_max", "restarts_used", "trace"} <= set(data)
    assert data["spectral_norm"] == pytest.approx(spectral_norm_error(e, res))


@pytest.mark.parametrize("n", [6, 8])
def test_partitioned_histogram_within_cost_bound(n):
    e = sample_goe(n, 1)
    d = 2 ** (n // 2)
    res = minimize_partition(e, d, d, PartitionOptions(restarts=1))
    h_e = dos_histogram(e, 16)
    h_p = dos_histogram(Spectrum(res.partitioned_energies), 16)
    assert dos_l1_distance(h_e, h_p) <= 2 * cost_implied_l1_bound(res.cost, h_e.widths[0])
