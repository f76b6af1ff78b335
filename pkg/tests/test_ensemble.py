import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixmad.data import ColumnSpec, Dataset, Schema, SchemaError, SynthConfig, generate_synthetic
from mixmad.dbn import abstract_deterministic, abstracted_free_energy
from mixmad.ensemble import (
    EnsembleModel,
    aggregate_pnorm,
    fit,
    flag_anomalies,
    format_p,
    level_energies,
    n_flagged,
    parse_p,
    rank_levels,
    score,
    top_mask,
)
from mixmad.rbm import TrainConfig, free_energy

FAST = TrainConfig(epochs=3, seed=1)
P_VALUES = [0.5, 1.0, 2.0, math.inf]


@pytest.fixture(scope="module")
def small_data():
    return generate_synthetic(SynthConfig(n_inliers=120, n_outliers=12), seed=4)


@pytest.fixture(scope="module")
def deep_model(small_data):
    return fit(small_data, 3, [6, 4], [3, 3, 2], FAST)


def test_aggregate_examples():
    assert aggregate_pnorm([2, 3, 5], 1) == 10
    assert aggregate_pnorm([2, 3, 5], math.inf) == 5
    assert aggregate_pnorm([3, 4], 2) == pytest.approx(5.0, abs=1e-15)


def test_aggregate_rejects_negative():
    with pytest.raises(ValueError):
        aggregate_pnorm([1, -1], 1)
    with pytest.raises(ValueError):
        aggregate_pnorm([1, 1], 0)


def test_aggregate_is_borda_and_max_exactly(rng):
    for _ in range(1000):
        r = rng.integers(1, 500, int(rng.integers(1, 6))) / rng.choice([1, 2])
        assert aggregate_pnorm(r, 1) == math.fsum(r)
        assert aggregate_pnorm(r, math.inf) == max(r)


def test_aggregate_large_p_no_overflow():
    assert aggregate_pnorm([1e6, 2e6], 200) == pytest.approx(2e6, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 5), elements=st.floats(0, 1000)),
    st.sampled_from(P_VALUES),
    st.integers(0, 4),
    st.floats(0, 10),
)
def test_aggregate_monotone_and_permutation_invariant(r, p, j, bump):
    j = j % r.size
    up = r.copy()
    up[j] += bump
    assert aggregate_pnorm(up, p) >= aggregate_pnorm(r, p)
    assert aggregate_pnorm(r[::-1], p) == pytest.approx(aggregate_pnorm(r, p), rel=1e-12)


def test_parse_and_format_p():
    assert parse_p("inf") == math.inf and format_p(math.inf) == "inf"
    assert format_p(0.5) == "0.5" and format_p(1.0) == "1"
    for bad in ("0", "-2", "nan"):
        with pytest.raises(ValueError):
            parse_p(bad)


def test_ranks_average_ties():
    ranks = rank_levels(np.array([[3.0], [1.0], [3.0], [2.0]]))
    assert ranks[:, 0].tolist() == [3.5, 1.0, 3.5, 2.0]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)), elements=st.integers(-5, 5).map(float)))
def test_ranks_order_isomorphic_with_constant_sum(e):
    r = rank_levels(e)
    m = e.shape[0]
    np.testing.assert_allclose(r.sum(axis=0), m * (m + 1) / 2)
    for l in range(e.shape[1]):
        lo, hi = np.meshgrid(e[:, l], e[:, l], indexing="ij")
        rlo, rhi = np.meshgrid(r[:, l], r[:, l], indexing="ij")
        assert np.all(rlo[lo < hi] < rhi[lo < hi])


TRANSFORMS = [np.exp, lambda v: v**3 + 2 * v, lambda v: np.arctan(v / 50.0), lambda v: 7.5 * v - 3]


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 25), st.integers(1, 4)), elements=st.integers(-20, 20).map(float)),
    st.sampled_from(range(len(TRANSFORMS))),
    st.sampled_from(P_VALUES),
)
def test_monotone_transform_leaves_ranks_and_aggregates(e, t, p):
    r0 = rank_levels(e)
    r1 = rank_levels(TRANSFORMS[t](e))
    assert r0.tobytes() == r1.tobytes()
    assert np.array_equal(aggregate_pnorm(r0, p), aggregate_pnorm(r1, p))


def test_l1_is_single_detector(small_data):
    model = fit(small_data, 1, [], [5], FAST)
    assert model.depth == 1 and len(model.chain) == 0
    rep = score(model, small_data)
    np.testing.assert_array_equal(rep.energies[:, 0], free_energy(model.detectors[0], small_data.values))
    for p in P_VALUES:
        r = score(model, small_data, p=p)
        # p-norm of a single rank is the rank itself
        np.testing.assert_allclose(r.aggregate, r.ranks[:, 0], rtol=1e-12)
        assert np.array_equal(np.argsort(r.aggregate, kind="stable"), np.argsort(rep.energies[:, 0], kind="stable"))


def test_fit_structure(deep_model):
    assert deep_model.depth == 3
    assert deep_model.abstraction_sizes == [6, 4]
    assert deep_model.detection_sizes == [3, 3, 2]
    assert deep_model.detectors[1].n_visible == 6 and deep_model.detectors[2].n_visible == 4


def test_fit_history(small_data):
    hist = {}
    fit(small_data, 2, [4], [3, 3], FAST, history=hist)
    assert sorted(hist) == [("abstraction", 1), ("detector", 1), ("detector", 2)]
    assert all(len(v) == FAST.epochs for v in hist.values())


def test_fit_rejects_bad_sizes(small_data):
    with pytest.raises(ValueError, match="abstraction sizes"):
        fit(small_data, 2, [], [3, 3], FAST)
    with pytest.raises(ValueError):
        fit(small_data, 0, [], [], FAST)


def test_fit_is_deterministic(small_data, deep_model):
    again = fit(small_data, 3, [6, 4], [3, 3, 2], FAST)
    a, b = score(deep_model, small_data), score(again, small_data)
    assert a.energies.tobytes() == b.energies.tobytes()
    assert a.aggregate.tobytes() == b.aggregate.tobytes()


def test_score_levels_use_mean_field(small_data, deep_model):
    x = small_data.values
    e = level_energies(deep_model, small_data)
    for l in (1, 2):
        h = abstract_deterministic(deep_model.chain, x, l)
        np.testing.assert_allclose(e[:, l], abstracted_free_energy(deep_model.detectors[l], h), rtol=1e-13)


def test_score_is_pure(small_data, deep_model):
    a, b = score(deep_model, small_data), score(deep_model, small_data)
    assert a.energies.tobytes() == b.energies.tobytes() and a.aggregate.tobytes() == b.aggregate.tobytes()


def test_score_threads_identical(deep_model):
    big = generate_synthetic(SynthConfig(n_inliers=700, n_outliers=50), seed=9)
    one = level_energies(deep_model, big, threads=1)
    four = level_energies(deep_model, big, threads=4)
    assert one.tobytes() == four.tobytes()


@pytest.mark.parametrize("p", P_VALUES)
def test_singleton_dataset(deep_model, small_data, p):
    one = Dataset(small_data.schema, small_data.values[:1])
    rep = score(deep_model, one, p=p)
    assert rep.ranks.tolist() == [[1.0, 1.0, 1.0]]
    assert rep.aggregate[0] == pytest.approx(3 ** (1 / p) if p != math.inf else 1.0, rel=1e-15)


@pytest.mark.parametrize("p", P_VALUES)
def test_dominance(p):
    ranks = rank_levels(np.array([[1.0, 5.0], [2.0, 6.0], [0.5, 5.5]]))
    agg = aggregate_pnorm(ranks, p)
    assert agg[1] > agg[0] and agg[1] > agg[2]


def test_schema_mismatch_names_column(deep_model, small_data):
    cols = list(small_data.schema)
    cols[3] = ColumnSpec("renamed", cols[3].kind, cols[3].cardinality)
    bad = Dataset(Schema(tuple(cols)), small_data.values)
    with pytest.raises(SchemaError, match="renamed"):
        score(deep_model, bad)


def test_model_invariants(deep_model):
    with pytest.raises(ValueError):
        EnsembleModel(deep_model.schema, deep_model.chain, deep_model.detectors[:2])
    with pytest.raises(ValueError):
        EnsembleModel(deep_model.schema, deep_model.chain, deep_model.detectors, p=-1)


def test_flag_counts():
    assert top_mask(np.arange(100.0), 0.1).sum() == 10
    assert top_mask(np.arange(10.0), 1e-9).sum() == 1
    assert n_flagged(0.07, 100) == 7
    with pytest.raises(ValueError):
        n_flagged(1.0, 10)


def test_flag_ties_by_index():
    mask = top_mask(np.array([1.0, 5.0, 5.0, 5.0, 0.0]), 0.4)
    assert mask.tolist() == [False, True, True, False, False]


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 40), elements=st.integers(0, 30).map(float)),
    st.floats(0.01, 0.99),
    st.sampled_from([0.5, 2.0, 3.0, 1e3]),
)
def test_flags_scale_invariant(agg, c, k):
    assert np.array_equal(top_mask(agg, c), top_mask(agg * k, c))


def test_flag_anomalies_report(small_data, deep_model):
    rep = flag_anomalies(score(deep_model, small_data), 0.1)
    assert rep.flags.sum() == math.ceil(0.1 * len(small_data))
    assert rep.aggregate[rep.flags].min() >= rep.aggregate[~rep.flags].max()
