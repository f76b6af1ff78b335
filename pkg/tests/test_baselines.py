import warnings

import numpy as np
import pytest

from mixmad.baselines import knn_score, numeric_matrix, pca_score
from mixmad.data import SynthConfig, generate_synthetic
from oracles import knn_bruteforce, pca_svd


def test_knn_duplicates_give_zero():
    train = np.array([[1.0, 2.0]] * 3 + [[5.0, 5.0]])
    assert knn_score(train, np.array([[1.0, 2.0]]), k=3).tolist() == [0.0]


def test_knn_all_neighbours_is_mean_distance(rng):
    train = rng.normal(size=(6, 3))
    q = rng.normal(size=(2, 3))
    want = np.linalg.norm(q[:, None] - train[None], axis=2).mean(axis=1)
    np.testing.assert_allclose(knn_score(train, q, k=6), want, rtol=1e-14)


def test_knn_five_points():
    pts = np.array([[0, 0], [1, 0], [0, 2], [3, 3], [1, 1]], dtype=float)
    got = knn_score(pts, k=2)
    assert got.tolist() == knn_bruteforce(pts, pts, 2, True).tolist()


@pytest.mark.parametrize("self_scoring", [True, False])
def test_knn_matches_bruteforce_50x10(rng, self_scoring):
    train = rng.normal(size=(50, 10))
    query = None if self_scoring else rng.normal(size=(30, 10))
    got = knn_score(train, query, k=10)
    want = knn_bruteforce(train, train if self_scoring else query, 10, self_scoring)
    assert got.tobytes() == want.tobytes()


def test_knn_invariances(rng):
    train = rng.normal(size=(20, 4))
    base = knn_score(train, k=3)
    perm = rng.permutation(20)
    np.testing.assert_allclose(knn_score(train[perm], k=3), base[perm], rtol=1e-12)
    np.testing.assert_allclose(knn_score(train + rng.normal(size=4), k=3), base, rtol=1e-10)


def test_knn_k_too_large(rng):
    with pytest.raises(ValueError, match="neighbours"):
        knn_score(rng.normal(size=(5, 2)), k=5)


def test_pca_span_is_zero(rng):
    # rank-2 data in 4-D: the query is a mix of the two directions plus the mean
    basis = rng.normal(size=(2, 4))
    train = rng.normal(size=(30, 2)) @ basis
    q = (np.array([[0.3, -1.2]]) @ basis) + train.mean(axis=0)
    assert pca_score(train, q, 0.01)[0] == pytest.approx(0.0, abs=1e-20)


def test_pca_orthogonal_offset_pythagoras():
    t = np.linspace(-2, 2, 9)
    train = np.c_[t, np.zeros_like(t)]
    d = 0.7
    assert pca_score(train, np.array([[1.3, d]]), 0.1)[0] == pytest.approx(d * d, rel=1e-14)


@pytest.mark.parametrize("shape, alpha", [((6, 4), 0.2), ((20, 6), 0.05), ((20, 6), 0.3)])
def test_pca_matches_svd_oracle(rng, shape, alpha):
    for _ in range(20):
        train = rng.normal(size=shape) * rng.uniform(0.1, 3, shape[1])
        q = rng.normal(size=(7, shape[1]))
        np.testing.assert_allclose(pca_score(train, q, alpha), pca_svd(train, q, alpha), rtol=0, atol=1e-8)


def test_pca_invariances(rng):
    train = rng.normal(size=(15, 5))
    s = pca_score(train, discard_fraction=0.2)
    assert np.all(s >= 0)
    shift = rng.normal(size=5) * 10
    np.testing.assert_allclose(pca_score(train + shift, discard_fraction=0.2), s, atol=1e-9)
    assert pca_score(train, train.mean(axis=0, keepdims=True), 0.2)[0] == pytest.approx(0.0, abs=1e-25)


def test_pca_zero_variance_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = pca_score(np.ones((4, 3)), discard_fraction=0.1)
    assert out.tolist() == [0.0] * 4 and any("zero variance" in str(x.message) for x in w)


def test_pca_rejects_alpha():
    with pytest.raises(ValueError):
        pca_score(np.eye(3), discard_fraction=1.0)


def test_numeric_matrix_one_hot():
    ds = generate_synthetic(SynthConfig(n_inliers=5, n_outliers=0), seed=0)
    m = numeric_matrix(ds)
    assert m.shape == (5, 2 + 3 + 2 * 4 + 1)
    np.testing.assert_array_equal(m[:, 5:9].sum(axis=1), 1.0)
