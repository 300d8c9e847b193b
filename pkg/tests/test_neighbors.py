import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvldl.dataset import MultiViewDataset
from mvldl.errors import ParameterError, ValidationError
from mvldl.neighbors import complement_union, knn_per_view, neighbor_sets

from oracles import knn_bruteforce


def unlabeled(*views):
    n = np.asarray(views[0]).shape[0]
    return MultiViewDataset(views=tuple(np.asarray(v, dtype=float) for v in views),
                            labels=np.zeros((n, 2)), labeled=[])


def test_one_dimensional_example():
    ds = unlabeled(np.array([[0.0], [1.0], [2.0], [10.0]]))
    np.testing.assert_array_equal(knn_per_view(ds, 2)[0, 0], [1, 2])


def test_duplicates_are_first_neighbors():
    ds = unlabeled(np.array([[0.0, 0.0], [5.0, 5.0], [1.0, 1.0], [5.0, 5.0], [9.0, 0.0]]))
    nb = knn_per_view(ds, 2)[0]
    assert nb[1, 0] == 3 and nb[3, 0] == 1


def test_ties_break_by_index():
    ds = unlabeled(np.array([[0.0], [1.0], [-1.0], [2.0]]))
    np.testing.assert_array_equal(knn_per_view(ds, 3)[0, 0], [1, 2, 3])


def test_k_equal_n_minus_one_lists_everyone():
    rng = np.random.default_rng(0)
    ds = unlabeled(rng.standard_normal((7, 3)), rng.standard_normal((7, 2)))
    nb = knn_per_view(ds, 6)
    for v in range(2):
        for i in range(7):
            assert sorted(nb[v, i]) == [j for j in range(7) if j != i]


@pytest.mark.parametrize("k", [0, 4, 10])
def test_bad_k(k):
    with pytest.raises(ParameterError):
        knn_per_view(unlabeled(np.zeros((4, 1))), k)


def test_union_example():
    per_view = np.zeros((2, 6, 2), dtype=int)
    per_view[:, 1:] = 0  # samples 1..5 point at 0
    per_view[0, 0] = [2, 3]
    per_view[1, 0] = [3, 5]
    nbrs = complement_union(per_view)
    np.testing.assert_array_equal(nbrs.union[0], [2, 3, 5])
    assert nbrs.sizes[0] == 3


def test_union_single_view():
    rng = np.random.default_rng(1)
    nbrs = neighbor_sets(unlabeled(rng.standard_normal((12, 2))), 4)
    assert np.all(nbrs.sizes == 4)
    for i in range(12):
        np.testing.assert_array_equal(nbrs.union[i], np.sort(nbrs.per_view[0, i]))


def test_union_disjoint_sets():
    n, k = 13, 4
    per_view = np.zeros((3, n, k), dtype=int)
    per_view[:, 1:] = 0
    for v in range(3):
        per_view[v, 0] = 1 + 4 * v + np.arange(4)
    assert complement_union(per_view).sizes[0] == 12


def test_union_rejects_self_neighbor():
    per_view = np.array([[[1], [1]]])
    with pytest.raises(ValidationError):
        complement_union(per_view)


def test_view_mask():
    per_view = np.zeros((2, 6, 2), dtype=int)
    per_view[:, 1:] = 0
    per_view[0, 0] = [2, 3]
    per_view[1, 0] = [3, 5]
    mask = complement_union(per_view).view_mask(0)
    np.testing.assert_array_equal(mask, [[True, True, False], [False, True, True]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(3, 50), st.integers(1, 3), st.integers(1, 8))
def test_knn_matches_bruteforce(seed, n, V, k):
    k = min(k, n - 1)
    rng = np.random.default_rng(seed)
    # integer coordinates create plenty of distance ties
    views = [rng.integers(-3, 4, size=(n, int(rng.integers(1, 4)))).astype(float) for _ in range(V)]
    ds = unlabeled(*views)
    nbrs = neighbor_sets(ds, k)
    for v, X in enumerate(views):
        assert nbrs.per_view[v].tolist() == knn_bruteforce(X, k)
    for i in range(n):
        assert i not in nbrs.union[i]
        assert k <= nbrs.union[i].size <= V * k
        for v in range(V):
            assert set(nbrs.per_view[v, i]) <= set(nbrs.union[i])
    # union does not depend on the order of the views
    flipped = neighbor_sets(unlabeled(*views[::-1]), k)
    for i in range(n):
        np.testing.assert_array_equal(nbrs.union[i], flipped.union[i])
