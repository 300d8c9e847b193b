import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvldl import graph, propagate
from mvldl.dataset import MultiViewDataset, SyntheticSpec, generate_synthetic, mask_labels
from mvldl.errors import ParameterError, TrainingError, ValidationError
from mvldl.model import (Hyperparams, ModelParams, load_model, objective, predict, predict_raw, save_model, train,
                         update_weights, zero_params)
from mvldl.neighbors import neighbor_sets

from oracles import ridge_objective


def fd_gradient(f, Ws, h=1e-6):
    grads = []
    for v, W in enumerate(Ws):
        g = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            plus = [w.copy() for w in Ws]
            minus = [w.copy() for w in Ws]
            plus[v][idx] += h
            minus[v][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        grads.append(g)
    return np.concatenate([g.ravel() for g in grads])


def random_ridge_instance(rng):
    V = int(rng.integers(1, 4))
    n = int(rng.integers(3, 15))
    q = int(rng.integers(2, 5))
    dims = rng.integers(1, 6, size=V)
    views = tuple(rng.standard_normal((n, d)) * 10.0 ** rng.uniform(-1, 1) for d in dims)
    ds = MultiViewDataset(views=views, labels=np.zeros((n, q)), labeled=[])
    D = rng.dirichlet(np.ones(q), size=n * V)
    lam = 10.0 ** rng.uniform(-3, 3)
    return ds, D, lam


def ridge_gradient_ratio(ds, D, lam, params):
    Ds = [D[v * ds.n:(v + 1) * ds.n] for v in range(ds.V)]

    def f(Ws):
        return ridge_objective(ds.views, Ds, Ws, lam)

    at_solution = fd_gradient(f, list(params.per_view))
    at_zero = fd_gradient(f, [np.zeros_like(W) for W in params.per_view])
    return np.linalg.norm(at_solution) / np.linalg.norm(at_zero)


# ------------------------------------------------------------------ weights


def test_zero_targets_give_zero_weights():
    rng = np.random.default_rng(0)
    ds, D, lam = random_ridge_instance(rng)
    params = update_weights(ds, np.zeros_like(D), lam)
    assert all(np.all(W == 0) for W in params.per_view)


def test_scalar_case():
    ds = MultiViewDataset(views=(np.array([[1.0]]),), labels=np.array([[1.0]]), labeled=[0])
    W = update_weights(ds, np.array([[1.0]]), 2.0).per_view[0]
    assert abs(W[0, 0] - 2 / 3) <= 1e-12


def test_finite_difference_gradient_vanishes():
    rng = np.random.default_rng(1)
    for _ in range(10):
        ds, D, lam = random_ridge_instance(rng)
        assert ridge_gradient_ratio(ds, D, lam, update_weights(ds, D, lam)) <= 1e-5


def test_normal_equations_hold():
    rng = np.random.default_rng(2)
    for _ in range(20):
        ds, D, lam = random_ridge_instance(rng)
        params = update_weights(ds, D, lam)
        for v, (X, W) in enumerate(zip(ds.views, params.per_view)):
            rhs = lam * X.T @ D[v * ds.n:(v + 1) * ds.n]
            res = (lam * X.T @ X + np.eye(X.shape[1])) @ W - rhs
            assert np.linalg.norm(res) <= 1e-8 * max(np.linalg.norm(rhs), 1e-300)


# ------------------------------------------------------------------ objective


@pytest.fixture(scope="module")
def small():
    ds = mask_labels(generate_synthetic(SyntheticSpec(n=24, V=2, q=3, seed=5)), 0.25, seed=0)
    S = graph.init_similarity(ds, neighbor_sets(ds, 3))
    D = propagate.init_distributions(S, ds)
    return ds, S, D


def test_single_view_has_no_consistency_terms():
    ds = mask_labels(generate_synthetic(SyntheticSpec(n=20, V=1, q=2, seed=1)), 0.3, seed=0)
    S = graph.init_similarity(ds, neighbor_sets(ds, 3))
    D = propagate.init_distributions(S, ds)
    t = objective(ds, S, D, update_weights(ds, D, 1.0), Hyperparams())
    assert t["similarity_consistency"] == 0.0 and t["distribution_consistency"] == 0.0


def test_fit_term_with_zero_weights(small):
    ds, S, D = small
    t = objective(ds, S, D, zero_params(ds), Hyperparams(lam=1.0))
    assert t["fit"] == pytest.approx(np.sum(D.D ** 2), rel=1e-14)
    assert t["reg"] == 0.0


def test_objective_terms_against_loops(small):
    ds, S, D = small
    hyper = Hyperparams(lam=0.5)
    W = update_weights(ds, D, hyper.lam)
    t = objective(ds, S, D, W, hyper)
    n, V = ds.n, ds.V
    feat = sim = 0.0
    for i in range(n):
        U = S.nbrs.union[i]
        w = S.weights[i]
        for v in range(V):
            r = ds.views[v][i] - w[v] @ ds.views[v][U]
            feat += r @ r
            for u in range(V):
                if u != v:
                    sim += np.sum((w[v] - w[u]) ** 2)
    assert t["feature"] == pytest.approx(feat, rel=1e-12)
    assert t["similarity_consistency"] == pytest.approx(sim, rel=1e-12, abs=1e-15)
    total = (hyper.lam * t["fit"] + t["reg"] + hyper.mu1 * t["feature"] + hyper.mu2 * t["distribution"]
             + hyper.sigma * t["similarity_consistency"] + hyper.gamma * t["distribution_consistency"])
    assert t["total"] == pytest.approx(total, rel=1e-14)


def test_objective_rejects_mismatched_shapes(small):
    ds, S, D = small
    with pytest.raises(ValidationError):
        objective(ds, S, D.D[:-1], zero_params(ds), Hyperparams())


# ------------------------------------------------------------------ training


@pytest.fixture(scope="module")
def trained():
    # generator and mask both at their default seed
    ds = mask_labels(generate_synthetic(SyntheticSpec(n=60, V=2, q=3)), 0.1, seed=0)
    return ds, train(ds)


def test_training_is_monotone_and_converges(trained):
    _, result = trained
    assert result.trace.converged
    assert result.trace.iterations <= 50
    assert result.trace.max_relative_increase() <= 1e-8
    assert [s[1] for s in result.trace.steps[:4]] == ["init", "W", "S", "D"]


def test_training_output_invariants(trained):
    ds, result = trained
    graph.check_graph(result.graph)
    propagate.check_distributions(result.distributions, ds)
    assert len(result.trace.seconds) == len(result.trace.steps)


def test_training_is_deterministic(trained):
    ds, result = trained
    other = train(ds)
    for a, b in zip(result.params.per_view, other.params.per_view):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(result.distributions.D, other.distributions.D)
    for a, b in zip(result.graph.weights, other.graph.weights):
        np.testing.assert_array_equal(a, b)


def test_huge_tolerance_runs_one_sweep(small):
    ds, _, _ = small
    result = train(ds, Hyperparams(tol=1e9, k=3))
    assert result.trace.iterations == 1 and result.trace.converged


def test_single_view_without_coupling():
    ds = mask_labels(generate_synthetic(SyntheticSpec(n=40, V=1, q=3, seed=2)), 0.2, seed=2)
    result = train(ds, Hyperparams(sigma=0.0, gamma=0.0, k=5))
    assert result.trace.max_relative_increase() <= 1e-8
    graph.check_graph(result.graph)
    propagate.check_distributions(result.distributions, ds)
    out = predict(result.params, ds.views)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_training_errors():
    ds = generate_synthetic(SyntheticSpec(n=20, V=2, q=2, seed=0))
    empty = MultiViewDataset(views=ds.views, labels=np.zeros_like(ds.labels), labeled=[])
    with pytest.raises(TrainingError):
        train(empty)
    with pytest.raises(ParameterError):
        train(ds, Hyperparams(k=20))


@pytest.mark.parametrize("kw", [dict(lam=0.0), dict(mu1=-1.0), dict(gamma=-1.0), dict(k=0), dict(qp_tol=0.0),
                                dict(max_iter=0)])
def test_bad_hyperparameters(kw):
    with pytest.raises(ParameterError):
        Hyperparams(**kw)


# ------------------------------------------------------------------ prediction


def test_zero_weights_predict_uniform():
    params = ModelParams(per_view=(np.zeros((3, 4)), np.zeros((2, 4))))
    out = predict(params, [np.ones(3), np.ones(2)])
    np.testing.assert_allclose(out, 0.25, atol=1e-15)


def test_feasible_raw_output_is_kept():
    # one view, identity map: the raw average is the input itself
    params = ModelParams(per_view=(np.eye(3),))
    np.testing.assert_allclose(predict(params, [np.array([0.5, 0.3, 0.2])]), [0.5, 0.3, 0.2], atol=1e-15)
    two = ModelParams(per_view=(np.eye(3), np.eye(3)))
    np.testing.assert_allclose(predict(two, [np.array([0.6, 0.2, 0.2]), np.array([0.4, 0.4, 0.2])]),
                               [0.5, 0.3, 0.2], atol=1e-15)


def test_prediction_dimension_mismatch():
    params = ModelParams(per_view=(np.eye(3),))
    with pytest.raises(ValidationError):
        predict(params, [np.ones(4)])
    with pytest.raises(ValidationError):
        predict(params, [np.ones(3), np.ones(3)])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (5, 4), elements=st.floats(-1e3, 1e3)))
def test_prediction_is_always_a_distribution(W, X):
    out = predict(ModelParams(per_view=(W,)), [X])
    assert out.min() >= 0
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_save_load_round_trip(tmp_path, trained):
    ds, result = trained
    hyper = Hyperparams()
    save_model(result.params, hyper, tmp_path / "m.json")
    params, hyper2 = load_model(tmp_path / "m.json")
    assert hyper2 == hyper
    np.testing.assert_array_equal(predict(params, ds.views), predict(result.params, ds.views))
    np.testing.assert_array_equal(predict_raw(params, ds.views), predict_raw(result.params, ds.views))
