import numpy as np
import pytest

from reliarep.encoders import (
    EncoderError,
    EncoderModel,
    LinearHead,
    ObjectiveWeights,
    encode,
    fit_ridge_encoder,
    lift_group_graph,
    lipschitz_bound,
    smoothing_operator,
    spectral_norm,
    structure_energy_lifted,
    train_representations,
    unified_objective,
    unified_objective_grad,
)
from reliarep.graph import build_graph, laplacian, path_graph
from reliarep.verify import connected_graph, max_pairwise_distance


def linear_data(rng, n=400, m=10, d=3, noise=0.0):
    X = rng.normal(size=(n, m))
    W = rng.normal(size=(m, d))
    T = X @ W + 0.5 + noise * rng.normal(size=(n, d))
    return X, T, W


def test_ridge_small_lambda_recovers_ols(rng):
    X, T, W = linear_data(rng)
    model = fit_ridge_encoder(X, T, 1e-8)
    assert np.allclose(model.W, W, atol=1e-6)
    assert np.allclose(encode(model, X), T, atol=1e-6)


def test_ridge_large_lambda_shrinks_to_mean(rng):
    X, T, _ = linear_data(rng)
    model = fit_ridge_encoder(X, T, 1e12)
    assert np.max(np.abs(model.W)) < 1e-6
    assert np.allclose(encode(model, X), T.mean(axis=0), atol=1e-3)


def test_ridge_normal_equations(rng):
    X, T, _ = linear_data(rng, noise=0.3)
    lam = 5.0
    model = fit_ridge_encoder(X, T, lam)
    Xc, Tc = X - X.mean(0), T - T.mean(0)
    # stationarity: Xc^T (Tc - Xc W) = lam W
    assert np.allclose(Xc.T @ (Tc - Xc @ model.W), lam * model.W, atol=1e-8)


def test_sigma_global_is_residual_covariance(rng):
    X, T, _ = linear_data(rng, noise=0.3)
    model = fit_ridge_encoder(X, T, 1.0)
    resid = T - encode(model, X)
    emp = np.cov(resid.T)
    assert np.allclose(model.Sigma_global, emp, rtol=1e-4, atol=1e-8)
    assert np.linalg.eigvalsh(model.Sigma_global)[0] > 0


def test_ridge_rejects_bad_inputs(rng):
    with pytest.raises(EncoderError):
        fit_ridge_encoder(rng.normal(size=(5, 3)), rng.normal(size=(4, 2)), 1.0)
    with pytest.raises(EncoderError):
        fit_ridge_encoder(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), 0.0)


def test_lift_group_graph():
    lifted = lift_group_graph(path_graph(2), [[0, 1], [2, 3]])
    assert lifted.edges == ((0, 2), (0, 3), (1, 2), (1, 3))
    with pytest.raises(EncoderError):
        lift_group_graph(path_graph(3), [[0, 1], [2, 3]])


def test_smoothing_operator_properties():
    groups = [[0, 1], [2, 3], [4, 5], [6, 7]]
    g = path_graph(4)
    assert np.allclose(smoothing_operator(g, groups, 0.0), np.eye(8))
    M = smoothing_operator(g, groups, 1.0)
    assert np.allclose(M, M.T)
    assert np.allclose(M.sum(axis=1), 1.0)
    eig = np.linalg.eigvalsh(M)
    assert eig.min() > 0 and eig.max() <= 1 + 1e-12
    # strong smoothing on a connected lifted graph averages all dims
    M_inf = smoothing_operator(g, groups, 1e9)
    assert np.allclose(M_inf, np.full((8, 8), 1 / 8), atol=1e-6)
    with pytest.raises(EncoderError):
        smoothing_operator(g, groups, -1.0)


def test_smoothing_reduces_lifted_energy(rng):
    groups = [[0, 1], [2, 3], [4, 5]]
    lifted = lift_group_graph(path_graph(3), groups)
    M = smoothing_operator(path_graph(3), groups, 2.0)
    mu = rng.normal(size=(50, 6))
    assert structure_energy_lifted(mu @ M.T, lifted) < structure_energy_lifted(mu, lifted)


def test_encode_matches_loop_oracle(small_model, small_data):
    X = small_data.X[:5]
    m = small_model
    out = encode(m, X, use_structure=True)
    for i in range(5):
        mu = [sum((X[i, a] - m.x_mean[a]) * m.W[a, k] for a in range(X.shape[1])) + m.b[k] for k in range(m.W.shape[1])]
        sm = [sum(m.M_S[k, j] * mu[j] for j in range(len(mu))) for k in range(len(mu))]
        assert np.allclose(out[i], sm, atol=1e-10)


def test_encode_is_affine(small_model, small_data, rng):
    X1, X2 = small_data.X[:10], small_data.X[10:20]
    t = 0.3
    lhs = encode(small_model, t * X1 + (1 - t) * X2, True)
    rhs = t * encode(small_model, X1, True) + (1 - t) * encode(small_model, X2, True)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_encode_errors(small_model):
    with pytest.raises(EncoderError):
        encode(small_model, np.zeros((2, 3)))
    bare = EncoderModel(small_model.W, small_model.b, small_model.x_mean, small_model.Sigma_global, 1.0)
    with pytest.raises(EncoderError):
        encode(bare, np.zeros((1, small_model.W.shape[0])), use_structure=True)


def test_spectral_norm_matches_svd(rng):
    for shape in [(5, 3), (64, 16), (16, 16), (1, 7)]:
        A = rng.normal(size=shape)
        assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)
    assert spectral_norm(np.zeros((3, 3))) == 0.0


def test_lipschitz_bound(small_model):
    assert lipschitz_bound(small_model) == pytest.approx(np.linalg.norm(small_model.W, 2), rel=1e-6)
    with_s = lipschitz_bound(small_model, with_structure=True)
    assert with_s == pytest.approx(np.linalg.norm(small_model.W, 2) * np.linalg.norm(small_model.M_S, 2), rel=1e-6)


def test_model_save_load(tmp_path, small_model, small_data):
    small_model.save(tmp_path / "m")
    back = EncoderModel.load(tmp_path / "m")
    X = small_data.X[:20]
    assert np.array_equal(encode(back, X, True), encode(small_model, X, True))
    assert back.gamma == small_model.gamma and back.lambda_ridge == small_model.lambda_ridge


def _objective_setup(rng, n=8, d=3, K=3):
    g = connected_graph(rng, n, extra=4)
    Z = rng.normal(size=(n, d))
    sigmas = [np.eye(d) * (1 + i * 0.1) for i in range(n)]
    labels = rng.integers(0, K, n)
    head = LinearHead(rng.normal(size=(d, K)), rng.normal(size=K))
    return g, Z, sigmas, labels, head


def test_objective_gradient_finite_difference(rng):
    g, Z, sigmas, labels, head = _objective_setup(rng)
    wts = ObjectiveWeights(lambda_uncertainty=0.3, lambda_structure=0.7, task_weight=1.0)
    grad = unified_objective_grad(Z, sigmas, labels, g, wts, head)
    h = 1e-6
    num = np.zeros_like(Z)
    for idx in np.ndindex(Z.shape):
        Zp, Zm = Z.copy(), Z.copy()
        Zp[idx] += h
        Zm[idx] -= h
        num[idx] = (unified_objective(Zp, sigmas, labels, g, wts, head=head) - unified_objective(Zm, sigmas, labels, g, wts, head=head)) / (2 * h)
    assert np.allclose(grad, num, atol=1e-6)


def test_objective_terms(rng):
    g, Z, sigmas, labels, head = _objective_setup(rng)
    only_unc = unified_objective(Z, sigmas, labels, g, ObjectiveWeights(lambda_uncertainty=1.0, task_weight=0.0))
    assert only_unc == pytest.approx(np.mean([np.trace(s) for s in sigmas]), rel=1e-12)
    none = unified_objective(Z, sigmas, labels, g, ObjectiveWeights(task_weight=0.0))
    assert none == 0.0
    with pytest.raises(EncoderError):
        ObjectiveWeights(lambda_structure=-1.0)


def test_trainer_consensus_connected(rng):
    g = connected_graph(rng, 20, extra=10)
    Z0 = rng.normal(size=(20, 4))
    sig = [np.eye(4)] * 20
    Z = train_representations(Z0, sig, np.zeros(20, dtype=int), g, ObjectiveWeights(lambda_structure=1.0, task_weight=0.0), steps=20_000, lr=0.05, rtol=0.0)
    assert max_pairwise_distance(Z) < 1e-4
    # the mean is preserved by Laplacian flow
    assert np.allclose(Z.mean(0), Z0.mean(0), atol=1e-10)


def test_trainer_with_task_does_not_collapse(rng):
    g, Z0, sigmas, labels, head = _objective_setup(rng)
    wts = ObjectiveWeights(lambda_structure=0.01, task_weight=1.0)
    Z = train_representations(Z0, sigmas, labels, g, wts, steps=2000, lr=0.5, head=head)
    assert max_pairwise_distance(Z) > 1e-2
    assert unified_objective(Z, sigmas, labels, g, wts, head=head) < unified_objective(Z0, sigmas, labels, g, wts, head=head)


def test_trainer_rejects_bad_args(rng):
    g = path_graph(3)
    with pytest.raises(EncoderError):
        train_representations(np.zeros((3, 1)), [np.eye(1)] * 3, np.zeros(3, int), g, ObjectiveWeights(), lr=0.0)


def test_laplacian_flow_keeps_components_apart(rng):
    g = build_graph(6, [(0, 1, 1), (1, 2, 1), (3, 4, 1), (4, 5, 1)])
    Z0 = np.vstack([rng.normal(size=(3, 2)), rng.normal(size=(3, 2)) + 10])
    Z = train_representations(Z0, [np.eye(2)] * 6, np.zeros(6, int), g, ObjectiveWeights(lambda_structure=1.0, task_weight=0.0), steps=20_000, lr=0.05, rtol=0.0)
    assert max_pairwise_distance(Z[:3]) < 1e-4 and max_pairwise_distance(Z[3:]) < 1e-4
    assert np.linalg.norm(Z[0] - Z[3]) > 1.0
    assert np.allclose(laplacian(g) @ Z, 0.0, atol=1e-4)
