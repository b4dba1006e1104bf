import csv
import io

import numpy as np
import pytest

from latentlag import kernels
from latentlag.granger import (GrangerEstimate, granger_fit, granger_predict, kkt_residual,
                               lagged_design, lasso_objective, latentlag_predict, normalized_mse,
                               predictions_csv, rolling_forecasts)
from latentlag.learn import LearnEstimate
from latentlag.model import random_sparse_system
from latentlag.simulate import SimConfig, simulate


def var1(T, a=0.5, p=1, seed=0):
    rng = np.random.default_rng(seed)
    x = np.zeros((T, p))
    for t in range(1, T):
        x[t] = a * x[t - 1] + rng.standard_normal(p)
    return x


def test_huge_lambda_zeroes_everything():
    est = granger_fit(var1(500, p=3), 2, 1e6)
    assert all(not m.any() for m in est.lag_matrices)


def test_zero_lambda_is_least_squares():
    x = var1(2000, p=3, seed=1)
    est = granger_fit(x, 1, 0.0)
    X, Y = lagged_design(x, 1)
    ls = np.linalg.lstsq(X, Y, rcond=None)[0].T
    np.testing.assert_allclose(est.lag_matrices[0], ls, atol=1e-6)


def test_var1_coefficient():
    est = granger_fit(var1(100_000, seed=2), 1, 1e-4)
    assert est.lag_matrices[0][0, 0] == pytest.approx(0.5, abs=0.01)


def test_per_lag_lambdas():
    est = granger_fit(var1(3000, p=2, seed=3), 3, [1e-4, 1e6, 1e6])
    assert est.lag_matrices[0].any()
    assert not est.lag_matrices[1].any() and not est.lag_matrices[2].any()


def test_kkt_and_monotone_sweeps():
    x = simulate(random_sparse_system(5, 2, 2, seed=1), SimConfig(T=5000, seed=0)).x
    X, Y = lagged_design(x, 3)
    n = X.shape[0]
    G, C = X.T @ X / n, X.T @ Y / n
    lam = np.full(X.shape[1], 0.02)
    impl = kernels.get_backend("python")
    beta = np.zeros(X.shape[1])
    vals = [lasso_objective(G, C[:, 0], Y[:, 0] @ Y[:, 0] / n, beta, lam)]
    for _ in range(30):          # one sweep at a time
        impl.lasso_cd_gram(G, C[:, 0].copy(), lam, beta, 1, 0.0)
        vals.append(lasso_objective(G, C[:, 0], Y[:, 0] @ Y[:, 0] / n, beta, lam))
    assert np.all(np.diff(vals) <= 1e-15)
    est = granger_fit(x, 3, 0.02)
    for j in range(5):
        b = np.concatenate([m[j] for m in est.lag_matrices])
        assert kkt_residual(G, C[:, j], b, lam) <= 1e-6


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="extension not built")
def test_backends_agree():
    x = simulate(random_sparse_system(4, 2, 1, seed=2), SimConfig(T=3000, seed=1)).x
    a = granger_fit(x, 2, 0.01, backend="python")
    b = granger_fit(x, 2, 0.01, backend="cython")
    for ma, mb in zip(a.lag_matrices, b.lag_matrices):
        np.testing.assert_allclose(ma, mb, atol=1e-12)


def test_fit_validation():
    with pytest.raises(ValueError):
        granger_fit(var1(10), 0, 0.1)
    with pytest.raises(ValueError):
        granger_fit(var1(3), 5, 0.1)
    with pytest.raises(ValueError):
        granger_fit(var1(50), 1, -1.0)


def test_estimate_json_roundtrip():
    est = granger_fit(var1(500, p=2), 2, 0.01)
    back = GrangerEstimate.from_dict(est.to_dict())
    assert back.L == 2 and back.p == 2
    np.testing.assert_array_equal(back.dependency, est.dependency)


# -- predictors -------------------------------------------------------------------

def test_zero_granger_predicts_zero():
    est = GrangerEstimate((np.zeros((2, 2)),), [0.0])
    np.testing.assert_array_equal(granger_predict(est, np.ones((4, 2)), 3), np.zeros((3, 2)))


def test_geometric_granger_prediction():
    est = GrangerEstimate((0.7 * np.eye(2),), [0.0])
    hist = np.array([[0.0, 0.0], [1.0, -2.0]])
    out = granger_predict(est, hist, 4)
    np.testing.assert_allclose(out[-1], 0.7 ** 4 * hist[-1])


def test_one_step_matches_fit_residual():
    x = var1(4000, p=2, seed=5)
    est = granger_fit(x, 2, 1e-3)
    X, Y = lagged_design(x, 2)
    coef = np.hstack(est.lag_matrices)
    pred = rolling_forecasts(granger_predict, est, x, 1, 2)
    np.testing.assert_allclose(pred, X @ coef.T, atol=1e-12)
    assert normalized_mse(pred, Y) < 1


def _estimate(K1, K2, B1, q):
    p = K1.shape[0]
    return LearnEstimate(B1=B1, K1=K1, K2=K2, q_hat=np.asarray(q, float), objective=0.0,
                         iterations=0, sign=np.zeros((p, p), np.int8))


def test_zero_latentlag_predicts_zero():
    z = np.zeros((3, 3))
    est = _estimate(z, z, np.eye(3), [0.0, 1.0])
    out = latentlag_predict(est, np.zeros((5, 3)), 2)
    assert not out.any()


def test_latentlag_reproduces_noiseless_recursion():
    P = random_sparse_system(3, 2, 2, seed=4)
    rng = np.random.default_rng(0)
    x = list(rng.standard_normal((3, 3)))
    ApD, AD = P.A + P.D, P.A @ P.D
    for _ in range(20):
        mix = sum(P.q[t] * x[-1 - t] for t in range(3))
        x.append(ApD @ x[-1] - AD @ x[-2] + P.B @ mix)
    x = np.array(x)
    Binv = np.linalg.inv(P.B)
    est = _estimate(Binv @ ApD, Binv @ AD, Binv, P.q)
    for t in range(4, 22):
        np.testing.assert_allclose(latentlag_predict(est, x[:t], 1)[0], x[t], atol=1e-12)


def test_normalized_mse_identities(rng):
    a = rng.standard_normal((20, 3))
    assert normalized_mse(a, a) == 0.0
    assert normalized_mse(np.zeros_like(a), a) == 1.0
    assert normalized_mse(2 * a, a) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        normalized_mse(a, np.zeros_like(a))
    with pytest.raises(ValueError):
        normalized_mse(a[:3], a)


def test_predictions_csv_schema():
    txt = predictions_csv(np.arange(6.0).reshape(3, 2), 5, 100)
    rows = list(csv.reader(io.StringIO(txt)))
    assert rows[0] == ["t", "horizon", "x1", "x2"]
    assert rows[1][:2] == ["100", "5"] and rows[-1][0] == "102"


def test_history_too_short():
    est = GrangerEstimate((np.eye(2), np.eye(2)), [0.0, 0.0])
    with pytest.raises(ValueError):
        granger_predict(est, np.ones((1, 2)), 1)
    with pytest.raises(ValueError):
        granger_predict(est, np.ones((3, 2)), 0)
