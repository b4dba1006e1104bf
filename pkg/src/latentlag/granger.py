"""Granger-Lasso baseline and the linear predictors used for benchmarks.

Per output coordinate j the baseline solves

    min_beta  (1 / 2n) sum_t (x_t(j) - sum_l A_l[j, :] x_{t-l})^2 + sum_l lambda_l ||A_l[j, :]||_1

by cyclic coordinate descent on the Gram matrix, shared across coordinates.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .learn import LearnEstimate
from .simulate import Trajectory

MAX_SWEEPS = 10_000
CD_TOL = 1e-10


class NotConverged(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class GrangerEstimate:
    lag_matrices: tuple[np.ndarray, ...]
    lambdas: np.ndarray
    converged: bool = True

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.lag_matrices)
        if not mats:
            raise ValueError("need at least one lag matrix")
        if not all(np.all(np.isfinite(m)) for m in mats):
            raise ValueError("lag matrices are not finite")
        object.__setattr__(self, "lag_matrices", mats)
        object.__setattr__(self, "lambdas", np.asarray(self.lambdas, dtype=float))

    @property
    def L(self) -> int:
        return len(self.lag_matrices)

    @property
    def p(self) -> int:
        return self.lag_matrices[0].shape[0]

    @property
    def dependency(self) -> np.ndarray:
        return np.sum(self.lag_matrices, axis=0)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "lambdas": self.lambdas.tolist(),
            "lag_matrices": [m.tolist() for m in self.lag_matrices],
            "dependency": self.dependency.tolist(),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GrangerEstimate":
        return cls(tuple(np.asarray(m, float) for m in d["lag_matrices"]), d["lambdas"],
                   bool(d.get("converged", True)))


def lagged_design(x: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressors ``[x_{t-1}, ..., x_{t-L}]`` (n x pL) and targets ``x_t`` (n x p), t = L..T-1."""
    T = x.shape[0]
    X = np.hstack([x[L - l:T - l] for l in range(1, L + 1)])
    return X, x[L:]


def lasso_objective(G, c, yy, beta, lam) -> float:
    """``(1/2n)||y - X beta||^2 + sum lam |beta|`` from Gram quantities (``yy = y^T y / n``)."""
    return 0.5 * (yy - 2 * c @ beta + beta @ G @ beta) + float(np.sum(lam * np.abs(beta)))


def kkt_residual(G, c, beta, lam) -> float:
    """Largest violation of the lasso optimality conditions."""
    g = G @ beta - c
    nz = beta != 0
    viol = np.where(nz, np.abs(g + lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def granger_fit(
    traj: Trajectory | np.ndarray,
    L: int,
    lambdas,
    *,
    max_sweeps: int = MAX_SWEEPS,
    tol: float = CD_TOL,
    backend: str | None = None,
) -> GrangerEstimate:
    x = traj.x if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    T, p = x.shape
    if L < 1:
        raise ValueError("L must be >= 1")
    if T <= L:
        raise ValueError(f"need T > L (T={T}, L={L})")
    lam_l = np.broadcast_to(np.asarray(lambdas, dtype=float), (L,)).copy()
    if np.any(lam_l < 0):
        raise ValueError("lambdas must be nonnegative")

    X, Y = lagged_design(x, L)
    n = X.shape[0]
    G = np.ascontiguousarray(X.T @ X / n)
    C = X.T @ Y / n
    lam = np.ascontiguousarray(np.repeat(lam_l, p))
    impl = kernels.get_backend(backend)

    coef = np.zeros((p, L * p))
    ok = True
    for j in range(p):
        beta = np.zeros(L * p)
        _, conv = impl.lasso_cd_gram(G, np.ascontiguousarray(C[:, j]), lam, beta, max_sweeps, tol)
        ok &= bool(conv)
        coef[j] = beta
    if not ok:
        warnings.warn(f"coordinate descent hit {max_sweeps} sweeps", NotConverged)
    mats = tuple(coef[:, l * p:(l + 1) * p] for l in range(L))
    return GrangerEstimate(mats, lam_l, converged=ok)


def _window(history, need: int) -> np.ndarray:
    h = history.x if isinstance(history, Trajectory) else np.asarray(history, dtype=float)
    if h.ndim != 2 or h.shape[0] < need:
        raise ValueError(f"history window must hold at least {need} samples")
    return h


def granger_predict(est: GrangerEstimate, history, horizon: int) -> np.ndarray:
    """``horizon`` x p forecasts following the end of ``history``; predictions are fed back."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    buf = list(_window(history, est.L)[-est.L:])
    out = []
    for _ in range(horizon):
        nxt = sum(A @ buf[-l] for l, A in enumerate(est.lag_matrices, start=1))
        out.append(nxt)
        buf.append(nxt)
    return np.array(out)


def latentlag_predict(est: LearnEstimate, history, horizon: int) -> np.ndarray:
    """Heuristic forecasts from ``x_{t+1} = (A+D) x_t - AD x_{t-1} + B sum_theta q_theta x_{t-theta}``.

    (A+D), AD and B are read off the fitted ``B1, K1, K2``. This mirrors the shape of the
    covariance recursion; it is not the minimum-MSE predictor of the latent model.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    th = est.theta_max
    depth = max(th + 1, 2)
    AD_sum, AD_prod, B = est.implied_dynamics()
    buf = list(_window(history, th + 2)[-depth:])
    out = []
    for _ in range(horizon):
        mix = sum(est.q_hat[t] * buf[-1 - t] for t in range(th + 1))
        nxt = AD_sum @ buf[-1] - AD_prod @ buf[-2] + B @ mix
        out.append(nxt)
        buf.append(nxt)
    return np.array(out)


def normalized_mse(pred, actual) -> float:
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {actual.shape}")
    den = float(np.sum(actual ** 2))
    if den == 0:
        raise ValueError("actual values are all zero; normalized MSE undefined")
    return float(np.sum((pred - actual) ** 2)) / den


def rolling_forecasts(predict, est, x: np.ndarray, horizon: int, start: int) -> np.ndarray:
    """Forecast ``x[t + horizon - 1]`` from ``x[:t]`` for every t in [start, T - horizon]."""
    T = x.shape[0]
    return np.array([predict(est, x[:t], horizon)[-1] for t in range(start, T - horizon + 1)])


def predictions_csv(preds: np.ndarray, horizon: int, t0: int) -> str:
    """Rows ``t,horizon,x1..xp`` where t is the index of the forecast target."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "horizon"] + [f"x{i + 1}" for i in range(preds.shape[1])])
    for k, row in enumerate(preds):
        w.writerow([t0 + k, horizon] + [format(v, ".17g") for v in row])
    return buf.getvalue()
