"""Constrained moment-matching estimator for the sign-sparsity pattern of A.

Unknowns: B1 (diagonal, stands for B^{-1}), K1 (for B^{-1}(A+D)), K2 (for B^{-1}AD) and
the delay pmf q. The residual at lag i is

    R_i = B1 S_{i+1} - K1 S_i + K2 S_{i-1} - sum_theta q_theta S_{i-theta}

for i in [max(theta_max, 1), 2 theta_max + 1]. We minimize sum_i ||R_i||_F^2 subject to
B1 >= b1_min on the diagonal, ||K1||_1 <= lambda1, ||K2||_1 <= lambda2, q on the simplex.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .covariance import LagCovSeq, pooled_lag_covariances
from .model import offdiag_mask, sign_pattern_of
from .simulate import Trajectory

SIGN_REL_THRESHOLD = 0.1


class NotConverged(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LearnConfig:
    theta_max: int
    lambda1: float = np.inf
    lambda2: float = np.inf
    max_iters: int = 20_000
    tol: float = 1e-8
    b1_min: float = 1.0
    sign_threshold: float | None = None   # None: SIGN_REL_THRESHOLD * max off-diagonal |K1|

    def __post_init__(self):
        if self.theta_max < 0:
            raise ValueError("theta_max must be >= 0")
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("lambda1 and lambda2 must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.b1_min > 0:
            raise ValueError("b1_min must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.sign_threshold is not None and self.sign_threshold < 0:
            raise ValueError("sign_threshold must be nonnegative")


@dataclass(frozen=True, eq=False)
class LearnEstimate:
    B1: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    q_hat: np.ndarray
    objective: float
    iterations: int
    sign: np.ndarray
    converged: bool = True
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def p(self) -> int:
        return self.K1.shape[0]

    @property
    def theta_max(self) -> int:
        return self.q_hat.size - 1

    @property
    def sign_K2(self) -> np.ndarray:
        return sign_pattern_of(self.K2, default_sign_threshold(self.K2))

    def implied_dynamics(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(A + D, A D, B)`` read off the estimate: ``B = B1^{-1}``."""
        Binv = np.diag(1.0 / np.diag(self.B1))
        return Binv @ self.K1, Binv @ self.K2, Binv

    def to_dict(self) -> dict:
        return {
            "B1": self.B1.tolist(),
            "K1": self.K1.tolist(),
            "K2": self.K2.tolist(),
            "q_hat": self.q_hat.tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "sign": self.sign.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnEstimate":
        return cls(
            B1=np.asarray(d["B1"], float), K1=np.asarray(d["K1"], float),
            K2=np.asarray(d["K2"], float), q_hat=np.asarray(d["q_hat"], float),
            objective=float(d["objective"]), iterations=int(d["iterations"]),
            sign=np.asarray(d["sign"], dtype=np.int8), converged=bool(d.get("converged", True)),
        )


def default_sign_threshold(K: np.ndarray) -> float:
    off = np.abs(K[offdiag_mask(K.shape[0])])
    return SIGN_REL_THRESHOLD * float(off.max()) if off.size else 0.0


# -- projections ---------------------------------------------------------------

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {q : q >= 0, sum q = 1} (sort-based)."""
    v = np.asarray(v, dtype=float).ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto {m : sum |m_ij| <= radius}; feasible input is returned as is."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if not np.isfinite(radius) or a.sum() <= radius:
        return v.copy()
    u = np.sort(a.ravel())[::-1]
    css = np.cumsum(u) - radius
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.sign(v) * np.maximum(a - tau, 0.0)


def project_diag_pos(m, floor: float) -> np.ndarray:
    """Drop off-diagonal entries and clamp the diagonal at ``floor``."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    m = np.asarray(m, dtype=float)
    return np.diag(np.maximum(np.diag(m), floor))


# -- objective -------------------------------------------------------------------

def lag_range(theta_max: int) -> range:
    return range(max(theta_max, 1), 2 * theta_max + 2)


class _Stacks:
    """Covariance blocks arranged for vectorized residuals over a range of i."""

    def __init__(self, covs: LagCovSeq, theta_max: int, lags: range | None = None):
        lags = lag_range(theta_max) if lags is None else lags
        covs.require(lags[-1] + 1)
        self.theta_max = theta_max
        self.up = np.stack([covs.lag(i + 1) for i in lags])
        self.mid = np.stack([covs.lag(i) for i in lags])
        self.low = np.stack([covs.lag(i - 1) for i in lags])
        self.delayed = np.stack([[covs.lag(i - t) for i in lags] for t in range(theta_max + 1)])

    def residual(self, b, K1, K2, q):
        return (b[None, :, None] * self.up - K1 @ self.mid + K2 @ self.low
                - np.tensordot(q, self.delayed, axes=1))

    def value(self, x) -> float:
        return float(np.sum(self.residual(*x) ** 2))

    def grad(self, x):
        R = self.residual(*x)
        tr = lambda S: np.swapaxes(S, -1, -2)
        gb = 2.0 * np.einsum("nij,nij->i", R, self.up)
        g1 = -2.0 * np.sum(R @ tr(self.mid), axis=0)
        g2 = 2.0 * np.sum(R @ tr(self.low), axis=0)
        gq = -2.0 * np.einsum("nij,tnij->t", R, self.delayed)
        return float(np.sum(R ** 2)), (gb, g1, g2, gq)

    def lipschitz(self, p: int, iters: int = 60, seed: int = 0) -> float:
        """Largest Hessian eigenvalue (the objective is quadratic), by power iteration."""
        rng = np.random.default_rng(seed)
        x = (rng.standard_normal(p), rng.standard_normal((p, p)),
             rng.standard_normal((p, p)), rng.standard_normal(self.theta_max + 1))
        lam = 0.0
        for _ in range(iters):
            nrm = np.sqrt(sum(np.sum(a ** 2) for a in x))
            x = tuple(a / nrm for a in x)
            _, g = self.grad(x)          # homogeneous in x, so this is H x
            lam = np.sqrt(sum(np.sum(a ** 2) for a in g))
            x = g
        return float(lam)


def objective(covs: LagCovSeq, est: LearnEstimate, theta_max: int | None = None,
              lags: range | None = None) -> float:
    """Sum of squared Frobenius residuals (default lag range from ``theta_max``)."""
    th = est.theta_max if theta_max is None else theta_max
    if th != est.theta_max:
        raise ValueError(f"estimate has theta_max={est.theta_max}, asked for {th}")
    st = _Stacks(covs, th, lags)
    return st.value((np.diag(est.B1), est.K1, est.K2, est.q_hat))


# -- solver ------------------------------------------------------------------------

def _project(x, cfg: LearnConfig):
    b, K1, K2, q = x
    return (np.maximum(b, cfg.b1_min), project_l1_ball(K1, cfg.lambda1),
            project_l1_ball(K2, cfg.lambda2), project_simplex(q))


def _axpy(x, y, a):
    return tuple(xi + a * yi for xi, yi in zip(x, y))


def _dot(x, y) -> float:
    return float(sum(np.sum(a * b) for a, b in zip(x, y)))


def fit(covs: LagCovSeq, cfg: LearnConfig, *, init: LearnEstimate | None = None,
        lags: range | None = None) -> LearnEstimate:
    """Monotone accelerated projected gradient with backtracking and adaptive restart.

    Starts from B1 = I, K1 = K2 = 0, uniform q (or ``init``). The step size starts at
    the inverse Hessian norm and only shrinks when the sufficient-decrease test fails.
    Stops once the relative objective decrease over 10 accepted iterations is below
    ``cfg.tol`` (or the objective reaches zero to working precision).
    """
    th, p = cfg.theta_max, covs.p
    st = _Stacks(covs, th, lags)
    if init is None:
        x = (np.ones(p), np.zeros((p, p)), np.zeros((p, p)), np.full(th + 1, 1.0 / (th + 1)))
    else:
        x = (np.diag(init.B1).copy(), init.K1.copy(), init.K2.copy(), init.q_hat.copy())
    x = _project(x, cfg)
    fx = st.value(x)
    scale = max(float(np.sum(st.delayed ** 2)), 1e-300)
    L = max(st.lipschitz(p), 1e-12)

    y, t = x, 1.0
    history = [fx]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        fy, gy = st.grad(y)
        while True:
            z = _project(_axpy(y, gy, -1.0 / L), cfg)
            d = _axpy(z, y, -1.0)
            fz = st.value(z)
            if fz <= fy + _dot(gy, d) + 0.5 * L * _dot(d, d) + 1e-14 * abs(fy):
                break
            L *= 2.0
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        x_prev = x
        if fz <= fx:
            x, fx = z, fz
        if _dot(_axpy(y, z, -1.0), _axpy(z, x_prev, -1.0)) > 0:
            # momentum points uphill: restart from the current iterate
            y, t = x, 1.0
        else:
            y = tuple(
                xi + (t / t_next) * (zi - xi) + ((t - 1.0) / t_next) * (xi - pi)
                for xi, zi, pi in zip(x, z, x_prev)
            )
            t = t_next
        history.append(fx)
        if fx <= 1e-28 * scale:
            converged = True
            break
        if len(history) > 10:
            old = history[-11]
            if old - fx <= cfg.tol * max(old, 1e-300):
                converged = True
                break

    if not converged:
        warnings.warn(f"fit stopped after {it} iterations, objective {fx:.6g}", NotConverged)
    b, K1, K2, q = x
    thr = default_sign_threshold(K1) if cfg.sign_threshold is None else cfg.sign_threshold
    return LearnEstimate(
        B1=np.diag(b), K1=K1, K2=K2, q_hat=q, objective=fx, iterations=it,
        sign=sign_pattern_of(K1, thr), converged=converged, history=tuple(history),
    )


# -- cross-validation ------------------------------------------------------------------

@dataclass(frozen=True)
class CVResult:
    best_theta: int
    best_lambdas: tuple[float, float]
    table: list[dict]

    def summary(self) -> list[dict]:
        """Mean and standard error of the validation score per grid point."""
        out = {}
        for row in self.table:
            out.setdefault((row["theta"], row["lambda1"], row["lambda2"]), []).append(row["score"])
        res = []
        for (th, l1, l2), s in out.items():
            s = np.asarray(s)
            se = s.std(ddof=1) / np.sqrt(s.size) if s.size > 1 else 0.0
            res.append({"theta": th, "lambda1": l1, "lambda2": l2, "mean": float(s.mean()), "se": float(se)})
        return res

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["theta", "lambda1", "lambda2", "fold", "score"],
                           lineterminator="\n")
        w.writeheader()
        for row in self.table:
            w.writerow(row)
        return buf.getvalue()

    def __iter__(self):   # unpacks as (best_theta, best_lambdas, table)
        return iter((self.best_theta, self.best_lambdas, self.table))


def fold_bounds(T: int, n_folds: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, T, n_folds + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def cross_validate(
    traj: Trajectory | np.ndarray,
    theta_grid: Sequence[int],
    lambda_grid: Sequence[tuple[float, float]],
    *,
    n_folds: int = 5,
    base: LearnConfig | None = None,
    one_se: bool = True,
) -> CVResult:
    """Contiguous-block cross-validation over (theta_max, lambda1, lambda2).

    Each fold is held out in turn; the model is fit on covariances pooled over the
    remaining blocks and scored on the held-out block's own covariances. A depth theta is
    fit and scored on lags max(theta, 1) .. 2 max(grid) + 1, i.e. wherever its recursion
    is valid, up to a common end. The score is the residual divided by the held-out
    energy sum ||S_{i+1}||^2 over the same lags, which keeps depths with different start
    lags comparable. (Scoring every depth on the deepest depth's range leaves only weak,
    noise-dominated long lags, where small coefficients win regardless of depth.)
    With ``one_se`` the pick is the smallest theta, then the smallest lambda1 + lambda2,
    whose mean score is within one standard error of the best mean.
    """
    if not theta_grid or not lambda_grid:
        raise ValueError("theta_grid and lambda_grid must be non-empty")
    x = traj.x if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    end = lag_range(max(theta_grid))[-1] + 1
    need = end + 1
    bounds = fold_bounds(x.shape[0], n_folds)
    if n_folds < 2 or min(b - a for a, b in bounds) <= 2 * need:
        raise ValueError(f"trajectory of length {x.shape[0]} is too short for {n_folds} folds")
    base = base or LearnConfig(theta_max=0)

    table = []
    for f, (a, b) in enumerate(bounds):
        train = [s for s in (x[:a], x[b:]) if len(s) > need]
        tr_covs = pooled_lag_covariances(train, need)
        va_covs = pooled_lag_covariances([x[a:b]], need)
        for th in theta_grid:
            lags = range(max(th, 1), end)
            va = _Stacks(va_covs, th, lags)
            energy = max(float(np.sum(va.up ** 2)), 1e-300)
            for l1, l2 in lambda_grid:
                cfg = replace(base, theta_max=th, lambda1=l1, lambda2=l2)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NotConverged)
                    est = fit(tr_covs, cfg, lags=lags)
                score = va.value((np.diag(est.B1), est.K1, est.K2, est.q_hat)) / energy
                table.append({"theta": th, "lambda1": l1, "lambda2": l2, "fold": f, "score": score})

    res = CVResult(0, (0.0, 0.0), table)
    summ = res.summary()
    best = min(summ, key=lambda r: r["mean"])
    pool = [r for r in summ if r["mean"] <= best["mean"] + best["se"]] if one_se else [best]
    pick = min(pool, key=lambda r: (r["theta"], r["lambda1"] + r["lambda2"], r["mean"]))
    return CVResult(pick["theta"], (pick["lambda1"], pick["lambda2"]), table)
