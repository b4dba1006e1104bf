"""Block-Toeplitz rank tests, delay-depth detection and recovery of identifiable combinations.

For i >= max(theta_max, 1) the lagged covariances obey

    S_{i+1} = (A + D) S_i - A D S_{i-1} + B sum_theta q_theta S_{i-theta}

which makes the deepest lag a fixed linear combination of the next theta_max + 1 lags.
Stacking that relation over consecutive i gives ``[S_0 ... S_k] = G M^(k)`` with the
block-Toeplitz ``M^(k)`` below; its rank drops once k exceeds max(theta_max, 1).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import InsufficientLags, LagCovSeq

DEFAULT_REL_TOL = 1e-8
Q_SPREAD_TOL = 1e-4


class SingularMatrix(np.linalg.LinAlgError):
    pass


class NoFullRankBlock(ValueError):
    pass


class NonDiagonalB1(UserWarning):
    pass


class RatioSpread(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class BlockToeplitz:
    k: int
    p: int
    m: np.ndarray

    def block(self, r: int, c: int) -> np.ndarray:
        p = self.p
        return self.m[r * p:(r + 1) * p, c * p:(c + 1) * p]


@dataclass(frozen=True, eq=False)
class IdentifiedCombos:
    """``L1 = A + q_0 B + D`` and ``L2 = q_1 B - A D``; for theta_max >= 2 also ``q_theta_max B``
    and the ratios ``q_theta / q_theta_max`` for theta in [2, theta_max - 1]."""

    L1: np.ndarray
    L2: np.ndarray
    detected_k: int
    B_up_to_scale: np.ndarray | None = None
    q_ratios: np.ndarray | None = None

    def __post_init__(self):
        if not (np.all(np.isfinite(self.L1)) and np.all(np.isfinite(self.L2))):
            raise ValueError("identified combinations are not finite")

    @property
    def theta_candidates(self) -> tuple[int, ...]:
        """Delay depths consistent with ``detected_k``; k = 1 cannot separate 0 from 1."""
        return (0, 1) if self.detected_k == 1 else (self.detected_k,)

    def to_dict(self) -> dict:
        out = {
            "detected_k": self.detected_k,
            "theta_max_candidates": list(self.theta_candidates),
            "A_plus_q0B_plus_D": self.L1.tolist(),
            "q1B_minus_AD": self.L2.tolist(),
        }
        if self.B_up_to_scale is not None:
            out["qmax_times_B"] = self.B_up_to_scale.tolist()
        if self.q_ratios is not None:
            out["q_ratios"] = self.q_ratios.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "IdentifiedCombos":
        opt = lambda key: None if d.get(key) is None else np.asarray(d[key], dtype=float)
        return cls(
            L1=np.asarray(d["A_plus_q0B_plus_D"], dtype=float),
            L2=np.asarray(d["q1B_minus_AD"], dtype=float),
            detected_k=int(d["detected_k"]),
            B_up_to_scale=opt("qmax_times_B"),
            q_ratios=opt("q_ratios"),
        )


def build_toeplitz(covs: LagCovSeq, k: int) -> BlockToeplitz:
    """``M^(k)`` with block (r, c) = S_{k+1-r+c}: top-left S_{k+1}, bottom-left S_1, top-right S_{2k+1}."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if covs.max_lag < 2 * k + 1:
        raise InsufficientLags(f"M^({k}) needs lags up to {2 * k + 1}, have {covs.max_lag}")
    p = covs.p
    m = np.empty(((k + 1) * p, (k + 1) * p))
    for r in range(k + 1):
        for c in range(k + 1):
            m[r * p:(r + 1) * p, c * p:(c + 1) * p] = covs.lag(k + 1 - r + c)
    return BlockToeplitz(k=k, p=p, m=m)


def numeric_rank(m, rel_tol: float = DEFAULT_REL_TOL) -> tuple[int, float]:
    """Number of singular values above ``rel_tol * s_max``, and ``s_min / s_max``."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        raise ValueError("empty matrix has no rank")
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0:
        return 0, 0.0
    return int(np.sum(s > rel_tol * s[0])), float(s[-1] / s[0])


def stacked_covariance(covs: LagCovSeq, k: int) -> np.ndarray:
    """Covariance of ``[x_t, x_{t-1}, ..., x_{t-k}]``: block (r, c) = S_{c-r}."""
    covs.require(k)
    p = covs.p
    out = np.empty(((k + 1) * p, (k + 1) * p))
    for r in range(k + 1):
        for c in range(k + 1):
            out[r * p:(r + 1) * p, c * p:(c + 1) * p] = covs.lag(c - r)
    return out


def _canonical_parts(covs: LagCovSeq, k: int) -> tuple[np.ndarray, np.ndarray]:
    m = build_toeplitz(covs, k).m
    try:
        L = np.linalg.cholesky(stacked_covariance(covs, k))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("stacked covariance is not positive definite") from exc
    w = np.linalg.solve(L, m)
    return np.linalg.solve(L, w.T).T, L


def canonical_toeplitz(covs: LagCovSeq, k: int) -> np.ndarray:
    """``L^{-1} M^(k) L^{-T}`` with ``L L^T`` the covariance of k+1 consecutive samples.

    ``M^(k)`` is the cross-covariance between the stacked future ``[x_{t+k+1}..x_{t+1}]``
    and the stacked past ``[x_t..x_{t-k}]``, and both stacks share that covariance, so the
    singular values here are the canonical correlations between them. The rank is the
    same as that of ``M^(k)`` but no longer depends on how the coordinates are scaled.
    """
    return _canonical_parts(covs, k)[0]


def rank_profile(
    covs: LagCovSeq, k_max: int, rel_tol: float = DEFAULT_REL_TOL, *, whiten: bool = True,
) -> list[tuple[int, int, float]]:
    """``(k, rank, s_min/s_max)`` for k = 1..k_max."""
    out = []
    for k in range(1, k_max + 1):
        m = canonical_toeplitz(covs, k) if whiten else build_toeplitz(covs, k).m
        r, ratio = numeric_rank(m, rel_tol)
        out.append((k, r, ratio))
    return out


def detect_theta_max(
    covs: LagCovSeq, k_max: int, rel_tol: float = DEFAULT_REL_TOL, *, whiten: bool = True,
) -> int:
    """Largest k <= k_max whose ``M^(k)`` is numerically full rank.

    k = 1 means theta_max is 0 or 1 (not distinguishable); k >= 2 means theta_max = k.
    With ``whiten`` (default) the test runs on canonical correlations, see
    ``canonical_toeplitz``; otherwise on the raw singular values.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    covs.require(2 * k_max + 1)
    prof = rank_profile(covs, k_max, rel_tol, whiten=whiten)
    full = [k for k, r, _ in prof if r == (k + 1) * covs.p]
    if not full:
        raise NoFullRankBlock("no M^(k) is full rank; covariances look degenerate")
    return max(full)


def _right_divide(covs: LagCovSeq, k: int, lhs: np.ndarray, rel_tol: float) -> np.ndarray:
    """Solve ``G M^(k) = lhs`` for G.

    Done in canonical coordinates: with ``W = L^{-1} M L^{-T}``, ``(G L) W = lhs L^{-T}``.
    Each solve is LU with partial pivoting on the transpose; the conditioning check uses
    the canonical correlations, so it does not depend on coordinate scaling.
    """
    w, L = _canonical_parts(covs, k)
    _, ratio = numeric_rank(w, rel_tol)
    if ratio < rel_tol:
        raise SingularMatrix(f"M^({k}) is ill-conditioned (canonical s_min/s_max = {ratio:.3g})")
    rhs = np.linalg.solve(L, lhs.T).T          # lhs L^{-T}
    h = np.linalg.solve(w.T, rhs.T).T          # G L
    return np.linalg.solve(L.T, h.T).T         # G


def _checked_inverse(g: np.ndarray, rel_tol: float, name: str) -> np.ndarray:
    _, ratio = numeric_rank(g, rel_tol)
    if ratio < rel_tol:
        raise SingularMatrix(f"{name} is ill-conditioned (s_min/s_max = {ratio:.3g})")
    return np.linalg.inv(g)


def recover_combos_theta01(covs: LagCovSeq, rel_tol: float = DEFAULT_REL_TOL) -> IdentifiedCombos:
    """Recovery when theta_max is 0 or 1.

    With ``S_{i+1} = L1 S_i + L2 S_{i-1}`` we have ``[S_0 S_1] = [N1 N2] M^(1)`` where
    ``N1 = L2^{-1}`` and ``N2 = -L2^{-1} L1``.
    """
    covs.require(3)
    n = _right_divide(covs, 1, np.hstack([covs.lag(0), covs.lag(1)]), rel_tol)
    p = covs.p
    n1, n2 = n[:, :p], n[:, p:]
    L2 = _checked_inverse(n1, rel_tol, "N1")
    return IdentifiedCombos(L1=-L2 @ n2, L2=L2, detected_k=1)


def recover_combos_general(
    covs: LagCovSeq,
    theta_max: int,
    rel_tol: float = DEFAULT_REL_TOL,
    *,
    diagonal_b: bool = False,
) -> IdentifiedCombos:
    """Recovery for theta_max >= 2 from ``[S_0 ... S_th] = [G_1 ... G_{th+1}] M^(th)``.

    ``G_1 = B^{-1}/q_th``, ``G_2 = -B^{-1}(A + D + q_0 B)/q_th``,
    ``G_3 = -B^{-1}(q_1 B - A D)/q_th`` and ``G_{j+1} = -(q_j/q_th) I`` for 2 <= j < th.
    Left-multiplying by ``G_1^{-1} = q_th B`` removes the scale: ``L1 = G_1^{-1}(-G_2)``,
    ``L2 = G_1^{-1}(-G_3)``. With ``diagonal_b`` set, off-diagonal mass in G_1 triggers
    a NonDiagonalB1 warning (the model was assumed to have diagonal B).
    """
    if theta_max < 2:
        raise ValueError("recover_combos_general needs theta_max >= 2")
    covs.require(2 * theta_max + 1)
    p = covs.p
    lhs = np.hstack([covs.lag(i) for i in range(theta_max + 1)])
    g = _right_divide(covs, theta_max, lhs, rel_tol)
    G = [g[:, j * p:(j + 1) * p] for j in range(theta_max + 1)]

    if diagonal_b:
        off = G[0] - np.diag(np.diag(G[0]))
        if np.linalg.norm(off) > 1e-6 * np.linalg.norm(G[0]):
            warnings.warn("estimated B^{-1} block has off-diagonal mass; model misfit?", NonDiagonalB1)

    Bs = _checked_inverse(G[0], rel_tol, "G1")
    ratios = []
    for j in range(2, theta_max):
        d = -np.diag(G[j + 1])
        if d.max() - d.min() > Q_SPREAD_TOL:
            warnings.warn(f"q ratio for delay {j} varies across coordinates ({d.min():.3g}..{d.max():.3g})",
                          RatioSpread)
        ratios.append(float(d.mean()))
    return IdentifiedCombos(
        L1=Bs @ -G[1],
        L2=Bs @ -G[2],
        detected_k=theta_max,
        B_up_to_scale=Bs,
        q_ratios=np.array(ratios),
    )


def identify(covs: LagCovSeq, k_max: int, rel_tol: float = DEFAULT_REL_TOL, **kw) -> IdentifiedCombos:
    """Detect the delay depth, then recover whatever that depth makes identifiable."""
    k = detect_theta_max(covs, k_max, rel_tol)
    if k == 1:
        return recover_combos_theta01(covs, rel_tol)
    return recover_combos_general(covs, k, rel_tol, **kw)
