"""Lagged covariances: sample estimates and the exact stationary values.

Notation: ``Sigma_{X_i} = E[x_t x_{t-i}^T]``, ``Sigma_{Z_i} = E[z_t z_{t-i}^T]``,
``Sigma_{ZX_i} = E[z_t x_{t-i}^T]`` and ``Sigma_{VX_{-i}} = E[v_t x_{t+i}^T]``.
Negative lags are never stored; ``Sigma_{X_{-i}} = Sigma_{X_i}^T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import SystemParams
from .simulate import Trajectory

COND_LIMIT = 1e12


class SingularSystem(np.linalg.LinAlgError):
    pass


class InsufficientLags(ValueError):
    pass


class UnstableSystem(ValueError):
    """The stationary equations have a solution, but it is not a covariance."""


@dataclass(frozen=True, eq=False)
class LagCovSeq:
    """Lag-ordered covariance blocks ``sigmas[i] = Sigma_{X_i}``, i = 0..max_lag."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigmas, dtype=float, copy=True)
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise ValueError("sigmas must have shape (max_lag + 1, p, p)")
        if not np.all(np.isfinite(s)):
            raise ValueError("covariances contain non-finite entries")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    @property
    def p(self) -> int:
        return self.sigmas.shape[1]

    @property
    def max_lag(self) -> int:
        return self.sigmas.shape[0] - 1

    def lag(self, i: int) -> np.ndarray:
        """Sigma_{X_i} for any integer i with |i| <= max_lag."""
        if abs(i) > self.max_lag:
            raise InsufficientLags(f"lag {i} not available (max_lag={self.max_lag})")
        return self.sigmas[i] if i >= 0 else self.sigmas[-i].T

    def require(self, max_lag: int) -> None:
        if self.max_lag < max_lag:
            raise InsufficientLags(f"need covariances up to lag {max_lag}, have {self.max_lag}")

    def truncate(self, max_lag: int) -> "LagCovSeq":
        self.require(max_lag)
        return LagCovSeq(self.sigmas[: max_lag + 1])

    def to_dict(self) -> dict:
        return {"p": self.p, "max_lag": self.max_lag, "sigmas": self.sigmas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LagCovSeq":
        out = cls(np.asarray(d["sigmas"], dtype=float))
        if "p" in d and int(d["p"]) != out.p:
            raise ValueError("declared p does not match the matrices")
        if "max_lag" in d and int(d["max_lag"]) != out.max_lag:
            raise ValueError("declared max_lag does not match the number of matrices")
        return out


# -- sample estimates -------------------------------------------------------

def lag_product_sums(x: np.ndarray, max_lag: int) -> np.ndarray:
    """``S[i] = sum_{t=i+1..T} x_t x_{t-i}^T`` for i = 0..max_lag (no normalization)."""
    T, p = x.shape
    out = np.zeros((max_lag + 1, p, p))
    for i in range(min(max_lag, T - 1) + 1):
        out[i] = x[i:].T @ x[: T - i]
    return out


def sample_lag_covariances(traj: Trajectory | np.ndarray, max_lag: int) -> LagCovSeq:
    """``(1/T) sum_{t=i+1..T} x_t x_{t-i}^T``; divisor T at every lag, lag 0 symmetrized."""
    x = traj.x if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    T = x.shape[0]
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    if max_lag >= T:
        raise InsufficientLags(f"max_lag ({max_lag}) must be < T ({T})")
    s = lag_product_sums(x, max_lag) / T
    s[0] = (s[0] + s[0].T) / 2
    return LagCovSeq(s)


def pooled_lag_covariances(segments: Sequence[np.ndarray], max_lag: int) -> LagCovSeq:
    """Sample covariances over several contiguous pieces; products never straddle a gap."""
    total = sum(len(s) for s in segments)
    if not segments or max_lag >= min(len(s) for s in segments):
        raise InsufficientLags("every segment must be longer than max_lag")
    acc = sum(lag_product_sums(np.asarray(s, dtype=float), max_lag) for s in segments)
    acc = acc / total
    acc[0] = (acc[0] + acc[0].T) / 2
    return LagCovSeq(acc)


# -- vec / Kronecker helpers -----------------------------------------------

def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking vec operator."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, p: int) -> np.ndarray:
    return np.asarray(v).reshape((p, p), order="F")


def vec_kron_apply(s1, r, s2) -> np.ndarray:
    """``vec(s1 r s2)``, which equals ``(s2^T kron s1) vec(r)``."""
    s1, r, s2 = (np.asarray(a, dtype=float) for a in (s1, r, s2))
    if not (s1.ndim == r.ndim == s2.ndim == 2) or not (s1.shape == r.shape == s2.shape) \
            or s1.shape[0] != s1.shape[1]:
        raise ValueError("vec_kron_apply needs three square matrices of equal size")
    return vec(s1 @ r @ s2)


def kron_operator(s1, s2) -> sp.csr_matrix:
    """Sparse matrix of ``R -> vec(s1 R s2)``."""
    return sp.kron(sp.csr_matrix(np.asarray(s2).T), sp.csr_matrix(s1), format="csr")


def commutation(p: int) -> sp.csr_matrix:
    """``P`` with ``P vec(R) = vec(R^T)``."""
    idx = np.arange(p * p)
    i, j = idx % p, idx // p          # vec position idx holds R[i, j]
    return sp.csr_matrix((np.ones(p * p), (i * p + j, idx)), shape=(p * p, p * p))


def diag_selector(p: int) -> sp.csr_matrix:
    """``E`` with ``E vec(R) = vec(Diag(R))``."""
    keep = np.zeros(p * p)
    keep[np.arange(p) * (p + 1)] = 1.0
    return sp.diags(keep, format="csr")


# -- exact stationary covariances --------------------------------------------

def noise_cross_covariances(params: SystemParams, depth: int) -> list[np.ndarray]:
    """``[Sigma_{VX_0}, Sigma_{VX_{-1}}, ..., Sigma_{VX_{-depth}}]``.

    Runs the joint recursion

        Sigma_{VZ_{-m}} = Sigma_{VZ_{-(m-1)}} A^T + Sigma_{VX_{-(m-1)}} B^T
        Sigma_{VX_{-m}} = sum_theta q_theta Sigma_{VZ_{theta-m}} + Sigma_{VX_{-(m-1)}} D^T

    from ``Sigma_{VZ_0} = Sigma_V`` and ``Sigma_{VX_0} = q_0 Sigma_V``; terms with a
    positive subscript vanish because v_t is independent of the past.
    """
    A, B, D, q, SV = params.A, params.B, params.D, params.q, params.Sigma_V
    vz = [SV.copy()]
    vx = [q[0] * SV]
    for m in range(1, depth + 1):
        vz.append(vz[m - 1] @ A.T + vx[m - 1] @ B.T)
        acc = vx[m - 1] @ D.T
        for th in range(min(m, params.theta_max) + 1):
            acc = acc + q[th] * vz[m - th]
        vx.append(acc)
    return vx


@dataclass(eq=False)
class ExactCovWorkspace:
    """Assembled stationary system and its solution blocks.

    Unknowns are vec(Sigma_{X_i}) for i in [0, m], vec(Sigma_{Z_i}) for i in [0, theta_max]
    and vec(Sigma_{ZX_i}) for i in [-theta_max, m] with m = max(theta_max, 1), which is
    p^2 (4 theta_max + 3) unknowns for theta_max >= 1 and 5 p^2 for theta_max = 0.
    """

    p: int
    theta_max: int
    literal: bool
    keys: list[tuple[str, int]]
    matrix: sp.csc_matrix
    rhs: np.ndarray
    noise_cross: list[np.ndarray]
    cond_estimate: float = np.nan
    blocks: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def X(self, i: int) -> np.ndarray:
        return self.blocks[("X", i)] if i >= 0 else self.blocks[("X", -i)].T

    def Z(self, i: int) -> np.ndarray:
        return self.blocks[("Z", i)] if i >= 0 else self.blocks[("Z", -i)].T

    def ZX(self, i: int) -> np.ndarray:
        return self.blocks[("ZX", i)]


def _unknown_keys(theta_max: int) -> list[tuple[str, int]]:
    m = max(theta_max, 1)
    return ([("X", i) for i in range(m + 1)]
            + [("Z", i) for i in range(theta_max + 1)]
            + [("ZX", i) for i in range(-theta_max, m + 1)])


def assemble_stationary_system(params: SystemParams, *, literal: bool = False) -> ExactCovWorkspace:
    """Build the sparse linear system for the stationary covariances.

    With ``literal=False`` (default) the zero-lag equation carries the diagonal term
    ``Diag(Sigma_Z - sum_{a,b} q_a q_b Sigma_{Z_{b-a}})``: coordinate i reads x_t(i)
    and z_{t-Theta(i)}(i) with the *same* delay draw, so the diagonal of
    E[z_{t-Theta} x_t^T] is not the q-mixture of Sigma_{ZX_{-theta}}. Without it
    (``literal=True``) the solution is the one obtained by treating the two delays as
    independent, which differs from the simulated process whenever theta_max > 0.
    """
    p, th = params.p, params.theta_max
    m = max(th, 1)
    A, B, D, q = params.A, params.B, params.D, params.q
    n2 = p * p
    I = np.eye(p)
    Id = sp.identity(n2, format="csr")
    P = commutation(p)
    E = diag_selector(p)

    keys = _unknown_keys(th)
    col = {k: j for j, k in enumerate(keys)}
    vx = noise_cross_covariances(params, th)

    rows: list[dict] = []
    rhs: list[np.ndarray] = []

    def eq(terms: dict, b: np.ndarray | None = None):
        rows.append(terms)
        rhs.append(np.zeros(n2) if b is None else vec(b))

    def add(terms, key, op):
        terms[key] = terms[key] + op if key in terms else op

    # Sigma_Z = A Sz A^T + A Szx B^T + B Szx^T A^T + B Sx B^T + Sigma_V
    t = {}
    add(t, ("Z", 0), Id - kron_operator(A, A.T))
    add(t, ("ZX", 0), -kron_operator(A, B.T) - kron_operator(B, A.T) @ P)
    add(t, ("X", 0), -kron_operator(B, B.T))
    eq(t, params.Sigma_V)

    # Sigma_{Z_i} = A Sigma_{Z_{i-1}} + B Sigma_{ZX_{-(i-1)}}^T, 1 <= i <= theta_max
    for i in range(1, th + 1):
        t = {}
        add(t, ("Z", i), Id)
        add(t, ("Z", i - 1), -kron_operator(A, I))
        add(t, ("ZX", -(i - 1)), -kron_operator(B, I) @ P)
        eq(t)

    # Sigma_{ZX_i} = A Sigma_{ZX_{i-1}} + B Sigma_{X_{i-1}}, 1 <= i <= m
    for i in range(1, m + 1):
        t = {}
        add(t, ("ZX", i), Id)
        add(t, ("ZX", i - 1), -kron_operator(A, I))
        add(t, ("X", i - 1), -kron_operator(B, I))
        eq(t)

    # Sigma_{ZX_{-i}} = sum_theta q_theta Sigma_{Z_{theta-i}} + Sigma_{ZX_{-(i-1)}} D^T, 1 <= i <= theta_max.
    # The delay draw at t+i is independent of z_t, so this holds for every i >= 0 (i = 0 is the
    # last equation below). Used instead of the backward recursion through A, which loses rank
    # when A = 0 and degrades quickly with theta_max otherwise.
    for i in range(1, th + 1):
        t = {}
        add(t, ("ZX", -i), Id)
        for k in range(th + 1):
            j = k - i
            add(t, ("Z", abs(j)), -q[k] * (Id if j >= 0 else P))
        add(t, ("ZX", -(i - 1)), -kron_operator(I, D.T))
        eq(t)

    # Sigma_X = sum_theta q_theta Sigma_{ZX_{-theta}} + D Sigma_{X_1}^T + Sigma_W [+ diagonal coupling]
    t = {}
    add(t, ("X", 0), Id)
    for k in range(th + 1):
        add(t, ("ZX", -k), -q[k] * Id)
    add(t, ("X", 1), -kron_operator(D, I) @ P)
    if not literal and th > 0:
        # c_k = P(|Theta - Theta'| = k) for two independent draws
        c = np.zeros(th + 1)
        for a in range(th + 1):
            for b in range(th + 1):
                c[abs(a - b)] += q[a] * q[b]
        add(t, ("Z", 0), -(1.0 - c[0]) * E)
        for k in range(1, th + 1):
            add(t, ("Z", k), c[k] * E)
    eq(t, params.Sigma_W)

    # Sigma_{X_i} = sum_theta q_theta Sigma_{ZX_{i-theta}} + D Sigma_{X_{i-1}}, 1 <= i <= m
    for i in range(1, m + 1):
        t = {}
        add(t, ("X", i), Id)
        for k in range(th + 1):
            add(t, ("ZX", i - k), -q[k] * Id)
        add(t, ("X", i - 1), -kron_operator(D, I))
        eq(t)

    # Sigma_ZX = sum_theta q_theta Sigma_{Z_theta} + Sigma_{ZX_1} D^T
    t = {}
    add(t, ("ZX", 0), Id)
    for k in range(th + 1):
        add(t, ("Z", k), -q[k] * Id)
    add(t, ("ZX", 1), -kron_operator(I, D.T))
    eq(t)

    if len(rows) != len(keys):  # pragma: no cover - structural invariant
        raise AssertionError(f"{len(rows)} equations for {len(keys)} unknowns")

    grid = [[None] * len(keys) for _ in rows]
    for r, terms in enumerate(rows):
        for key, op in terms.items():
            grid[r][col[key]] = op
    mat = sp.bmat(grid, format="csc")
    return ExactCovWorkspace(
        p=p, theta_max=th, literal=literal, keys=keys,
        matrix=mat, rhs=np.concatenate(rhs), noise_cross=vx,
    )


def _cond1_estimate(mat: sp.csc_matrix, lu) -> float:
    n = mat.shape[0]
    inv = spla.LinearOperator(
        (n, n), matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="T"), dtype=float,
    )
    return float(spla.onenormest(mat) * spla.onenormest(inv))


def solve_stationary_system(params: SystemParams, *, literal: bool = False) -> ExactCovWorkspace:
    ws = assemble_stationary_system(params, literal=literal)
    try:
        lu = spla.splu(ws.matrix)
    except RuntimeError as exc:
        raise SingularSystem(f"stationary system is singular: {exc}") from exc
    ws.cond_estimate = _cond1_estimate(ws.matrix, lu)
    if not np.isfinite(ws.cond_estimate) or ws.cond_estimate > COND_LIMIT:
        raise SingularSystem(f"stationary system ill-conditioned (cond1 ~ {ws.cond_estimate:.3g})")
    sol = lu.solve(ws.rhs)
    n2 = ws.p * ws.p
    for j, key in enumerate(ws.keys):
        ws.blocks[key] = unvec(sol[j * n2:(j + 1) * n2], ws.p)
    return ws


def extend_lags(sigmas: list[np.ndarray], params: SystemParams, max_lag: int) -> list[np.ndarray]:
    """Append lags via ``S_{i+1} = (A+D) S_i - A D S_{i-1} + B sum_theta q_theta S_{i-theta}``.

    Valid for i >= max(theta_max, 1); ``sigmas`` must already hold lags 0..max(theta_max, 1).
    """
    A, B, D, q = params.A, params.B, params.D, params.q
    AD, ApD = A @ D, A + D
    out = list(sigmas)
    while len(out) <= max_lag:
        i = len(out) - 1
        mix = sum(q[k] * out[i - k] for k in range(params.theta_max + 1))
        out.append(ApD @ out[i] - AD @ out[i - 1] + B @ mix)
    return out


def exact_lag_covariances(params: SystemParams, max_lag: int, *, literal: bool = False) -> LagCovSeq:
    """Stationary ``Sigma_{X_0..max_lag}`` of the delayed system (see ``assemble_stationary_system``)."""
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    ws = solve_stationary_system(params, literal=literal)
    m = max(params.theta_max, 1)
    base = [ws.X(i) for i in range(m + 1)]
    base[0] = (base[0] + base[0].T) / 2
    ev = np.linalg.eigvalsh(base[0])
    if ev[0] < -1e-9 * max(1.0, ev[-1]):
        raise UnstableSystem(
            "zero-lag solution is indefinite: the delayed system has no stationary "
            "second moments (check delay_stability_radius)"
        )
    full = extend_lags(base, params, max_lag)
    return LagCovSeq(np.stack(full[: max_lag + 1]))
