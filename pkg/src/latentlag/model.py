"""Model parameters, stability checks, random instances and sign-pattern utilities.

The observed process follows

    z_t = A z_{t-1} + B x_{t-1} + v_t
    x_t(i) = z_{t - Theta_t(i)}(i) + (D x_{t-1})(i) + w_t(i)

with ``v ~ N(0, Sigma_V)``, ``w ~ N(0, Sigma_W)`` and per-coordinate delays
``Theta_t(i)`` drawn i.i.d. from the pmf ``q`` on ``{0, ..., theta_max}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

STABILITY_BOUND = 0.95
PMF_ATOL = 1e-12

Structure = Literal["A_sparse_BD_diagonal", "general"]


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemParams:
    """Ground-truth parameters of the random-delay latent system."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    Sigma_V: np.ndarray
    Sigma_W: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "D", "Sigma_V", "Sigma_W", "q"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.A.ndim != 2 or self.q.ndim != 1:
            raise ValueError("A must be a matrix and q a vector")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def theta_max(self) -> int:
        return self.q.shape[0] - 1

    def companion(self) -> np.ndarray:
        """Zero-delay transition matrix [[A, B], [A, B + D]] of the stacked state (z, x)."""
        return np.block([[self.A, self.B], [self.A, self.B + self.D]])

    def replace(self, **changes) -> "SystemParams":
        kw = {k: getattr(self, k) for k in ("A", "B", "D", "Sigma_V", "Sigma_W", "q")}
        kw.update(changes)
        return SystemParams(**kw)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "theta_max": self.theta_max,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "D": self.D.tolist(),
            "sigma_v": self.Sigma_V.tolist(),
            "sigma_w": self.Sigma_W.tolist(),
            "q": self.q.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        params = cls(
            A=d["A"], B=d["B"], D=d["D"],
            Sigma_V=d["sigma_v"], Sigma_W=d["sigma_w"], q=d["q"],
        )
        if "p" in d and int(d["p"]) != params.p:
            raise ValueError(f"declared p={d['p']} but matrices are {params.p}x{params.p}")
        if "theta_max" in d and int(d["theta_max"]) != params.theta_max:
            raise ValueError(
                f"declared theta_max={d['theta_max']} but q has length {params.q.size}"
            )
        for key in ("A", "B", "D", "Sigma_V", "Sigma_W", "q"):
            if not np.all(np.isfinite(getattr(params, key))):
                raise ValueError(f"{key} contains non-finite values")
        return params


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class SupportMetrics:
    tpr: float
    fpr: float
    f1: float
    tp: int = field(default=0, compare=False)
    fp: int = field(default=0, compare=False)
    n_true: int = field(default=0, compare=False)
    n_zero: int = field(default=0, compare=False)


def spectral_radius(m, *, max_iter: int = 10_000, dense_max: int = 512) -> float:
    """Largest eigenvalue magnitude of a square matrix.

    Dense eigendecomposition up to ``dense_max`` rows, otherwise a normalized
    power iteration whose growth rate is averaged over the last half of the run
    (this also handles complex-conjugate dominant pairs, where the iterate
    direction never settles).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0:
        return 0.0
    if n <= dense_max:
        return float(np.max(np.abs(np.linalg.eigvals(m))))

    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    logs = []
    for _ in range(max_iter):
        y = m @ x
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        logs.append(np.log(nrm))
        x = y / nrm
        if len(logs) >= 200 and len(logs) % 100 == 0:
            half = logs[len(logs) // 2:]
            a, b = np.mean(half[: len(half) // 2]), np.mean(half[len(half) // 2:])
            if abs(a - b) < 1e-12:
                break
    tail = logs[len(logs) // 2:]
    return float(np.exp(np.mean(tail)))


def augmented_transition(params: SystemParams) -> tuple[np.ndarray, list[np.ndarray]]:
    """Mean transition of the stacked state ``s_t = [z_t, z_{t-1}, ..., z_{t-theta_max}, x_t]``.

    Returns ``(F_bar, R)`` where ``R[theta]`` (p x N) is the part of the x-rows that is
    active when a coordinate draws delay ``theta``; row i of the realized transition is
    ``F_bar[x_i] + R[theta_i][i] - sum_theta q_theta R[theta][i]``.
    """
    p, th = params.p, params.theta_max
    n = (th + 2) * p
    xs = slice((th + 1) * p, n)
    F = np.zeros((n, n))
    F[:p, :p] = params.A
    F[:p, xs] = params.B
    for j in range(1, th + 1):
        F[j * p:(j + 1) * p, (j - 1) * p:j * p] = np.eye(p)
    F[xs, xs] = params.D
    R = []
    for t in range(th + 1):
        r = np.zeros((p, n))
        if t == 0:
            r[:, :p] = params.A
            r[:, xs] = params.B
        else:
            r[:, (t - 1) * p:t * p] = np.eye(p)
        R.append(r)
    F[xs] += sum(params.q[t] * R[t] for t in range(th + 1))
    return F, R


def second_moment_map(params: SystemParams):
    """``P -> E[F_t P F_t^T]`` for the random transition of the stacked state."""
    F, R = augmented_transition(params)
    p, q = params.p, params.q
    xs = slice(F.shape[0] - p, F.shape[0])
    Rbar = F[xs] - np.pad(params.D, ((0, 0), (F.shape[0] - p, 0)))

    def apply(P):
        out = F @ P @ F.T
        mix = sum(q[t] * np.einsum("ij,jk,ik->i", R[t], P, R[t]) for t in range(len(R)))
        corr = mix - np.einsum("ij,jk,ik->i", Rbar, P, Rbar)
        out[xs, xs] += np.diag(corr)
        return out

    return apply, F.shape[0]


def delay_stability_radius(params: SystemParams) -> float:
    """Square root of the Perron root of ``second_moment_map``.

    The process has bounded second moments iff this is < 1. It reduces to the
    companion spectral radius when theta_max = 0 and is never below the spectral
    radius of the mean transition.
    """
    import scipy.sparse.linalg as spla

    apply, n = second_moment_map(params)
    mv = lambda v: apply(v.reshape(n, n)).ravel()
    if n * n <= 256:
        M = np.column_stack([mv(e) for e in np.eye(n * n)])
        lam = np.max(np.abs(np.linalg.eigvals(M)))
    else:
        op = spla.LinearOperator((n * n, n * n), matvec=mv, dtype=float)
        try:
            lam = np.abs(spla.eigs(op, k=1, which="LM", v0=np.eye(n).ravel(),
                                   return_eigenvectors=False, maxiter=5000, tol=1e-8)[0])
        except spla.ArpackNoConvergence:
            lam = _trace_power(apply, n)
    return float(np.sqrt(lam))


def _trace_power(apply, n, iters=5000):
    P = np.eye(n)
    lam = 0.0
    for _ in range(iters):
        Q = apply(P)
        tr = np.trace(Q)
        if tr == 0:
            return 0.0
        lam_new = tr / np.trace(P)
        P = Q / tr
        if abs(lam_new - lam) < 1e-12 * max(lam_new, 1e-300):
            break
        lam = lam_new
    return lam_new


def _is_psd(s: np.ndarray) -> tuple[bool, bool]:
    sym = np.allclose(s, s.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(s).max()))
    if not sym:
        return False, False
    ev = np.linalg.eigvalsh((s + s.T) / 2)
    return True, bool(ev.min() >= -1e-10 * max(1.0, np.abs(ev).max()))


def validate_params(params: SystemParams, stability_bound: float = STABILITY_BOUND) -> ValidationReport:
    """Check every SystemParams invariant; violations are reported, never raised."""
    v: list[str] = []
    p = params.p
    for name in ("A", "B", "D", "Sigma_V", "Sigma_W"):
        m = getattr(params, name)
        if m.shape != (p, p):
            v.append(f"{name} has shape {m.shape}, expected {(p, p)}")
        elif not np.all(np.isfinite(m)):
            v.append(f"{name} has non-finite entries")
    if v:
        return ValidationReport(tuple(v))

    for name in ("Sigma_V", "Sigma_W"):
        sym, psd = _is_psd(getattr(params, name))
        if not sym:
            v.append(f"{name} is not symmetric")
        elif not psd:
            v.append(f"{name} is not positive semidefinite")

    q = params.q
    if not np.all(np.isfinite(q)):
        v.append("pmf has non-finite entries")
    else:
        if np.any(q < 0):
            v.append(f"pmf has negative entries (min {q.min():.6g})")
        s = float(q.sum())
        if abs(s - 1.0) > PMF_ATOL:
            v.append(f"pmf sums to {s:.12g}")

    rho = spectral_radius(params.companion())
    if rho > stability_bound:
        v.append(f"unstable: companion spectral radius {rho:.6g} > {stability_bound}")
    elif params.theta_max > 0 and not v:
        rd = delay_stability_radius(params)
        if rd > stability_bound:
            v.append(f"unstable under random delays: mean-square radius {rd:.6g} > {stability_bound}")
    return ValidationReport(tuple(v))


def _random_spd(rng, p):
    g = rng.standard_normal((p, p))
    return g @ g.T / p + 0.5 * np.eye(p)


def random_sparse_system(
    p: int,
    nonzeros_per_row: int,
    theta_max: int,
    structure: Structure = "A_sparse_BD_diagonal",
    seed: int = 0,
    *,
    stability_bound: float = STABILITY_BOUND,
    zero_d: bool = True,
    uniform_q: bool = False,
    magnitude: tuple[float, float] = (0.5, 1.0),
) -> SystemParams:
    """Draw a random stable instance.

    ``A_sparse_BD_diagonal`` places exactly ``p * nonzeros_per_row`` nonzeros in A at
    uniformly random positions, with random signs and magnitudes uniform on
    ``magnitude``; B is diagonal with entries uniform on ``magnitude``; D is zero
    or (``zero_d=False``) diagonal uniform on [0, 1). Noise covariances are identity.

    ``general`` draws dense Gaussian A, B, D and random SPD noise covariances, i.e.
    generic parameters in the Lebesgue sense; ``nonzeros_per_row`` is ignored.

    All matrices are then scaled by one common factor so the companion spectral
    radius is at most ``stability_bound``; when theta_max > 0 the factor is reduced
    further (bisection) until ``delay_stability_radius`` meets the same bound. The pmf is uniform on the simplex
    (normalized exponentials) unless ``uniform_q``.
    """
    if p < 1 or theta_max < 0:
        raise ValueError("need p >= 1 and theta_max >= 0")
    if not 1 <= nonzeros_per_row <= p:
        raise ValueError(f"nonzeros_per_row must lie in [1, {p}]")
    rng = np.random.default_rng(seed)
    lo, hi = magnitude

    if structure == "A_sparse_BD_diagonal":
        A = np.zeros((p, p))
        flat = rng.choice(p * p, size=p * nonzeros_per_row, replace=False)
        signs = rng.choice([-1.0, 1.0], size=flat.size)
        A.flat[flat] = signs * rng.uniform(lo, hi, size=flat.size)
        B = np.diag(rng.uniform(lo, hi, size=p))
        D = np.zeros((p, p)) if zero_d else np.diag(rng.uniform(0.0, 1.0, size=p))
        Sigma_V = np.eye(p)
        Sigma_W = np.eye(p)
    elif structure == "general":
        A = rng.standard_normal((p, p)) / np.sqrt(p)
        B = rng.standard_normal((p, p)) / np.sqrt(p)
        D = rng.standard_normal((p, p)) / np.sqrt(p)
        Sigma_V = _random_spd(rng, p)
        Sigma_W = _random_spd(rng, p)
    else:
        raise ValueError(f"unknown structure {structure!r}")

    if uniform_q:
        q = np.full(theta_max + 1, 1.0 / (theta_max + 1))
    else:
        e = rng.exponential(size=theta_max + 1)
        q = e / e.sum()

    rho = spectral_radius(np.block([[A, B], [A, B + D]]))
    if rho > stability_bound:
        c = stability_bound / rho * (1.0 - 1e-9)
        A, B, D = c * A, c * B, c * D
    out = SystemParams(A=A, B=B, D=D, Sigma_V=Sigma_V, Sigma_W=Sigma_W, q=q)
    if theta_max > 0 and delay_stability_radius(out) > stability_bound:
        out = _shrink_to_bound(out, stability_bound)
    return out


def _shrink_to_bound(params: SystemParams, bound: float) -> SystemParams:
    """Largest common scale c in (0, 1) of A, B, D meeting the delayed-system bound (bisection)."""
    scaled = lambda c: params.replace(A=c * params.A, B=c * params.B, D=c * params.D)
    lo, hi = 0.0, 1.0
    for _ in range(12):
        mid = (lo + hi) / 2
        if delay_stability_radius(scaled(mid)) <= bound:
            lo = mid
        else:
            hi = mid
    return scaled(lo)


def sign_pattern_of(m, threshold: float = 0.0) -> np.ndarray:
    """Entrywise sign where ``|m_ij| > threshold``, zero elsewhere (int8)."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    m = np.asarray(m, dtype=float)
    return np.where(np.abs(m) > threshold, np.sign(m), 0).astype(np.int8)


def check_sign_pattern(s) -> np.ndarray:
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("sign pattern must be a square grid")
    if not np.all(np.isin(s, (-1, 0, 1))):
        raise ValueError("sign pattern entries must be -1, 0 or +1")
    return s.astype(np.int8)


def offdiag_mask(p: int) -> np.ndarray:
    return ~np.eye(p, dtype=bool)


def support_metrics(estimated, truth, offdiag_only: bool = True) -> SupportMetrics:
    """Sign-aware TPR/FPR/F1.

    A true positive is an entry whose estimated sign equals a nonzero true sign.
    TPR is reported as 1 when the truth has no nonzeros, FPR as 0 when it has no zeros.
    """
    est = check_sign_pattern(estimated)
    tru = check_sign_pattern(truth)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    mask = offdiag_mask(est.shape[0]) if offdiag_only else np.ones(est.shape, dtype=bool)
    e, t = est[mask], tru[mask]

    n_true = int(np.count_nonzero(t))
    n_zero = int(t.size - n_true)
    n_est = int(np.count_nonzero(e))
    tp = int(np.count_nonzero((e == t) & (t != 0)))
    fp = int(np.count_nonzero((e != 0) & (t == 0)))

    tpr = tp / n_true if n_true else 1.0
    fpr = fp / n_zero if n_zero else 0.0
    denom = n_est + n_true
    f1 = 2.0 * tp / denom if denom else 1.0
    return SupportMetrics(tpr=tpr, fpr=fpr, f1=f1, tp=tp, fp=fp, n_true=n_true, n_zero=n_zero)
