"""Trajectory generation for the random-delay latent system."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .model import SystemParams

DIVERGENCE_GUARD = 1e6


class NotStationary(RuntimeError):
    """The simulated path left the divergence guard; ``step`` is the offending time index."""

    def __init__(self, step: int, guard: float = DIVERGENCE_GUARD):
        self.step = step
        super().__init__(f"trajectory diverged at step {step} (|x_t| > {guard:g})")


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray
    z: np.ndarray | None = None
    delays: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("x must be a T x p array with T >= 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("trajectory contains non-finite values")
        object.__setattr__(self, "x", x)
        for name in ("z", "delays"):
            a = getattr(self, name)
            if a is not None and np.shape(a) != x.shape:
                raise ValueError(f"{name} must have the same shape as x")

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def segment(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(x=self.x[start:stop])


@dataclass(frozen=True)
class SimConfig:
    T: int
    burn_in: int | None = None
    seed: int = 0
    record_latent: bool = False
    record_delays: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")


def default_burn_in(theta_max: int) -> int:
    return max(1000, 50 * (theta_max + 1))


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Square-root factor L with L L^T = cov; clips negative eigenvalues for singular PSD input."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh((cov + cov.T) / 2)
        return U * np.sqrt(np.clip(w, 0.0, None))


def simulate(params: SystemParams, cfg: SimConfig, *, backend: str | None = None) -> Trajectory:
    """Run the recursion from the origin and keep the last ``cfg.T`` samples.

    Noise and delays are drawn up front from ``default_rng(cfg.seed)`` so both kernel
    backends consume identical random streams.
    """
    p, th = params.p, params.theta_max
    burn = default_burn_in(th) if cfg.burn_in is None else cfg.burn_in
    if burn < th:
        raise ValueError(f"burn_in ({burn}) must be >= theta_max ({th})")
    n = burn + cfg.T

    rng = np.random.default_rng(cfg.seed)
    V = rng.standard_normal((n, p)) @ noise_factor(params.Sigma_V).T
    W = rng.standard_normal((n, p)) @ noise_factor(params.Sigma_W).T
    delays = rng.choice(th + 1, size=(n, p), p=params.q / params.q.sum()).astype(np.int64)

    impl = kernels.get_backend(backend)
    x, z, bad = impl.simulate_path(
        np.ascontiguousarray(params.A), np.ascontiguousarray(params.B),
        np.ascontiguousarray(params.D), np.ascontiguousarray(V), np.ascontiguousarray(W),
        delays, th, DIVERGENCE_GUARD, cfg.record_latent,
    )
    if bad >= 0:
        raise NotStationary(bad)
    return Trajectory(
        x=x[burn:],
        z=z[burn:] if cfg.record_latent else None,
        delays=delays[burn:] if cfg.record_delays else None,
    )


def _format_rows(arr: np.ndarray, prefix: str, fmt: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"{prefix}{i + 1}" for i in range(arr.shape[1])])
    for t, row in enumerate(arr):
        w.writerow([t] + [format(v, fmt) for v in row])
    return buf.getvalue()


def write_csv(traj: Trajectory, path, *, latent_path=None, delays_path=None) -> None:
    """Write ``t,x1,...,xp`` (17 significant digits, so values round-trip exactly)."""
    Path(path).write_text(_format_rows(traj.x, "x", ".17g"))
    if latent_path is not None and traj.z is not None:
        Path(latent_path).write_text(_format_rows(traj.z, "z", ".17g"))
    if delays_path is not None and traj.delays is not None:
        Path(delays_path).write_text(_format_rows(traj.delays, "d", "d"))
