"""Synthetic benchmark orchestration, ROC curves and CSV ingestion."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .covariance import sample_lag_covariances
from .granger import granger_fit, granger_predict, latentlag_predict, normalized_mse, rolling_forecasts
from .identify import detect_theta_max
from .learn import LearnConfig, cross_validate, fit
from .model import (SystemParams, check_sign_pattern, offdiag_mask, random_sparse_system,
                    sign_pattern_of, support_metrics)
from .simulate import SimConfig, Trajectory, simulate

log = logging.getLogger(__name__)

FPR_GRID = np.linspace(0.0, 1.0, 101)


# -- ROC -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RocCurve:
    points: np.ndarray          # (n, 2) rows (fpr, tpr), sorted by fpr then tpr
    auc: float
    degenerate: bool = False    # truth had no off-diagonal nonzeros (tpr undefined)

    def tpr_at(self, fpr) -> np.ndarray:
        """Linear interpolation on the upper envelope (largest tpr at each fpr)."""
        f, t = self.points[:, 0], self.points[:, 1]
        uf = np.unique(f)
        ut = np.array([t[f == v].max() for v in uf])
        return np.interp(fpr, uf, ut)


def trapezoid_auc(points: np.ndarray) -> float:
    return float(np.trapezoid(points[:, 1], points[:, 0]))


def roc_from_sweep(scores, truth, signs=None, *, offdiag_only: bool = True) -> RocCurve:
    """ROC traced by thresholding ``scores`` at every distinct value.

    An entry is declared nonzero when its score exceeds the threshold; with ``signs``
    given (the estimate's sign matrix) it only counts as a true positive when the sign
    also matches. (0, 0) and (1, 1) are always included.
    """
    scores = np.abs(np.asarray(scores, dtype=float))
    tru = check_sign_pattern(truth)
    if scores.shape != tru.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {tru.shape}")
    if signs is None:
        est_sign = np.where(tru != 0, tru, 1).astype(np.int8)
    else:
        est_sign = np.sign(np.asarray(signs)).astype(np.int8)
        est_sign[est_sign == 0] = 1
    mask = offdiag_mask(tru.shape[0]) if offdiag_only else np.ones(tru.shape, dtype=bool)
    degenerate = not np.any(tru[mask] != 0)

    pts = [(0.0, 0.0), (1.0, 1.0)]
    for thr in np.unique(np.concatenate([scores[mask], [-np.inf]])):
        est = np.where(scores > thr, est_sign, 0)
        m = support_metrics(est, tru, offdiag_only=offdiag_only)
        pts.append((m.fpr, m.tpr))
    pts = np.array(sorted(set(pts)))
    return RocCurve(points=pts, auc=trapezoid_auc(pts), degenerate=degenerate)


def vertical_average(curves: list[RocCurve], grid: np.ndarray = FPR_GRID) -> np.ndarray:
    """Mean tpr at fixed fpr values; rows (fpr, mean tpr)."""
    tprs = np.array([c.tpr_at(grid) for c in curves])
    return np.column_stack([grid, tprs.mean(axis=0)])


# -- experiment configuration ------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One synthetic benchmark. ``system`` holds either ``{"params": {...}}`` (a serialized
    SystemParams) or ``{"random": {p, nonzeros_per_row, theta_max, ...}}`` (arguments of
    random_sparse_system; the seed is added per run)."""

    system: dict
    T: int
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    burn_in: int | None = None
    theta: int | None = None                 # fixed delay depth for the estimator
    theta_grid: list[int] | None = None      # cross-validate the depth when theta is None
    lambda1: float = math.inf
    lambda2: float = math.inf
    lambda_grid: list[list[float]] | None = None
    rank_tol: float = 1e-3                   # detection tolerance on sample covariances
    granger_L: int | None = None             # default: theta + 1
    granger_lambdas: list[float] = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 3e-2, 1e-1])
    max_iters: int = 20_000
    horizon: int = 5
    test_T: int = 1000
    outputs: str | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        th = self.true_theta_max()
        if self.T < 10 * (th + 1):
            raise ValueError(f"T={self.T} is below 10 (theta_max + 1) = {10 * (th + 1)}")
        if ("params" in self.system) == ("random" in self.system):
            raise ValueError('system must contain exactly one of "params" or "random"')

    def true_theta_max(self) -> int:
        if "params" in self.system:
            return len(self.system["params"]["q"]) - 1
        return int(self.system["random"]["theta_max"])

    def build_system(self, seed: int) -> SystemParams:
        if "params" in self.system:
            return SystemParams.from_dict(self.system["params"])
        kw = dict(self.system["random"])
        return random_sparse_system(seed=seed, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("outputs", None)
        d.pop("workers", None)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- per-seed pipeline -------------------------------------------------------------

Estimator = Callable[[Trajectory, SystemParams, ExperimentConfig, int], np.ndarray]


def _select_theta(traj: Trajectory, cfg: ExperimentConfig) -> int:
    if cfg.theta is not None:
        return cfg.theta
    if cfg.theta_grid:
        lam = cfg.lambda_grid or [[cfg.lambda1, cfg.lambda2]]
        return cross_validate(traj, cfg.theta_grid, [tuple(x) for x in lam]).best_theta
    k_max = cfg.true_theta_max() + 2
    covs = sample_lag_covariances(traj, 2 * k_max + 1)
    return detect_theta_max(covs, k_max, rel_tol=cfg.rank_tol)


def fit_latentlag(traj: Trajectory, theta: int, cfg: ExperimentConfig):
    l1, l2 = cfg.lambda1, cfg.lambda2
    if cfg.lambda_grid:
        _, (l1, l2), _ = cross_validate(traj, [theta], [tuple(x) for x in cfg.lambda_grid])
    covs = sample_lag_covariances(traj, 2 * theta + 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(covs, LearnConfig(theta_max=theta, lambda1=l1, lambda2=l2, max_iters=cfg.max_iters))


def fit_granger_selected(traj: Trajectory, L: int, grid: list[float]):
    """Pick the lasso penalty by one-step error on the last fifth, then refit on everything."""
    x = traj.x
    cut = int(0.8 * x.shape[0])
    best, best_err = grid[0], np.inf
    for lam in grid:
        est = granger_fit(x[:cut], L, lam)
        pred = rolling_forecasts(granger_predict, est, x[cut - L:], 1, L)
        err = normalized_mse(pred, x[cut:])
        if err < best_err:
            best, best_err = lam, err
    return granger_fit(x, L, best), best


def run_seed(cfg: ExperimentConfig, seed: int, extra: dict[str, Estimator] | None = None) -> dict:
    params = cfg.build_system(seed)
    truth = sign_pattern_of(params.A)
    traj = simulate(params, SimConfig(T=cfg.T, burn_in=cfg.burn_in, seed=seed))
    test = simulate(params, SimConfig(T=cfg.test_T, burn_in=cfg.burn_in, seed=seed + 1_000_003))

    theta = _select_theta(traj, cfg)
    est = fit_latentlag(traj, theta, cfg)
    L = cfg.granger_L or theta + 1
    gest, glam = fit_granger_selected(traj, L, cfg.granger_lambdas)

    signed = {"latentlag": est.K1, "granger": gest.dependency}
    for name, fn in (extra or {}).items():
        signed[name] = np.asarray(fn(traj, params, cfg, seed), dtype=float)

    rocs = {m: roc_from_sweep(np.abs(s), truth, signs=s) for m, s in signed.items()}
    h = cfg.horizon
    start = max(theta + 2, L)
    nmse = {
        "latentlag": normalized_mse(rolling_forecasts(latentlag_predict, est, test.x, h, start),
                                    test.x[start + h - 1:]),
        "granger": normalized_mse(rolling_forecasts(granger_predict, gest, test.x, h, start),
                                  test.x[start + h - 1:]),
    }
    return {
        "seed": seed,
        "ok": True,
        "theta_used": theta,
        "granger_L": L,
        "granger_lambda": glam,
        "learn_converged": est.converged,
        "learn_iterations": est.iterations,
        "auc": {m: r.auc for m, r in rocs.items()},
        "tpr_at_fpr_0.1": {m: float(r.tpr_at(0.1)) for m, r in rocs.items()},
        "f1_default_threshold": support_metrics(est.sign, truth).f1,
        "nmse_horizon": {m: v for m, v in nmse.items()},
        "roc": {m: r.points.tolist() for m, r in rocs.items()},
    }


def _run_seed_safe(args):
    cfg, seed, extra = args
    try:
        return run_seed(cfg, seed, extra)
    except Exception as exc:  # recorded per seed, never fatal
        log.warning("seed %d failed: %s", seed, exc)
        return {"seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def run_synthetic(cfg: ExperimentConfig, extra: dict[str, Estimator] | None = None) -> dict:
    """Simulate, estimate and score every seed; aggregate ROC curves per method.

    Failed seeds are kept in ``per_seed`` with their error and left out of the means.
    ``mean_roc`` holds vertically averaged curves; ``auc`` reports both the mean of the
    per-seed AUCs and the AUC of the averaged curve.
    """
    jobs = [(cfg, s, extra) for s in sorted(cfg.seeds)]
    if cfg.workers > 1 and not extra:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            per_seed = list(ex.map(_run_seed_safe, jobs))
    else:
        per_seed = [_run_seed_safe(j) for j in jobs]
    per_seed.sort(key=lambda r: r["seed"])

    good = [r for r in per_seed if r["ok"]]
    methods = sorted(good[0]["roc"]) if good else []
    mean_roc, auc = {}, {}
    for m in methods:
        curves = [RocCurve(np.array(r["roc"][m]), r["auc"][m]) for r in good]
        avg = vertical_average(curves)
        mean_roc[m] = avg.tolist()
        auc[m] = {
            "mean_of_seeds": float(np.mean([c.auc for c in curves])),
            "vertical_average": trapezoid_auc(avg),
            "tpr_at_fpr_0.1": float(np.mean([c.tpr_at(0.1) for c in curves])),
        }
    summary = {
        "config_hash": cfg.hash(),
        "n_failed": len(per_seed) - len(good),
        "per_seed": per_seed,
        "mean_roc": mean_roc,
        "auc": auc,
    }
    if cfg.outputs:
        write_artifacts(summary, Path(cfg.outputs))
    return summary


def write_artifacts(summary: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    with open(out / "mean_roc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "fpr", "tpr"])
        for m, pts in summary["mean_roc"].items():
            for f, t in pts:
                w.writerow([m, f"{f:.6g}", f"{t:.6g}"])
    with open(out / "per_seed.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "ok", "method", "auc", "tpr_at_fpr_0.1", "nmse_horizon", "error"])
        for r in summary["per_seed"]:
            if not r["ok"]:
                w.writerow([r["seed"], 0, "", "", "", "", r["error"]])
                continue
            for m in r["auc"]:
                w.writerow([r["seed"], 1, m, f"{r['auc'][m]:.6g}", f"{r['tpr_at_fpr_0.1'][m]:.6g}",
                            f"{r['nmse_horizon'].get(m, float('nan')):.6g}", ""])
    with open(out / "roc_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "method", "fpr", "tpr"])
        for r in summary["per_seed"]:
            for m, pts in r.get("roc", {}).items():
                for f, t in pts:
                    w.writerow([r["seed"], m, f"{f:.6g}", f"{t:.6g}"])


# -- CSV ingestion ---------------------------------------------------------------------

class CsvFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


def ingest_csv(path, normalize: bool = False) -> Trajectory:
    """Read a ``t,x1,...,xp`` file; optionally standardize each column to mean 0, variance 1."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(1, "empty file") from None
        header = [h.strip() for h in header]
        p = len(header) - 1
        if p < 1 or header[0] != "t" or header[1:] != [f"x{i + 1}" for i in range(p)]:
            raise CsvFormatError(1, f"expected header t,x1,...,xp, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 1:
                raise CsvFormatError(line, f"expected {p + 1} columns, found {len(row)}")
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise CsvFormatError(line, f"malformed number ({exc})") from None
            if not all(math.isfinite(v) for v in vals):
                raise CsvFormatError(line, "non-finite value")
            rows.append(vals)
    if not rows:
        raise CsvFormatError(2, "no data rows")
    x = np.array(rows)
    if normalize:
        sd = x.std(axis=0)
        if np.any(sd == 0):
            raise ValueError("cannot standardize a constant column")
        x = (x - x.mean(axis=0)) / sd
    return Trajectory(x=x)
