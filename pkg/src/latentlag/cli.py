"""Command-line entry point: ``latentlag <subcommand> --config CONFIG.json [overrides]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
Input paths inside a config are resolved relative to the config file; every output is
written under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .bench import run_benchmark
from .covariance import LagCovSeq, exact_lag_covariances, sample_lag_covariances
from .granger import (granger_fit, granger_predict, latentlag_predict, normalized_mse,
                      predictions_csv, rolling_forecasts)
from .harness import ExperimentConfig, ingest_csv, run_synthetic
from .identify import detect_theta_max, recover_combos_general, recover_combos_theta01
from .learn import LearnConfig, cross_validate, fit
from .model import SystemParams, random_sparse_system, validate_params
from .simulate import SimConfig, simulate, write_csv

SUBCOMMANDS = ("simulate", "cov", "exact-cov", "detect", "identify", "learn",
               "granger", "roc", "predict", "bench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="latentlag", description="Latent random-delay system toolkit.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="JSON configuration file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path, default=Path("."))
    ap.add_argument("--theta-max", type=int, dest="theta_max")
    ap.add_argument("--lambda1", type=float)
    ap.add_argument("--lambda2", type=float)
    ap.add_argument("--normalize", action="store_true")
    return ap


# -- config helpers ------------------------------------------------------------------

class Ctx:
    def __init__(self, args):
        self.args = args
        self.base = args.config.parent if args.config else Path(".")
        self.conf = {}
        if args.config:
            try:
                self.conf = json.loads(args.config.read_text())
            except FileNotFoundError:
                raise UsageError(f"config file not found: {args.config}") from None
            except json.JSONDecodeError as exc:
                raise UsageError(f"config is not valid JSON: {exc}") from None
            if not isinstance(self.conf, dict):
                raise UsageError("config must be a JSON object")
        args.out.mkdir(parents=True, exist_ok=True)

    def get(self, key, default=None, required=False):
        if key not in self.conf:
            if required:
                raise UsageError(f"config is missing {key!r}")
            return default
        return self.conf[key]

    @property
    def seed(self) -> int:
        return self.args.seed if self.args.seed is not None else int(self.get("seed", 0))

    @property
    def theta_max(self) -> int | None:
        if self.args.theta_max is not None:
            return self.args.theta_max
        v = self.get("theta_max")
        return None if v is None else int(v)

    def lambdas(self) -> tuple[float, float]:
        l1 = self.args.lambda1 if self.args.lambda1 is not None else float(self.get("lambda1", np.inf))
        l2 = self.args.lambda2 if self.args.lambda2 is not None else float(self.get("lambda2", np.inf))
        return l1, l2

    def path(self, key) -> Path:
        p = Path(self.get(key, required=True))
        return p if p.is_absolute() else self.base / p

    def out(self, name) -> Path:
        return self.args.out / name

    def system(self) -> SystemParams:
        s = self.get("system", required=True)
        if "params" in s:
            params = SystemParams.from_dict(s["params"])
        elif "random" in s:
            params = random_sparse_system(seed=self.seed, **s["random"])
        else:
            raise UsageError('system needs "params" or "random"')
        rep = validate_params(params)
        if not rep.ok:
            raise ValueError("invalid system: " + "; ".join(rep.violations))
        return params

    def trajectory(self):
        if "data" in self.conf:
            return ingest_csv(self.path("data"), normalize=self.args.normalize or self.get("normalize", False))
        T = int(self.get("T", required=True))
        traj = simulate(self.system(), SimConfig(T=T, burn_in=self.get("burn_in"), seed=self.seed))
        if self.args.normalize or self.get("normalize", False):
            from .simulate import Trajectory
            x = traj.x
            traj = Trajectory((x - x.mean(0)) / x.std(0))
        return traj

    def covariances(self, max_lag: int) -> LagCovSeq:
        """From a saved covariance file, a data file, or the exact values of a system."""
        if "covariances" in self.conf:
            covs = LagCovSeq.from_dict(json.loads(self.path("covariances").read_text()))
            return covs.truncate(max_lag) if covs.max_lag > max_lag else covs
        if "data" in self.conf or "T" in self.conf:
            return sample_lag_covariances(self.trajectory(), max_lag)
        return exact_lag_covariances(self.system(), max_lag, literal=bool(self.get("literal", False)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2))


# -- subcommands ---------------------------------------------------------------------

def cmd_simulate(ctx: Ctx) -> None:
    params = ctx.system()
    cfg = SimConfig(T=int(ctx.get("T", required=True)), burn_in=ctx.get("burn_in"), seed=ctx.seed,
                    record_latent=bool(ctx.get("record_latent", False)),
                    record_delays=bool(ctx.get("record_delays", False)))
    traj = simulate(params, cfg)
    write_csv(traj, ctx.out("trajectory.csv"),
              latent_path=ctx.out("latent.csv") if cfg.record_latent else None,
              delays_path=ctx.out("delays.csv") if cfg.record_delays else None)
    _write_json(ctx.out("system.json"), params.to_dict())
    print(f"wrote {ctx.out('trajectory.csv')} (T={traj.T}, p={traj.p})")


def cmd_cov(ctx: Ctx) -> None:
    covs = sample_lag_covariances(ctx.trajectory(), int(ctx.get("max_lag", required=True)))
    _write_json(ctx.out("covariances.json"), covs.to_dict())
    print(f"wrote {ctx.out('covariances.json')} (max_lag={covs.max_lag})")


def cmd_exact_cov(ctx: Ctx) -> None:
    covs = exact_lag_covariances(ctx.system(), int(ctx.get("max_lag", required=True)),
                                 literal=bool(ctx.get("literal", False)))
    _write_json(ctx.out("exact_covariances.json"), covs.to_dict())
    print(f"wrote {ctx.out('exact_covariances.json')} (max_lag={covs.max_lag})")


def _k_max(ctx: Ctx) -> int:
    k = ctx.get("k_max")
    if k is None:
        th = ctx.theta_max
        if th is None:
            raise UsageError("set k_max (or theta_max) in the config")
        k = max(th, 1) + 1
    return int(k)


def cmd_detect(ctx: Ctx) -> None:
    k_max = _k_max(ctx)
    covs = ctx.covariances(2 * k_max + 1)
    k = detect_theta_max(covs, k_max, float(ctx.get("rel_tol", 1e-8)))
    print(f"detected_k={k}")
    if k == 1:
        print("theta_max is 0 or 1; the two cases cannot be told apart from covariances")
    _write_json(ctx.out("detect.json"), {"detected_k": k, "k_max": k_max})


def cmd_identify(ctx: Ctx) -> None:
    rel_tol = float(ctx.get("rel_tol", 1e-8))
    th = ctx.theta_max
    if th is None:
        k_max = _k_max(ctx)
        th = detect_theta_max(ctx.covariances(2 * k_max + 1), k_max, rel_tol)
    covs = ctx.covariances(2 * max(th, 1) + 1)
    combos = recover_combos_theta01(covs, rel_tol) if th <= 1 else recover_combos_general(covs, th, rel_tol)
    _write_json(ctx.out("identified.json"), combos.to_dict())
    print(f"detected_k={combos.detected_k}; theta_max candidates {list(combos.theta_candidates)}")
    if combos.detected_k == 1:
        print("theta_max=0 would mean q_0=1, q_1=0; theta_max=1 keeps both. Both are reported.")


def cmd_learn(ctx: Ctx) -> None:
    traj = ctx.trajectory()
    l1, l2 = ctx.lambdas()
    th = ctx.theta_max
    grid = ctx.get("theta_grid")
    lgrid = ctx.get("lambda_grid")
    if th is None and not grid:
        raise UsageError("set theta_max (or --theta-max) or a theta_grid")
    if grid or lgrid:
        res = cross_validate(traj, grid or [th], [tuple(x) for x in (lgrid or [[l1, l2]])],
                             n_folds=int(ctx.get("folds", 5)))
        th, (l1, l2) = res.best_theta, res.best_lambdas
        ctx.out("cv_table.csv").write_text(res.table_csv())
    cfg = LearnConfig(theta_max=th, lambda1=l1, lambda2=l2,
                      max_iters=int(ctx.get("max_iters", 20_000)), tol=float(ctx.get("tol", 1e-8)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = fit(sample_lag_covariances(traj, 2 * th + 2), cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = est.to_dict()
    out.update(theta_max=th, lambda1=l1, lambda2=l2)
    _write_json(ctx.out("estimate.json"), out)
    np.savetxt(ctx.out("sign_pattern.csv"), est.sign, fmt="%d", delimiter=",")
    print(f"theta_max={th} objective={est.objective:.6g} iterations={est.iterations} "
          f"converged={est.converged}")


def cmd_granger(ctx: Ctx) -> None:
    traj = ctx.trajectory()
    L = int(ctx.get("L", (ctx.theta_max or 0) + 1))
    lam = ctx.get("lambdas", ctx.get("lambda", 1e-3))
    est = granger_fit(traj, L, lam)
    _write_json(ctx.out("granger.json"), est.to_dict())
    print(f"L={L} nonzeros in dependency={int(np.count_nonzero(est.dependency))}")


def cmd_roc(ctx: Ctx) -> None:
    d = dict(ctx.conf)
    d.pop("seed", None)
    if ctx.args.seed is not None:
        d["seeds"] = [ctx.args.seed]
    if ctx.args.theta_max is not None:
        d["theta"] = ctx.args.theta_max
    if ctx.args.lambda1 is not None:
        d["lambda1"] = ctx.args.lambda1
    if ctx.args.lambda2 is not None:
        d["lambda2"] = ctx.args.lambda2
    d["outputs"] = str(ctx.args.out)
    try:
        cfg = ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    summary = run_synthetic(cfg)
    for m, a in summary["auc"].items():
        print(f"{m}: mean AUC {a['mean_of_seeds']:.4f}, averaged-curve AUC {a['vertical_average']:.4f}, "
              f"TPR@FPR=0.1 {a['tpr_at_fpr_0.1']:.4f}")
    print(f"failed seeds: {summary['n_failed']}")


def cmd_predict(ctx: Ctx) -> None:
    traj = ctx.trajectory()
    th = ctx.theta_max
    if th is None:
        raise UsageError("set theta_max (or --theta-max)")
    l1, l2 = ctx.lambdas()
    h = int(ctx.get("horizon", 1))
    frac = float(ctx.get("train_fraction", 0.8))
    x = traj.x
    cut = int(frac * x.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = fit(sample_lag_covariances(x[:cut], 2 * th + 2), LearnConfig(theta_max=th, lambda1=l1, lambda2=l2))
    L = int(ctx.get("L", th + 1))
    gest = granger_fit(x[:cut], L, ctx.get("lambda", 1e-3))
    start = max(th + 2, L)
    test = x[cut - start:]
    res = {}
    for name, fn, e in (("latentlag", latentlag_predict, est), ("granger", granger_predict, gest)):
        pred = rolling_forecasts(fn, e, test, h, start)
        res[name] = normalized_mse(pred, test[start + h - 1:])
        ctx.out(f"predictions_{name}.csv").write_text(predictions_csv(pred, h, cut + h - 1))
    _write_json(ctx.out("prediction_nmse.json"), {"horizon": h, "nmse": res})
    for k, v in res.items():
        print(f"{k}: normalized MSE at horizon {h} = {v:.6g}")


def cmd_bench(ctx: Ctx) -> None:
    kw = {k: ctx.get(k) for k in ("p", "T", "theta_max", "L", "repeats") if ctx.get(k) is not None}
    res = run_benchmark(seed=ctx.seed, **kw)
    _write_json(ctx.out("bench.json"), res)
    for name, t in res["backends"].items():
        print(f"{name}: simulate_path {t['simulate_path_s']:.4f}s, lasso_cd_gram {t['lasso_cd_gram_s']:.5f}s")
    if "speedup" in res:
        print("speedup: " + ", ".join(f"{k} {v:.1f}x" for k, v in res["speedup"].items()))


COMMANDS = {
    "simulate": cmd_simulate, "cov": cmd_cov, "exact-cov": cmd_exact_cov, "detect": cmd_detect,
    "identify": cmd_identify, "learn": cmd_learn, "granger": cmd_granger, "roc": cmd_roc,
    "predict": cmd_predict, "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        if args.config is None and args.command != "bench":
            raise UsageError(f"{args.command} needs --config")
        ctx = Ctx(args)
        COMMANDS[args.command](ctx)
    except UsageError as exc:
        print(f"latentlag: usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"latentlag: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
