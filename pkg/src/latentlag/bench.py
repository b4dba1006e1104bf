"""Timing of the compiled kernels against their pure-Python twins."""
from __future__ import annotations

import time

import numpy as np

from . import kernels
from .model import random_sparse_system
from .simulate import noise_factor


def _best_of(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(p: int = 20, T: int = 20_000, theta_max: int = 5, L: int = 6,
                  repeats: int = 3, seed: int = 0) -> dict:
    """Best-of-``repeats`` wall time per backend for both kernels, plus agreement checks."""
    params = random_sparse_system(p, 2, theta_max, seed=seed)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((T, p)) @ noise_factor(params.Sigma_V).T
    W = rng.standard_normal((T, p)) @ noise_factor(params.Sigma_W).T
    delays = rng.choice(theta_max + 1, size=(T, p), p=params.q).astype(np.int64)
    args = (np.ascontiguousarray(params.A), np.ascontiguousarray(params.B),
            np.ascontiguousarray(params.D), V, W, delays, theta_max, 1e6, False)

    X = rng.standard_normal((5000, p * L))
    y = X[:, :p] @ rng.standard_normal(p) + rng.standard_normal(5000)
    G = np.ascontiguousarray(X.T @ X / 5000)
    c = X.T @ y / 5000
    lam = np.full(p * L, 0.01)

    backends = ["python"] + (["cython"] if kernels.HAVE_COMPILED else [])
    out = {"p": p, "T": T, "theta_max": theta_max, "L": L, "backends": {}}
    paths, betas = {}, {}
    for name in backends:
        impl = kernels.get_backend(name)
        paths[name] = impl.simulate_path(*args)[0]
        betas[name] = np.zeros(p * L)
        impl.lasso_cd_gram(G, c, lam, betas[name], 10_000, 1e-10)
        out["backends"][name] = {
            "simulate_path_s": _best_of(lambda: impl.simulate_path(*args), repeats),
            "lasso_cd_gram_s": _best_of(
                lambda: impl.lasso_cd_gram(G, c, lam, np.zeros(p * L), 10_000, 1e-10), repeats),
        }
    if len(backends) == 2:
        py, cy = out["backends"]["python"], out["backends"]["cython"]
        out["speedup"] = {k: py[k] / cy[k] for k in py}
        out["max_abs_diff"] = {
            "simulate_path": float(np.abs(paths["python"] - paths["cython"]).max()),
            "lasso_cd_gram": float(np.abs(betas["python"] - betas["cython"]).max()),
        }
    return out
