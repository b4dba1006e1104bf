"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py --p 20 --T 20000 --repeats 3
"""
import argparse
import json

from latentlag import kernels
from latentlag.bench import run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--T", type=int, default=20_000)
    ap.add_argument("--theta-max", type=int, default=5)
    ap.add_argument("--L", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print the raw result as JSON")
    a = ap.parse_args()

    res = run_benchmark(p=a.p, T=a.T, theta_max=a.theta_max, L=a.L, repeats=a.repeats, seed=a.seed)
    if a.json:
        print(json.dumps(res, indent=2))
        return
    print(f"active backend: {kernels.BACKEND}  (p={a.p}, T={a.T}, theta_max={a.theta_max}, L={a.L})")
    print(f"{'backend':8s} {'simulate_path [s]':>18s} {'lasso_cd_gram [s]':>18s}")
    for name, t in res["backends"].items():
        print(f"{name:8s} {t['simulate_path_s']:18.4f} {t['lasso_cd_gram_s']:18.5f}")
    if "speedup" in res:
        sp, d = res["speedup"], res["max_abs_diff"]
        print(f"speedup  {sp['simulate_path_s']:17.1f}x {sp['lasso_cd_gram_s']:17.1f}x")
        print(f"max |python - cython|: simulate {d['simulate_path']:.1e}, lasso {d['lasso_cd_gram']:.1e}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
