import numpy as np
import pytest

from latentlag import kernels
from latentlag.bench import run_benchmark


def test_backend_lookup():
    assert kernels.get_backend("python") is not None
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
    assert kernels.BACKEND in ("python", "cython")


def test_lasso_kernel_closed_form():
    # orthonormal design: the solution is soft-thresholding of c
    G = np.eye(4)
    c = np.array([0.5, -0.05, 0.2, -1.0])
    lam = np.full(4, 0.1)
    for name in ("python",) + (("cython",) if kernels.HAVE_COMPILED else ()):
        beta = np.zeros(4)
        sweeps, ok = kernels.get_backend(name).lasso_cd_gram(G, c, lam, beta, 100, 1e-12)
        assert ok
        np.testing.assert_allclose(beta, [0.4, 0.0, 0.1, -0.9], atol=1e-15)


def test_simulate_kernel_guard():
    A = np.array([[2.0]])
    z = np.zeros((1, 1))
    V = np.ones((100, 1))
    d = np.zeros((100, 1), dtype=np.int64)
    x, _, bad = kernels.get_backend("python").simulate_path(A, z, z, V, np.zeros((100, 1)), d, 0, 1e6, False)
    assert bad > 0


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="extension not built")
def test_benchmark_backends_agree():
    res = run_benchmark(p=4, T=2000, theta_max=3, L=3, repeats=1)
    assert res["max_abs_diff"]["simulate_path"] <= 1e-10
    assert res["max_abs_diff"]["lasso_cd_gram"] <= 1e-10
    assert set(res["speedup"]) == {"simulate_path_s", "lasso_cd_gram_s"}


def test_env_var_forces_fallback():
    import os
    import subprocess
    import sys
    env = dict(os.environ, LATENTLAG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import latentlag.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    assert out == "python"
