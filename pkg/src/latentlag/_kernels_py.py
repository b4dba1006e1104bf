"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Same signatures and same arithmetic order per step, so the two backends agree to
rounding. Used when the extension is not built or ``LATENTLAG_PURE_PYTHON=1``.
"""
import numpy as np


def simulate_path(A, B, D, V, W, delays, theta_max, guard, record_z):
    n, p = V.shape
    nb = theta_max + 1
    x = np.zeros((n, p))
    z_out = np.zeros((n, p)) if record_z else np.zeros((0, p))
    ring = np.zeros((nb, p))
    cols = np.arange(p)
    xprev = np.zeros(p)
    for t in range(n):
        k = t + 1
        znew = A @ ring[(k - 1) % nb] + B @ xprev + V[t]
        ring[k % nb] = znew
        if record_z:
            z_out[t] = znew
        xt = ring[(k - delays[t]) % nb, cols] + D @ xprev + W[t]
        if not np.all(np.abs(xt) <= guard):
            return x, z_out, k
        x[t] = xt
        xprev = xt
    return x, z_out, -1


def lasso_cd_gram(G, c, lam, beta, max_sweeps, tol):
    d = G.shape[0]
    g = G @ beta - c
    diag = np.diag(G)
    for sweep in range(max_sweeps):
        maxdelta = 0.0
        for k in range(d):
            gkk = diag[k]
            if gkk <= 0.0:
                continue
            old = beta[k]
            u = old - g[k] / gkk
            thr = lam[k] / gkk
            new = np.sign(u) * max(abs(u) - thr, 0.0)
            delta = new - old
            if delta != 0.0:
                beta[k] = new
                g += G[:, k] * delta
                maxdelta = max(maxdelta, abs(delta))
        if maxdelta < tol:
            return sweep + 1, True
    return max_sweeps, False
