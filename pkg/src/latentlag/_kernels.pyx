# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: the delayed-state recursion and Gram-form lasso coordinate descent."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def simulate_path(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] D,
                  const double[:, ::1] V, const double[:, ::1] W,
                  const cnp.int64_t[:, ::1] delays, int theta_max, double guard,
                  bint record_z):
    cdef Py_ssize_t n = V.shape[0]
    cdef Py_ssize_t p = A.shape[0]
    cdef Py_ssize_t nb = theta_max + 1
    cdef Py_ssize_t t, k, i, j, slot, prev_slot
    cdef double acc

    x = np.zeros((n, p))
    z_out = np.zeros((n, p)) if record_z else np.zeros((0, p))
    ring = np.zeros((nb, p))
    znew = np.zeros(p)
    xzero = np.zeros(p)
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] zv = z_out
    cdef double[:, ::1] rv = ring
    cdef double[::1] zn = znew
    cdef const double[::1] xprev

    for t in range(n):
        k = t + 1
        slot = k % nb
        prev_slot = (k - 1) % nb
        if t == 0:
            xprev = xzero
        else:
            xprev = xv[t - 1]
        for i in range(p):
            acc = V[t, i]
            for j in range(p):
                acc += A[i, j] * rv[prev_slot, j] + B[i, j] * xprev[j]
            zn[i] = acc
        for i in range(p):
            rv[slot, i] = zn[i]
            if record_z:
                zv[t, i] = zn[i]
        for i in range(p):
            acc = rv[(k - delays[t, i] + nb) % nb, i] + W[t, i]   # C modulo: keep it nonnegative
            for j in range(p):
                acc += D[i, j] * xprev[j]
            if fabs(acc) > guard or acc != acc:
                return x, z_out, k
            xv[t, i] = acc
    return x, z_out, -1


def lasso_cd_gram(const double[:, ::1] G, const double[::1] c, const double[::1] lam,
                  double[::1] beta, int max_sweeps, double tol):
    cdef Py_ssize_t d = G.shape[0]
    cdef Py_ssize_t k, l, sweep
    cdef double gkk, old, u, new, delta, maxdelta, thr

    grad_arr = np.asarray(G) @ np.asarray(beta) - np.asarray(c)
    cdef double[::1] g = grad_arr
    for sweep in range(max_sweeps):
        maxdelta = 0.0
        for k in range(d):
            gkk = G[k, k]
            if gkk <= 0.0:
                continue
            old = beta[k]
            u = old - g[k] / gkk
            thr = lam[k] / gkk
            if u > thr:
                new = u - thr
            elif u < -thr:
                new = u + thr
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[k] = new
                for l in range(d):
                    g[l] += G[l, k] * delta
                if fabs(delta) > maxdelta:
                    maxdelta = fabs(delta)
        if maxdelta < tol:
            return sweep + 1, True
    return max_sweeps, False
