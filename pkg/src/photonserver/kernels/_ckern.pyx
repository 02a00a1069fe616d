# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: RK4 density-matrix propagation and the two
coincidence-counting loops.  Mirrors kernels/_pykern.py."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def rk4_propagate(l0, l1, y0, omega, double dt, Py_ssize_t steps):
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] L0 = np.ascontiguousarray(l0, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] L1 = np.ascontiguousarray(l1, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] om = np.ascontiguousarray(omega, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] y = np.array(y0, dtype=np.complex128, copy=True)
    cdef Py_ssize_t n = y.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] diag = np.empty((steps + 1, 4))
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] k1 = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] k2 = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] k3 = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] k4 = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] tmp = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t i, r, c
    cdef double w0, wh, w1, h6
    cdef double complex acc

    diag[0, 0] = y[0].real
    diag[0, 1] = y[5].real
    diag[0, 2] = y[10].real
    diag[0, 3] = y[15].real
    h6 = dt / 6.0
    for i in range(steps):
        w0 = om[2 * i]
        wh = om[2 * i + 1]
        w1 = om[2 * i + 2]
        # k1 = (L0 + w0 L1) y
        for r in range(n):
            acc = 0
            for c in range(n):
                acc = acc + (L0[r, c] + w0 * L1[r, c]) * y[c]
            k1[r] = acc
        for r in range(n):
            tmp[r] = y[r] + (0.5 * dt) * k1[r]
        for r in range(n):
            acc = 0
            for c in range(n):
                acc = acc + (L0[r, c] + wh * L1[r, c]) * tmp[c]
            k2[r] = acc
        for r in range(n):
            tmp[r] = y[r] + (0.5 * dt) * k2[r]
        for r in range(n):
            acc = 0
            for c in range(n):
                acc = acc + (L0[r, c] + wh * L1[r, c]) * tmp[c]
            k3[r] = acc
        for r in range(n):
            tmp[r] = y[r] + dt * k3[r]
        for r in range(n):
            acc = 0
            for c in range(n):
                acc = acc + (L0[r, c] + w1 * L1[r, c]) * tmp[c]
            k4[r] = acc
        for r in range(n):
            y[r] = y[r] + h6 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r])
        diag[i + 1, 0] = y[0].real
        diag[i + 1, 1] = y[5].real
        diag[i + 1, 2] = y[10].real
        diag[i + 1, 3] = y[15].real
    return diag, y


def corr_binned(c0, c1, Py_ssize_t max_lag):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] a = np.ascontiguousarray(c0, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] b = np.ascontiguousarray(c1, dtype=np.int64)
    cdef Py_ssize_t n = a.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.zeros(2 * max_lag + 1, dtype=np.int64)
    # sparse pass: pair up nonzero bins only
    cdef cnp.ndarray[cnp.int64_t, ndim=1] i0 = np.flatnonzero(a).astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] i1 = np.flatnonzero(b).astype(np.int64)
    cdef Py_ssize_t n0 = i0.shape[0], n1 = i1.shape[0]
    cdef Py_ssize_t p, q, qlo = 0
    cdef cnp.int64_t bi, bj, d
    for p in range(n0):
        bi = i0[p]
        while qlo < n1 and i1[qlo] < bi - max_lag:
            qlo += 1
        q = qlo
        while q < n1:
            bj = i1[q]
            d = bj - bi
            if d > max_lag:
                break
            out[max_lag + d] += a[bi] * b[bj]
            q += 1
    return out


def corr_fine(t0, t1, cnp.int64_t resolution, cnp.int64_t span):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] a = np.ascontiguousarray(t0, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] b = np.ascontiguousarray(t1, dtype=np.int64)
    cdef cnp.int64_t m = span // resolution
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hist = np.zeros(2 * m, dtype=np.int64)
    cdef Py_ssize_t n0 = a.shape[0], n1 = b.shape[0]
    cdef Py_ssize_t i, j, jlo = 0
    cdef cnp.int64_t ti, delta, k
    for i in range(n0):
        ti = a[i]
        while jlo < n1 and b[jlo] <= ti - span:
            jlo += 1
        j = jlo
        while j < n1:
            delta = b[j] - ti
            if delta >= span:
                break
            # floor division toward -inf for the negative lags
            k = delta // resolution if delta >= 0 else -((-delta + resolution - 1) // resolution)
            hist[m + k] += 1
            j += 1
    return hist
