"""Pure-python (numpy) implementations of the hot kernels.

Drop-in fallback for the compiled extension; `photonserver.kernels`
selects between the two at import time.  Both backends must agree
exactly on integer outputs and to ~1e-12 on the density-matrix
propagation.
"""

import numpy as np

# row-major vec() indices of the four diagonal elements of a 4x4 matrix
_DIAG = np.array([0, 5, 10, 15])


def rk4_propagate(l0, l1, y0, omega, dt, steps):
    """Classic fixed-step RK4 for y' = (L0 + omega(t)*L1) y, y = vec(rho).

    omega holds the drive amplitude sampled on the half-step grid:
    omega[2*i], omega[2*i+1], omega[2*i+2] are the values at t_i,
    t_i + dt/2 and t_{i+1}.  Returns (diag, y_final) where diag[k] are
    the real parts of the four density-matrix diagonals after k steps.
    """
    y = np.asarray(y0, dtype=np.complex128).copy()
    l0 = np.asarray(l0, dtype=np.complex128)
    l1 = np.asarray(l1, dtype=np.complex128)
    diag = np.empty((steps + 1, 4))
    diag[0] = y[_DIAG].real
    h = float(dt)
    for i in range(steps):
        a0 = l0 + omega[2 * i] * l1
        ah = l0 + omega[2 * i + 1] * l1
        a1 = l0 + omega[2 * i + 2] * l1
        k1 = a0 @ y
        k2 = ah @ (y + (0.5 * h) * k1)
        k3 = ah @ (y + (0.5 * h) * k2)
        k4 = a1 @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        diag[i + 1] = y[_DIAG].real
    return diag, y


def corr_binned(c0, c1, max_lag):
    """counts[L+d] = sum_i c0[i] * c1[i+d] for |d| <= L, edges skipped."""
    c0 = np.asarray(c0, dtype=np.int64)
    c1 = np.asarray(c1, dtype=np.int64)
    n = c0.shape[0]
    out = np.zeros(2 * max_lag + 1, dtype=np.int64)
    for d in range(-max_lag, max_lag + 1):
        if n - abs(d) <= 0:
            continue
        if d >= 0:
            out[max_lag + d] = np.dot(c0[: n - d], c1[d:])
        else:
            out[max_lag + d] = np.dot(c0[-d:], c1[: n + d])
    return out


def corr_fine(t0, t1, resolution, span):
    """Histogram of pair differences t1[j] - t0[i] with |diff| < span.

    Both inputs must be sorted.  Bin k (k in [-m, m-1], m = span//resolution)
    covers [k*resolution, (k+1)*resolution); returned array has 2m entries
    ordered k = -m .. m-1.
    """
    t0 = np.asarray(t0, dtype=np.int64)
    t1 = np.asarray(t1, dtype=np.int64)
    m = span // resolution
    hist = np.zeros(2 * m, dtype=np.int64)
    if t0.size == 0 or t1.size == 0:
        return hist
    lo = np.searchsorted(t1, t0 - span + 1, side="left")
    hi = np.searchsorted(t1, t0 + span, side="left")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return hist
    starts = np.cumsum(counts) - counts
    j = np.repeat(lo - starts, counts) + np.arange(total)
    delta = t1[j] - np.repeat(t0, counts)
    k = np.floor_divide(delta, resolution) + m
    return np.bincount(k.astype(np.intp), minlength=2 * m).astype(np.int64)
