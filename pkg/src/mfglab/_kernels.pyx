# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled particle kernels.

Every per-particle sum runs over partner indices in increasing order, so the
results are bitwise identical to the NumPy fallback and to a direct O(N^2)
loop, and independent of the number of threads.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor

cnp.import_array()


cdef inline double _pair(const double[:, ::1] pos, Py_ssize_t i, Py_ssize_t j,
                         int dim, double inv_eps) noexcept nogil:
    cdef double z0 = (pos[i, 0] - pos[j, 0]) * inv_eps
    cdef double z1, r2, t
    if dim == 1:
        r2 = z0 * z0
    else:
        z1 = (pos[i, 1] - pos[j, 1]) * inv_eps
        r2 = z0 * z0 + z1 * z1
    if r2 < 1.0:
        t = 1.0 - r2
        return t * t
    return 0.0


def profile_sums_direct(const double[:, ::1] pos, double inv_eps, int threads=1):
    cdef Py_ssize_t N = pos.shape[0], i, j
    cdef int dim = pos.shape[1]
    out = np.zeros(N)
    cdef double[::1] o = out
    cdef double acc, v
    for i in prange(N, nogil=True, num_threads=threads, schedule="static"):
        acc = 0.0
        for j in range(N):
            v = _pair(pos, i, j, dim, inv_eps)
            if v != 0.0:
                acc = acc + v
        o[i] = acc
    return out


def profile_sums_cells(const double[:, ::1] pos, double inv_eps, double cell, int threads=1):
    """Σ_j (1 - |(x_i - x_j)/eps|²)²_+ with a uniform cell list of width ``cell`` (>= eps)."""
    cdef Py_ssize_t N = pos.shape[0]
    cdef int dim = pos.shape[1]
    cdef Py_ssize_t i, j, p, c
    cdef double lo0, lo1, hi0, hi1
    lo0 = hi0 = pos[0, 0]
    lo1 = hi1 = pos[0, dim - 1]
    for i in range(N):
        if pos[i, 0] < lo0: lo0 = pos[i, 0]
        if pos[i, 0] > hi0: hi0 = pos[i, 0]
        if pos[i, dim - 1] < lo1: lo1 = pos[i, dim - 1]
        if pos[i, dim - 1] > hi1: hi1 = pos[i, dim - 1]
    cdef Py_ssize_t nc0 = <Py_ssize_t>floor((hi0 - lo0) / cell) + 1
    cdef Py_ssize_t nc1 = 1
    if dim == 2:
        nc1 = <Py_ssize_t>floor((hi1 - lo1) / cell) + 1
    cdef Py_ssize_t ncell = nc0 * nc1

    cx_arr = np.empty(N, dtype=np.intp)
    cy_arr = np.zeros(N, dtype=np.intp)
    start_arr = np.zeros(ncell + 1, dtype=np.intp)
    order_arr = np.empty(N, dtype=np.intp)
    cdef Py_ssize_t[::1] cx = cx_arr, cy = cy_arr, start = start_arr, order = order_arr
    for i in range(N):
        cx[i] = <Py_ssize_t>floor((pos[i, 0] - lo0) / cell)
        if dim == 2:
            cy[i] = <Py_ssize_t>floor((pos[i, 1] - lo1) / cell)
        start[cx[i] * nc1 + cy[i] + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    fill_arr = start_arr[:ncell].copy()
    cdef Py_ssize_t[::1] fill = fill_arr
    for i in range(N):
        c = cx[i] * nc1 + cy[i]
        order[fill[c]] = i
        fill[c] += 1

    out = np.zeros(N)
    cdef double[::1] o = out
    # Scatter form: the outer loop runs over partners j in increasing order, so
    # every o[i] receives its terms in the same order as the direct sum.  Each
    # thread owns a contiguous range of cells and only writes to its particles.
    cdef int nt = threads if threads > 0 else 1
    if nt > ncell:
        nt = <int>ncell
    cdef Py_ssize_t t, clo, chi, a, b, a0, a1, b0, b1
    for t in prange(nt, nogil=True, num_threads=nt, schedule="static"):
        clo = (ncell * t) // nt
        chi = (ncell * (t + 1)) // nt
        for j in range(N):
            a0 = cx[j] - 1 if cx[j] > 0 else 0
            a1 = cx[j] + 1 if cx[j] + 1 < nc0 else nc0 - 1
            b0 = cy[j] - 1 if cy[j] > 0 else 0
            b1 = cy[j] + 1 if cy[j] + 1 < nc1 else nc1 - 1
            for a in range(a0, a1 + 1):
                for b in range(b0, b1 + 1):
                    c = a * nc1 + b
                    if c < clo or c >= chi:
                        continue
                    for p in range(start[c], start[c + 1]):
                        i = order[p]
                        o[i] += _pair(pos, i, j, dim, inv_eps)
    return out


def deposit(const double[:, ::1] pos, double half_width, double h, int n, double eps,
            double inv_eps, bint normalize, double raw_scale):
    """Kernel deposit of every particle onto the grid nodes, particles in index order."""
    cdef Py_ssize_t N = pos.shape[0]
    cdef int dim = pos.shape[1]
    out_arr = np.zeros((n,) * dim)
    cdef double[::1] out = out_arr.reshape(-1)
    cdef double hd = h if dim == 1 else h * h
    cdef double nf = <double>N
    cdef Py_ssize_t i, k0, k1, lo0, hi0, lo1, hi1
    cdef double x0, x1, z0, z1, r2, t, S, scale, w
    for i in range(N):
        x0 = pos[i, 0]
        lo0 = <Py_ssize_t>floor((x0 - eps + half_width) / h) - 1
        hi0 = <Py_ssize_t>floor((x0 + eps + half_width) / h) + 1
        if lo0 < 0: lo0 = 0
        if hi0 > n - 1: hi0 = n - 1
        if dim == 2:
            x1 = pos[i, 1]
            lo1 = <Py_ssize_t>floor((x1 - eps + half_width) / h) - 1
            hi1 = <Py_ssize_t>floor((x1 + eps + half_width) / h) + 1
            if lo1 < 0: lo1 = 0
            if hi1 > n - 1: hi1 = n - 1
        else:
            x1 = 0.0
            lo1 = 0
            hi1 = 0
        if lo0 > hi0 or lo1 > hi1:
            continue
        S = 0.0
        for k0 in range(lo0, hi0 + 1):
            z0 = ((-half_width + k0 * h) - x0) * inv_eps
            for k1 in range(lo1, hi1 + 1):
                if dim == 1:
                    r2 = z0 * z0
                else:
                    z1 = ((-half_width + k1 * h) - x1) * inv_eps
                    r2 = z0 * z0 + z1 * z1
                if r2 < 1.0:
                    t = 1.0 - r2
                    S = S + t * t
        if S == 0.0:
            continue
        if normalize:
            scale = 1.0 / ((nf * hd) * S)
        else:
            scale = raw_scale
        for k0 in range(lo0, hi0 + 1):
            z0 = ((-half_width + k0 * h) - x0) * inv_eps
            for k1 in range(lo1, hi1 + 1):
                if dim == 1:
                    r2 = z0 * z0
                else:
                    z1 = ((-half_width + k1 * h) - x1) * inv_eps
                    r2 = z0 * z0 + z1 * z1
                if r2 < 1.0:
                    t = 1.0 - r2
                    w = scale * (t * t)
                    if dim == 1:
                        out[k0] += w
                    else:
                        out[k0 * n + k1] += w
    return out_arr
