# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the dual Newton solver and kNN prediction.

Signatures and semantics mirror ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow, isfinite

cnp.import_array()

# generator codes: see bregman.KIND_CODES
cdef enum:
    QUAD = 0
    KL = 1
    EL = 2
    HEL = 3
    INV = 4
    RENYI = 5


cdef inline bint _in_image(int code, double nu, double margin) nogil:
    if not isfinite(nu):
        return False
    if code == QUAD or code == KL:
        return True
    if code == EL or code == INV:
        return nu < -margin
    if code == HEL:
        return nu < 1.0 - margin
    return nu > margin


def dual_terms(int code, double alpha, double[::1] gd, double[:, ::1] Z,
               double[::1] lam, double margin):
    cdef Py_ssize_t n = Z.shape[0]
    cdef Py_ssize_t p = Z.shape[1]
    cdef Py_ssize_t j, a, b
    cdef double nu, om, curv, fval, s, fsum = 0.0
    cdef double inv_alpha = 1.0 / alpha if code == RENYI else 1.0
    cdef bint feasible = True

    omega_arr = np.empty(n, dtype=np.float64)
    zt_arr = np.zeros(p, dtype=np.float64)
    hess_arr = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] omega = omega_arr
    cdef double[::1] zt = zt_arr
    cdef double[:, ::1] hess = hess_arr

    with nogil:
        for j in range(n):
            nu = gd[j]
            for a in range(p):
                nu += Z[j, a] * lam[a]
            if not _in_image(code, nu, margin):
                feasible = False
                break
            if code == QUAD:
                om = nu
                curv = 1.0
                fval = 0.5 * nu * nu
            elif code == KL:
                om = exp(nu - 1.0)
                curv = om
                fval = om
            elif code == EL:
                om = -1.0 / nu
                curv = om * om
                fval = -1.0 - log(-nu)
            elif code == HEL:
                om = 1.0 / ((1.0 - nu) * (1.0 - nu))
                curv = 2.0 * om * sqrt(om)
                fval = nu / (1.0 - nu)
            elif code == INV:
                s = sqrt(-2.0 * nu)
                om = 1.0 / s
                curv = om * om * om
                fval = -s
            else:
                om = pow(nu, inv_alpha)
                curv = pow(om, 1.0 - alpha) / alpha
                fval = alpha / (alpha + 1.0) * nu * om
            omega[j] = om
            fsum += fval
            for a in range(p):
                zt[a] += Z[j, a] * om
                for b in range(a + 1):
                    hess[a, b] += Z[j, a] * curv * Z[j, b]
        for a in range(p):
            for b in range(a):
                hess[b, a] = hess[a, b]
    if not feasible:
        return False, None, None, None, np.nan
    return True, omega_arr, zt_arr, hess_arr, fsum


cdef void _select_kth(double* buf, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    # in-place quickselect: afterwards buf[k] holds the (k+1)-th smallest
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j
    cdef double pivot, tmp
    while lo < hi:
        pivot = buf[(lo + hi) // 2]
        i = lo
        j = hi
        while i <= j:
            while buf[i] < pivot:
                i += 1
            while buf[j] > pivot:
                j -= 1
            if i <= j:
                tmp = buf[i]
                buf[i] = buf[j]
                buf[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return


def knn_average(double[:, ::1] Xtr, double[::1] Ytr, double[:, ::1] Xq, Py_ssize_t k):
    cdef Py_ssize_t n = Xtr.shape[0]
    cdef Py_ssize_t d = Xtr.shape[1]
    cdef Py_ssize_t m = Xq.shape[0]
    cdef Py_ssize_t i, j, c, count
    cdef double acc, diff, radius, total
    if k > n:
        k = n
    out_arr = np.empty(m, dtype=np.float64)
    dist_arr = np.empty(n, dtype=np.float64)
    work_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] dist = dist_arr
    cdef double[::1] work = work_arr
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    diff = Xq[i, c] - Xtr[j, c]
                    acc += diff * diff
                dist[j] = acc
                work[j] = acc
            _select_kth(&work[0], n, k - 1)
            radius = work[k - 1]
            total = 0.0
            count = 0
            for j in range(n):
                if dist[j] <= radius:
                    total += Ytr[j]
                    count += 1
            out[i] = total / count
    return out_arr
