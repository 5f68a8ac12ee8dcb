# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the signal chain.

Mirrors ``hiercrop._pyext`` function for function; ``hiercrop.accel`` picks
whichever is importable.
"""
import numpy as np

from libc.math cimport fabs
from libc.stdlib cimport free, malloc

cdef enum:
    MAX_ORDER = 4


cdef void _diff_coeffs(int d, double* c) noexcept nogil:
    # c[k] = (-1)^(d-k) * binom(d, k)
    cdef int k
    cdef double b = 1.0
    for k in range(d + 1):
        c[k] = b if (d - k) % 2 == 0 else -b
        b = b * (d - k) / (k + 1)


cdef int _solve_penta(const double* y, const double* w, Py_ssize_t n, double lam,
                      double* z, double* ab, double* lo, double* dd) noexcept nogil:
    """d = 2 special case: pentadiagonal LDL' with explicit diagonals (n > 2)."""
    cdef double* a = ab
    cdef double* b = ab + n  # b[i] = M[i+1, i]
    cdef double* c = ab + 2 * n  # c[i] = M[i+2, i]
    cdef double* l1 = lo  # l1[i] = L[i, i-1]
    cdef double* l2 = lo + n  # l2[i] = L[i, i-2]
    cdef Py_ssize_t i, r
    cdef double s
    for i in range(n):
        a[i] = w[i]
        b[i] = 0.0
        c[i] = 0.0
    for r in range(n - 2):
        a[r] += lam
        a[r + 1] += 4.0 * lam
        a[r + 2] += lam
        b[r] -= 2.0 * lam
        b[r + 1] -= 2.0 * lam
        c[r] += lam
    l1[0] = 0.0
    l2[0] = 0.0
    l2[1] = 0.0
    for i in range(n):
        s = a[i]
        if i >= 1:
            s -= l1[i] * l1[i] * dd[i - 1]
        if i >= 2:
            s -= l2[i] * l2[i] * dd[i - 2]
        if s <= 0.0:
            return -1
        dd[i] = s
        if i + 1 < n:
            s = b[i]
            if i >= 1:
                s -= l2[i + 1] * l1[i] * dd[i - 1]
            l1[i + 1] = s / dd[i]
        if i + 2 < n:
            l2[i + 2] = c[i] / dd[i]
    for i in range(n):
        s = w[i] * y[i]
        if i >= 1:
            s -= l1[i] * z[i - 1]
        if i >= 2:
            s -= l2[i] * z[i - 2]
        z[i] = s
    for i in range(n):
        z[i] /= dd[i]
    i = n - 1
    while i >= 0:
        s = z[i]
        if i + 1 < n:
            s -= l1[i + 1] * z[i + 1]
        if i + 2 < n:
            s -= l2[i + 2] * z[i + 2]
        z[i] = s
        i -= 1
    return 0


cdef int _solve(const double* y, const double* w, Py_ssize_t n, double lam, int d,
                double* z, double* ab, double* lo, double* dd) noexcept nogil:
    """Solve (W + lam D'D) z = W y with a banded LDL' factorisation.

    ``ab`` holds (d+1)*n band entries, ``lo`` d*n multipliers, ``dd`` n pivots.
    Returns 0 on success, -1 on a non-positive pivot.
    """
    cdef double c[MAX_ORDER + 1]
    cdef Py_ssize_t i, r, j, k, m, lim
    cdef double s
    cdef int p = d

    if n <= d:
        for i in range(n):
            z[i] = y[i]
        return 0

    if d == 2:
        return _solve_penta(y, w, n, lam, z, ab, lo, dd)
    _diff_coeffs(d, c)
    for i in range(n):
        ab[i] = w[i]
    for i in range(n, (p + 1) * n):
        ab[i] = 0.0
    for r in range(n - d):
        for k in range(d + 1):
            for m in range(k, d + 1):
                ab[(m - k) * n + r + k] += lam * c[k] * c[m]

    for i in range(n):
        s = ab[i]
        lim = p if i >= p else i
        for k in range(1, lim + 1):
            s -= lo[(k - 1) * n + i] * lo[(k - 1) * n + i] * dd[i - k]
        if s <= 0.0:
            return -1
        dd[i] = s
        lim = p if n - 1 - i >= p else n - 1 - i
        for m in range(1, lim + 1):
            r = i + m
            s = ab[m * n + i]
            j = r - p
            if j < 0:
                j = 0
            while j < i:
                s -= lo[(r - j - 1) * n + r] * lo[(i - j - 1) * n + i] * dd[j]
                j += 1
            lo[(m - 1) * n + r] = s / dd[i]

    for i in range(n):
        s = w[i] * y[i]
        lim = p if i >= p else i
        for k in range(1, lim + 1):
            s -= lo[(k - 1) * n + i] * z[i - k]
        z[i] = s
    for i in range(n):
        z[i] /= dd[i]
    i = n - 1
    while i >= 0:
        s = z[i]
        lim = p if n - 1 - i >= p else n - 1 - i
        for k in range(1, lim + 1):
            s -= lo[(k - 1) * n + i + k] * z[i + k]
        z[i] = s
        i -= 1
    return 0


cdef class _Work:
    cdef double* ab
    cdef double* lo
    cdef double* dd

    def __cinit__(self, Py_ssize_t n, int d):
        self.ab = <double*> malloc((d + 1) * n * sizeof(double) + 8)
        self.lo = <double*> malloc(d * n * sizeof(double) + 8)
        self.dd = <double*> malloc(n * sizeof(double) + 8)
        if self.ab == NULL or self.lo == NULL or self.dd == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.ab)
        free(self.lo)
        free(self.dd)


def _check(Py_ssize_t n, Py_ssize_t nw, int d):
    if nw != n:
        raise ValueError(f"weights length {nw} != series length {n}")
    if d < 1 or d > MAX_ORDER:
        raise ValueError(f"difference order must be in 1..{MAX_ORDER}, got {d}")


def whittaker_solve(y, w, double lam, int d=2):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    _check(n, wv.shape[0], d)
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out
    cdef double[::1] zv = out
    cdef _Work work = _Work(n, d)
    cdef int rc
    with nogil:
        rc = _solve(&yv[0], &wv[0], n, lam, d, &zv[0], work.ab, work.lo, work.dd)
    if rc != 0:
        raise np.linalg.LinAlgError("smoothing system is not positive definite")
    return out


def asym_whittaker(y, w, double lam, double envelope, int d=2, int max_iter=50,
                   double tol=1e-3):
    """Expectile smoothing by fixed-point reweighting; returns (z, weights, n_iter)."""
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    _check(n, wv.shape[0], d)
    z_arr = np.empty(n, dtype=np.float64)
    wa_arr = np.array(wv, dtype=np.float64, copy=True)
    if n == 0:
        return z_arr, wa_arr, 0
    cdef double[::1] z = z_arr
    cdef double[::1] wa = wa_arr
    cdef _Work work = _Work(n, d)
    cdef Py_ssize_t i
    cdef int it, rc = 0, used = max_iter
    cdef double nw, delta
    with nogil:
        for it in range(max_iter):
            rc = _solve(&yv[0], &wa[0], n, lam, d, &z[0], work.ab, work.lo, work.dd)
            if rc != 0:
                break
            delta = 0.0
            for i in range(n):
                nw = wv[i] * (envelope if yv[i] > z[i] else 1.0 - envelope)
                if fabs(nw - wa[i]) > delta:
                    delta = fabs(nw - wa[i])
                wa[i] = nw
            if delta < tol:
                used = it + 1
                break
        else:
            rc = _solve(&yv[0], &wa[0], n, lam, d, &z[0], work.ab, work.lo, work.dd)
    if rc != 0:
        raise np.linalg.LinAlgError("smoothing system is not positive definite")
    return z_arr, wa_arr, used


cdef void _isort(double* a, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(1, m):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


cdef double _median(double* a, Py_ssize_t m) noexcept nogil:
    _isort(a, m)
    if m % 2 == 1:
        return a[m // 2]
    return 0.5 * (a[m // 2 - 1] + a[m // 2])


def hampel_flags(x, int half_window, double n_sigmas, int direction=0):
    """Outlier flags (uint8) with truncated windows at the edges."""
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return out
    cdef unsigned char[::1] fv = out
    cdef double* buf = <double*> malloc((2 * half_window + 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j, lo, hi, m
    cdef double med, mad, dev
    with nogil:
        for i in range(n):
            lo = i - half_window
            if lo < 0:
                lo = 0
            hi = i + half_window + 1
            if hi > n:
                hi = n
            m = hi - lo
            for j in range(m):
                buf[j] = xv[lo + j]
            med = _median(buf, m)
            for j in range(m):
                buf[j] = fabs(xv[lo + j] - med)
            mad = _median(buf, m)
            dev = xv[i] - med
            if direction < 0:
                dev = -dev
            elif direction == 0:
                dev = fabs(dev)
            if dev > n_sigmas * 1.4826 * mad:
                fv[i] = 1
    free(buf)
    return out

