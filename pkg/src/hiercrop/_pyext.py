"""Pure numpy/scipy versions of the compiled signal loops in ``_ext.pyx``."""
import numpy as np
from scipy.linalg import solveh_banded

MAX_ORDER = 4


def _diff_coeffs(d):
    c = np.empty(d + 1)
    b = 1.0
    for k in range(d + 1):
        c[k] = b if (d - k) % 2 == 0 else -b
        b = b * (d - k) / (k + 1)
    return c


def _check(n, nw, d):
    if nw != n:
        raise ValueError(f"weights length {nw} != series length {n}")
    if d < 1 or d > MAX_ORDER:
        raise ValueError(f"difference order must be in 1..{MAX_ORDER}, got {d}")


def _band(w, lam, d):
    # upper form for solveh_banded: ab[d - k, i + k] = A[i, i + k]
    n = w.shape[0]
    c = _diff_coeffs(d)
    ab = np.zeros((d + 1, n))
    ab[d] = w
    r = n - d
    for k in range(d + 1):
        for m in range(k, d + 1):
            ab[d - (m - k), m : m + r] += lam * c[k] * c[m]
    return ab


def _solve(y, w, lam, d):
    n = y.shape[0]
    if n <= d:
        return y.copy()
    try:
        return solveh_banded(_band(w, lam, d), w * y, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("smoothing system is not positive definite") from exc


def whittaker_solve(y, w, lam, d=2):
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    _check(y.shape[0], w.shape[0], d)
    if y.shape[0] == 0:
        return np.empty(0)
    return _solve(y, w, float(lam), d)


def asym_whittaker(y, w, lam, envelope, d=2, max_iter=50, tol=1e-3):
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    _check(y.shape[0], w.shape[0], d)
    wa = w.copy()
    if y.shape[0] == 0:
        return np.empty(0), wa, 0
    for it in range(max_iter):
        z = _solve(y, wa, lam, d)
        new = w * np.where(y > z, envelope, 1.0 - envelope)
        delta = np.max(np.abs(new - wa))
        wa = new
        if delta < tol:
            return z, wa, it + 1
    return _solve(y, wa, lam, d), wa, max_iter


def hampel_flags(x, half_window, n_sigmas, direction=0):
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        win = x[max(0, i - half_window) : min(n, i + half_window + 1)]
        med = np.median(win)
        mad = np.median(np.abs(win - med))
        dev = x[i] - med
        if direction < 0:
            dev = -dev
        elif direction == 0:
            dev = abs(dev)
        if dev > n_sigmas * 1.4826 * mad:
            out[i] = 1
    return out

