# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backward-sweep kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
from libc.math cimport fabs, isfinite

from .errors import NumericError

cdef int MAX_ITER = 200
cdef double STEP_TOL = 1e-14
cdef double EPS = 2.220446049250313e-16


cdef inline double _pos(double x) noexcept nogil:
    return x if x > 0.0 else 0.0


cdef inline double _g(double y, double dt, double a, double d, double n, double L,
                      double m, double U) noexcept nogil:
    return (y * (1.0 - a * dt) + d * dt * y * y * y
            - n * dt * _pos(L - y) + m * dt * _pos(y - U))


cdef inline double _gprime(double y, double dt, double a, double d, double n, double L,
                           double m, double U) noexcept nogil:
    cdef double out = 1.0 - a * dt + 3.0 * d * dt * y * y
    if y < L:
        out += n * dt
    if y > U:
        out += m * dt
    return out


cdef int _solve(double rhs, double guess, double width, double dt, double a, double d,
                double n, double L, double m, double U, double* out) noexcept nogil:
    """Return 0 on success, 1 on bracket overflow, 2 on non-convergence."""
    cdef double lo = guess - width, hi = guess + width
    cdef double w = width, r, step, tol, y
    cdef int it
    while _g(lo, dt, a, d, n, L, m, U) - rhs > 0.0:
        w *= 2.0
        lo = guess - w
        if not isfinite(lo):
            return 1
    w = width
    while _g(hi, dt, a, d, n, L, m, U) - rhs < 0.0:
        w *= 2.0
        hi = guess + w
        if not isfinite(hi):
            return 1
    tol = STEP_TOL * (fabs(rhs) if fabs(rhs) > 1.0 else 1.0)
    y = guess
    for it in range(MAX_ITER):
        r = _g(y, dt, a, d, n, L, m, U) - rhs
        if fabs(r) <= tol:
            out[0] = y
            return 0
        if r > 0.0:
            hi = y
        else:
            lo = y
        if hi - lo <= 4.0 * EPS * (fabs(y) if fabs(y) > 1.0 else 1.0):
            out[0] = y
            return 0
        step = y - r / _gprime(y, dt, a, d, n, L, m, U)
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        y = step
    return 2


def _raise(int code, double rhs):
    if code == 1:
        raise NumericError("bracket expansion overflowed")
    raise NumericError(f"implicit step did not converge in {MAX_ITER} iterations (rhs={rhs!r})")


def solve_root(double rhs, double guess, double width, double dt, double a, double d,
               double n, double L, double m, double U):
    cdef double y = 0.0
    cdef int code = _solve(rhs, guess, width, dt, a, d, n, L, m, U, &y)
    if code:
        _raise(code, rhs)
    return y


def sweep(const double[::1] xi, double dt, double sqrt_dt,
          const double[::1] a, const double[::1] b, const double[::1] c,
          const double[::1] d, const double[::1] dv,
          const double[:, ::1] lower, const double[:, ::1] upper,
          double pen_lower, double pen_upper, bint clamp_lower, bint clamp_upper):
    cdef Py_ssize_t N = xi.shape[0] - 1
    cdef Py_ssize_t i, j
    cdef double e, z, rhs, width, f_e, y, defect, residual = 0.0, bad_rhs = 0.0
    cdef int code = 0

    Y_arr = np.full((N + 1, N + 1), np.nan)
    Z_arr = np.full((N + 1, N + 1), np.nan)
    Yt_arr = np.full((N + 1, N + 1), np.nan)
    cdef double[:, ::1] Y = Y_arr
    cdef double[:, ::1] Z = Z_arr
    cdef double[:, ::1] Yt = Yt_arr

    with nogil:
        for j in range(N + 1):
            Y[N, j] = xi[j]
        for i in range(N - 1, -1, -1):
            for j in range(i + 1):
                e = 0.5 * (Y[i + 1, j + 1] + Y[i + 1, j])
                z = (Y[i + 1, j + 1] - Y[i + 1, j]) / (2.0 * sqrt_dt)
                f_e = a[i] * e - d[i] * e * e * e + b[i] * z + c[i]
                rhs = e + dv[i] + dt * (b[i] * z + c[i])
                width = fabs(dv[i]) + dt * fabs(f_e) + 1.0
                code = _solve(rhs, e, width, dt, a[i], d[i], pen_lower, lower[i, j],
                              pen_upper, upper[i, j], &y)
                if code:
                    bad_rhs = rhs
                    break
                defect = fabs(_g(y, dt, a[i], d[i], pen_lower, lower[i, j], pen_upper,
                                 upper[i, j]) - rhs)
                if defect > residual:
                    residual = defect
                Yt[i, j] = y
                if clamp_lower and y < lower[i, j]:
                    y = lower[i, j]
                if clamp_upper and y > upper[i, j]:
                    y = upper[i, j]
                Y[i, j] = y
                Z[i, j] = z
            if code:
                break
    if code:
        _raise(code, bad_rhs)
    return Y_arr, Z_arr, Yt_arr, residual
