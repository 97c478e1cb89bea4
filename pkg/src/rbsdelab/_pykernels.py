"""Pure-Python/numpy implementation of the backward-sweep kernels.

Mirrors ``_kernels.pyx`` operation for operation.  Each step solves

    g(y) = y (1 - a dt) + d dt y**3 - n dt (L - y)^+ + m dt (y - U)^+ = rhs

which is strictly increasing when ``a dt < 1`` and ``d, n, m >= 0``.
Absent barriers are passed as ``-inf`` / ``+inf``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError

STEP_TOL = 1e-14
MAX_ITER = 200
_EPS = np.finfo(float).eps


def _g(y, dt, a, d, n, L, m, U):
    return (y * (1.0 - a * dt) + d * dt * y * y * y
            - n * dt * max(L - y, 0.0) + m * dt * max(y - U, 0.0))


def _gprime(y, dt, a, d, n, L, m, U):
    out = 1.0 - a * dt + 3.0 * d * dt * y * y
    if y < L:
        out += n * dt
    if y > U:
        out += m * dt
    return out


def solve_root(rhs, guess, width, dt, a, d, n, L, m, U):
    """Safeguarded Newton for ``g(y) = rhs`` starting from ``guess``.

    The bracket ``[guess - width, guess + width]`` is doubled until it
    contains the root.
    """
    lo, hi = guess - width, guess + width
    w = width
    while _g(lo, dt, a, d, n, L, m, U) - rhs > 0.0:
        w *= 2.0
        lo = guess - w
        if not math.isfinite(lo):
            raise NumericError("bracket expansion overflowed")
    w = width
    while _g(hi, dt, a, d, n, L, m, U) - rhs < 0.0:
        w *= 2.0
        hi = guess + w
        if not math.isfinite(hi):
            raise NumericError("bracket expansion overflowed")

    tol = STEP_TOL * max(1.0, abs(rhs))
    y = guess
    for _ in range(MAX_ITER):
        r = _g(y, dt, a, d, n, L, m, U) - rhs
        if abs(r) <= tol:
            return y
        if r > 0.0:
            hi = y
        else:
            lo = y
        if hi - lo <= 4.0 * _EPS * max(1.0, abs(y)):
            return y
        step = y - r / _gprime(y, dt, a, d, n, L, m, U)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        y = step
    raise NumericError(f"implicit step did not converge in {MAX_ITER} iterations (rhs={rhs!r})")


def _g_vec(y, dt, a, d, n, L, m, U):
    return (y * (1.0 - a * dt) + d * dt * y * y * y
            - n * dt * np.maximum(L - y, 0.0) + m * dt * np.maximum(y - U, 0.0))


def solve_layer(rhs, guess, width, dt, a, d, n, L, m, U):
    """Vectorised :func:`solve_root` over one lattice layer."""
    w_lo, w_hi = width.copy(), width.copy()
    lo, hi = guess - w_lo, guess + w_hi
    for _ in range(2100):
        bad = _g_vec(lo, dt, a, d, n, L, m, U) - rhs > 0.0
        if not bad.any():
            break
        w_lo[bad] *= 2.0
        lo = guess - w_lo
    else:  # pragma: no cover
        raise NumericError("bracket expansion failed")
    for _ in range(2100):
        bad = _g_vec(hi, dt, a, d, n, L, m, U) - rhs < 0.0
        if not bad.any():
            break
        w_hi[bad] *= 2.0
        hi = guess + w_hi
    else:  # pragma: no cover
        raise NumericError("bracket expansion failed")

    tol = STEP_TOL * np.maximum(1.0, np.abs(rhs))
    y = guess.copy()
    active = np.ones(y.shape, dtype=bool)
    for _ in range(MAX_ITER):
        r = _g_vec(y, dt, a, d, n, L, m, U) - rhs
        active &= np.abs(r) > tol
        hi = np.where(active & (r > 0.0), y, hi)
        lo = np.where(active & (r <= 0.0), y, lo)
        active &= hi - lo > 4.0 * _EPS * np.maximum(1.0, np.abs(y))
        if not active.any():
            return y
        gp = 1.0 - a * dt + 3.0 * d * dt * y * y + n * dt * (y < L) + m * dt * (y > U)
        step = y - r / gp
        step = np.where((lo < step) & (step < hi), step, 0.5 * (lo + hi))
        y = np.where(active, step, y)
    raise NumericError(f"implicit step did not converge in {MAX_ITER} iterations")


def sweep(xi, dt, sqrt_dt, a, b, c, d, dv, lower, upper, pen_lower, pen_upper,
          clamp_lower, clamp_upper):
    """Backward recursion over the lattice.

    Returns ``(Y, Z, Ytilde, residual)`` where ``Ytilde`` is the implicit root
    before any clamping and ``residual`` the largest one-step defect.
    """
    N = xi.shape[0] - 1
    Y = np.full((N + 1, N + 1), np.nan)
    Z = np.full((N + 1, N + 1), np.nan)
    Yt = np.full((N + 1, N + 1), np.nan)
    Y[N, :] = xi
    residual = 0.0
    for i in range(N - 1, -1, -1):
        up, down = Y[i + 1, 1 : i + 2], Y[i + 1, : i + 1]
        e = 0.5 * (up + down)
        z = (up - down) / (2.0 * sqrt_dt)
        L, U = lower[i, : i + 1], upper[i, : i + 1]
        f_e = a[i] * e - d[i] * e * e * e + b[i] * z + c[i]
        rhs = e + dv[i] + dt * (b[i] * z + c[i])
        width = abs(dv[i]) + dt * np.abs(f_e) + 1.0
        y = solve_layer(rhs, e, width, dt, a[i], d[i], pen_lower, L, pen_upper, U)
        defect = np.abs(_g_vec(y, dt, a[i], d[i], pen_lower, L, pen_upper, U) - rhs)
        residual = max(residual, float(defect.max()))
        Yt[i, : i + 1] = y
        if clamp_lower:
            y = np.maximum(y, L)
        if clamp_upper:
            y = np.minimum(y, U)
        Y[i, : i + 1] = y
        Z[i, : i + 1] = z
    return Y, Z, Yt, residual
