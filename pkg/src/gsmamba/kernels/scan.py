"""Selective-scan recurrence kernels (diagonal state matrix).

Shapes, for one sequence:
    x, delta : (L, D)
    A        : (D, N)   continuous diagonal state matrix, one row per channel
    B, C     : (L, N)   per-token input / output projections
    d_skip   : (D,)     per-channel passthrough

Recurrence per channel d and state n::

    h[k] = exp(delta[k] * A) * h[k-1] + phi(delta[k], A) * B[k] * x[k]
    y[k] = <C[k], h[k]> + d_skip * x[k]

with ``phi(delta, a) = (exp(delta * a) - 1) / a`` (zero-order hold). The
a -> 0 limit is handled with a series branch.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


SERIES_EPS = 1e-8  # |delta*a| below this uses delta*(1 + z/2) for phi
DPHI_SERIES_EPS = 1e-3  # |z| below this uses the Taylor form of dphi/da


def zoh_coefficients(delta, A):
    """Elementwise ``(exp(delta*a), (exp(delta*a) - 1)/a)`` for broadcastable inputs."""
    delta = np.asarray(delta, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    z = delta * A
    a_bar = np.exp(z)
    small = np.abs(z) < SERIES_EPS
    safe_a = np.where(small, 1.0, A)
    phi = np.where(small, delta * (1.0 + 0.5 * z), np.expm1(z) / safe_a)
    return a_bar, phi


def zoh_dphi_da(delta, A):
    """d/da of (exp(delta*a) - 1)/a, i.e. delta**2 * g(delta*a)."""
    delta = np.asarray(delta, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    z = delta * A
    small = np.abs(z) < DPHI_SERIES_EPS
    zs = np.where(small, 1.0, z)
    direct = (zs * np.exp(zs) - np.expm1(zs)) / (zs * zs)
    series = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)))
    return delta * delta * np.where(small, series, direct)


# --------------------------------------------------------------------------
# numpy path: python loop over tokens, vectorized over (D, N)
# --------------------------------------------------------------------------


def scan_fwd_numpy(x, delta, A, B, C, d_skip, keep_states=False):
    L, D = x.shape
    N = A.shape[1]
    a_bar, phi = zoh_coefficients(delta[:, :, None], A[None, :, :])
    u = phi * B[:, None, :] * x[:, :, None]  # (L, D, N)
    states = np.empty((L, D, N))
    h = np.zeros((D, N))
    for k in range(L):
        h = a_bar[k] * h + u[k]
        states[k] = h
    # accumulate over n in the same order as the scalar kernel
    y = np.zeros((L, D))
    for n in range(N):
        y += C[:, None, n] * states[:, :, n]
    y += d_skip[None, :] * x
    return y, (states if keep_states else np.empty((0, D, N)))


def scan_bwd_numpy(dy, x, delta, A, B, C, d_skip, states):
    L, D = x.shape
    a_bar, phi = zoh_coefficients(delta[:, :, None], A[None, :, :])
    dphi_da = zoh_dphi_da(delta[:, :, None], A[None, :, :])
    dx = d_skip[None, :] * dy
    d_dskip = np.sum(dy * x, axis=0)
    ddelta = np.empty((L, D))
    dA = np.zeros_like(A)
    dB = np.empty_like(B)
    dC = np.einsum("kd,kdn->kn", dy, states)
    gh = np.zeros_like(A)
    zero = np.zeros_like(A)
    for k in range(L - 1, -1, -1):
        h_prev = states[k - 1] if k > 0 else zero
        g = gh + dy[k][:, None] * C[k][None, :]
        d_abar = g * h_prev
        d_phi = g * (B[k][None, :] * x[k][:, None])
        gpb = g * phi[k]
        dx[k] += gpb @ B[k]
        dB[k] = x[k] @ gpb
        ddelta[k] = np.sum((d_abar * A + d_phi) * a_bar[k], axis=1)
        dA += d_abar * delta[k][:, None] * a_bar[k] + d_phi * dphi_da[k]
        gh = g * a_bar[k]
    return dx, ddelta, dA, dB, dC, d_dskip


# --------------------------------------------------------------------------
# numba path: fully scalar loops
# --------------------------------------------------------------------------


@njit(cache=True)
def _phi_nb(dt, a):
    z = dt * a
    if abs(z) < SERIES_EPS:
        return dt * (1.0 + 0.5 * z)
    return math.expm1(z) / a


@njit(cache=True)
def _dphi_da_nb(dt, a):
    z = dt * a
    if abs(z) < DPHI_SERIES_EPS:
        g = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)))
    else:
        g = (z * math.exp(z) - math.expm1(z)) / (z * z)
    return dt * dt * g


@njit(cache=True)
def _scan_fwd_nb(x, delta, A, B, C, d_skip, keep_states):
    L, D = x.shape
    N = A.shape[1]
    y = np.empty((L, D))
    if keep_states:
        states = np.empty((L, D, N))
    else:
        states = np.empty((0, D, N))
    h = np.zeros((D, N))
    for k in range(L):
        for d in range(D):
            dt = delta[k, d]
            xv = x[k, d]
            acc = 0.0
            for n in range(N):
                a = A[d, n]
                hv = math.exp(dt * a) * h[d, n] + _phi_nb(dt, a) * B[k, n] * xv
                h[d, n] = hv
                acc += C[k, n] * hv
                if keep_states:
                    states[k, d, n] = hv
            y[k, d] = acc + d_skip[d] * xv
    return y, states


@njit(cache=True)
def _scan_bwd_nb(dy, x, delta, A, B, C, d_skip, states):
    L, D = x.shape
    N = A.shape[1]
    dx = np.empty((L, D))
    ddelta = np.empty((L, D))
    dA = np.zeros((D, N))
    dB = np.zeros((L, N))
    dC = np.zeros((L, N))
    d_dskip = np.zeros(D)
    gh = np.zeros((D, N))
    for k in range(L - 1, -1, -1):
        for d in range(D):
            dyv = dy[k, d]
            xv = x[k, d]
            dt = delta[k, d]
            d_dskip[d] += dyv * xv
            dxv = d_skip[d] * dyv
            ddt = 0.0
            for n in range(N):
                a = A[d, n]
                hk = states[k, d, n]
                hp = states[k - 1, d, n] if k > 0 else 0.0
                dC[k, n] += dyv * hk
                g = gh[d, n] + dyv * C[k, n]
                z = dt * a
                abar = math.exp(z)
                # one expm1 serves both phi and dphi/da away from their series ranges
                em1 = math.expm1(z) if abs(z) >= SERIES_EPS else 0.0
                if abs(z) < SERIES_EPS:
                    phi = dt * (1.0 + 0.5 * z)
                else:
                    phi = em1 / a
                if abs(z) < DPHI_SERIES_EPS:
                    gz = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)))
                else:
                    gz = (z * abar - em1) / (z * z)
                d_abar = g * hp
                d_phi = g * B[k, n] * xv
                dxv += g * phi * B[k, n]
                dB[k, n] += g * phi * xv
                ddt += (d_abar * a + d_phi) * abar
                dA[d, n] += d_abar * dt * abar + d_phi * (dt * dt * gz)
                gh[d, n] = g * abar
            dx[k, d] = dxv
            ddelta[k, d] = ddt
    return dx, ddelta, dA, dB, dC, d_dskip


def _f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def scan_fwd_numba(x, delta, A, B, C, d_skip, keep_states=False):
    return _scan_fwd_nb(*_f64(x, delta, A, B, C, d_skip), bool(keep_states))


def scan_bwd_numba(dy, x, delta, A, B, C, d_skip, states):
    return _scan_bwd_nb(*_f64(dy, x, delta, A, B, C, d_skip, states))
