"""Compiled Kalman filter and backward smoother for the cubic spline prior."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _smooth_row(x, W, ybar, q, want_var, fhat, dfhat, var):
    K = x.size
    A0 = np.empty((K, 3))
    A1 = np.empty((K, 3))
    V = np.empty((K, 3))
    P00 = np.empty(K)
    P01 = np.empty(K)
    P11 = np.empty(K)
    F = np.empty(K)
    u0 = np.zeros(3)
    u1 = np.zeros(3)
    s00 = 0.0
    s01 = 0.0
    s11 = 0.0
    prev = 0.0
    for k in range(K):
        h = x[k] - prev
        prev = x[k]
        r = 1.0 / W[k]
        p00 = s00 + h * (2.0 * s01 + h * s11) + q * (h * h * h / 3.0)
        p01 = s01 + h * s11 + q * (h * h / 2.0)
        p11 = s11 + q * h
        f = p00 + r
        g0 = p00 / f
        g1 = p01 / f
        obs0 = ybar[k]
        for j in range(3):
            a0 = u0[j] + h * u1[j]
            a1 = u1[j]
            obs = obs0 if j == 0 else (1.0 if j == 1 else x[k])
            v = obs - a0
            A0[k, j] = a0
            A1[k, j] = a1
            V[k, j] = v
            u0[j] = a0 + g0 * v
            u1[j] = a1 + g1 * v
        s00 = p00 * r / f
        s01 = p01 * r / f
        s11 = p11 - p01 * p01 / f
        P00[k] = p00
        P01[k] = p01
        P11[k] = p11
        F[k] = f

    # generalized least squares for the diffuse linear trend
    S00 = 0.0
    S01 = 0.0
    S11 = 0.0
    b0 = 0.0
    b1 = 0.0
    for k in range(K):
        iv = 1.0 / F[k]
        S00 += V[k, 1] * V[k, 1] * iv
        S01 += V[k, 1] * V[k, 2] * iv
        S11 += V[k, 2] * V[k, 2] * iv
        b0 += V[k, 1] * V[k, 0] * iv
        b1 += V[k, 2] * V[k, 0] * iv
    det = S00 * S11 - S01 * S01
    if not det > 1e-14 * S00 * S11:
        return False
    i00 = S11 / det
    i11 = S00 / det
    i01 = -S01 / det
    d0 = i00 * b0 + i01 * b1
    d1 = i01 * b0 + i11 * b1

    ncol = 3 if want_var else 1
    w0 = np.zeros(3)
    w1 = np.zeros(3)
    n00 = 0.0
    n01 = 0.0
    n11 = 0.0
    for k in range(K - 1, -1, -1):
        h = x[k + 1] - x[k] if k < K - 1 else 0.0
        f = F[k]
        g0 = P00[k] / f
        g1 = P01[k] / f
        p00 = P00[k]
        p01 = P01[k]
        p11 = P11[k]
        for j in range(ncol):
            if j == 0:
                col = V[k, 0] - V[k, 1] * d0 - V[k, 2] * d1
            else:
                col = V[k, j]
            t0 = w0[j]
            t1 = h * w0[j] + w1[j]
            w0[j] = col / f + t0 - g0 * t0 - g1 * t1
            w1[j] = t1
        mean0 = A0[k, 0] - A0[k, 1] * d0 - A0[k, 2] * d1
        mean1 = A1[k, 0] - A1[k, 1] * d0 - A1[k, 2] * d1
        fhat[k] = mean0 + p00 * w0[0] + p01 * w1[0] + d0 + d1 * x[k]
        dfhat[k] = mean1 + p01 * w0[0] + p11 * w1[0] + d1
        if want_var:
            m00 = n00
            m01 = n00 * h + n01
            m11 = h * (n00 * h + 2.0 * n01) + n11
            c0 = 1.0 - g0
            c1 = g1
            n00 = c0 * c0 * m00 - 2.0 * c0 * c1 * m01 + c1 * c1 * m11 + 1.0 / f
            n01 = c0 * m01 - c1 * m11
            n11 = m11
            vk = p00 - (p00 * p00 * n00 + 2.0 * p00 * p01 * n01 + p01 * p01 * n11)
            # correction for the estimated trend
            e0 = 1.0 - (A0[k, 1] + p00 * w0[1] + p01 * w1[1])
            e1 = x[k] - (A0[k, 2] + p00 * w0[2] + p01 * w1[2])
            vk += e0 * (i00 * e0 + i01 * e1) + e1 * (i01 * e0 + i11 * e1)
            var[k] = W[k] * vk
    return True


@njit(cache=True, nogil=True)
def smooth_batch(x, W, ybar, q, want_var, fhat, dfhat, var):
    """Fill ``fhat``, ``dfhat`` (and ``var``) row by row; False on rank loss."""
    for b in range(W.shape[0]):
        if not _smooth_row(x, W[b], ybar[b], q[b], want_var, fhat[b], dfhat[b], var[b]):
            return False
    return True
