"""Compiled exact Gaussian likelihood for ARMA(p, q) with an unknown mean.

The process ``z_t - mu`` is put in Harvey's state-space form with state
dimension ``m = max(p, q + 1)``. The filter runs on the data and on a
constant regressor in parallel, so ``mu`` is estimated by GLS and the
innovation variance is concentrated out of the likelihood.
"""
from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def transition(ar, ma, m):
    T = np.zeros((m, m))
    for i in range(ar.size):
        T[i, 0] = ar[i]
    for i in range(m - 1):
        T[i, i + 1] = 1.0
    R = np.zeros(m)
    R[0] = 1.0
    for i in range(ma.size):
        R[i + 1] = ma[i]
    return T, R


@nb.njit(cache=True)
def stationary_cov(T, R):
    m = T.shape[0]
    # vec(P) = (I - T kron T)^-1 vec(R R')
    A = np.eye(m * m) - np.kron(T, T)
    rr = np.outer(R, R).reshape(m * m)
    P = np.linalg.solve(A, rr).reshape(m, m)
    return 0.5 * (P + P.T)


@nb.njit(cache=True)
def filter_stats(z, ar, ma):
    """Run the filter; return sums needed for the concentrated likelihood and final state.

    Returns (szz, sz1, s11, sum_log_f, a_z, a_1, P) where ``a_z``/``a_1`` are
    the one-step-ahead predicted states for data and constant after the last
    observation, and ``P`` the matching (unit-variance) state covariance.
    """
    m = max(ar.size, ma.size + 1)
    T, R = transition(ar, ma, m)
    P = stationary_cov(T, R)
    phi = T[:, 0].copy()
    a_z = np.zeros(m)
    a_1 = np.zeros(m)
    K = np.zeros(m)
    TP0 = np.zeros(m)
    Pn = np.zeros((m, m))
    szz = 0.0
    sz1 = 0.0
    s11 = 0.0
    slf = 0.0
    steady = False
    F = 1.0
    logF = 0.0
    for t in range(z.size):
        if not steady:
            F = P[0, 0]
            logF = np.log(F)
            # T @ P[:, 0]: T x = phi * x[0] + shift(x)
            for i in range(m):
                TP0[i] = phi[i] * P[0, 0] + (P[i + 1, 0] if i + 1 < m else 0.0)
                K[i] = TP0[i] / F
        vz = z[t] - a_z[0]
        v1 = 1.0 - a_1[0]
        szz += vz * vz / F
        sz1 += vz * v1 / F
        s11 += v1 * v1 / F
        slf += logF
        az0 = a_z[0]
        a10 = a_1[0]
        for i in range(m):
            nz = phi[i] * az0 + K[i] * vz
            n1 = phi[i] * a10 + K[i] * v1
            if i + 1 < m:
                nz += a_z[i + 1]
                n1 += a_1[i + 1]
            a_z[i] = nz
            a_1[i] = n1
        if not steady:
            # Pn = T P T' + R R' - K K' F
            diff = 0.0
            for i in range(m):
                for j in range(m):
                    # (T P T')_ij = sum_k,l T_ik P_kl T_jl with T = phi e1' + shift
                    v = phi[i] * phi[j] * P[0, 0]
                    if j + 1 < m:
                        v += phi[i] * P[0, j + 1]
                    if i + 1 < m:
                        v += phi[j] * P[i + 1, 0]
                        if j + 1 < m:
                            v += P[i + 1, j + 1]
                    v += R[i] * R[j] - K[i] * K[j] * F
                    Pn[i, j] = v
            for i in range(m):
                for j in range(m):
                    v = 0.5 * (Pn[i, j] + Pn[j, i])
                    d = abs(v - P[i, j])
                    if d > diff:
                        diff = d
                    P[i, j] = v
            if diff < 1e-13:
                steady = True
    return szz, sz1, s11, slf, a_z, a_1, P


@nb.njit(cache=True)
def pacf_to_coef(r):
    """Durbin-Levinson map from partial autocorrelations in (-1, 1) to AR coefficients."""
    k = r.size
    phi = np.zeros(k)
    tmp = np.zeros(k)
    for j in range(k):
        phi[j] = r[j]
        for i in range(j):
            tmp[i] = phi[i] - r[j] * phi[j - 1 - i]
        for i in range(j):
            phi[i] = tmp[i]
    return phi


@nb.njit(cache=True)
def coef_to_pacf(phi):
    k = phi.size
    a = phi.copy()
    r = np.zeros(k)
    for j in range(k - 1, -1, -1):
        r[j] = a[j]
        if j == 0:
            break
        den = 1.0 - r[j] * r[j]
        b = np.zeros(j)
        for i in range(j):
            b[i] = (a[i] + r[j] * a[j - 1 - i]) / den
        a = b
    return r


@nb.njit(cache=True)
def unpack(psi, p, q):
    ar = pacf_to_coef(np.tanh(psi[:p]))
    ma = -pacf_to_coef(np.tanh(psi[p:p + q]))
    return ar, ma


@nb.njit(cache=True)
def neg_profile_loglik(psi, z, p, q):
    ar, ma = unpack(psi, p, q)
    szz, sz1, s11, slf, a_z, a_1, P = filter_stats(z, ar, ma)
    n = z.size
    ssr = szz - sz1 * sz1 / s11
    if ssr <= 0:
        ssr = 1e-300
    sigma2 = ssr / n
    return 0.5 * (n * (np.log(2 * np.pi * sigma2) + 1.0) + slf) / n
