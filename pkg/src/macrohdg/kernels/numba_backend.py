"""Numba-jitted pointwise kernels (hot path twin of numpy_backend).

Each point is independent, so prange parallelism is bitwise deterministic for
any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

NS = 5
D = 3
LAMBDA_BULK = -2.0 / 3.0
SUPG_CD = 12.0

_JIT = dict(cache=True, parallel=True, fastmath=False)


@njit(**_JIT)
def primitive_arrays(u, gamma):
    n = u.shape[0]
    rho = np.empty(n)
    v = np.empty((n, D))
    pres = np.empty(n)
    temp = np.empty(n)
    enth = np.empty(n)
    sound = np.empty(n)
    for pt in prange(n):
        r = u[pt, 0]
        rho[pt] = r
        kin = 0.0
        for i in range(D):
            vi = u[pt, 1 + i] / r
            v[pt, i] = vi
            kin += 0.5 * vi * vi
        P = (gamma - 1.0) * (u[pt, 4] - r * kin)
        pres[pt] = P
        temp[pt] = gamma * P / r
        enth[pt] = (u[pt, 4] + P) / r
        c2 = gamma * P / r
        sound[pt] = np.sqrt(c2 if c2 > 1e-300 else 1e-300)
    return rho, v, pres, temp, enth, sound


@njit(**_JIT)
def euler_flux(u, gamma):
    n = u.shape[0]
    F = np.empty((n, NS, D))
    for pt in prange(n):
        r = u[pt, 0]
        kin = 0.0
        for i in range(D):
            vi = u[pt, 1 + i] / r
            kin += 0.5 * vi * vi
        P = (gamma - 1.0) * (u[pt, 4] - r * kin)
        H = (u[pt, 4] + P) / r
        for k in range(D):
            vk = u[pt, 1 + k] / r
            F[pt, 0, k] = u[pt, 1 + k]
            for i in range(D):
                F[pt, 1 + i, k] = u[pt, 1 + i] * vk
            F[pt, 1 + k, k] += P
            F[pt, 4, k] = r * H * vk
    return F


@njit(**_JIT)
def euler_jacobian(u, gamma):
    n = u.shape[0]
    g1 = gamma - 1.0
    A = np.zeros((n, D, NS, NS))
    for pt in prange(n):
        r = u[pt, 0]
        vv = np.empty(D)
        kin = 0.0
        for i in range(D):
            vv[i] = u[pt, 1 + i] / r
            kin += 0.5 * vv[i] * vv[i]
        P = g1 * (u[pt, 4] - r * kin)
        H = (u[pt, 4] + P) / r
        for k in range(D):
            A[pt, k, 0, 1 + k] = 1.0
            for i in range(D):
                dik = 1.0 if i == k else 0.0
                A[pt, k, 1 + i, 0] = -vv[i] * vv[k] + dik * g1 * kin
                for j in range(D):
                    dij = 1.0 if i == j else 0.0
                    djk = 1.0 if j == k else 0.0
                    A[pt, k, 1 + i, 1 + j] = vv[i] * djk + vv[k] * dij - dik * g1 * vv[j]
                A[pt, k, 1 + i, 4] = dik * g1
            A[pt, k, 4, 0] = vv[k] * (g1 * kin - H)
            for j in range(D):
                djk = 1.0 if j == k else 0.0
                A[pt, k, 4, 1 + j] = djk * H - g1 * vv[j] * vv[k]
            A[pt, k, 4, 4] = gamma * vv[k]
    return A


@njit(**_JIT)
def viscous_flux(u, q, gamma, pr, mu, re_v):
    n = u.shape[0]
    mu_eff = mu / re_v
    k_t = gamma * mu / ((gamma - 1.0) * re_v * pr)
    gg = gamma * (gamma - 1.0)
    G = np.zeros((n, NS, D))
    for pt in prange(n):
        r = u[pt, 0]
        et = u[pt, 4]
        v = np.empty(D)
        for i in range(D):
            v[i] = u[pt, 1 + i] / r
        gvel = np.empty((D, D))
        for l in range(D):
            for i in range(D):
                gvel[l, i] = (q[pt, l, 1 + i] - v[i] * q[pt, l, 0]) / r
        div = gvel[0, 0] + gvel[1, 1] + gvel[2, 2]
        tau = np.empty((D, D))
        for i in range(D):
            for k in range(D):
                tau[i, k] = mu_eff * (gvel[k, i] + gvel[i, k])
            tau[i, i] += mu_eff * LAMBDA_BULK * div
        v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        for k in range(D):
            vq = 0.0
            for j in range(D):
                vq += v[j] * q[pt, k, 1 + j]
            ge = (
                q[pt, k, 4] / r
                - et * q[pt, k, 0] / (r * r)
                - vq / r
                + v2 * q[pt, k, 0] / r
            )
            tv = 0.0
            for j in range(D):
                tv += tau[k, j] * v[j]
            for i in range(D):
                G[pt, 1 + i, k] = -tau[i, k]
            G[pt, 4, k] = -tv - k_t * gg * ge
    return G


@njit(**_JIT)
def viscous_jacobians(u, q, gamma, pr, mu, re_v):
    n = u.shape[0]
    mu_eff = mu / re_v
    k_t = gamma * mu / ((gamma - 1.0) * re_v * pr)
    gg = gamma * (gamma - 1.0)
    dGdu = np.zeros((n, D, NS, NS))
    dGdq = np.zeros((n, D, D, NS, NS))
    for pt in prange(n):
        r = u[pt, 0]
        et = u[pt, 4]
        v = np.empty(D)
        for i in range(D):
            v[i] = u[pt, 1 + i] / r
        gvel = np.empty((D, D))
        for l in range(D):
            for i in range(D):
                gvel[l, i] = (q[pt, l, 1 + i] - v[i] * q[pt, l, 0]) / r
        div = gvel[0, 0] + gvel[1, 1] + gvel[2, 2]
        tau = np.empty((D, D))
        for i in range(D):
            for k in range(D):
                tau[i, k] = mu_eff * (gvel[k, i] + gvel[i, k])
            tau[i, i] += mu_eff * LAMBDA_BULK * div

        # --- derivatives w.r.t. the gradient argument ---------------------
        # d gvel[a,b]/d q[l,t] nonzero only for l == a
        dgvel_q0 = np.empty((D, D))  # coefficient of q[a, 0]
        for a in range(D):
            for b in range(D):
                dgvel_q0[a, b] = -v[b] / r
        inv_r = 1.0 / r
        for k in range(D):
            for l in range(D):
                for i in range(D):
                    # dtau[i,k]/dq[l,t] = mu_eff*( [l==k] d gvel[k,i]
                    #                   + [l==i] d gvel[i,k] + lam d_ik d gvel[l,l])
                    for t in range(NS):
                        val = 0.0
                        if l == k:
                            if t == 1 + i:
                                val += inv_r
                            if t == 0:
                                val += dgvel_q0[k, i]
                        if l == i:
                            if t == 1 + k:
                                val += inv_r
                            if t == 0:
                                val += dgvel_q0[i, k]
                        if i == k:
                            if t == 1 + l:
                                val += LAMBDA_BULK * inv_r
                            if t == 0:
                                val += LAMBDA_BULK * dgvel_q0[l, l]
                        dGdq[pt, k, l, 1 + i, t] = -mu_eff * val
                # energy row: -sum_j dtau[k,j]/dq[l,t]*v_j
                for t in range(NS):
                    acc = 0.0
                    for j in range(D):
                        val = 0.0
                        if l == k:
                            if t == 1 + j:
                                val += inv_r
                            if t == 0:
                                val += dgvel_q0[k, j]
                        if l == j:
                            if t == 1 + k:
                                val += inv_r
                            if t == 0:
                                val += dgvel_q0[j, k]
                        if j == k:
                            if t == 1 + l:
                                val += LAMBDA_BULK * inv_r
                            if t == 0:
                                val += LAMBDA_BULK * dgvel_q0[l, l]
                        acc += mu_eff * val * v[j]
                    dGdq[pt, k, l, 4, t] = -acc
            # temperature-gradient part, diagonal in (k, l)
            v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
            dGdq[pt, k, k, 4, 0] += -k_t * gg * (-et / (r * r) + v2 / r)
            for j in range(D):
                dGdq[pt, k, k, 4, 1 + j] += -k_t * gg * (-v[j] / r)
            dGdq[pt, k, k, 4, 4] += -k_t * gg * inv_r

        # --- derivatives w.r.t. the state argument ------------------------
        dgvel_du = np.zeros((D, D, NS))
        for a in range(D):
            for b in range(D):
                dgvel_du[a, b, 0] = (v[b] / r * q[pt, a, 0] - gvel[a, b]) / r
                dgvel_du[a, b, 1 + b] += -q[pt, a, 0] / (r * r)
        dtau_du = np.zeros((D, D, NS))
        for i in range(D):
            for k in range(D):
                for t in range(NS):
                    val = dgvel_du[k, i, t] + dgvel_du[i, k, t]
                    if i == k:
                        val += LAMBDA_BULK * (
                            dgvel_du[0, 0, t] + dgvel_du[1, 1, t] + dgvel_du[2, 2, t]
                        )
                    dtau_du[i, k, t] = mu_eff * val
        v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        for k in range(D):
            vq = 0.0
            for j in range(D):
                vq += v[j] * q[pt, k, 1 + j]
            dge_du = np.zeros(NS)
            dge_du[0] = (
                -q[pt, k, 4] / (r * r)
                + 2.0 * et * q[pt, k, 0] / (r * r * r)
                + 2.0 * vq / (r * r)
                - 3.0 * v2 * q[pt, k, 0] / (r * r)
            )
            for j in range(D):
                dge_du[1 + j] = -q[pt, k, 1 + j] / (r * r) + 2.0 * v[j] * q[pt, k, 0] / (
                    r * r
                )
            dge_du[4] = -q[pt, k, 0] / (r * r)
            for t in range(NS):
                for i in range(D):
                    dGdu[pt, k, 1 + i, t] = -dtau_du[i, k, t]
                acc = 0.0
                for j in range(D):
                    acc += dtau_du[k, j, t] * v[j]
                    # tau[k,j] * d v_j / d u_t
                    if t == 0:
                        acc += tau[k, j] * (-v[j] / r)
                    elif t == 1 + j:
                        acc += tau[k, j] / r
                dGdu[pt, k, 4, t] = -acc - k_t * gg * dge_du[t]
    return dGdu, dGdq


@njit(**_JIT)
def stab_matrices(uhat, normals, gamma, pr, re_flow, mach):
    n = uhat.shape[0]
    S = np.zeros((n, NS, NS))
    lam = np.empty(n)
    svis_e = 1.0 / ((gamma - 1.0) * mach * mach * pr)
    for pt in prange(n):
        r = uhat[pt, 0]
        kin = 0.0
        vn = 0.0
        for i in range(D):
            vi = uhat[pt, 1 + i] / r
            kin += 0.5 * vi * vi
            vn += vi * normals[pt, i]
        P = (gamma - 1.0) * (uhat[pt, 4] - r * kin)
        c2 = gamma * P / r
        c = np.sqrt(c2 if c2 > 1e-300 else 1e-300)
        lm = abs(vn) + c
        lam[pt] = lm
        for s in range(NS):
            S[pt, s, s] = lm
        for i in range(D):
            S[pt, 1 + i, 1 + i] += 1.0 / re_flow
        S[pt, 4, 4] += svis_e / re_flow
    return S, lam


@njit(**_JIT)
def supg_tau_values(u, h, inv_dt, gamma, pr, mu, re_v):
    n = u.shape[0]
    tau = np.empty(n)
    gp = gamma / pr
    fac = 4.0 / 3.0 if 4.0 / 3.0 > gp else gp
    nu = (mu / re_v) * fac
    for pt in prange(n):
        r = u[pt, 0]
        kin = 0.0
        vmag2 = 0.0
        for i in range(D):
            vi = u[pt, 1 + i] / r
            kin += 0.5 * vi * vi
            vmag2 += vi * vi
        P = (gamma - 1.0) * (u[pt, 4] - r * kin)
        c2 = gamma * P / r
        c = np.sqrt(c2 if c2 > 1e-300 else 1e-300)
        lam = np.sqrt(vmag2) + c
        hi = h[pt]
        t1 = 2.0 * inv_dt
        t2 = 2.0 * lam / hi
        t3 = SUPG_CD * nu / (hi * hi)
        tau[pt] = 1.0 / np.sqrt(t1 * t1 + t2 * t2 + t3 * t3)
    return tau
