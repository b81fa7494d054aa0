"""Vectorized numpy implementation of the pointwise kernels.

Conventions: conserved state u = (rho, rho*v1, rho*v2, rho*v3, rho*E), the
gradient argument q[pt, l, s] holds d(u_s)/dx_l, flux arrays F[pt, s, k] hold
the k-direction flux of component s.
"""

from __future__ import annotations

import numpy as np

NS = 5
D = 3
LAMBDA_BULK = -2.0 / 3.0
SUPG_CD = 12.0


def primitive_arrays(u, gamma):
    """Primitive quantities (rho, v, P, T, H, c) for a batch of states."""
    rho = u[..., 0]
    v = u[..., 1:4] / rho[..., None]
    kin = 0.5 * np.einsum("...i,...i->...", v, v)
    pres = (gamma - 1.0) * (u[..., 4] - rho * kin)
    temp = gamma * pres / rho
    enth = (u[..., 4] + pres) / rho
    sound = np.sqrt(np.maximum(gamma * pres / rho, 1e-300))
    return rho, v, pres, temp, enth, sound


def euler_flux(u, gamma):
    rho, v, pres, _, enth, _ = primitive_arrays(u, gamma)
    n = u.shape[0]
    F = np.empty((n, NS, D))
    mom = u[:, 1:4]
    F[:, 0, :] = mom
    F[:, 1:4, :] = mom[:, :, None] * v[:, None, :]
    F[:, 1:4, :] += pres[:, None, None] * np.eye(D)
    F[:, 4, :] = rho[:, None] * enth[:, None] * v
    return F


def euler_jacobian(u, gamma):
    """A[pt, k, s, t] = d F[s, k] / d u_t."""
    rho, v, pres, _, enth, _ = primitive_arrays(u, gamma)
    n = u.shape[0]
    g1 = gamma - 1.0
    kin = 0.5 * np.einsum("ni,ni->n", v, v)
    A = np.zeros((n, D, NS, NS))
    eye = np.eye(D)
    for k in range(D):
        A[:, k, 0, 1 + k] = 1.0
        for i in range(D):
            A[:, k, 1 + i, 0] = -v[:, i] * v[:, k] + eye[i, k] * g1 * kin
            for j in range(D):
                A[:, k, 1 + i, 1 + j] = (
                    v[:, i] * eye[j, k] + v[:, k] * eye[i, j] - eye[i, k] * g1 * v[:, j]
                )
            A[:, k, 1 + i, 4] = eye[i, k] * g1
        A[:, k, 4, 0] = v[:, k] * (g1 * kin - enth)
        for j in range(D):
            A[:, k, 4, 1 + j] = eye[j, k] * enth - g1 * v[:, j] * v[:, k]
        A[:, k, 4, 4] = gamma * v[:, k]
    return A


def _velocity_gradients(u, q):
    rho = u[:, 0]
    v = u[:, 1:4] / rho[:, None]
    # gvel[n, l, i] = d v_i / d x_l
    gvel = (q[:, :, 1:4] - v[:, None, :] * q[:, :, 0:1]) / rho[:, None, None]
    return rho, v, gvel


def _energy_gradient(u, q):
    # ge[n, l] = d(internal energy) / d x_l, from gradients of conserved vars
    rho = u[:, 0]
    v = u[:, 1:4] / rho[:, None]
    et = u[:, 4]
    vq = np.einsum("nj,nlj->nl", v, q[:, :, 1:4])
    v2 = np.einsum("nj,nj->n", v, v)
    ge = (
        q[:, :, 4] / rho[:, None]
        - et[:, None] * q[:, :, 0] / rho[:, None] ** 2
        - vq / rho[:, None]
        + v2[:, None] * q[:, :, 0] / rho[:, None]
    )
    return ge


def viscous_flux(u, q, gamma, pr, mu, re_v):
    """G[pt, s, k]; linear in q at frozen u."""
    mu_eff = mu / re_v
    k_t = gamma * mu / ((gamma - 1.0) * re_v * pr)
    rho, v, gvel = _velocity_gradients(u, q)
    div = np.einsum("nll->n", gvel)
    tau = mu_eff * (
        np.swapaxes(gvel, 1, 2) + gvel + LAMBDA_BULK * div[:, None, None] * np.eye(D)
    )
    # tau[n, i, k]; gvel[n, k, i] gives d v_i/d x_k in slot [k, i]
    gT = gamma * (gamma - 1.0) * _energy_gradient(u, q)
    n = u.shape[0]
    G = np.zeros((n, NS, D))
    G[:, 1:4, :] = -tau
    tauv = np.einsum("nkj,nj->nk", tau, v)
    G[:, 4, :] = -tauv - k_t * gT
    return G


def viscous_jacobians(u, q, gamma, pr, mu, re_v):
    """(dGdu[n,k,s,t], dGdq[n,k,l,s,t]) of the viscous flux."""
    n = u.shape[0]
    mu_eff = mu / re_v
    k_t = gamma * mu / ((gamma - 1.0) * re_v * pr)
    gg = gamma * (gamma - 1.0)
    rho, v, gvel = _velocity_gradients(u, q)
    et = u[:, 4]
    q0 = q[:, :, 0]
    qm = q[:, :, 1:4]
    eye = np.eye(D)

    # d gvel[a, b] / d q[l, t]
    dgvel_dq = np.zeros((n, D, D, D, NS))
    for a in range(D):
        for b in range(D):
            dgvel_dq[:, a, b, a, 1 + b] = 1.0 / rho
            dgvel_dq[:, a, b, a, 0] = -v[:, b] / rho
    # d gvel[a, b] / d u_t
    dgvel_du = np.zeros((n, D, D, NS))
    for a in range(D):
        for b in range(D):
            dgvel_du[:, a, b, 0] = (v[:, b] / rho * q0[:, a] - gvel[:, a, b]) / rho
            dgvel_du[:, a, b, 1 + b] += -q0[:, a] / rho**2

    def tau_deriv(dg):
        # dg[..., a, b, X] -> dtau[..., i, k, X]
        ddiv = np.einsum("n ll ...->n ...", dg)
        return mu_eff * (
            np.swapaxes(dg, 1, 2)
            + dg
            + LAMBDA_BULK * np.einsum("ik,n...->nik...", eye, ddiv)
        )

    dtau_dq = tau_deriv(dgvel_dq)  # (n, i, k, l, t)
    dtau_du = tau_deriv(dgvel_du)  # (n, i, k, t)

    # energy-gradient derivatives
    v2 = np.einsum("nj,nj->n", v, v)
    vqm = np.einsum("nj,nlj->nl", v, qm)
    dge_dq = np.zeros((n, D, NS))  # d ge[l] / d q[l, t] (diagonal in l)
    dge_dq[:, :, 0] = (-et[:, None] / rho[:, None] ** 2 + v2[:, None] / rho[:, None])
    dge_dq[:, :, 1:4] = -v[:, None, :] / rho[:, None, None]
    dge_dq[:, :, 4] = 1.0 / rho[:, None]
    dge_du = np.zeros((n, D, NS))  # d ge[l] / d u_t
    dge_du[:, :, 0] = (
        -q[:, :, 4] / rho[:, None] ** 2
        + 2.0 * et[:, None] * q0 / rho[:, None] ** 3
        + 2.0 * vqm / rho[:, None] ** 2
        - 3.0 * v2[:, None] * q0 / rho[:, None] ** 2
    )
    dge_du[:, :, 1:4] = -qm / rho[:, None, None] ** 2 + 2.0 * v[:, None, :] * q0[
        :, :, None
    ] / rho[:, None, None] ** 2
    dge_du[:, :, 4] = -q0 / rho[:, None] ** 2

    tau = mu_eff * (
        np.swapaxes(gvel, 1, 2) + gvel
        + LAMBDA_BULK * np.einsum("nll->n", gvel)[:, None, None] * eye
    )
    dv_du = np.zeros((n, D, NS))
    for j in range(D):
        dv_du[:, j, 0] = -v[:, j] / rho
        dv_du[:, j, 1 + j] = 1.0 / rho

    dGdq = np.zeros((n, D, D, NS, NS))
    dGdq[:, :, :, 1:4, :] = -np.transpose(dtau_dq, (0, 2, 3, 1, 4))  # [k, l, i, t]
    # energy row: -sum_j dtau[k,j]/dq * v_j - k_t * d gT[k]/dq
    dGdq[:, :, :, 4, :] = -np.einsum("nkjlt,nj->nklt", np.transpose(dtau_dq, (0, 2, 1, 3, 4)), v)
    for k in range(D):
        dGdq[:, k, k, 4, :] += -k_t * gg * dge_dq[:, k, :]

    dGdu = np.zeros((n, D, NS, NS))
    dGdu[:, :, 1:4, :] = -np.transpose(dtau_du, (0, 2, 1, 3))  # [k, i, t]
    dGdu[:, :, 4, :] = (
        -np.einsum("nkjt,nj->nkt", np.transpose(dtau_du, (0, 2, 1, 3)), v)
        - np.einsum("nkj,njt->nkt", tau, dv_du)
        - k_t * gg * dge_du
    )
    return dGdu, dGdq


def stab_matrices(uhat, normals, gamma, pr, re_flow, mach):
    """HDG stabilization S = lam_max*I + S_vis and the eigenvalue lam_max."""
    rho, v, pres, _, _, sound = primitive_arrays(uhat, gamma)
    vn = np.einsum("ni,ni->n", v, normals)
    lam = np.abs(vn) + sound
    n = uhat.shape[0]
    S = np.zeros((n, NS, NS))
    idx = np.arange(NS)
    S[:, idx, idx] = lam[:, None]
    svis = np.array([0.0, 1.0, 1.0, 1.0, 1.0 / ((gamma - 1.0) * mach**2 * pr)])
    S[:, idx, idx] += svis / re_flow
    return S, lam


def supg_tau_values(u, h, inv_dt, gamma, pr, mu, re_v):
    """Scalar SUPG parameter per point (diagonal tensor tau * I)."""
    _, v, _, _, _, sound = primitive_arrays(u, gamma)
    lam = np.linalg.norm(v, axis=-1) + sound
    nu = (mu / re_v) * max(4.0 / 3.0, gamma / pr)
    return 1.0 / np.sqrt(
        (2.0 * inv_dt) ** 2 + (2.0 * lam / h) ** 2 + (SUPG_CD * nu / h**2) ** 2
    )
