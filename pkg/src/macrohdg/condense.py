"""Static condensation of the local (gradient, state) unknowns.

Two interchangeable paths produce the same reduced trace operator and
right-hand side: the one-shot condensation factorizes the full local matrix
per macro-element; the second-layer path factorizes only the interior Schur
complement S = A_uu - A_uq A_qq^{-1} A_qu, exploiting that the gradient mass
block is the reference macro mass matrix scaled by the (constant, affine)
jacobian determinant, so its inverse never has to be formed per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .assembly import (
    NS,
    Discretization,
    LocalBlocks,
    dense_grad_grad,
    dense_grad_state,
    dense_grad_trace,
    dense_state_grad,
    dense_state_state,
    dense_state_trace,
    dense_trace_grad,
    dense_trace_state,
    dense_trace_trace,
    grad_trace_apply,
    state_grad_apply,
    state_trace_apply,
    trace_grad_apply,
    trace_state_apply,
    trace_trace_apply,
)


class FactorizationError(RuntimeError):
    """Local factorization failed (invalid state or time step)."""


def _gather(disc: Discretization, x: np.ndarray) -> np.ndarray:
    return x[disc.gather].reshape(disc.n_mac, 4, disc.Lf, NS)


def _scatter_add(disc: Discretization, y_loc: np.ndarray) -> np.ndarray:
    out = np.zeros(disc.n_trace)
    np.add.at(out, disc.gather.ravel(), y_loc.ravel())
    return out


@dataclass
class CondensedSchur:
    """Second-layer condensation: factorized interior Schur complement plus
    the factored gradient-block applications."""

    blocks: LocalBlocks
    schur_inv: np.ndarray  # (m, L*ns, L*ns)

    @classmethod
    def build(cls, blocks: LocalBlocks) -> "CondensedSchur":
        disc = blocks.disc
        S = blocks.state_state - _schur_correction(blocks)
        try:
            schur_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"singular interior Schur complement: {exc}")
        return cls(blocks, schur_inv)

    @property
    def disc(self) -> Discretization:
        return self.blocks.disc

    @property
    def factor_entries(self) -> int:
        return self.schur_inv.size

    def _schur_solve(self, y):
        m = self.disc.n_mac
        flat = y.reshape(m, -1, 1)
        return np.matmul(self.schur_inv, flat).reshape(y.shape)

    def _interior_elim(self, y):
        """A[trace,state] y - A[trace,grad] A_qq^{-1} A[grad,state] y."""
        disc = self.disc
        z = disc.grad_mass_solve(disc._grad_state_apply(y))
        return trace_state_apply(self.blocks, y) - trace_grad_apply(self.blocks, z)

    def apply_trace(self, x: np.ndarray) -> np.ndarray:
        """Matrix-free action of the reduced trace operator."""
        disc = self.disc
        x_loc = _gather(disc, x)
        z = disc.grad_mass_solve(grad_trace_apply(disc, x_loc))
        y1 = -state_trace_apply(self.blocks, x_loc) + state_grad_apply(self.blocks, z)
        y2 = self._schur_solve(y1)
        y4 = (
            self._interior_elim(y2)
            + trace_trace_apply(self.blocks, x_loc)
            - trace_grad_apply(self.blocks, z)
        )
        return _scatter_add(disc, y4)

    def rhs(self, res_grad, res_state, res_trace) -> np.ndarray:
        disc = self.disc
        zr = disc.grad_mass_solve(res_grad)
        t2 = self._schur_solve(res_state - state_grad_apply(self.blocks, zr))
        b_loc = self._interior_elim(t2) + trace_grad_apply(self.blocks, zr)
        return -res_trace + _scatter_add(disc, b_loc)

    def recover(self, res_grad, res_state, dtrace):
        """Local updates (d_state, d_grad) from the trace update."""
        disc = self.disc
        x_loc = _gather(disc, dtrace)
        zr = disc.grad_mass_solve(res_grad)
        z = disc.grad_mass_solve(grad_trace_apply(disc, x_loc))
        y1 = -state_trace_apply(self.blocks, x_loc) + state_grad_apply(self.blocks, z)
        du = self._schur_solve(
            state_grad_apply(self.blocks, zr) - res_state + y1
        )
        dq = disc.grad_mass_solve(
            -res_grad
            - disc._grad_state_apply(du)
            - grad_trace_apply(disc, x_loc)
        )
        return du, dq


def _schur_correction(blocks: LocalBlocks) -> np.ndarray:
    """A[state,grad] A_qq^{-1} A[grad,state] as dense (m, L*ns, L*ns)."""
    disc, rm = blocks.disc, blocks.disc.rm
    m, L = disc.n_mac, disc.L
    # W[m,l,:,:] = (A_qq^{-1} A[grad,state])_l; the jacobian determinant
    # cancels between the two factors
    W = np.einsum("mrl,rIJ->mlIJ", disc.inv_jac, rm.mass_inv_weak_deriv)
    P = np.zeros((m, L, NS, L, NS))
    phi = rm.phi_vol
    for K in range(rm.n_sub):
        conn = rm.sub_conn[K]
        gphys = np.einsum("qar,mrl->mqal", rm.grad_ref[K], disc.inv_jac)
        VW = np.einsum("qb,mlbj->mqlj", phi, W[:, :, conn], optimize=True)
        T1 = np.einsum(
            "mqklsr,mqak->mqlsra", blocks.wdgdq_vol[:, K], gphys, optimize=True
        )
        P[:, conn] -= np.einsum("mqlsra,mqlj->masjr", T1, VW, optimize=True)
    for lf in range(4):
        fvn = rm.face_vol_nodes[lf]
        Wf = W[:, :, fvn]
        for T in range(rm.n_tri):
            tc = rm.tri_conn[T]
            sl = slice(T * rm.n_quad_face, (T + 1) * rm.n_quad_face)
            VW = np.einsum("qb,mlbj->mqlj", rm.phi_face, Wf[:, :, tc], optimize=True)
            T1 = np.einsum(
                "mqlsr,qa->mqlsra", blocks.wdgdq_face[:, lf, sl], rm.phi_face
            )
            P[:, fvn[tc]] += np.einsum("mqlsra,mqlj->masjr", T1, VW, optimize=True)
    return P.reshape(m, L * NS, L * NS)


@dataclass
class CondensedStandard:
    """One-shot condensation with the full local matrix factorized per macro."""

    blocks: LocalBlocks
    lu: list
    grad_trace_d: list
    state_trace_d: list
    trace_grad_d: list
    trace_state_d: list
    trace_trace_d: list

    @classmethod
    def build(cls, blocks: LocalBlocks) -> "CondensedStandard":
        disc = blocks.disc
        lu = []
        gt, st, tg, ts, tt = [], [], [], [], []
        for mac in range(disc.n_mac):
            a_local = np.block(
                [
                    [dense_grad_grad(blocks, mac), dense_grad_state(blocks, mac)],
                    [dense_state_grad(blocks, mac), dense_state_state(blocks, mac)],
                ]
            )
            try:
                lu.append(scipy.linalg.lu_factor(a_local))
            except (scipy.linalg.LinAlgError, ValueError) as exc:
                raise FactorizationError(f"macro {mac}: {exc}")
            gt.append(dense_grad_trace(blocks, mac))
            st.append(dense_state_trace(blocks, mac))
            tg.append(dense_trace_grad(blocks, mac))
            ts.append(dense_trace_state(blocks, mac))
            tt.append(dense_trace_trace(blocks, mac))
        return cls(blocks, lu, gt, st, tg, ts, tt)

    @property
    def disc(self) -> Discretization:
        return self.blocks.disc

    @property
    def factor_entries(self) -> int:
        return sum(f[0].size for f in self.lu)

    def _local_solve(self, mac, rhs):
        return scipy.linalg.lu_solve(self.lu[mac], rhs)

    def apply_trace(self, x: np.ndarray) -> np.ndarray:
        disc = self.disc
        x_loc = _gather(disc, x).reshape(disc.n_mac, -1)
        y_loc = np.empty_like(x_loc)
        for mac in range(disc.n_mac):
            xm = x_loc[mac]
            rhs = np.concatenate(
                [self.grad_trace_d[mac] @ xm, self.state_trace_d[mac] @ xm]
            )
            sol = self._local_solve(mac, rhs)
            ng = self.blocks.n_grad
            y_loc[mac] = (
                self.trace_trace_d[mac] @ xm
                - self.trace_grad_d[mac] @ sol[:ng]
                - self.trace_state_d[mac] @ sol[ng:]
            )
        return _scatter_add(disc, y_loc.reshape(disc.n_mac, 4, disc.Lf, NS))

    def rhs(self, res_grad, res_state, res_trace) -> np.ndarray:
        disc = self.disc
        m = disc.n_mac
        b_loc = np.empty((m, 4 * disc.Lf * NS))
        for mac in range(m):
            r = np.concatenate(
                [res_grad[mac].ravel(), res_state[mac].ravel()]
            )
            sol = self._local_solve(mac, r)
            ng = self.blocks.n_grad
            b_loc[mac] = (
                self.trace_grad_d[mac] @ sol[:ng] + self.trace_state_d[mac] @ sol[ng:]
            )
        return -res_trace + _scatter_add(
            disc, b_loc.reshape(m, 4, disc.Lf, NS)
        )

    def recover(self, res_grad, res_state, dtrace):
        disc = self.disc
        m = disc.n_mac
        du = np.empty((m, disc.L, NS))
        dq = np.empty((m, 3, disc.L, NS))
        x_loc = _gather(disc, dtrace).reshape(m, -1)
        ng = self.blocks.n_grad
        for mac in range(m):
            rhs = -np.concatenate(
                [res_grad[mac].ravel(), res_state[mac].ravel()]
            ) - np.concatenate(
                [self.grad_trace_d[mac] @ x_loc[mac], self.state_trace_d[mac] @ x_loc[mac]]
            )
            sol = self._local_solve(mac, rhs)
            dq[mac] = sol[:ng].reshape(3, disc.L, NS)
            du[mac] = sol[ng:].reshape(disc.L, NS)
        return du, dq


def condense(blocks: LocalBlocks, path: str):
    if path == "schur":
        return CondensedSchur.build(blocks)
    if path == "standard":
        return CondensedStandard.build(blocks)
    raise ValueError(f"unknown condensation path {path!r}")


def dense_trace_operator(blocks: LocalBlocks) -> np.ndarray:
    """Explicitly assembled reduced trace operator (test oracle only)."""
    disc = blocks.disc
    n = disc.n_trace
    A = np.zeros((n, n))
    for mac in range(disc.n_mac):
        a_local = np.block(
            [
                [dense_grad_grad(blocks, mac), dense_grad_state(blocks, mac)],
                [dense_state_grad(blocks, mac), dense_state_state(blocks, mac)],
            ]
        )
        cpl_right = np.vstack(
            [dense_grad_trace(blocks, mac), dense_state_trace(blocks, mac)]
        )
        cpl_left = np.hstack(
            [dense_trace_grad(blocks, mac), dense_trace_state(blocks, mac)]
        )
        a_hat = dense_trace_trace(blocks, mac) - cpl_left @ np.linalg.solve(
            a_local, cpl_right
        )
        idx = disc.gather[mac].ravel()
        A[np.ix_(idx, idx)] += a_hat
    return A
