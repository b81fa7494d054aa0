"""Residuals and Jacobian blocks of the hybridized macro-element scheme.

Unknowns per macro-element: the conserved state coefficients U, the gradient
coefficients Q (q = grad u in conserved variables), and the single-valued
trace coefficients on the macro-face skeleton.  The gradient equation is
linear; its blocks are purely geometric.  Dof orderings are node-major,
field-minor: volume dof = node*ns + s, gradient dof = (l*L + node)*ns + s,
trace dof on face f = f*Lf*ns + lattice_node*ns + s.

Interior-face trace residuals are assembled with the sign that makes the
per-face trace-trace blocks positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .basis import TET_VERTICES, ref_macro
from .mesh import BOUNDARY, BOUNDARY_LABELS, MacroMesh
from .physics import AdmissibilityError, FlowParams, check_admissible

NS = 5
D = 3

DIRICHLET = 1
WALL = 2


class ConfigError(ValueError):
    pass


@dataclass
class FieldState:
    """Coefficient arrays of (state, gradient, trace) for one time level."""

    u: np.ndarray  # (n_mac, L, ns)
    q: np.ndarray  # (n_mac, 3, L, ns)
    uhat: np.ndarray  # (n_trace,)

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.q.copy(), self.uhat.copy())

    def axpy(self, alpha: float, du, dq, duhat) -> None:
        self.u += alpha * du
        self.q += alpha * dq
        self.uhat += alpha * duhat


@dataclass
class StageContext:
    """Temporal coefficients of the current nonlinear solve.

    dt_coeff multiplies the unknown stage state in the time-derivative term
    (d_ii/dt for an implicit RK stage, 0 for steady); hist carries the
    explicit part of the discrete time derivative as a coefficient array.
    pseudo_dt adds a mass term to the state-state jacobian block only
    (pseudo-transient continuation); supg_dt enters the SUPG parameter.
    """

    dt_coeff: float = 0.0
    hist: np.ndarray | None = None
    pseudo_dt: float = np.inf
    supg_dt: float = np.inf

    @classmethod
    def steady(cls, pseudo_dt: float = np.inf) -> "StageContext":
        return cls(0.0, None, pseudo_dt, pseudo_dt)

    @classmethod
    def dirk_stage(cls, dt, d_row, stage_idx, stage_states, u_old) -> "StageContext":
        """Stage i of a DIRK step: sum_j d_ij (u_j - u_old)/dt drives the solve."""
        d_ii = d_row[stage_idx]
        hist = -(d_ii / dt) * u_old
        for j in range(stage_idx):
            hist = hist + (d_row[j] / dt) * (stage_states[j] - u_old)
        return cls(d_ii / dt, hist, np.inf, dt / d_ii)


@dataclass
class FrozenCoeffs:
    """Picard-frozen coefficient fields of one linearization point.

    Passing these back into `residual` evaluates the residual with the same
    frozen SUPG/stabilization coefficients and frozen viscous trace state the
    jacobian used, which is what the finite-difference oracle differentiates.
    """

    supg_tau: np.ndarray  # (n_mac, nK, nq)
    supg_jac: np.ndarray  # (n_mac, nK, nq, 3, ns, ns)
    face_stab: np.ndarray  # (n_mac, 4, nTq, ns, ns)
    face_visc_state: np.ndarray  # (n_mac, 4, nTq, ns)


class Discretization:
    """Mesh + reference tabulation + trace layout + case data."""

    def __init__(
        self,
        mesh: MacroMesh,
        p: int,
        params: FlowParams,
        bcs: dict | None = None,
        source: Callable | None = None,
        quad_order: int | None = None,
    ):
        self.mesh = mesh
        self.p = p
        self.params = params
        self.source = source
        self.rm = ref_macro(mesh.m, p, quad_order)
        rm = self.rm
        self.ns = NS
        self.n_mac = mesh.n_macro
        self.L = rm.n_vol
        self.Lf = rm.n_face_lattice
        self.n_trace = mesh.n_faces * self.Lf * NS

        self.jac = mesh.jac
        self.inv_jac = mesh.inv_jac
        self.det = mesh.det
        self.origin = mesh.vertices[mesh.macro_tets[:, 0]]
        self.normals = mesh.normals
        self.areas = mesh.areas

        # physical sub-tet diameters (SUPG length scale)
        sv = rm.subtet_verts.astype(float) / mesh.m  # (nK, 4, 3)
        phys = self.origin[:, None, None, :] + np.einsum(
            "kvr,mlr->mkvl", sv, self.jac
        )
        diam = np.zeros((self.n_mac, rm.n_sub))
        for i in range(4):
            for j in range(i + 1, 4):
                diam = np.maximum(
                    diam, np.linalg.norm(phys[:, :, i] - phys[:, :, j], axis=-1)
                )
        self.h_sub = diam

        # reference coords of face quadrature points, per local face
        fx = np.empty((4, rm.n_tri, rm.n_quad_face, 3))
        from .basis import TET_FACE_VERTICES

        for lf, fverts in enumerate(TET_FACE_VERTICES):
            corners = TET_VERTICES[list(fverts)]
            fx[lf] = np.einsum("tqr,rl->tql", rm.face_quad_bary, corners)
        self.face_xref = fx

        # node coordinates (reference macro) for interpolation
        self.node_xref = rm.vol_coords

        self._build_trace_layout()
        self._resolve_bcs(bcs or {})

    # ------------------------------------------------------------------
    def _build_trace_layout(self):
        mesh, rm = self.mesh, self.rm
        N = rm.n_lattice
        lookup = np.full((N + 1, N + 1), -1, dtype=np.int64)
        for g, (ia, ib) in enumerate(rm.face_multi):
            lookup[ia, ib] = g
        bary_local = np.column_stack(
            [N - rm.face_multi[:, 0] - rm.face_multi[:, 1], rm.face_multi]
        )  # (Lf, 3) barycentric w.r.t. the side's own corner order

        gather = np.empty((self.n_mac, 4, self.Lf, NS), dtype=np.int64)
        dof_s = np.arange(NS, dtype=np.int64)
        for mac in range(self.n_mac):
            for lf in range(4):
                f = mesh.faces_of_macro[mac, lf]
                side = mesh.sides_of_macro[mac, lf]
                cm = mesh.corner_map[f, side]
                bc = bary_local[:, cm]  # canonical barycentrics of local nodes
                g = lookup[bc[:, 1], bc[:, 2]]
                gather[mac, lf] = (f * self.Lf + g)[:, None] * NS + dof_s[None, :]
        self.gather = gather.reshape(self.n_mac, 4, self.Lf * NS)

    def _resolve_bcs(self, bcs):
        mesh = self.mesh
        self.bc_kind = np.zeros((self.n_mac, 4), dtype=np.int64)
        self.bc_label = np.full((self.n_mac, 4), -1, dtype=np.int64)
        self.bc_data = {}
        for lbl, spec in bcs.items():
            code = BOUNDARY_LABELS.index(lbl)
            kind, data = spec
            if kind == "dirichlet_state":
                self.bc_data[code] = (DIRICHLET, data)
            elif kind == "isothermal_noslip_wall":
                self.bc_data[code] = (WALL, float(data))
            else:
                raise ConfigError(f"unknown boundary kind {kind!r}")
        for mac in range(self.n_mac):
            for lf in range(4):
                f = mesh.faces_of_macro[mac, lf]
                if mesh.face_kind[f] == BOUNDARY:
                    code = mesh.face_label[f]
                    if code not in self.bc_data:
                        raise ConfigError(
                            f"no boundary condition for face label "
                            f"{BOUNDARY_LABELS[code]!r}"
                        )
                    self.bc_kind[mac, lf] = self.bc_data[code][0]
                    self.bc_label[mac, lf] = code

    # ------------------------------------------------------------------
    def node_coords(self) -> np.ndarray:
        """Physical coordinates of the volume lattice nodes, (n_mac, L, 3)."""
        return self.origin[:, None, :] + np.einsum(
            "ar,mlr->mal", self.node_xref, self.jac
        )

    def face_quad_coords(self, lf: int, tri: int) -> np.ndarray:
        """Physical coordinates of face quadrature points, (n_mac, nqf, 3)."""
        return self.origin[:, None, :] + np.einsum(
            "qr,mlr->mql", self.face_xref[lf, tri], self.jac
        )

    def zero_fields(self) -> FieldState:
        return FieldState(
            np.zeros((self.n_mac, self.L, NS)),
            np.zeros((self.n_mac, 3, self.L, NS)),
            np.zeros(self.n_trace),
        )

    def interpolate(self, state_fn) -> FieldState:
        """Nodal interpolation of an exact-state function, with a consistent
        gradient solve and owner-side trace interpolation."""
        fields = self.zero_fields()
        fields.u[:] = state_fn(self.node_coords().reshape(-1, 3)).reshape(
            self.n_mac, self.L, NS
        )
        rm = self.rm
        xnodes = self.node_coords()
        for mac in range(self.n_mac):
            for lf in range(4):
                if self.mesh.sides_of_macro[mac, lf] != 0:
                    continue
                xf = xnodes[mac][rm.face_vol_nodes[lf]]
                vals = state_fn(xf)
                fields.uhat[self.gather[mac, lf].reshape(self.Lf, NS)] = vals
        fields.q[:] = self.gradient_refresh(fields.u, fields.uhat)
        return fields

    def gradient_refresh(self, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        """Solve the (linear) gradient equation for q given u and the trace."""
        rhs = -self._grad_state_apply(u) - self._grad_trace_apply(
            uhat[self.gather].reshape(self.n_mac, 4, self.Lf, NS)
        )
        return self.grad_mass_solve(rhs)

    # ---- structural gradient-block applications ----------------------
    def grad_mass_apply(self, z):
        """Gradient-equation mass block: J * (reference mass) per direction."""
        return self.det[:, None, None, None] * np.einsum(
            "IJ,mlJs->mlIs", self.rm.mass, z
        )

    def grad_mass_solve(self, z):
        return (1.0 / self.det)[:, None, None, None] * np.einsum(
            "IJ,mlJs->mlIs", self.rm.mass_inv, z
        )

    def _grad_state_apply(self, u):
        """Weak-derivative coupling of the gradient equation to the state."""
        t = np.einsum("rIJ,mJs->mrIs", self.rm.weak_deriv, u)
        return self.det[:, None, None, None] * np.einsum(
            "mrl,mrIs->mlIs", self.inv_jac, t
        )

    def _grad_trace_apply(self, uh_loc):
        """Trace coupling of the gradient equation (face mass times normal)."""
        rm = self.rm
        out = np.zeros((self.n_mac, 3, self.L, NS))
        for lf in range(4):
            t = np.einsum("IJ,mJs->mIs", rm.face_mass, uh_loc[:, lf])
            t = t * (2.0 * self.areas[:, lf])[:, None, None]
            out[:, :, rm.face_vol_nodes[lf], :] -= (
                self.normals[:, lf, :, None, None] * t[:, None, :, :]
            )
        return out

    def grad_state_transpose_apply(self, y):
        """Transpose weak-derivative coupling, used when condensing."""
        t = np.einsum("rJI,mJs->mrIs", self.rm.weak_deriv, y)
        return self.det[:, None, None, None] * np.einsum(
            "mrl,mrIs->mlIs", self.inv_jac, t
        )


@dataclass
class LocalBlocks:
    """Per-macro jacobian data in factored/stashed form.

    Dense gradient couplings are reconstructed from geometry and the stored
    per-quadrature-point viscous tensors; only genuinely dense blocks are
    materialized.  `wdgdq_vol[m,K,q,k,l,s,t]` is the weighted dG_k/dq_l at
    volume points; `wdgdq_face[m,lf,pt,l,s,t]` is the weighted, normal-
    contracted sum_k n_k dG_k/dq_l at face points.  `trace_face_scale` masks
    the trace-equation q-coupling on boundary faces.
    """

    disc: Discretization
    state_state: np.ndarray  # (m, L*ns, L*ns)
    face_state_trace: np.ndarray  # (m, 4, Lf*ns, Lf*ns)
    face_trace_state: np.ndarray
    face_trace_trace: np.ndarray
    wdgdq_vol: np.ndarray
    wdgdq_face: np.ndarray
    trace_face_scale: np.ndarray  # (m, 4)

    @property
    def n_state(self) -> int:
        return self.disc.L * NS

    @property
    def n_grad(self) -> int:
        return 3 * self.disc.L * NS


def _flux_and_jacobians(u_pt, q_pt, params, want_jac):
    """Pointwise total flux and (optionally) its jacobians, flat batch."""
    be = kernels.backend
    F = be.euler_flux(u_pt, params.gamma)
    G = be.viscous_flux(
        u_pt, q_pt, params.gamma, params.prandtl, params.mu, params.reynolds_acoustic
    )
    if not want_jac:
        return F + G, None, None
    A = be.euler_jacobian(u_pt, params.gamma)
    dGdu, dGdq = be.viscous_jacobians(
        u_pt, q_pt, params.gamma, params.prandtl, params.mu, params.reynolds_acoustic
    )
    return F + G, A + dGdu, dGdq


def assemble_system(
    disc: Discretization,
    fields: FieldState,
    ctx: StageContext,
    want_jac: bool = True,
    frozen: FrozenCoeffs | None = None,
):
    """Residuals (R_Q, R_U, R_trace) and, optionally, the jacobian blocks.

    Raises AdmissibilityError when any quadrature-point state leaves the
    admissible set.
    """
    rm = disc.rm
    params = disc.params
    m, L, Lf, ns = disc.n_mac, disc.L, disc.Lf, NS
    U, Qc = fields.u, fields.q
    uh_loc = fields.uhat[disc.gather].reshape(m, 4, Lf, ns)

    res_state = np.zeros((m, L, ns))
    res_trace_loc = np.zeros((m, 4, Lf, ns))

    # gradient equation (linear)
    res_grad = (
        disc.grad_mass_apply(Qc)
        + disc._grad_state_apply(U)
        + disc._grad_trace_apply(uh_loc)
    )

    # temporal mass term
    tder_coeff = None
    if ctx.dt_coeff != 0.0 or ctx.hist is not None:
        tder_coeff = ctx.dt_coeff * U
        if ctx.hist is not None:
            tder_coeff = tder_coeff + ctx.hist
        res_state += disc.det[:, None, None] * np.einsum(
            "IJ,mJs->mIs", rm.mass, tder_coeff
        )

    blocks = None
    new_frozen = None
    if want_jac:
        nq_face_tot = rm.n_tri * rm.n_quad_face
        blocks = LocalBlocks(
            disc,
            np.zeros((m, L * ns, L * ns)),
            np.zeros((m, 4, Lf * ns, Lf * ns)),
            np.zeros((m, 4, Lf * ns, Lf * ns)),
            np.zeros((m, 4, Lf * ns, Lf * ns)),
            np.zeros((m, rm.n_sub, rm.n_quad, 3, 3, ns, ns)),
            np.zeros((m, 4, nq_face_tot, 3, ns, ns)),
            np.ones((m, 4)),
        )
        new_frozen = FrozenCoeffs(
            np.zeros((m, rm.n_sub, rm.n_quad)),
            np.zeros((m, rm.n_sub, rm.n_quad, 3, ns, ns)),
            np.zeros((m, 4, nq_face_tot, ns, ns)),
            np.zeros((m, 4, nq_face_tot, ns)),
        )
        # temporal + pseudo-transient mass on the state-state block
        coeff = ctx.dt_coeff
        if np.isfinite(ctx.pseudo_dt):
            coeff = coeff + 1.0 / ctx.pseudo_dt
        if coeff != 0.0:
            mass_lift = np.einsum("IJ,st->IsJt", rm.mass, np.eye(ns)).reshape(
                L * ns, L * ns
            )
            blocks.state_state += (coeff * disc.det)[:, None, None] * mass_lift

    inv_supg_dt = 0.0 if not np.isfinite(ctx.supg_dt) else 1.0 / ctx.supg_dt

    # ---- volume terms, one uniform sub-tet at a time -----------------
    be = kernels.backend
    for K in range(rm.n_sub):
        conn = rm.sub_conn[K]
        phi = rm.phi_vol  # (nq, nloc)
        gphys = np.einsum("qar,mrl->mqal", rm.grad_ref[K], disc.inv_jac)
        w = rm.w_ref[K][None, :] * disc.det[:, None]  # (m, nq)
        Uk = U[:, conn]
        u_pt = np.einsum("qa,mas->mqs", phi, Uk)
        q_pt = np.einsum("qa,mlas->mqls", phi, Qc[:, :, conn])
        check_admissible(u_pt, params.gamma)
        nq = rm.n_quad
        u_flat = u_pt.reshape(m * nq, ns)
        q_flat = q_pt.reshape(m * nq, 3, ns)

        FG, Adu, dGdq = _flux_and_jacobians(u_flat, q_flat, params, want_jac)
        FG = FG.reshape(m, nq, ns, 3)
        res_state[:, conn] -= np.einsum("mq,mqsk,mqak->mas", w, FG, gphys)

        if disc.source is not None:
            x_pt = disc.origin[:, None, :] + np.einsum(
                "qr,mlr->mql", rm.x_ref[K], disc.jac
            )
            src = disc.source(x_pt.reshape(-1, 3)).reshape(m, nq, ns)
            res_state[:, conn] -= np.einsum("mq,qa,mqs->mas", w, phi, src)

        # SUPG: weight (A . grad w), strong first-order residual
        grad_u = np.einsum("mqal,mas->mqls", gphys, Uk)
        if frozen is not None:
            A_s = frozen.supg_jac[:, K].reshape(m * nq, 3, ns, ns)
            tau = frozen.supg_tau[:, K]
        else:
            A_s = be.euler_jacobian(u_flat, params.gamma)
            tau = be.supg_tau_values(
                u_flat,
                np.repeat(disc.h_sub[:, K], nq),
                inv_supg_dt,
                params.gamma,
                params.prandtl,
                params.mu,
                params.reynolds_acoustic,
            ).reshape(m, nq)
        A_sr = A_s.reshape(m, nq, 3, ns, ns)
        r_strong = np.einsum("mqkut,mqkt->mqu", A_sr, grad_u)
        if tder_coeff is not None:
            r_strong += np.einsum("qa,mas->mqs", phi, tder_coeff[:, conn])
        W1 = np.einsum("mqkus,mqak->mqaus", A_sr, gphys)
        wtau = w * tau
        res_state[:, conn] += np.einsum("mq,mqaus,mqu->mas", wtau, W1, r_strong)

        if want_jac:
            new_frozen.supg_tau[:, K] = tau
            new_frozen.supg_jac[:, K] = A_sr
            blocks.wdgdq_vol[:, K] = w[:, :, None, None, None, None] * dGdq.reshape(
                m, nq, 3, 3, ns, ns
            )
            contrib = -np.einsum("mq,mqkst,mqak,qb->masbt", w, Adu.reshape(m, nq, 3, ns, ns), gphys, phi)
            contrib += np.einsum("mq,mqaus,mqbut->masbt", wtau, W1, W1)
            if ctx.dt_coeff != 0.0:
                contrib += ctx.dt_coeff * np.einsum(
                    "mq,mqats,qb->masbt", wtau, W1, phi
                )
            rows = (conn[:, None] * ns + np.arange(ns)[None, :]).ravel()
            nloc = rm.n_loc
            blocks.state_state[:, rows[:, None], rows[None, :]] += contrib.reshape(
                m, nloc * ns, nloc * ns
            )

    # ---- face terms ---------------------------------------------------
    phi_f = rm.phi_face  # (nqf, nlocf)
    nqf = rm.n_quad_face
    eye_ns = np.eye(ns)
    for lf in range(4):
        fvn = rm.face_vol_nodes[lf]
        nvec = disc.normals[:, lf]  # (m, 3)
        is_b = disc.bc_kind[:, lf] > 0
        if want_jac:
            blocks.trace_face_scale[is_b, lf] = 0.0
        for T in range(rm.n_tri):
            tc = rm.tri_conn[T]
            w = (rm.w_face_ref[T][None, :] * (2.0 * disc.areas[:, lf])[:, None])
            uh_pt = np.einsum("qa,mas->mqs", phi_f, uh_loc[:, lf][:, tc])
            u_pt = np.einsum("qa,mas->mqs", phi_f, U[:, fvn[tc]])
            q_pt = np.einsum("qa,mlas->mqls", phi_f, Qc[:, :, fvn[tc]])
            check_admissible(uh_pt, params.gamma)
            uh_flat = uh_pt.reshape(m * nqf, ns)
            q_flat = q_pt.reshape(m * nqf, 3, ns)
            n_rep = np.repeat(nvec, nqf, axis=0)

            # the viscous face flux and its q-jacobian are evaluated at the
            # (frozen, when differentiating) trace state; its state
            # derivative is dropped from the jacobian, which keeps the
            # per-face trace-trace blocks symmetric positive definite
            if frozen is not None:
                uh_visc = frozen.face_visc_state[
                    :, lf, T * nqf : (T + 1) * nqf
                ].reshape(m * nqf, ns)
            else:
                uh_visc = uh_flat
            FGh = be.euler_flux(uh_flat, params.gamma) + be.viscous_flux(
                uh_visc,
                q_flat,
                params.gamma,
                params.prandtl,
                params.mu,
                params.reynolds_acoustic,
            )
            FGh = FGh.reshape(m, nqf, ns, 3)
            if frozen is not None:
                S = frozen.face_stab[:, lf, T * nqf : (T + 1) * nqf]
            else:
                S, _ = be.stab_matrices(
                    uh_flat,
                    n_rep,
                    params.gamma,
                    params.prandtl,
                    params.reynolds_flow,
                    params.mach_ref,
                )
                S = S.reshape(m, nqf, ns, ns)
            flux_n = np.einsum("mqsk,mk->mqs", FGh, nvec) + np.einsum(
                "mqst,mqt->mqs", S, u_pt - uh_pt
            )
            res_state[:, fvn[tc]] += np.einsum("mq,qa,mqs->mas", w, phi_f, flux_n)
            rtr = -np.einsum("mq,qa,mqs->mas", w, phi_f, flux_n)

            # boundary faces: replace the trace equation by the bc operator
            if np.any(is_b):
                rtr[is_b] = 0.0
                for code, (kind, data) in disc.bc_data.items():
                    sel = disc.bc_label[:, lf] == code
                    if not np.any(sel):
                        continue
                    if kind == DIRICHLET:
                        x_pt = disc.face_quad_coords(lf, T)[sel]
                        u_d = data(x_pt.reshape(-1, 3)).reshape(-1, nqf, ns)
                        bhat = uh_pt[sel] - u_d
                    else:  # WALL
                        e_wall = data / (params.gamma * (params.gamma - 1.0))
                        bhat = uh_pt[sel].copy()
                        bhat[..., 0] -= u_pt[sel][..., 0]
                        bhat[..., 4] = uh_pt[sel][..., 4] - uh_pt[sel][..., 0] * e_wall
                    rtr[sel] = np.einsum(
                        "mq,qa,mqs->mas", w[sel], phi_f, bhat
                    )
            res_trace_loc[:, lf][:, tc] += rtr

            if not want_jac:
                continue
            new_frozen.face_stab[:, lf, T * nqf : (T + 1) * nqf] = S
            new_frozen.face_visc_state[:, lf, T * nqf : (T + 1) * nqf] = uh_pt
            # d(flux.n)/d(trace state): inviscid jacobian and penalty only
            A_f = be.euler_jacobian(uh_flat, params.gamma).reshape(m, nqf, 3, ns, ns)
            _, dGdq = be.viscous_jacobians(
                uh_visc,
                q_flat,
                params.gamma,
                params.prandtl,
                params.mu,
                params.reynolds_acoustic,
            )
            K1 = np.einsum("mqkst,mk->mqst", A_f, nvec) - S
            blocks.wdgdq_face[:, lf, T * nqf : (T + 1) * nqf] = np.einsum(
                "mq,mqklst,mk->mqlst", w, dGdq.reshape(m, nqf, 3, 3, ns, ns), nvec
            )

            proj = np.einsum("mq,qa,qb->mqab", w, phi_f, phi_f)
            rc = (tc[:, None] * ns + np.arange(ns)[None, :]).ravel()
            nlf = rm.n_loc_face
            ust = np.einsum("mqab,mqst->masbt", proj, K1).reshape(
                m, nlf * ns, nlf * ns
            )
            blocks.face_state_trace[:, lf][:, rc[:, None], rc[None, :]] += ust
            uss = np.einsum("mqab,mqst->masbt", proj, S).reshape(m, nlf * ns, nlf * ns)
            # volume-state rows also live on face nodes; add to state_state
            rows = (fvn[tc][:, None] * ns + np.arange(ns)[None, :]).ravel()
            blocks.state_state[:, rows[:, None], rows[None, :]] += uss

            tst = -uss
            ttt = -ust
            if np.any(is_b):
                tst[is_b] = 0.0
                ttt[is_b] = 0.0
                for code, (kind, data) in disc.bc_data.items():
                    sel = disc.bc_label[:, lf] == code
                    if not np.any(sel):
                        continue
                    if kind == DIRICHLET:
                        Kuu = np.zeros((ns, ns))
                        Khh = eye_ns
                    else:  # WALL
                        e_wall = data / (params.gamma * (params.gamma - 1.0))
                        Khh = eye_ns.copy()
                        Khh[4, 0] = -e_wall
                        Kuu = np.zeros((ns, ns))
                        Kuu[0, 0] = -1.0
                    ttt[sel] = np.einsum(
                        "mqab,st->masbt", proj[sel], Khh
                    ).reshape(-1, nlf * ns, nlf * ns)
                    tst[sel] = np.einsum(
                        "mqab,st->masbt", proj[sel], Kuu
                    ).reshape(-1, nlf * ns, nlf * ns)
            blocks.face_trace_state[:, lf][:, rc[:, None], rc[None, :]] += tst
            blocks.face_trace_trace[:, lf][:, rc[:, None], rc[None, :]] += ttt

    res_trace = np.zeros(disc.n_trace)
    np.add.at(res_trace, disc.gather.ravel(), res_trace_loc.ravel())
    if want_jac:
        return (res_grad, res_state, res_trace), blocks, new_frozen
    return res_grad, res_state, res_trace


def residual(disc, fields, ctx, frozen: FrozenCoeffs | None = None):
    """Nonlinear residuals (R_Q, R_U, R_trace) at the given state."""
    return assemble_system(disc, fields, ctx, want_jac=False, frozen=frozen)


def jacobian(disc, fields, ctx):
    """Jacobian blocks and the frozen coefficients used in them."""
    _, blocks, frozen = assemble_system(disc, fields, ctx, want_jac=True)
    return blocks, frozen


# ---------------------------------------------------------------------------
# factored block applications (shared by condensation and the matrix-free
# trace operator)
# ---------------------------------------------------------------------------


def grad_trace_apply(disc, x_loc):
    """A[grad, trace] action; x_loc is (m, 4, Lf, ns)."""
    return disc._grad_trace_apply(x_loc)


def state_grad_apply(blocks: LocalBlocks, z):
    """A[state, grad] action on gradient-shaped z (m, 3, L, ns)."""
    disc, rm = blocks.disc, blocks.disc.rm
    m, ns = disc.n_mac, NS
    out = np.zeros((m, disc.L, ns))
    phi = rm.phi_vol
    for K in range(rm.n_sub):
        conn = rm.sub_conn[K]
        v_pt = np.einsum("qb,mlbt->mqlt", phi, z[:, :, conn])
        gphys = np.einsum("qar,mrl->mqal", rm.grad_ref[K], disc.inv_jac)
        out[:, conn] -= np.einsum(
            "mqklst,mqlt,mqak->mas", blocks.wdgdq_vol[:, K], v_pt, gphys
        )
    for lf in range(4):
        fvn = rm.face_vol_nodes[lf]
        zf = z[:, :, fvn]
        for T in range(rm.n_tri):
            tc = rm.tri_conn[T]
            v_pt = np.einsum("qb,mlbt->mqlt", rm.phi_face, zf[:, :, tc])
            sl = slice(T * rm.n_quad_face, (T + 1) * rm.n_quad_face)
            out[:, fvn[tc]] += np.einsum(
                "mqlst,mqlt,qa->mas", blocks.wdgdq_face[:, lf, sl], v_pt, rm.phi_face
            )
    return out


def trace_grad_apply(blocks: LocalBlocks, z):
    """A[trace, grad] action -> (m, 4, Lf, ns); zero on boundary faces."""
    disc, rm = blocks.disc, blocks.disc.rm
    m = disc.n_mac
    out = np.zeros((m, 4, disc.Lf, NS))
    for lf in range(4):
        fvn = rm.face_vol_nodes[lf]
        zf = z[:, :, fvn]
        scale = blocks.trace_face_scale[:, lf]
        for T in range(rm.n_tri):
            tc = rm.tri_conn[T]
            v_pt = np.einsum("qb,mlbt->mqlt", rm.phi_face, zf[:, :, tc])
            sl = slice(T * rm.n_quad_face, (T + 1) * rm.n_quad_face)
            out[:, lf][:, tc] -= scale[:, None, None] * np.einsum(
                "mqlst,mqlt,qa->mas", blocks.wdgdq_face[:, lf, sl], v_pt, rm.phi_face
            )
    return out


def state_trace_apply(blocks: LocalBlocks, x_loc):
    """A[state, trace] action from the face blocks."""
    disc, rm = blocks.disc, blocks.disc.rm
    m = disc.n_mac
    out = np.zeros((m, disc.L, NS))
    xf = x_loc.reshape(m, 4, disc.Lf * NS)
    for lf in range(4):
        t = np.einsum("mab,mb->ma", blocks.face_state_trace[:, lf], xf[:, lf])
        out[:, rm.face_vol_nodes[lf]] += t.reshape(m, disc.Lf, NS)
    return out


def trace_state_apply(blocks: LocalBlocks, y):
    """A[trace, state] action on state-shaped y."""
    disc, rm = blocks.disc, blocks.disc.rm
    m = disc.n_mac
    out = np.empty((m, 4, disc.Lf, NS))
    for lf in range(4):
        yf = y[:, rm.face_vol_nodes[lf]].reshape(m, disc.Lf * NS)
        out[:, lf] = np.einsum(
            "mab,mb->ma", blocks.face_trace_state[:, lf], yf
        ).reshape(m, disc.Lf, NS)
    return out


def trace_trace_apply(blocks: LocalBlocks, x_loc):
    disc = blocks.disc
    m = disc.n_mac
    xf = x_loc.reshape(m, 4, disc.Lf * NS)
    out = np.einsum("mfab,mfb->mfa", blocks.face_trace_trace, xf)
    return out.reshape(m, 4, disc.Lf, NS)


def state_state_apply(blocks: LocalBlocks, y):
    m = blocks.disc.n_mac
    yy = y.reshape(m, blocks.n_state)
    return np.einsum("mab,mb->ma", blocks.state_state, yy).reshape(y.shape)


# ---------------------------------------------------------------------------
# dense materialization (small meshes: tests and the one-shot condensation)
# ---------------------------------------------------------------------------


def dense_grad_grad(blocks: LocalBlocks, mac: int) -> np.ndarray:
    disc = blocks.disc
    L = disc.L
    M = disc.det[mac] * disc.rm.mass
    out = np.zeros((3 * L * NS, 3 * L * NS))
    lift = np.kron(M, np.eye(NS))
    for l in range(3):
        sl = slice(l * L * NS, (l + 1) * L * NS)
        out[sl, sl] = lift
    return out


def dense_grad_state(blocks: LocalBlocks, mac: int) -> np.ndarray:
    disc = blocks.disc
    L = disc.L
    out = np.empty((3 * L * NS, L * NS))
    for l in range(3):
        Dl = disc.det[mac] * np.einsum(
            "r,rIJ->IJ", disc.inv_jac[mac, :, l], disc.rm.weak_deriv
        )
        out[l * L * NS : (l + 1) * L * NS] = np.kron(Dl, np.eye(NS))
    return out


def dense_grad_trace(blocks: LocalBlocks, mac: int) -> np.ndarray:
    disc, rm = blocks.disc, blocks.disc.rm
    L, Lf = disc.L, disc.Lf
    out = np.zeros((3 * L * NS, 4 * Lf * NS))
    for lf in range(4):
        Mf = 2.0 * disc.areas[mac, lf] * rm.face_mass
        blk = np.kron(Mf, np.eye(NS))
        cidx = np.arange(lf * Lf * NS, (lf + 1) * Lf * NS)
        ridx = (rm.face_vol_nodes[lf][:, None] * NS + np.arange(NS)).ravel()
        for l in range(3):
            out[np.ix_(l * L * NS + ridx, cidx)] -= disc.normals[mac, lf, l] * blk
    return out


def _dense_from_q_stash(blocks: LocalBlocks, mac: int, trace_side: bool):
    """Materialize A[state,grad] or A[trace,grad] from the point stashes."""
    disc, rm = blocks.disc, blocks.disc.rm
    L, Lf = disc.L, disc.Lf
    nrows = 4 * Lf * NS if trace_side else L * NS
    out = np.zeros((nrows, 3 * L * NS))
    if not trace_side:
        for K in range(rm.n_sub):
            conn = rm.sub_conn[K]
            gphys = np.einsum("qar,rl->qal", rm.grad_ref[K], disc.inv_jac[mac])
            blk = -np.einsum(
                "qklst,qak,qb->aslbt", blocks.wdgdq_vol[mac, K], gphys, rm.phi_vol
            )
            ridx = (conn[:, None] * NS + np.arange(NS)).ravel()
            cidx = (
                (np.arange(3)[:, None, None] * L + conn[None, :, None]) * NS
                + np.arange(NS)[None, None, :]
            ).ravel()
            out[ridx[:, None], cidx[None, :]] += blk.reshape(len(ridx), len(cidx))
    for lf in range(4):
        fvn = rm.face_vol_nodes[lf]
        scale = blocks.trace_face_scale[mac, lf] if trace_side else 1.0
        sign = -1.0 if trace_side else 1.0
        if trace_side and scale == 0.0:
            continue
        for T in range(rm.n_tri):
            tc = rm.tri_conn[T]
            sl = slice(T * rm.n_quad_face, (T + 1) * rm.n_quad_face)
            blk = sign * np.einsum(
                "qlst,qa,qb->aslbt",
                blocks.wdgdq_face[mac, lf, sl],
                rm.phi_face,
                rm.phi_face,
            )
            if trace_side:
                ridx = ((lf * Lf + tc)[:, None] * NS + np.arange(NS)).ravel()
            else:
                ridx = (fvn[tc][:, None] * NS + np.arange(NS)).ravel()
            cidx = (
                (np.arange(3)[:, None, None] * L + fvn[tc][None, :, None]) * NS
                + np.arange(NS)[None, None, :]
            ).ravel()
            out[ridx[:, None], cidx[None, :]] += blk.reshape(len(ridx), len(cidx))
    return out


def dense_state_grad(blocks, mac):
    return _dense_from_q_stash(blocks, mac, trace_side=False)


def dense_trace_grad(blocks, mac):
    return _dense_from_q_stash(blocks, mac, trace_side=True)


def _dense_face_block(disc, arr, mac, rows_on_volume):
    L, Lf = disc.L, disc.Lf
    rm = disc.rm
    nrows = L * NS if rows_on_volume else 4 * Lf * NS
    out = np.zeros((nrows, 4 * Lf * NS))
    for lf in range(4):
        cidx = np.arange(lf * Lf * NS, (lf + 1) * Lf * NS)
        if rows_on_volume:
            ridx = (rm.face_vol_nodes[lf][:, None] * NS + np.arange(NS)).ravel()
        else:
            ridx = cidx
        out[ridx[:, None], cidx[None, :]] += arr[mac, lf]
    return out


def dense_state_trace(blocks, mac):
    return _dense_face_block(blocks.disc, blocks.face_state_trace, mac, True)


def dense_trace_state(blocks, mac):
    disc, rm = blocks.disc, blocks.disc.rm
    L, Lf = disc.L, disc.Lf
    out = np.zeros((4 * Lf * NS, L * NS))
    for lf in range(4):
        ridx = np.arange(lf * Lf * NS, (lf + 1) * Lf * NS)
        cidx = (rm.face_vol_nodes[lf][:, None] * NS + np.arange(NS)).ravel()
        out[np.ix_(ridx, cidx)] += blocks.face_trace_state[mac, lf]
    return out


def dense_trace_trace(blocks, mac):
    disc = blocks.disc
    Lf = disc.Lf
    out = np.zeros((4 * Lf * NS, 4 * Lf * NS))
    for lf in range(4):
        sl = slice(lf * Lf * NS, (lf + 1) * Lf * NS)
        out[sl, sl] = blocks.face_trace_trace[mac, lf]
    return out


def dense_state_state(blocks, mac):
    return blocks.state_state[mac]
