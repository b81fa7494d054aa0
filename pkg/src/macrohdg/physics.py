"""Compressible Navier-Stokes constitutive layer.

Nondimensional form: the thermodynamic relations are gamma*P = rho*T,
e = c_v*T with c_p = 1, R = c_p - c_v = (gamma-1)/gamma.  Viscous fluxes carry
the factor mu/reynolds_acoustic; the viscous stabilization entries carry
1/reynolds_flow.  Fluxes act on the conserved state u = (rho, rho*v, rho*E)
and its gradient q[l, s] = d(u_s)/dx_l.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels

NS = 5
D = 3


class AdmissibilityError(RuntimeError):
    """State left the admissible set (rho > 0, internal energy > 0)."""

    def __init__(self, component: str, value: float):
        self.component = component
        self.value = value
        super().__init__(f"inadmissible state: {component} = {value:.6g}")


@dataclass(frozen=True)
class FlowParams:
    """Nondimensional gas and flow parameters.

    reynolds_acoustic is the denominator of the viscous fluxes (the Reynolds
    number built on the reference velocity of the chosen scaling);
    reynolds_flow enters the viscous stabilization tensor and defaults to
    reynolds_acoustic * mach_ref.
    """

    gamma: float = 1.4
    prandtl: float = 0.71
    reynolds_acoustic: float = 1.0
    mach_ref: float = 0.1
    mu: float = 1.0
    reynolds_flow: float | None = None

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if self.prandtl <= 0 or self.reynolds_acoustic <= 0:
            raise ValueError("Pr and Re must be positive")
        if self.reynolds_flow is None:
            object.__setattr__(
                self, "reynolds_flow", self.reynolds_acoustic * self.mach_ref
            )

    @property
    def lambda_bulk(self) -> float:
        return -2.0 / D

    @property
    def R(self) -> float:
        return (self.gamma - 1.0) / self.gamma

    @property
    def c_p(self) -> float:
        return 1.0

    @property
    def c_v(self) -> float:
        return self.R / (self.gamma - 1.0)


class Primitive(NamedTuple):
    rho: np.ndarray
    v: np.ndarray
    P: np.ndarray
    T: np.ndarray
    H: np.ndarray
    c: np.ndarray


def check_admissible(u: np.ndarray, gamma: float) -> None:
    """Raise AdmissibilityError if any state has rho <= 0 or P <= 0."""
    u = np.atleast_2d(u)
    rho = u[..., 0]
    if np.any(rho <= 0.0) or not np.all(np.isfinite(rho)):
        raise AdmissibilityError("rho", float(np.min(rho)))
    kin = 0.5 * np.einsum("...i,...i->...", u[..., 1:4], u[..., 1:4]) / rho
    pres = (gamma - 1.0) * (u[..., 4] - kin)
    if np.any(pres <= 0.0) or not np.all(np.isfinite(pres)):
        raise AdmissibilityError("pressure", float(np.min(pres)))


def primitive(u: np.ndarray, params: FlowParams) -> Primitive:
    """Primitive variables of one state or a batch of states."""
    single = u.ndim == 1
    ub = np.atleast_2d(np.asarray(u, dtype=float))
    check_admissible(ub, params.gamma)
    rho, v, P, T, H, c = kernels.backend.primitive_arrays(ub, params.gamma)
    if single:
        return Primitive(rho[0], v[0], P[0], T[0], H[0], c[0])
    return Primitive(rho, v, P, T, H, c)


def conserved(rho, v, P, params: FlowParams) -> np.ndarray:
    """Assemble the conserved state from (rho, velocity, pressure)."""
    rho = np.asarray(rho, dtype=float)
    v = np.asarray(v, dtype=float)
    P = np.asarray(P, dtype=float)
    u = np.empty(rho.shape + (NS,))
    u[..., 0] = rho
    u[..., 1:4] = rho[..., None] * v
    u[..., 4] = P / (params.gamma - 1.0) + 0.5 * rho * np.einsum(
        "...i,...i->...", v, v
    )
    return u


def _batched(u):
    u = np.asarray(u, dtype=float)
    return (u.ndim == 1), np.atleast_2d(u)


def inviscid_flux(u: np.ndarray, params: FlowParams) -> np.ndarray:
    """Euler flux F[s, k] (batch: F[pt, s, k])."""
    single, ub = _batched(u)
    check_admissible(ub, params.gamma)
    F = kernels.backend.euler_flux(ub, params.gamma)
    return F[0] if single else F


def viscous_flux(u: np.ndarray, q: np.ndarray, params: FlowParams) -> np.ndarray:
    """Viscous flux G[s, k] from the state and conserved-variable gradient."""
    single, ub = _batched(u)
    qb = np.asarray(q, dtype=float).reshape(ub.shape[0], D, NS)
    check_admissible(ub, params.gamma)
    G = kernels.backend.viscous_flux(
        ub, qb, params.gamma, params.prandtl, params.mu, params.reynolds_acoustic
    )
    return G[0] if single else G


def flux_jacobian(u: np.ndarray, params: FlowParams) -> np.ndarray:
    """Inviscid flux jacobians A[k, s, t] = dF[s,k]/du_t."""
    single, ub = _batched(u)
    check_admissible(ub, params.gamma)
    A = kernels.backend.euler_jacobian(ub, params.gamma)
    return A[0] if single else A


def viscous_jacobians(u: np.ndarray, q: np.ndarray, params: FlowParams):
    single, ub = _batched(u)
    qb = np.asarray(q, dtype=float).reshape(ub.shape[0], D, NS)
    dGdu, dGdq = kernels.backend.viscous_jacobians(
        ub, qb, params.gamma, params.prandtl, params.mu, params.reynolds_acoustic
    )
    return (dGdu[0], dGdq[0]) if single else (dGdu, dGdq)


def stab_tensor(
    u: np.ndarray,
    uhat: np.ndarray,
    normal: np.ndarray,
    params: FlowParams,
    dt_hint: float = np.inf,
) -> np.ndarray:
    """Interface stabilization S = lam_max(uhat, n)*I + S_vis.

    Depends on the trace state only; the interior-state argument is kept for
    signature symmetry with the numerical flux and is unused.
    """
    del u, dt_hint
    single, ub = _batched(uhat)
    nb = np.atleast_2d(np.asarray(normal, dtype=float))
    check_admissible(ub, params.gamma)
    S, _ = kernels.backend.stab_matrices(
        ub, nb, params.gamma, params.prandtl, params.reynolds_flow, params.mach_ref
    )
    return S[0] if single else S


def supg_tau(
    u: np.ndarray, h: float, dt: float, params: FlowParams
) -> np.ndarray:
    """Diagonal SUPG parameter tau*I for a state at element size h."""
    single, ub = _batched(u)
    hb = np.full(ub.shape[0], float(h))
    inv_dt = 0.0 if not np.isfinite(dt) else 1.0 / dt
    check_admissible(ub, params.gamma)
    tau = kernels.backend.supg_tau_values(
        ub, hb, inv_dt, params.gamma, params.prandtl, params.mu,
        params.reynolds_acoustic,
    )
    tau_mat = tau[:, None, None] * np.eye(NS)
    return tau_mat[0] if single else tau_mat


BOUNDARY_KINDS = ("dirichlet_state", "isothermal_noslip_wall")


def boundary_operator(kind, uhat, u, q, data, params: FlowParams) -> np.ndarray:
    """Pointwise boundary residual; zero iff the condition holds.

    dirichlet_state: data is the prescribed conserved state.
    isothermal_noslip_wall: data is the wall temperature; enforces zero
    velocity trace, the wall temperature, and density extrapolation.
    """
    uhat = np.asarray(uhat, dtype=float)
    if kind == "dirichlet_state":
        return uhat - np.asarray(data, dtype=float)
    if kind == "isothermal_noslip_wall":
        u = np.asarray(u, dtype=float)
        out = np.empty_like(uhat)
        out[..., 0] = uhat[..., 0] - u[..., 0]
        out[..., 1:4] = uhat[..., 1:4]
        # internal energy consistent with T = gamma*P/rho and P = (gamma-1)*rho*e
        e_wall = float(data) / (params.gamma * (params.gamma - 1.0))
        out[..., 4] = uhat[..., 4] - uhat[..., 0] * e_wall
        return out
    raise ValueError(f"unknown boundary kind {kind!r}; supported: {BOUNDARY_KINDS}")
