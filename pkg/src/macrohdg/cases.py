"""Benchmark case definitions: steady Couette flow and the Taylor-Green vortex.

The Couette case is a manufactured solution on the unit cube: an axis-aligned
shear profile with a prescribed temperature curve and constant pressure, all
boundaries Dirichlet.  Its source term is derived analytically from the
implemented fluxes so that the exact solution satisfies the discrete operator
family exactly; the common literature form of the energy source (which fixes
the free-stream temperature scale to one) is also provided for reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import BOUNDARY_LABELS
from .physics import FlowParams, conserved


@dataclass
class CouetteCase:
    alpha_c: float = 0.8
    beta_c: float = 0.85
    gamma: float = 1.4
    prandtl: float = 0.71
    mach: float = 0.15
    reynolds: float = 1.0
    rho_inf: float = 1.0
    params: FlowParams = field(init=False)

    def __post_init__(self):
        # flow scaling: the viscous flux denominator is the flow Reynolds
        # number itself, and so is the stabilization Reynolds number
        self.params = FlowParams(
            gamma=self.gamma,
            prandtl=self.prandtl,
            reynolds_acoustic=self.reynolds,
            mach_ref=self.mach,
            reynolds_flow=self.reynolds,
        )

    @property
    def t_inf(self) -> float:
        return 1.0 / ((self.gamma - 1.0) * self.mach**2)

    @property
    def p_inf(self) -> float:
        return self.rho_inf * self.t_inf / self.gamma

    def velocity(self, x2):
        return x2 * np.log1p(x2)

    def temperature(self, x2):
        g = self.gamma
        return self.t_inf * (
            self.alpha_c
            + x2 * (self.beta_c - self.alpha_c)
            + (g - 1.0) / (2.0 * g * self.rho_inf) * self.prandtl * x2 * (1.0 - x2)
        )

    def exact_state(self, x) -> np.ndarray:
        """Conserved exact solution at points x (n, 3)."""
        x2 = np.asarray(x)[:, 1]
        T = self.temperature(x2)
        rho = self.gamma * self.p_inf / T
        v = np.zeros((len(x2), 3))
        v[:, 0] = self.velocity(x2)
        return conserved(rho, v, np.full_like(x2, self.p_inf), self.params)

    def source(self, x) -> np.ndarray:
        """Divergence of the implemented fluxes at the exact solution."""
        x2 = np.asarray(x)[:, 1]
        mu_re = self.params.mu / self.reynolds
        L = np.log1p(x2)
        v1 = x2 * L
        dv1 = L + x2 / (1.0 + x2)
        ddv1 = (2.0 + x2) / (1.0 + x2) ** 2
        out = np.zeros((len(x2), 5))
        out[:, 1] = -mu_re * ddv1
        # tau*v divergence plus the heat-flux divergence; the temperature
        # curvature term integrates to + T_inf * mu/Re
        out[:, 4] = -mu_re * (ddv1 * v1 + dv1**2 - self.t_inf)
        return out

    def source_printed(self, x) -> np.ndarray:
        """Literature closed form of the source (energy scale T_inf = 1)."""
        x2 = np.asarray(x)[:, 1]
        L = np.log1p(x2)
        out = np.zeros((len(x2), 5))
        re = self.reynolds
        out[:, 1] = -(2.0 + x2) / ((1.0 + x2) ** 2) / re
        out[:, 4] = (
            -(
                L**2
                + x2 * L / (1.0 + x2)
                + (x2 * (3.0 + 2.0 * x2) * L - 2.0 * x2 - 1.0) / (1.0 + x2) ** 2
            )
            / re
        )
        return out

    def boundary_conditions(self) -> dict:
        return {lbl: ("dirichlet_state", self.exact_state) for lbl in BOUNDARY_LABELS}

    def free_stream(self) -> np.ndarray:
        return conserved(self.rho_inf, np.zeros(3), self.p_inf, self.params)


@dataclass
class TgvCase:
    reynolds: float = 100.0
    mach: float = 0.1
    gamma: float = 1.4
    prandtl: float = 0.71
    length: float = 1.0
    rho0: float = 1.0
    params: FlowParams = field(init=False)

    def __post_init__(self):
        # acoustic scaling: c0 = 1, V0 = mach; flow Reynolds = Re
        self.params = FlowParams(
            gamma=self.gamma,
            prandtl=self.prandtl,
            reynolds_acoustic=self.reynolds / self.mach,
            mach_ref=self.mach,
        )

    @property
    def p0(self) -> float:
        return 1.0 / self.gamma

    @property
    def v0(self) -> float:
        # c0^2 = gamma p0 / rho0 = 1
        return self.mach

    @property
    def t_convective(self) -> float:
        return self.length / self.v0

    @property
    def domain(self):
        s = np.pi * self.length
        return (-s, -s, -s), (s, s, s)

    def initial_state(self, x) -> np.ndarray:
        x = np.asarray(x) / self.length
        v0 = self.v0
        v = np.empty((len(x), 3))
        v[:, 0] = v0 * np.sin(x[:, 0]) * np.cos(x[:, 1]) * np.cos(x[:, 2])
        v[:, 1] = -v0 * np.cos(x[:, 0]) * np.sin(x[:, 1]) * np.cos(x[:, 2])
        v[:, 2] = 0.0
        P = self.p0 + (self.rho0 * v0**2 / 16.0) * (
            np.cos(2 * x[:, 0]) + np.cos(2 * x[:, 1])
        ) * (np.cos(2 * x[:, 2]) + 2.0)
        rho = self.rho0 * P / self.p0  # isothermal initialization
        return conserved(rho, v, P, self.params)
