"""Nonlinear and temporal drivers.

Steady problems use pseudo-transient continuation: the pseudo time step only
augments the state mass block of the jacobian and grows by successive
evolution relaxation as the residual falls.  Unsteady problems advance with
diagonally implicit Runge-Kutta stages, each solved by the same Newton loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .assembly import Discretization, FieldState, StageContext, jacobian, residual
from .condense import FactorizationError, condense
from .krylov import KrylovConfig, PreconditionerError, solve_trace_system
from .physics import AdmissibilityError

RECOVERABLE = (AdmissibilityError, FactorizationError, PreconditionerError)


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DirkTableau:
    """Butcher data plus the inverse-coefficient form used by the stage solves."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a, b, c = self.a, self.b, self.c
        if not np.allclose(a, np.tril(a)):
            raise ValueError("DIRK matrix must be lower triangular")
        if np.any(np.abs(np.diag(a)) < 1e-14):
            raise ValueError("DIRK matrix must have a nonsingular diagonal")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ValueError("inconsistent tableau: sum(b) != 1")
        if not np.allclose(a.sum(axis=1), c, atol=1e-12):
            raise ValueError("inconsistent tableau: row sums of a != c")

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def d(self) -> np.ndarray:
        return np.linalg.inv(self.a)

    @property
    def e(self) -> np.ndarray:
        return self.b @ self.d

    @classmethod
    def implicit_euler(cls) -> "DirkTableau":
        return cls(np.array([[1.0]]), np.array([1.0]), np.array([1.0]))

    @classmethod
    def dirk22(cls) -> "DirkTableau":
        g = 1.0 - np.sqrt(2.0) / 2.0
        return cls(
            np.array([[g, 0.0], [1.0 - g, g]]),
            np.array([1.0 - g, g]),
            np.array([g, 1.0]),
        )

    @classmethod
    def dirk33(cls) -> "DirkTableau":
        # 3-stage, 3rd order, L-stable; alpha is the root of
        # x^3 - 3x^2 + 3x/2 - 1/6 in (1/6, 1/2)
        alpha = brentq(lambda x: x**3 - 3 * x**2 + 1.5 * x - 1.0 / 6.0, 1 / 6, 1 / 2)
        c2 = (1.0 + alpha) / 2.0
        b1 = -(6 * alpha**2 - 16 * alpha + 1.0) / 4.0
        b2 = (6 * alpha**2 - 20 * alpha + 5.0) / 4.0
        a = np.array([[alpha, 0, 0], [c2 - alpha, alpha, 0], [b1, b2, alpha]])
        return cls(a, np.array([b1, b2, alpha]), np.array([alpha, c2, 1.0]))


def tableau_by_name(name: str) -> DirkTableau:
    table = {
        "euler": DirkTableau.implicit_euler,
        "dirk22": DirkTableau.dirk22,
        "dirk33": DirkTableau.dirk33,
    }
    if name not in table:
        raise ValueError(f"unknown tableau {name!r}; choose from {sorted(table)}")
    return table[name]()


@dataclass
class PtcState:
    """Pseudo-transient continuation step with SER growth."""

    dtau: float = 1.0
    tau_init: float = 1.0
    tau_max: float = 1e8
    prev_res: float | None = None
    printed_ratio: bool = False  # grow with new/old instead of old/new

    def update(self, res_u: float) -> None:
        if self.prev_res is not None and res_u > 0.0:
            ratio = (
                res_u / self.prev_res if self.printed_ratio else self.prev_res / res_u
            )
            self.dtau = min(self.dtau * ratio, self.tau_max)
        self.prev_res = res_u

    def halve(self) -> None:
        self.dtau = max(self.dtau / 2.0, 1e-12)


@dataclass
class NewtonStats:
    converged: bool = False
    iterations: int = 0
    residuals: list = field(default_factory=list)
    res_u: list = field(default_factory=list)
    dtau: list = field(default_factory=list)
    krylov_matvecs: int = 0
    krylov_iterations: int = 0
    linear_converged: int = 0
    timings: dict = field(default_factory=lambda: {
        "assembly": 0.0, "condense": 0.0, "krylov": 0.0, "recover": 0.0,
        "local_matvec": 0.0,
    })


def _full_norm(res) -> float:
    return float(np.sqrt(sum(float((r**2).sum()) for r in res)))


def newton_solve(
    disc: Discretization,
    fields: FieldState,
    ctx: StageContext,
    linear_path: str = "schur",
    krylov_cfg: KrylovConfig | None = None,
    solver: str = "fgmres",
    abs_tol: float = 1e-12,
    rel_tol: float = 1e-6,
    max_newton: int = 60,
    ptc: PtcState | None = None,
    max_retries: int = 10,
    log=None,
) -> NewtonStats:
    """Newton iteration on the coupled residuals; updates `fields` in place.

    Each iteration assembles the jacobian, condenses it, solves the reduced
    trace system and recovers the local updates.  With a PtcState the
    jacobian carries the pseudo-time mass term and the step grows by SER;
    admissibility failures or a residual blow-up halve the pseudo step and
    retry from the last accepted state.
    """
    krylov_cfg = krylov_cfg or KrylovConfig()
    stats = NewtonStats()
    res = residual(disc, fields, ctx)
    res_norm = _full_norm(res)
    target = max(abs_tol, rel_tol * res_norm)
    stats.residuals.append(res_norm)
    stats.res_u.append(float(np.linalg.norm(res[1])))
    if ptc is not None:
        ptc.prev_res = stats.res_u[-1]

    for it in range(max_newton):
        if res_norm <= target:
            stats.converged = True
            break
        retries = 0
        while True:
            cur_ctx = ctx
            if ptc is not None:
                cur_ctx = StageContext(
                    ctx.dt_coeff, ctx.hist, ptc.dtau, ptc.dtau
                )
                stats.dtau.append(ptc.dtau)
            try:
                t0 = time.perf_counter()
                blocks, _ = jacobian(disc, fields, cur_ctx)
                t1 = time.perf_counter()
                cond = condense(blocks, linear_path)
                t2 = time.perf_counter()
                b = cond.rhs(*res)
                lin, nmv = solve_trace_system(cond, b, krylov_cfg, solver)
                t3 = time.perf_counter()
                du, dq = cond.recover(res[0], res[1], lin.x)
                t4 = time.perf_counter()
                stats.timings["assembly"] += t1 - t0
                stats.timings["condense"] += t2 - t1
                stats.timings["krylov"] += t3 - t2
                stats.timings["recover"] += t4 - t3
                stats.krylov_matvecs += nmv
                stats.krylov_iterations += lin.iterations
                stats.linear_converged += int(lin.converged)
                trial = FieldState(fields.u + du, fields.q + dq, fields.uhat + lin.x)
                new_res = residual(disc, trial, ctx)
                new_norm = _full_norm(new_res)
                if not np.isfinite(new_norm) or new_norm > 100.0 * max(
                    res_norm, abs_tol
                ):
                    raise AdmissibilityError("residual growth", new_norm)
                break
            except RECOVERABLE:
                retries += 1
                if ptc is None or retries > max_retries:
                    raise
                ptc.halve()
        fields.u, fields.q, fields.uhat = trial.u, trial.q, trial.uhat
        res, res_norm = new_res, new_norm
        stats.iterations = it + 1
        stats.residuals.append(res_norm)
        stats.res_u.append(float(np.linalg.norm(res[1])))
        if ptc is not None:
            ptc.update(stats.res_u[-1])
        if log is not None:
            log(stats)
    else:
        stats.converged = res_norm <= target
    return stats


def ptc_steady_solve(
    disc: Discretization,
    fields: FieldState,
    linear_path: str = "schur",
    krylov_cfg: KrylovConfig | None = None,
    solver: str = "fgmres",
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-8,
    max_newton: int = 120,
    tau_init: float = 1.0,
    tau_max: float = 1e8,
    ser_printed_ratio: bool = False,
    log=None,
) -> tuple[NewtonStats, PtcState]:
    """Drive the steady residual to tolerance with PTC + SER."""
    ptc = PtcState(dtau=tau_init, tau_init=tau_init, tau_max=tau_max,
                   printed_ratio=ser_printed_ratio)
    stats = newton_solve(
        disc,
        fields,
        StageContext.steady(),
        linear_path=linear_path,
        krylov_cfg=krylov_cfg,
        solver=solver,
        abs_tol=abs_tol,
        rel_tol=rel_tol,
        max_newton=max_newton,
        ptc=ptc,
        log=log,
    )
    if not stats.converged:
        raise NonConvergenceError(
            f"steady solve stalled at residual {stats.residuals[-1]:.3e} "
            f"after {stats.iterations} Newton iterations"
        )
    return stats, ptc


def dirk_advance(
    disc: Discretization,
    fields: FieldState,
    dt: float,
    tableau: DirkTableau,
    linear_path: str = "schur",
    krylov_cfg: KrylovConfig | None = None,
    solver: str = "fgmres",
    abs_tol: float = 1e-12,
    rel_tol: float = 1e-8,
    max_newton: int = 30,
    max_dt_retries: int = 4,
):
    """One implicit RK step; returns (stage stats list, dt actually used).

    Stage systems are solved in place sequentially; the final combination
    uses the inverse-coefficient weights.  Tableaus whose last abscissa is
    not 1 would need an extra trace/gradient recovery solve after the
    combination and are rejected here (both shipped tableaus end at c_s = 1,
    which makes the recovery solve redundant).
    """
    if abs(tableau.c[-1] - 1.0) > 1e-12:
        raise NotImplementedError(
            "tableaus with c_s != 1 require a trailing trace/gradient solve"
        )
    d = tableau.d
    e = tableau.e
    u_old = fields.u.copy()
    start = fields.copy()
    dt_cur = float(dt)
    for attempt in range(max_dt_retries + 1):
        try:
            all_stats = []
            stage_states = []
            for i in range(tableau.stages):
                ctx = StageContext.dirk_stage(dt_cur, d[i], i, stage_states, u_old)
                st = newton_solve(
                    disc,
                    fields,
                    ctx,
                    linear_path=linear_path,
                    krylov_cfg=krylov_cfg,
                    solver=solver,
                    abs_tol=abs_tol,
                    rel_tol=rel_tol,
                    max_newton=max_newton,
                )
                if not st.converged:
                    raise NonConvergenceError(f"stage {i} did not converge")
                all_stats.append(st)
                stage_states.append(fields.u.copy())
            break
        except (NonConvergenceError, *RECOVERABLE):
            if attempt == max_dt_retries:
                raise
            dt_cur *= 0.5
            fields.u[:] = start.u
            fields.q[:] = start.q
            fields.uhat[:] = start.uhat
    u_new = (1.0 - e.sum()) * u_old
    for j in range(tableau.stages):
        u_new += e[j] * stage_states[j]
    fields.u[:] = u_new
    return all_stats, dt_cur


def cfl_timestep(h_char: float, v0: float, p: int, cfl: float) -> float:
    """dt = CFL * h / (V0 (p+1))."""
    if h_char <= 0 or v0 <= 0 or p < 0 or cfl <= 0:
        raise ValueError("cfl_timestep arguments must be positive")
    return cfl * h_char / (v0 * (p + 1))


def dirk_scalar_solve(f, dfdu, u0: float, t_end: float, n_steps: int,
                      tableau: DirkTableau) -> float:
    """Integrate the scalar ODE u' = f(t, u) with the same stage algebra as
    the PDE driver (order-verification oracle)."""
    d = tableau.d
    e = tableau.e
    dt = t_end / n_steps
    u = float(u0)
    t = 0.0
    for _ in range(n_steps):
        stages = []
        for i in range(tableau.stages):
            ti = t + tableau.c[i] * dt
            expl = sum(d[i, j] * (stages[j] - u) for j in range(i)) / dt
            ui = stages[i - 1] if i else u

            def g(x):
                return expl + d[i, i] * (x - u) / dt - f(ti, x)

            def dg(x):
                return d[i, i] / dt - dfdu(ti, x)

            for _ in range(60):
                step = g(ui) / dg(ui)
                ui -= step
                if abs(step) < 1e-14 * max(1.0, abs(ui)):
                    break
            stages.append(ui)
        u = (1.0 - e.sum()) * u + sum(e[j] * stages[j] for j in range(tableau.stages))
        t += dt
    return u
