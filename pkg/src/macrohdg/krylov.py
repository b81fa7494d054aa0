"""Matrix-free Krylov solvers for the reduced trace system.

Trace vectors are flat float arrays laid out per face (see assembly);
operators are callables.  GMRES uses iterative classical Gram-Schmidt (one
re-orthogonalization pass) and optional left preconditioning; FGMRES is the
flexible variant that admits an inner iterative preconditioner and tracks the
true residual in its Hessenberg recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .assembly import NS


@dataclass
class KrylovConfig:
    restart: int = 60
    max_iter: int = 400
    abs_tol: float = 1e-12
    rel_tol: float = 1e-6
    precond: str = "block_auu_cholesky"  # none | block_auu_cholesky | inner_gmres
    inner_iter: int = 20
    inner_rel_tol: float = 0.1

    def __post_init__(self):
        if self.restart < 1 or self.max_iter < 0:
            raise ValueError("restart must be >= 1 and max_iter >= 0")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class KrylovResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float
    # rows (iteration, true_residual or nan, preconditioned_residual)
    history: list = field(default_factory=list)


class PreconditionerError(RuntimeError):
    pass


def _icgs(V, j, w):
    """Classical Gram-Schmidt with one re-orthogonalization pass."""
    h = V[: j + 1] @ w
    w = w - V[: j + 1].T @ h
    h2 = V[: j + 1] @ w
    w = w - V[: j + 1].T @ h2
    h = h + h2
    return h, w


def gmres(apply_op, b, precond=None, cfg: KrylovConfig | None = None, x0=None):
    """Restarted, optionally left-preconditioned GMRES.

    Stops when the true residual satisfies
    ||b - A x|| <= max(abs_tol, rel_tol * ||b||); a non-converged result
    carries the best iterate found.
    """
    cfg = cfg or KrylovConfig()
    n = len(b)
    M = precond if precond is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else x0.copy()
    b_norm = np.linalg.norm(b)
    target = max(cfg.abs_tol, cfg.rel_tol * b_norm)
    history = []
    if b_norm == 0.0:
        return KrylovResult(np.zeros(n), True, 0, 0.0, history)
    r_true = b - apply_op(x) if x0 is not None else b.copy()
    true_norm = np.linalg.norm(r_true)
    if true_norm <= target:
        return KrylovResult(x, True, 0, true_norm, history)

    total = 0
    mb_norm = np.linalg.norm(M(b))
    pre_target = max(cfg.abs_tol, cfg.rel_tol * mb_norm)
    while total < cfg.max_iter:
        r = M(r_true)
        beta = np.linalg.norm(r)
        k = min(cfg.restart, cfg.max_iter - total)
        V = np.zeros((k + 1, n))
        H = np.zeros((k + 1, k))
        cs = np.zeros(k)
        sn = np.zeros(k)
        g = np.zeros(k + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(k):
            w = M(apply_op(V[j]))
            h, w = _icgs(V, j, w)
            H[: j + 1, j] = h
            hv = np.linalg.norm(w)
            H[j + 1, j] = hv
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            total += 1
            pre_res = abs(g[j + 1])
            history.append((total, np.nan, pre_res))
            if hv <= 1e-14 * max(1.0, beta) or pre_res <= pre_target:
                break
            if j + 1 < k:
                V[j + 1] = w / hv
        y = scipy.linalg.solve_triangular(H[:j_done, :j_done], g[:j_done])
        x = x + V[:j_done].T @ y
        r_true = b - apply_op(x)
        true_norm = np.linalg.norm(r_true)
        history[-1] = (total, true_norm, history[-1][2])
        if true_norm <= target:
            return KrylovResult(x, True, total, true_norm, history)
        # true residual lags the preconditioned estimate: tighten and resume
        pre_target = max(cfg.abs_tol, 0.1 * pre_target)
    return KrylovResult(x, False, total, true_norm, history)


def fgmres(apply_op, b, inner_precond, cfg: KrylovConfig | None = None, x0=None):
    """Flexible GMRES with a (possibly iterative) right preconditioner.

    inner_precond is a callable v -> z approximating A^{-1} v; it may change
    between iterations.  The Hessenberg recurrence tracks the true residual.
    """
    cfg = cfg or KrylovConfig()
    n = len(b)
    x = np.zeros(n) if x0 is None else x0.copy()
    b_norm = np.linalg.norm(b)
    target = max(cfg.abs_tol, cfg.rel_tol * b_norm)
    history = []
    if b_norm == 0.0:
        return KrylovResult(np.zeros(n), True, 0, 0.0, history)
    r = b - apply_op(x) if x0 is not None else b.copy()
    total = 0
    while total < cfg.max_iter:
        beta = np.linalg.norm(r)
        if beta <= target:
            return KrylovResult(x, True, total, beta, history)
        k = min(cfg.restart, cfg.max_iter - total)
        V = np.zeros((k + 1, n))
        Z = np.zeros((k, n))
        H = np.zeros((k + 1, k))
        cs = np.zeros(k)
        sn = np.zeros(k)
        g = np.zeros(k + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(k):
            Z[j] = inner_precond(V[j])
            w = apply_op(Z[j])
            h, w = _icgs(V, j, w)
            H[: j + 1, j] = h
            hv = np.linalg.norm(w)
            H[j + 1, j] = hv
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            total += 1
            res = abs(g[j + 1])
            history.append((total, res, res))
            if hv <= 1e-14 * max(1.0, beta) or res <= target:
                break
            if j + 1 < k:
                V[j + 1] = w / hv
        y = scipy.linalg.solve_triangular(H[:j_done, :j_done], g[:j_done])
        x = x + Z[:j_done].T @ y
        r = b - apply_op(x)
    return KrylovResult(x, False, total, np.linalg.norm(r), history)


def block_precond_build(cond):
    """Facewise inverse of the trace-trace block via Cholesky factors.

    Per-face blocks are symmetric positive definite up to the small viscous
    trace coupling; the symmetric part is factorized.  A non-SPD face raises
    PreconditionerError naming the face.
    """
    blocks = cond.blocks
    disc = blocks.disc
    nf = disc.mesh.n_faces
    bs = disc.Lf * NS
    B = np.zeros((nf, bs, bs))
    face_of = disc.mesh.faces_of_macro  # (m, 4)
    pi = disc.gather.reshape(disc.n_mac, 4, bs) - (face_of[:, :, None] * bs)
    np.add.at(
        B,
        (
            face_of[:, :, None, None],
            pi[:, :, :, None],
            pi[:, :, None, :],
        ),
        blocks.face_trace_trace,
    )
    B = 0.5 * (B + np.swapaxes(B, -1, -2))
    try:
        chol = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        for f in range(nf):
            try:
                np.linalg.cholesky(B[f])
            except np.linalg.LinAlgError:
                raise PreconditionerError(
                    f"trace-trace block of face {f} is not positive definite"
                )
        raise
    eye = np.eye(bs)
    inv = np.empty_like(B)
    for f in range(nf):
        inv[f] = scipy.linalg.cho_solve((chol[f], True), eye)

    def apply(v):
        vv = v.reshape(nf, bs, 1)
        return np.matmul(inv, vv).reshape(-1)

    return apply


def matvec(cond, x: np.ndarray) -> np.ndarray:
    """Matrix-free product of the reduced trace operator with x."""
    return cond.apply_trace(x)


def make_counted(fn):
    """Wrap an operator with a call counter (for iteration accounting)."""
    count = {"n": 0}

    def wrapped(v):
        count["n"] += 1
        return fn(v)

    return wrapped, count


def solve_trace_system(cond, b, cfg: KrylovConfig, solver: str = "fgmres"):
    """Solve the condensed trace system with the configured solver.

    Returns (KrylovResult, matvec_count).
    """
    op, count = make_counted(cond.apply_trace)
    if cfg.precond == "none":
        pre = None
    else:
        pre = block_precond_build(cond)
    if solver == "gmres":
        res = gmres(op, b, precond=pre, cfg=cfg)
    elif solver == "fgmres":
        inner_cfg = replace(
            cfg,
            restart=max(1, cfg.inner_iter),
            max_iter=cfg.inner_iter,
            rel_tol=cfg.inner_rel_tol,
            abs_tol=cfg.abs_tol,
        )

        def inner(v):
            if cfg.inner_iter == 0:
                return pre(v) if pre is not None else v
            return gmres(op, v, precond=pre, cfg=inner_cfg).x

        res = fgmres(op, b, inner, cfg=cfg)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return res, count["n"]
