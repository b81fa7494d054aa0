"""Nodal simplex bases, quadrature, geometric maps and reference macro-elements.

The volume space on a macro-tetrahedron is the continuous piecewise-P_p space
over a uniform subdivision of the reference tetrahedron into m^3 sub-tets; its
nodes form the principal lattice of degree m*p.  Everything that depends only
on (m, p) is tabulated once here and shared by all macro-elements, since all
physical macro-tets are affine images of the reference one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi, roots_legendre

MAX_QUAD_ORDER = 40

TET_VERTICES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)
# local face lf is opposite local vertex lf; vertices listed ascending
TET_FACE_VERTICES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


class QuadratureOrderError(ValueError):
    pass


def lattice_multi_indices(dim: int, n: int) -> np.ndarray:
    """Integer multi-indices (i1..i_dim) with sum <= n, in lexicographic order."""
    idx = [
        c
        for c in itertools.product(range(n + 1), repeat=dim)
        if sum(c) <= n
    ]
    return np.array(sorted(idx), dtype=np.int64)


def lattice_size(dim: int, n: int) -> int:
    if dim == 2:
        return (n + 1) * (n + 2) // 2
    if dim == 3:
        return (n + 1) * (n + 2) * (n + 3) // 6
    raise ValueError(f"unsupported dimension {dim}")


def _jacobi(x, alpha, n):
    return eval_jacobi(n, alpha, 0.0, x)


def _jacobi_deriv(x, alpha, n):
    if n == 0:
        return np.zeros_like(x)
    return 0.5 * (n + alpha + 1) * eval_jacobi(n - 1, alpha + 1.0, 1.0, x)


def _collapse_tri(x, y):
    # unit triangle -> Duffy coordinates (a, b) on [-1, 1]^2
    r = 2.0 * x - 1.0
    s = 2.0 * y - 1.0
    denom = 1.0 - s
    a = np.where(denom > 1e-14, 2.0 * (1.0 + r) / np.where(denom > 1e-14, denom, 1.0) - 1.0, -1.0)
    return a, s


def _collapse_tet(x, y, z):
    r = 2.0 * x - 1.0
    s = 2.0 * y - 1.0
    t = 2.0 * z - 1.0
    d1 = -(s + t)
    a = np.where(d1 > 1e-14, 2.0 * (1.0 + r) / np.where(d1 > 1e-14, d1, 1.0) - 1.0, -1.0)
    d2 = 1.0 - t
    b = np.where(d2 > 1e-14, 2.0 * (1.0 + s) / np.where(d2 > 1e-14, d2, 1.0) - 1.0, -1.0)
    return a, b, t


def _modes(dim: int, p: int):
    return [tuple(m) for m in lattice_multi_indices(dim, p)]


def dubiner_tri(p: int, pts: np.ndarray) -> np.ndarray:
    """Orthogonal (Dubiner) modal basis of P_p on the unit triangle."""
    a, b = _collapse_tri(pts[:, 0], pts[:, 1])
    out = np.empty((pts.shape[0], lattice_size(2, p)))
    half_1mb = 0.5 * (1.0 - b)
    for col, (i, j) in enumerate(_modes(2, p)):
        out[:, col] = _jacobi(a, 0.0, i) * _jacobi(b, 2.0 * i + 1.0, j) * half_1mb**i
    return out


def dubiner_tri_grad(p: int, pts: np.ndarray) -> np.ndarray:
    """Gradients of the triangle modal basis w.r.t. unit-triangle coordinates."""
    a, b = _collapse_tri(pts[:, 0], pts[:, 1])
    nb = lattice_size(2, p)
    out = np.empty((pts.shape[0], nb, 2))
    half_1mb = 0.5 * (1.0 - b)
    half_1pa = 0.5 * (1.0 + a)
    for col, (i, j) in enumerate(_modes(2, p)):
        fa = _jacobi(a, 0.0, i)
        dfa = _jacobi_deriv(a, 0.0, i)
        gb = _jacobi(b, 2.0 * i + 1.0, j)
        dgb = _jacobi_deriv(b, 2.0 * i + 1.0, j)
        pow_i = half_1mb**i
        pow_im1 = half_1mb ** (i - 1) if i >= 1 else np.zeros_like(b)
        dr = dfa * gb * pow_im1
        ds = dfa * gb * half_1pa * pow_im1 + fa * (dgb * pow_i - (0.5 * i) * gb * pow_im1)
        # chain rule for the unit-simplex scaling (r,s) = 2(x,y) - 1
        out[:, col, 0] = 2.0 * dr
        out[:, col, 1] = 2.0 * ds
    return out


def dubiner_tet(p: int, pts: np.ndarray) -> np.ndarray:
    """Orthogonal (Dubiner) modal basis of P_p on the unit tetrahedron."""
    a, b, c = _collapse_tet(pts[:, 0], pts[:, 1], pts[:, 2])
    out = np.empty((pts.shape[0], lattice_size(3, p)))
    half_1mb = 0.5 * (1.0 - b)
    half_1mc = 0.5 * (1.0 - c)
    for col, (i, j, k) in enumerate(_modes(3, p)):
        out[:, col] = (
            _jacobi(a, 0.0, i)
            * _jacobi(b, 2.0 * i + 1.0, j)
            * half_1mb**i
            * _jacobi(c, 2.0 * (i + j) + 2.0, k)
            * half_1mc ** (i + j)
        )
    return out


def dubiner_tet_grad(p: int, pts: np.ndarray) -> np.ndarray:
    """Gradients of the tetrahedron modal basis w.r.t. unit-tet coordinates.

    Valid at strictly interior points (quadrature points); the collapsed
    coordinate chain rule is singular on two edges.
    """
    a, b, c = _collapse_tet(pts[:, 0], pts[:, 1], pts[:, 2])
    nb = lattice_size(3, p)
    out = np.empty((pts.shape[0], nb, 3))
    h1mb = 0.5 * (1.0 - b)
    h1mc = 0.5 * (1.0 - c)
    h1pa = 0.5 * (1.0 + a)
    h1pb = 0.5 * (1.0 + b)
    for col, (i, j, k) in enumerate(_modes(3, p)):
        fa = _jacobi(a, 0.0, i)
        dfa = _jacobi_deriv(a, 0.0, i)
        gb = _jacobi(b, 2.0 * i + 1.0, j)
        dgb = _jacobi_deriv(b, 2.0 * i + 1.0, j)
        hc = _jacobi(c, 2.0 * (i + j) + 2.0, k)
        dhc = _jacobi_deriv(c, 2.0 * (i + j) + 2.0, k)
        pb_i = h1mb**i
        pb_im1 = h1mb ** (i - 1) if i >= 1 else np.zeros_like(b)
        pc_ij = h1mc ** (i + j)
        pc_ijm1 = h1mc ** (i + j - 1) if i + j >= 1 else np.zeros_like(c)

        dr = dfa * gb * hc * pb_im1 * pc_ijm1
        # d(gb * (1-b)^i/2^i)/db, with the 1/(1-c) from db/ds folded into pc_ijm1
        db_part = dgb * pb_i - (0.5 * i) * gb * pb_im1
        ds = dfa * gb * hc * h1pa * pb_im1 * pc_ijm1 + fa * db_part * hc * pc_ijm1
        dt = (
            dfa * gb * hc * h1pa * pb_im1 * pc_ijm1
            + fa * db_part * h1pb * hc * pc_ijm1
            + fa * gb * pb_i * (dhc * pc_ij - (0.5 * (i + j)) * hc * pc_ijm1)
        )
        out[:, col, 0] = 2.0 * dr
        out[:, col, 1] = 2.0 * ds
        out[:, col, 2] = 2.0 * dt
    return out


@lru_cache(maxsize=None)
def quadrature_rule(dim: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the unit simplex, exact for polynomials up to `order`.

    Collapsed Gauss-Jacobi tensor rule; weights sum to the reference measure
    (1/2 in 2D, 1/6 in 3D).
    """
    if order < 1:
        raise QuadratureOrderError("quadrature order must be >= 1")
    if order > MAX_QUAD_ORDER:
        raise QuadratureOrderError(
            f"quadrature order {order} unsupported; maximum available is {MAX_QUAD_ORDER}"
        )
    n = (order + 2) // 2
    xa, wa = roots_legendre(n)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    if dim == 2:
        A, B = np.meshgrid(xa, xb, indexing="ij")
        WA, WB = np.meshgrid(wa, wb, indexing="ij")
        r = 0.5 * (1.0 + A) * (1.0 - B) - 1.0
        s = B
        pts = np.stack([(r + 1.0) / 2.0, (s + 1.0) / 2.0], axis=-1).reshape(-1, 2)
        w = (WA * WB * 0.5).reshape(-1) / 4.0
        return pts, w
    if dim == 3:
        xc, wc = roots_jacobi(n, 2.0, 0.0)
        A, B, C = np.meshgrid(xa, xb, xc, indexing="ij")
        WA, WB, WC = np.meshgrid(wa, wb, wc, indexing="ij")
        r = 0.25 * (1.0 + A) * (1.0 - B) * (1.0 - C) - 1.0
        s = 0.5 * (1.0 + B) * (1.0 - C) - 1.0
        t = C
        pts = np.stack(
            [(r + 1.0) / 2.0, (s + 1.0) / 2.0, (t + 1.0) / 2.0], axis=-1
        ).reshape(-1, 3)
        w = (WA * WB * WC * 0.125).reshape(-1) / 8.0
        return pts, w
    raise ValueError(f"unsupported dimension {dim}")


class SimplexBasis:
    """Nodal Lagrange basis of degree p on the unit simplex (dim 2 or 3).

    Nodes sit on the equispaced principal lattice.  Values/gradients are
    obtained from an orthogonal modal basis through the generalized
    Vandermonde matrix, which keeps the construction well conditioned for
    the degrees used here (p <= 5).
    """

    def __init__(self, dim: int, p: int):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if p < 1:
            raise ValueError("p must be >= 1")
        self.dim = dim
        self.p = p
        self.multi_indices = lattice_multi_indices(dim, p)
        self.nodes = self.multi_indices.astype(float) / p
        self.n_basis = len(self.nodes)
        V = dubiner_tri(p, self.nodes) if dim == 2 else dubiner_tet(p, self.nodes)
        self._vinv = np.linalg.inv(V)

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """Basis values, shape (npts, n_basis)."""
        psi = dubiner_tri(self.p, pts) if self.dim == 2 else dubiner_tet(self.p, pts)
        return psi @ self._vinv

    def eval_grad(self, pts: np.ndarray) -> np.ndarray:
        """Basis gradients, shape (npts, n_basis, dim)."""
        dpsi = (
            dubiner_tri_grad(self.p, pts)
            if self.dim == 2
            else dubiner_tet_grad(self.p, pts)
        )
        return np.einsum("qmd,mn->qnd", dpsi, self._vinv)


@lru_cache(maxsize=None)
def simplex_basis(dim: int, p: int) -> SimplexBasis:
    return SimplexBasis(dim, p)


@dataclass(frozen=True)
class GeometricMap:
    """Affine map from the reference tetrahedron to a physical tetrahedron."""

    origin: np.ndarray
    jacobian: np.ndarray
    inverse_jacobian: np.ndarray
    det: float

    @classmethod
    def from_vertices(cls, verts: np.ndarray) -> "GeometricMap":
        jac = (verts[1:] - verts[0]).T
        det = float(np.linalg.det(jac))
        if det <= 0.0:
            raise ValueError(f"non-positive jacobian determinant {det}")
        return cls(verts[0].copy(), jac, np.linalg.inv(jac), det)

    def apply(self, ref_pts: np.ndarray) -> np.ndarray:
        return self.origin + ref_pts @ self.jacobian.T


def physical_gradient(ref_grads: np.ndarray, gmap: GeometricMap) -> np.ndarray:
    """Push reference basis gradients to physical coordinates.

    grad_x phi = J^{-T} grad_xi phi for the affine map with jacobian J.
    """
    if abs(gmap.det) < 1e-300:
        raise ValueError("singular geometric map")
    return np.einsum("...m,ml->...l", ref_grads, gmap.inverse_jacobian)


def _kuhn_cell_tets():
    # six Kuhn tets of the unit cube, as integer vertex offsets
    tets = []
    for perm in itertools.permutations(range(3)):
        v = [np.zeros(3, dtype=np.int64)]
        acc = np.zeros(3, dtype=np.int64)
        for ax in perm:
            acc = acc.copy()
            acc[ax] += 1
            v.append(acc)
        tets.append(np.array(v))
    return tets


_KUHN_TO_STD = np.array([[1, -1, 0], [0, 1, -1], [0, 0, 1]], dtype=np.int64)


def subdivide_macro_tet(m: int) -> np.ndarray:
    """Uniform subdivision of the reference tet into m^3 sub-tets.

    Returns integer vertex coordinates on the principal lattice of degree m,
    shape (m^3, 4, 3).  Sub-tets are positively oriented, non-overlapping and
    tile the reference tet exactly.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    cell_tets = _kuhn_cell_tets()
    subtets = []
    for cell in itertools.product(range(m), repeat=3):
        base = np.array(cell, dtype=np.int64)
        for tet in cell_tets:
            verts = tet + base
            # restrict the Kuhn triangulation of the cube grid to the
            # simplex {x >= y >= z}
            if all(v[0] >= v[1] >= v[2] for v in verts):
                std = verts @ _KUHN_TO_STD.T
                e = (std[1:] - std[0]).astype(float)
                if np.linalg.det(e) < 0:
                    std = std[[0, 2, 1, 3]]
                subtets.append(std)
    out = np.array(subtets, dtype=np.int64)
    if len(out) != m**3:
        raise AssertionError(f"subdivision produced {len(out)} tets, expected {m**3}")
    return out


def _tri_subdivision(m: int) -> np.ndarray:
    """Uniform subdivision of the reference triangle into m^2 integer sub-tris."""
    tris = []
    for i in range(m):
        for j in range(m - i):
            tris.append([[i, j], [i + 1, j], [i, j + 1]])
            if i + j < m - 1:
                tris.append([[i + 1, j], [i + 1, j + 1], [i, j + 1]])
    return np.array(tris, dtype=np.int64)


@dataclass(frozen=True)
class ReferenceMassInverse:
    """Mass matrix of the macro-element C0 space on the reference macro-tet."""

    mass: np.ndarray
    inverse: np.ndarray

    @property
    def size(self) -> int:
        return self.mass.shape[0]


class RefMacro:
    """Reference tabulation for macro-elements with m^3 sub-tets at degree p.

    All physical macro-tets reuse these tables; only the affine jacobian of
    the macro map differs per element.
    """

    def __init__(self, m: int, p: int, quad_order: int | None = None):
        if m < 1 or p < 1:
            raise ValueError("m and p must be >= 1")
        self.m = m
        self.p = p
        self.n_lattice = m * p
        order = quad_order if quad_order is not None else 2 * p + 1
        self.quad_order = order

        # ---- volume lattice -------------------------------------------------
        self.vol_multi = lattice_multi_indices(3, self.n_lattice)
        self.vol_coords = self.vol_multi.astype(float) / self.n_lattice
        self.n_vol = len(self.vol_multi)
        vol_lookup = {tuple(ix): i for i, ix in enumerate(self.vol_multi)}

        # ---- sub-tets and their P_p connectivity ----------------------------
        self.subtet_verts = subdivide_macro_tet(m)  # integer, degree-m lattice
        self.n_sub = len(self.subtet_verts)
        basis3 = simplex_basis(3, p)
        bm3 = basis3.multi_indices  # (n_loc, 3), sum <= p
        self.n_loc = basis3.n_basis
        conn = np.empty((self.n_sub, self.n_loc), dtype=np.int64)
        for K, verts in enumerate(self.subtet_verts):
            vp = verts * p  # on the degree m*p lattice
            for a, (ia, ib, ic) in enumerate(bm3):
                node = (p - ia - ib - ic) * vp[0] + ia * vp[1] + ib * vp[2] + ic * vp[3]
                conn[K, a] = vol_lookup[tuple(node // p)]
        self.sub_conn = conn

        # ---- volume quadrature tabulation -----------------------------------
        qp, qw = quadrature_rule(3, order)
        self.n_quad = len(qw)
        phi = basis3.eval(qp)  # (nq, n_loc)
        dphi = basis3.eval_grad(qp)  # (nq, n_loc, 3)
        self.phi_vol = phi
        gref = np.empty((self.n_sub, self.n_quad, self.n_loc, 3))
        xref = np.empty((self.n_sub, self.n_quad, 3))
        wref = np.empty((self.n_sub, self.n_quad))
        for K, verts in enumerate(self.subtet_verts):
            v = verts.astype(float) / m
            B = (v[1:] - v[0]).T
            detB = np.linalg.det(B)
            Binv = np.linalg.inv(B)
            gref[K] = np.einsum("qnm,ml->qnl", dphi, Binv)
            xref[K] = v[0] + qp @ B.T
            wref[K] = qw * abs(detB)
        self.grad_ref = gref
        self.x_ref = xref
        self.w_ref = wref

        # ---- reference mass and weak-derivative matrices --------------------
        M = np.zeros((self.n_vol, self.n_vol))
        D = np.zeros((3, self.n_vol, self.n_vol))
        for K in range(self.n_sub):
            idx = conn[K]
            mloc = np.einsum("q,qa,qb->ab", wref[K], phi, phi)
            M[np.ix_(idx, idx)] += mloc
            for l in range(3):
                dloc = np.einsum("q,qa,qb->ab", wref[K], gref[K][:, :, l], phi)
                D[l][np.ix_(idx, idx)] += dloc
        self.mass = M
        self.mass_inv = np.linalg.inv(M)
        self.weak_deriv = D  # D[l][i, j] = int phi_j d_l phi_i over ref macro
        self.mass_inv_weak_deriv = np.einsum("ij,ljk->lik", self.mass_inv, D)

        # ---- face lattice and tabulation ------------------------------------
        self.n_face_lattice = lattice_size(2, self.n_lattice)
        basis2 = simplex_basis(2, p)
        self.n_loc_face = basis2.n_basis
        qp2, qw2 = quadrature_rule(2, order)
        self.n_quad_face = len(qw2)
        self.phi_face = basis2.eval(qp2)  # (nqf, n_loc_face)
        self.tri_sub = _tri_subdivision(m)
        self.n_tri = len(self.tri_sub)

        face2_multi = lattice_multi_indices(2, self.n_lattice)
        face_lookup = {tuple(ix): i for i, ix in enumerate(face2_multi)}
        self.face_multi = face2_multi
        bm2 = basis2.multi_indices
        tri_conn = np.empty((self.n_tri, self.n_loc_face), dtype=np.int64)
        bary = np.empty((self.n_tri, self.n_quad_face, 3))
        wf = np.empty((self.n_tri, self.n_quad_face))
        for T, tv in enumerate(self.tri_sub):
            tvp = tv * p
            for a, (ia, ib) in enumerate(bm2):
                node = (p - ia - ib) * tvp[0] + ia * tvp[1] + ib * tvp[2]
                tri_conn[T, a] = face_lookup[tuple(node // p)]
            v = tv.astype(float) / m
            B = (v[1:] - v[0]).T
            x2 = v[0] + qp2 @ B.T
            bary[T, :, 1] = x2[:, 0]
            bary[T, :, 2] = x2[:, 1]
            bary[T, :, 0] = 1.0 - x2[:, 0] - x2[:, 1]
            wf[T] = qw2 * abs(np.linalg.det(B))
        self.tri_conn = tri_conn
        self.face_quad_bary = bary  # barycentric coords w.r.t. face corners
        self.w_face_ref = wf  # sums to 1/2 over all sub-tris

        Mf = np.zeros((self.n_face_lattice, self.n_face_lattice))
        for T in range(self.n_tri):
            idx = tri_conn[T]
            Mf[np.ix_(idx, idx)] += np.einsum("q,qa,qb->ab", wf[T], self.phi_face, self.phi_face)
        self.face_mass = Mf

        # volume node ids lying on each local face, ordered by the face lattice
        fvn = np.empty((4, self.n_face_lattice), dtype=np.int64)
        tet_corners_int = (TET_VERTICES * self.n_lattice).astype(np.int64)
        for lf, fverts in enumerate(TET_FACE_VERTICES):
            corners = tet_corners_int[list(fverts)]
            for g, (ia, ib) in enumerate(face2_multi):
                node = (
                    (self.n_lattice - ia - ib) * corners[0]
                    + ia * corners[1]
                    + ib * corners[2]
                )
                fvn[lf, g] = vol_lookup[tuple(node // self.n_lattice)]
        self.face_vol_nodes = fvn

    def reference_mass_inverse(self) -> ReferenceMassInverse:
        return ReferenceMassInverse(self.mass, self.mass_inv)


@lru_cache(maxsize=None)
def ref_macro(m: int, p: int, quad_order: int | None = None) -> RefMacro:
    return RefMacro(m, p, quad_order)


def assemble_reference_mass(m: int, p: int) -> ReferenceMassInverse:
    """Mass matrix (and inverse) of the C0 macro space on the reference tet."""
    return ref_macro(m, p).reference_mass_inverse()
