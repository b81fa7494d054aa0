"""Macro-element tetrahedral meshes of axis-aligned boxes.

A macro-mesh stores the macro-tets and their face skeleton; the uniform
subdivision of each macro-tet into m^3 sub-elements lives in the shared
reference tabulation (`basis.ref_macro`).  Periodic faces are interior faces
with a geometric offset between their two sides.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .basis import (
    TET_FACE_VERTICES,
    lattice_size,
    ref_macro,
    subdivide_macro_tet,  # noqa: F401  (re-exported mesh-level operation)
)

INTERIOR = 0
BOUNDARY = 1
PERIODIC = 2

BOUNDARY_LABELS = ("x0", "x1", "y0", "y1", "z0", "z1")


@dataclass
class MacroMesh:
    """Conforming mesh of macro-tetrahedra with its face skeleton.

    faces arrays have one row per unique skeleton face; interior and periodic
    faces carry two incidences (macro, local_face), boundary faces one
    (second slot = -1).  `corner_map[f, side, r]` gives the position, in that
    side's local face-corner ordering, of the face's canonical corner r.
    Immutable after construction.
    """

    vertices: np.ndarray
    macro_tets: np.ndarray
    m: int
    face_macros: np.ndarray
    face_locals: np.ndarray
    face_kind: np.ndarray
    face_label: np.ndarray  # index into BOUNDARY_LABELS, -1 if interior/periodic
    corner_map: np.ndarray
    periodic_offset: np.ndarray  # translation side1 -> side0, zero otherwise
    faces_of_macro: np.ndarray = field(init=False)
    sides_of_macro: np.ndarray = field(init=False)
    jac: np.ndarray = field(init=False)
    inv_jac: np.ndarray = field(init=False)
    det: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        nm = len(self.macro_tets)
        self.faces_of_macro = np.full((nm, 4), -1, dtype=np.int64)
        self.sides_of_macro = np.full((nm, 4), -1, dtype=np.int64)
        for f in range(len(self.face_macros)):
            for side in range(2):
                mac = self.face_macros[f, side]
                if mac >= 0:
                    self.faces_of_macro[mac, self.face_locals[f, side]] = f
                    self.sides_of_macro[mac, self.face_locals[f, side]] = side
        if np.any(self.faces_of_macro < 0):
            raise AssertionError("incomplete face skeleton")

        verts = self.vertices[self.macro_tets]  # (nm, 4, 3)
        jac = np.transpose(verts[:, 1:] - verts[:, :1], (0, 2, 1))
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            raise AssertionError("macro-tet with non-positive jacobian determinant")
        self.jac = jac
        self.inv_jac = np.linalg.inv(jac)
        self.det = det

        normals = np.empty((nm, 4, 3))
        areas = np.empty((nm, 4))
        centroids = verts.mean(axis=1)
        for lf, fv in enumerate(TET_FACE_VERTICES):
            a, b, c = (verts[:, fv[0]], verts[:, fv[1]], verts[:, fv[2]])
            nvec = 0.5 * np.cross(b - a, c - a)
            area = np.linalg.norm(nvec, axis=1)
            nunit = nvec / area[:, None]
            outward = np.einsum("ij,ij->i", nunit, (a + b + c) / 3.0 - centroids)
            nunit[outward < 0] *= -1.0
            normals[:, lf] = nunit
            areas[:, lf] = area
        self.normals = normals
        self.areas = areas

    @property
    def n_macro(self) -> int:
        return len(self.macro_tets)

    @property
    def n_faces(self) -> int:
        return len(self.face_macros)

    def sub_connectivity(self, p: int) -> np.ndarray:
        """Per-macro sub-tet connectivity into the degree-(m*p) node lattice."""
        return ref_macro(self.m, p).sub_conn

    def macro_volumes(self) -> np.ndarray:
        return self.det / 6.0


def _kuhn_tets_of_cell():
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


def _orient_positive(tets: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    v = vertices[tets]
    det = np.linalg.det(np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1)))
    flip = det < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    return tets


def _build_faces(vertices, macro_tets, domain, periodic, tol):
    lo, hi = np.asarray(domain[0], float), np.asarray(domain[1], float)
    face_map: dict[tuple, list] = {}
    for mac, tet in enumerate(macro_tets):
        for lf, fv in enumerate(TET_FACE_VERTICES):
            gids = tuple(int(tet[k]) for k in fv)
            face_map.setdefault(tuple(sorted(gids)), []).append((mac, lf, gids))

    for key, incs in face_map.items():
        if len(incs) > 2:
            raise AssertionError(f"face {key} has {len(incs)} incidences")

    def boundary_code(gids):
        pts = vertices[list(gids)]
        for ax in range(3):
            if np.all(np.abs(pts[:, ax] - lo[ax]) < tol):
                return 2 * ax
            if np.all(np.abs(pts[:, ax] - hi[ax]) < tol):
                return 2 * ax + 1
        return -1

    # periodic pairing: match min-side boundary faces to max-side ones by
    # translated vertex positions
    vert_lookup = {}
    for vid, pos in enumerate(vertices):
        vert_lookup[tuple(np.round(pos / (tol * 10)).astype(np.int64))] = vid

    def find_vertex(pos):
        key = tuple(np.round(pos / (tol * 10)).astype(np.int64))
        if key in vert_lookup:
            return vert_lookup[key]
        # tolerate off-by-one quantization
        base = np.round(pos / (tol * 10)).astype(np.int64)
        for dk in itertools.product((-1, 0, 1), repeat=3):
            k = tuple(base + np.array(dk))
            if k in vert_lookup:
                return vert_lookup[k]
        raise KeyError(f"no vertex at {pos}")

    records = []  # (macros, locals, kind, label, canonical gids per side, offset)
    consumed = set()
    for key, incs in sorted(face_map.items()):
        if key in consumed:
            continue
        if len(incs) == 2:
            (m0, l0, g0), (m1, l1, g1) = incs
            records.append(((m0, m1), (l0, l1), INTERIOR, -1, (g0, g1), np.zeros(3)))
            continue
        (m0, l0, g0) = incs[0]
        code = boundary_code(g0)
        if code < 0:
            raise AssertionError("single-incidence face not on the box boundary")
        ax = code // 2
        if not periodic[ax]:
            records.append(((m0, -1), (l0, -1), BOUNDARY, code, (g0, None), np.zeros(3)))
            continue
        if code % 2 == 1:
            continue  # handled from the min side
        offset = np.zeros(3)
        offset[ax] = hi[ax] - lo[ax]
        partner_gids = tuple(find_vertex(vertices[g] + offset) for g in g0)
        pkey = tuple(sorted(partner_gids))
        if pkey not in face_map or len(face_map[pkey]) != 1:
            raise AssertionError("periodic partner face not found")
        (m1, l1, g1) = face_map[pkey][0]
        consumed.add(pkey)
        # canonical corners are the owner's; side-1 corners correspond via
        # the translation
        records.append(((m0, m1), (l0, l1), PERIODIC, -1, (g0, partner_gids, g1), -offset))

    nf = len(records)
    face_macros = np.full((nf, 2), -1, dtype=np.int64)
    face_locals = np.full((nf, 2), -1, dtype=np.int64)
    face_kind = np.zeros(nf, dtype=np.int64)
    face_label = np.full(nf, -1, dtype=np.int64)
    corner_map = np.zeros((nf, 2, 3), dtype=np.int64)
    periodic_offset = np.zeros((nf, 3))
    for f, (macs, locs, kind, label, gids, offset) in enumerate(records):
        face_macros[f] = macs
        face_locals[f] = locs
        face_kind[f] = kind
        face_label[f] = label
        periodic_offset[f] = offset
        corner_map[f, 0] = (0, 1, 2)
        if macs[1] >= 0:
            if kind == PERIODIC:
                canonical_on_side1 = gids[1]
                side1 = gids[2]
            else:
                canonical_on_side1 = gids[0]
                side1 = gids[1]
            for r, gid in enumerate(canonical_on_side1):
                corner_map[f, 1, r] = side1.index(gid)
    return face_macros, face_locals, face_kind, face_label, corner_map, periodic_offset


def build_cube_mesh(
    domain,
    n_ele_1d: int,
    m: int,
    periodic=(False, False, False),
    split: str = "kuhn",
) -> MacroMesh:
    """Structured macro-tet mesh of an axis-aligned box.

    Each of the n_ele_1d^3 sub-cubes is split into 6 macro-tets (Kuhn split,
    default) or, with split="cone12", into 12 macro-tets coning the face
    triangles to the cell center.  Periodic axes pair opposite boundary faces
    sharing their trace unknowns.
    """
    if n_ele_1d < 1:
        raise ValueError("n_ele_1d must be >= 1")
    if m < 1:
        raise ValueError("m must be >= 1")
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    if np.any(hi <= lo):
        raise ValueError("domain must have positive extent along every axis")
    if any(periodic) and split != "kuhn":
        raise ValueError("periodic meshes require the kuhn split")

    n = n_ele_1d
    h = (hi - lo) / n
    grid_ids = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    xs = [lo[ax] + h[ax] * np.arange(n + 1) for ax in range(3)]
    X, Y, Z = np.meshgrid(xs[0], xs[1], xs[2], indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)

    tets = []
    if split == "kuhn":
        cell_tets = _kuhn_tets_of_cell()
        for i, j, k in itertools.product(range(n), repeat=3):
            base = np.array([i, j, k])
            for tet in cell_tets:
                tets.append([grid_ids[tuple(base + dv)] for dv in tet])
        tets = np.array(tets, dtype=np.int64)
    elif split == "cone12":
        vertices = list(vertices)
        tets_l = []
        centers = {}
        corner_offsets = np.array(list(itertools.product((0, 1), repeat=3)))
        # the 6 cell faces as (axis, side)
        for i, j, k in itertools.product(range(n), repeat=3):
            base = np.array([i, j, k])
            cid = len(vertices)
            vertices.append(lo + h * (base + 0.5))
            centers[(i, j, k)] = cid
            for ax in range(3):
                for side in range(2):
                    offs = [o for o in corner_offsets if o[ax] == side]
                    gids = [int(grid_ids[tuple(base + o)]) for o in offs]
                    # split the quad along the diagonal through its smallest
                    # global vertex id: consistent across neighboring cells
                    quad = _cyclic_quad(gids, [vertices[g] for g in gids])
                    a = quad.index(min(gids))
                    quad = quad[a:] + quad[:a]
                    tets_l.append([quad[0], quad[1], quad[2], cid])
                    tets_l.append([quad[0], quad[2], quad[3], cid])
        vertices = np.asarray(vertices)
        tets = np.array(tets_l, dtype=np.int64)
    else:
        raise ValueError(f"unknown split {split!r}")

    tets = _orient_positive(tets, vertices)
    tol = float(np.min(h)) * 1e-8
    faces = _build_faces(vertices, tets, (lo, hi), periodic, tol)
    return MacroMesh(vertices, tets, m, *faces)


def _cyclic_quad(gids, pts):
    """Order 4 coplanar points cyclically around their centroid."""
    pts = np.asarray(pts)
    c = pts.mean(axis=0)
    d = pts - c
    nrm = np.cross(d[0], d[1])
    if np.linalg.norm(nrm) < 1e-14:
        nrm = np.cross(d[0], d[2])
    nrm = nrm / np.linalg.norm(nrm)
    e1 = d[0] / np.linalg.norm(d[0])
    e2 = np.cross(nrm, e1)
    ang = np.arctan2(d @ e2, d @ e1)
    order = np.argsort(ang)
    return [gids[i] for i in order]


def refine_uniform(mesh: MacroMesh, periodic=(False, False, False)) -> MacroMesh:
    """Red refinement: each macro-tet is split into 8 children."""
    vertices = list(mesh.vertices)
    midpoint = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = len(vertices)
            vertices.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return midpoint[key]

    children = []
    for tet in mesh.macro_tets:
        v0, v1, v2, v3 = (int(t) for t in tet)
        m01, m02, m03 = mid(v0, v1), mid(v0, v2), mid(v0, v3)
        m12, m13, m23 = mid(v1, v2), mid(v1, v3), mid(v2, v3)
        children += [
            [v0, m01, m02, m03],
            [m01, v1, m12, m13],
            [m02, m12, v2, m23],
            [m03, m13, m23, v3],
            [m01, m02, m03, m13],
            [m01, m02, m12, m13],
            [m02, m03, m13, m23],
            [m02, m12, m13, m23],
        ]
    vertices = np.asarray(vertices)
    tets = _orient_positive(np.array(children, dtype=np.int64), vertices)
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    tol = float(np.min(hi - lo)) * 1e-10
    faces = _build_faces(vertices, tets, (lo, hi), periodic, tol)
    return MacroMesh(vertices, tets, mesh.m, *faces)


def couette_mesh_family(n_refine: int, m: int) -> MacroMesh:
    """Unit-cube mesh of 12 * 8^n_refine macro-tets (cone split + refinement)."""
    mesh = build_cube_mesh(((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), 1, m, split="cone12")
    for _ in range(n_refine):
        mesh = refine_uniform(mesh)
    return mesh


def count_dofs(mesh: MacroMesh, p: int, n_s: int = 5):
    """(total local dofs, global trace dofs, local dofs per macro-element)."""
    return count_dofs_from_counts(mesh.n_macro, mesh.n_faces, mesh.m, p, n_s)


def count_dofs_from_counts(n_macro: int, n_faces: int, m: int, p: int, n_s: int = 5):
    if p < 1:
        raise ValueError("p must be >= 1")
    l_vol = lattice_size(3, m * p)
    l_face = lattice_size(2, m * p)
    dof_per_macro = n_s * 4 * l_vol
    return n_macro * dof_per_macro, n_s * n_faces * l_face, dof_per_macro


def write_vtk_mesh(mesh: MacroMesh, path, p: int = 1) -> None:
    """Dump the sub-element mesh as legacy ASCII VTK for visual inspection."""
    from .io_utils import write_vtk

    write_vtk(mesh, p, {}, path)
