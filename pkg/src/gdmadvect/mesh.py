"""Polygonal meshes of the unit square and their dual decompositions.

Cells are stored counter-clockwise.  Faces are derived from consecutive
vertex pairs of every cell, so a hanging node simply splits the coarse side
into two faces, each shared with one fine neighbour.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, NonSimplicialMesh, ParseError

AREA_RTOL = 1e-12


def polygon_area_centroid(pts):
    """Signed area and centre of mass of a simple polygon given as (k, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def triangle_area(a, b, c):
    """Signed area of triangles, vectorised over leading axes."""
    return 0.5 * ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                  - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1]))


@dataclass(eq=False)
class Mesh:
    """Immutable 2D polygonal mesh.

    Per cell-face incidences are flattened: the faces of cell ``K`` are
    ``cf_face[cf_ptr[K]:cf_ptr[K+1]]`` with matching outward unit normals
    ``cf_normal`` and orthogonal distances ``cf_dist`` from the cell point.
    """

    vertices: np.ndarray
    cells: list
    face_vertices: np.ndarray
    face_measure: np.ndarray
    face_center: np.ndarray
    face_cells: np.ndarray
    cell_area: np.ndarray
    cell_center: np.ndarray
    cell_point: np.ndarray
    cf_ptr: np.ndarray
    cf_face: np.ndarray
    cf_normal: np.ndarray
    cf_dist: np.ndarray
    h: float
    family: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_faces(self):
        return len(self.face_vertices)

    @property
    def is_simplicial(self):
        return all(len(c) == 3 for c in self.cells)

    @property
    def cf_cell(self):
        return np.repeat(np.arange(self.n_cells), np.diff(self.cf_ptr))

    def cell_faces(self, k):
        return self.cf_face[self.cf_ptr[k]:self.cf_ptr[k + 1]]

    def boundary_faces(self):
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    def triangles(self):
        """Cell connectivity as an (M, 3) array; simplicial meshes only."""
        if not self.is_simplicial:
            raise NonSimplicialMesh("mesh has non-triangular cells")
        return np.asarray(self.cells, dtype=np.int64).reshape(-1, 3)

    def check(self):
        """Raise GeometryError unless the geometric invariants hold."""
        total = self.cell_area.sum()
        if abs(total - 1.0) > AREA_RTOL * 10:
            raise GeometryError(f"cell areas sum to {total!r}, expected 1")
        if np.any(self.cell_area <= 0):
            raise GeometryError("non-positive cell area")
        nb = (self.face_cells >= 0).sum(axis=1)
        if np.any(nb < 1):
            raise GeometryError("face without adjacent cell")
        on_bnd = _on_unit_square_boundary(self.face_center)
        if np.any((nb == 1) != on_bnd):
            raise GeometryError("boundary faces do not match the domain boundary")
        closure = np.zeros((self.n_cells, 2))
        np.add.at(closure, self.cf_cell,
                  self.face_measure[self.cf_face, None] * self.cf_normal)
        if np.abs(closure).max() > 1e-12:
            raise GeometryError("cell boundary is not closed")
        if np.any(self.cf_dist <= 0):
            raise GeometryError("cell point is not strictly inside a cell")
        starts = np.concatenate([np.asarray(c) for c in self.cells])
        ends = np.concatenate([np.roll(np.asarray(c), -1) for c in self.cells])
        sub = triangle_area(self.cell_point[self.cf_cell],
                            self.vertices[starts], self.vertices[ends])
        if np.any(sub <= 0):
            raise GeometryError("cell is not star-shaped w.r.t. its cell point")
        return self


def _on_unit_square_boundary(pts, tol=1e-12):
    x, y = pts[:, 0], pts[:, 1]
    return ((np.abs(x) < tol) | (np.abs(x - 1) < tol)
            | (np.abs(y) < tol) | (np.abs(y - 1) < tol))


def build_mesh(vertices, cells, h=None, family="custom", meta=None,
               cell_points=None):
    """Derive faces, measures and normals from vertices and cell lists.

    Cells given clockwise are reoriented.  ``h`` defaults to the maximum cell
    diameter.
    """
    vertices = np.asarray(vertices, dtype=float)
    oriented = []
    areas, centers = [], []
    for c in cells:
        c = [int(v) for v in c]
        a, g = polygon_area_centroid(vertices[c])
        if a < 0:
            c = c[::-1]
            a = -a
        oriented.append(tuple(c))
        areas.append(a)
        centers.append(g)
    cell_area = np.array(areas)
    cell_center = np.array(centers).reshape(-1, 2)
    cell_point = cell_center.copy() if cell_points is None else np.asarray(cell_points, float)

    face_index = {}
    fverts, fcells = [], []
    cf_ptr = [0]
    cf_face = []
    for k, c in enumerate(oriented):
        m = len(c)
        for i in range(m):
            a, b = c[i], c[(i + 1) % m]
            key = (a, b) if a < b else (b, a)
            f = face_index.get(key)
            if f is None:
                f = len(fverts)
                face_index[key] = f
                fverts.append((a, b))
                fcells.append([k, -1])
            else:
                if fcells[f][1] >= 0:
                    raise GeometryError(f"face {key} shared by more than two cells")
                fcells[f][1] = k
            cf_face.append(f)
        cf_ptr.append(len(cf_face))
    face_vertices = np.array(fverts, dtype=np.int64).reshape(-1, 2)
    face_cells = np.array(fcells, dtype=np.int64).reshape(-1, 2)
    pa, pb = vertices[face_vertices[:, 0]], vertices[face_vertices[:, 1]]
    face_measure = np.hypot(*(pb - pa).T)
    face_center = 0.5 * (pa + pb)

    cf_ptr = np.array(cf_ptr, dtype=np.int64)
    cf_face = np.array(cf_face, dtype=np.int64)
    cf_cell = np.repeat(np.arange(len(oriented)), np.diff(cf_ptr))
    # outward normal of the ccw edge a->b is (dy, -dx)/|ab|
    starts = np.concatenate([np.array(c) for c in oriented]) if oriented else np.zeros(0, int)
    ends = np.concatenate([np.roll(np.array(c), -1) for c in oriented]) if oriented else np.zeros(0, int)
    d = vertices[ends] - vertices[starts]
    ln = np.hypot(d[:, 0], d[:, 1])
    cf_normal = np.column_stack([d[:, 1], -d[:, 0]]) / ln[:, None]
    cf_dist = np.einsum("ij,ij->i", face_center[cf_face] - cell_point[cf_cell], cf_normal)

    if h is None:
        h = max(_diameter(vertices[list(c)]) for c in oriented)
    return Mesh(vertices=vertices, cells=oriented, face_vertices=face_vertices,
                face_measure=face_measure, face_center=face_center,
                face_cells=face_cells, cell_area=cell_area,
                cell_center=cell_center, cell_point=cell_point, cf_ptr=cf_ptr,
                cf_face=cf_face, cf_normal=cf_normal, cf_dist=cf_dist,
                h=float(h), family=family, meta=dict(meta or {}))


def _diameter(pts):
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def generate_triangular_mesh(n):
    """Uniform n-by-n grid of the unit square, every square cut along the
    same diagonal.  Mesh size ``h = sqrt(2)/n``."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = i + (n + 1) * j
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return build_mesh(vertices, cells, h=np.sqrt(2.0) / n, family="tri",
                      meta={"n": n})


def generate_refined_nonconforming_mesh(level):
    """Rectangular 2^level grid with the quadrant [0, 1/2]^2 refined once more.

    Coarse cells bordering the refined quadrant carry the hanging node as an
    extra (collinear) polygon vertex, so each fine face is its own face.
    """
    level = int(level)
    if level < 1:
        raise ValueError("level must be >= 1")
    nc = 2 ** level
    nf = 2 * nc
    # vertices on the fine lattice (i, j) in [0, nf]^2, created lazily
    index = {}
    verts = []

    def vid(i, j):
        key = (i, j)
        v = index.get(key)
        if v is None:
            v = len(verts)
            index[key] = v
            verts.append((i / nf, j / nf))
        return v

    def refined(i, j):
        # fine-lattice cell (i, j) of unit size lies in the refined quadrant
        return i < nf // 2 and j < nf // 2

    cells = []
    half = nc // 2
    for J in range(nc):
        for I in range(nc):
            if I < half and J < half:
                for dj in range(2):
                    for di in range(2):
                        i, j = 2 * I + di, 2 * J + dj
                        cells.append([vid(i, j), vid(i + 1, j),
                                      vid(i + 1, j + 1), vid(i, j + 1)])
                continue
            i0, j0 = 2 * I, 2 * J
            poly = [vid(i0, j0)]
            # bottom side: hanging node if the cell below is refined
            if J > 0 and refined(i0, j0 - 1):
                poly.append(vid(i0 + 1, j0))
            poly.append(vid(i0 + 2, j0))
            poly.append(vid(i0 + 2, j0 + 2))
            # left side (traversed top to bottom): hanging if left cell refined
            poly.append(vid(i0, j0 + 2))
            if I > 0 and refined(i0 - 1, j0):
                poly.append(vid(i0, j0 + 1))
            cells.append(poly)
    return build_mesh(np.array(verts), cells, family="refined",
                      meta={"level": level})


@dataclass(eq=False)
class DualDecomposition:
    """Sub-cell partition attached to the vertices or faces of a simplicial
    mesh.

    ``sub_*`` arrays run over (cell, local index) with local index ``k``
    referring to the k-th vertex (vertex kind) or the face opposite the k-th
    vertex (face kind).  ``sub_polygon`` holds the 4 (vertex kind, quad) or 3
    (face kind, triangle) corner points.
    """

    kind: str
    region_measure: np.ndarray
    sub_owner: np.ndarray
    sub_cell: np.ndarray
    sub_measure: np.ndarray
    sub_center: np.ndarray
    sub_polygon: np.ndarray
    seg_cell: np.ndarray = None
    seg_pair: np.ndarray = None
    seg_mid: np.ndarray = None
    seg_length: np.ndarray = None
    seg_normal: np.ndarray = None
    seg_ends: np.ndarray = None


def _opposite_face(mesh):
    """(M, 3) face ids: entry k is the face opposite local vertex k."""
    tri = mesh.triangles()
    lookup = {tuple(sorted(fv)): f for f, fv in enumerate(mesh.face_vertices.tolist())}
    out = np.empty_like(tri)
    for k in range(3):
        a, b = tri[:, (k + 1) % 3], tri[:, (k + 2) % 3]
        out[:, k] = [lookup[(min(x, y), max(x, y))] for x, y in zip(a.tolist(), b.tolist())]
    return out


def build_dual(mesh, kind):
    """Vertex-dual (CVFE) or face-dual (non-conforming P1) decomposition."""
    if kind not in ("vertex", "face"):
        raise ValueError(f"unknown dual kind {kind!r}")
    if not mesh.is_simplicial:
        raise NonSimplicialMesh("dual cells require a simplicial mesh")
    tri = mesh.triangles()
    P = mesh.vertices[tri]                      # (M, 3, 2)
    c = P.mean(axis=1)                          # centroids
    M = len(tri)
    if kind == "vertex":
        nxt = P[:, [1, 2, 0], :]
        prv = P[:, [2, 0, 1], :]
        m_next = 0.5 * (P + nxt)
        m_prev = 0.5 * (P + prv)
        cc = np.broadcast_to(c[:, None, :], P.shape)
        poly = np.stack([P, m_next, cc, m_prev], axis=2)   # (M, 3, 4, 2)
        # quad = two triangles (v, m_next, c) and (v, c, m_prev)
        a1 = triangle_area(P, m_next, cc)
        a2 = triangle_area(P, cc, m_prev)
        g1 = (P + m_next + cc) / 3.0
        g2 = (P + cc + m_prev) / 3.0
        meas = a1 + a2
        cent = (a1[..., None] * g1 + a2[..., None] * g2) / meas[..., None]
        owner = tri
        region = np.zeros(mesh.n_vertices)
        np.add.at(region, owner.ravel(), meas.ravel())

        # dual interfaces: for the edge (k, k+1) the segment from its midpoint
        # to the centroid separates the regions of those two vertices
        i = tri
        j = tri[:, [1, 2, 0]]
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        mid_edge = m_next
        d = cc - mid_edge
        length = np.hypot(d[..., 0], d[..., 1])
        nrm = np.stack([d[..., 1], -d[..., 0]], axis=-1) / length[..., None]
        toward = mesh.vertices[hi] - mesh.vertices[lo]
        sgn = np.sign(np.einsum("...k,...k->...", nrm, toward))
        nrm = nrm * sgn[..., None]
        return DualDecomposition(
            kind=kind, region_measure=region,
            sub_owner=owner.ravel(), sub_cell=np.repeat(np.arange(M), 3),
            sub_measure=meas.ravel(), sub_center=cent.reshape(-1, 2),
            sub_polygon=poly.reshape(-1, 4, 2),
            seg_cell=np.repeat(np.arange(M), 3),
            seg_pair=np.column_stack([lo.ravel(), hi.ravel()]),
            seg_mid=(0.5 * (mid_edge + cc)).reshape(-1, 2),
            seg_length=length.ravel(), seg_normal=nrm.reshape(-1, 2),
            seg_ends=np.stack([mid_edge, cc], axis=2).reshape(-1, 2, 2))

    opp = _opposite_face(mesh)
    a = P[:, [1, 2, 0], :]
    b = P[:, [2, 0, 1], :]
    cc = np.broadcast_to(c[:, None, :], P.shape)
    meas = triangle_area(a, b, cc)
    cent = (a + b + cc) / 3.0
    region = np.zeros(mesh.n_faces)
    np.add.at(region, opp.ravel(), meas.ravel())
    return DualDecomposition(
        kind=kind, region_measure=region, sub_owner=opp.ravel(),
        sub_cell=np.repeat(np.arange(M), 3), sub_measure=meas.ravel(),
        sub_center=cent.reshape(-1, 2),
        sub_polygon=np.stack([a, b, cc], axis=2).reshape(-1, 3, 2))


def write_mesh(mesh, path):
    lines = ["gdmmesh 1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join([str(len(c))] + [str(v) for v in c]) for c in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh(path):
    """Parse the ``gdmmesh 1`` text format and rebuild all derived geometry."""
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    it = iter(lines)

    def nxt(what):
        try:
            return next(it)
        except StopIteration:
            raise ParseError(f"unexpected end of file, expected {what}",
                             len(raw)) from None

    lno, ln = nxt("header")
    if ln.split() != ["gdmmesh", "1"]:
        raise ParseError(f"bad header {ln!r}", lno)

    def count(keyword):
        lno, ln = nxt(keyword)
        parts = ln.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise ParseError(f"expected '{keyword} N'", lno)
        try:
            n = int(parts[1])
        except ValueError:
            raise ParseError(f"bad count {parts[1]!r}", lno) from None
        if n < 0:
            raise ParseError("negative count", lno)
        return n

    nv = count("vertices")
    verts = []
    for _ in range(nv):
        lno, ln = nxt("vertex")
        parts = ln.split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ParseError(f"bad vertex line {ln!r}", lno) from None
    nc = count("cells")
    cells = []
    for _ in range(nc):
        lno, ln = nxt("cell")
        try:
            ids = [int(t) for t in ln.split()]
        except ValueError:
            raise ParseError(f"bad cell line {ln!r}", lno) from None
        if len(ids) < 4 or ids[0] != len(ids) - 1:
            raise ParseError("cell line must read 'k v1 ... vk' with k >= 3", lno)
        for v in ids[1:]:
            if not 0 <= v < nv:
                raise ParseError(f"cell references missing vertex {v}", lno)
        cells.append(ids[1:])
    extra = next(it, None)
    if extra is not None:
        raise ParseError("trailing content", extra[0])
    return build_mesh(np.array(verts).reshape(-1, 2), cells).check()
