"""Gradient discretisations: DOF space plus piecewise-constant function and
gradient reconstructions.

Every reconstruction is stored as sparse rows over the DOFs, one row per
region on which it is constant:

* ``Pi``       (n_pi, n_dofs)   value of the function on each pi-region,
* ``Gx, Gy``   (n_grad, n_dofs) gradient components on each grad-region,
* ``ov_*``     overlap table between pi- and grad-regions, used by mixed
  integrals such as the advection coupling.

Three instantiations are provided: mass-lumped conforming P1 (CVFE),
mass-lumped Crouzeix-Raviart (MLNC-P1) and a hybrid finite volume variant.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GDMismatch, InvalidGamma, NonSimplicialMesh, PointOutsideDomain
from .mesh import build_dual, triangle_area

_ids = itertools.count(1)

# degree-2 triangle rule (barycentric points, equal weights)
_TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6],
                      [1 / 6, 2 / 3, 1 / 6],
                      [1 / 6, 1 / 6, 2 / 3]])


def triangle_quadrature(a, b, c):
    """Quadrature points (T, 3, 2) and weights (T, 3) on triangles (T, 2)."""
    area = np.abs(triangle_area(a, b, c))
    pts = (_TRI_BARY[None, :, 0, None] * a[:, None, :]
           + _TRI_BARY[None, :, 1, None] * b[:, None, :]
           + _TRI_BARY[None, :, 2, None] * c[:, None, :])
    w = np.repeat(area[:, None] / 3.0, 3, axis=1)
    return pts, w


@dataclass(frozen=True)
class Quadrature:
    """Points, weights and owning region of a region-wise quadrature."""

    points: np.ndarray
    weights: np.ndarray
    region: np.ndarray

    @classmethod
    def from_triangles(cls, a, b, c, region, scale=None):
        pts, w = triangle_quadrature(a, b, c)
        if scale is not None:
            w = w * scale[:, None]
        return cls(pts.reshape(-1, 2), w.ravel(), np.repeat(region, 3))

    @classmethod
    def concat(cls, *parts):
        return cls(np.concatenate([q.points for q in parts]),
                   np.concatenate([q.weights for q in parts]),
                   np.concatenate([q.region for q in parts]))


@dataclass(eq=False)
class GradientDiscretisation:
    name: str
    dof_count: int
    h: float
    dof_points: np.ndarray
    pi_measure: np.ndarray
    pi_center: np.ndarray
    Pi: sp.csr_matrix
    grad_measure: np.ndarray
    grad_center: np.ndarray
    Gx: sp.csr_matrix
    Gy: sp.csr_matrix
    ov_pi: np.ndarray
    ov_grad: np.ndarray
    ov_measure: np.ndarray
    ov_center: np.ndarray
    pi_quad: Quadrature
    grad_quad: Quadrature
    mesh: object
    params: dict = field(default_factory=dict)
    gid: int = field(default_factory=lambda: next(_ids))

    @property
    def mass(self):
        """Lumped mass: total pi-region measure owned by each DOF."""
        m = getattr(self, "_mass", None)
        if m is None:
            m = self.Pi.T @ self.pi_measure
            self._mass = m
        return m

    def values(self, v):
        """Plain array behind ``v``; rejects vectors of another GD."""
        if isinstance(v, DofVector):
            if v.gid != self.gid:
                raise GDMismatch(f"vector of GD #{v.gid} used with GD #{self.gid} ({self.name})")
            v = v.values
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dof_count,):
            raise GDMismatch(f"expected {self.dof_count} values, got shape {v.shape}")
        return v

    def vector(self, values):
        return DofVector(self.gid, self.values(values))

    def interpolate(self, fn):
        """Nodal interpolation: evaluate ``fn`` at each DOF's point."""
        return self.vector(np.asarray(fn(self.dof_points), dtype=float))

    def reconstruct(self, v):
        """Region values of the function and of the gradient."""
        v = self.values(v)
        return self.Pi @ v, np.column_stack([self.Gx @ v, self.Gy @ v])

    def norm(self, v, p):
        """``||Pi v||_L2 + ||grad v||_Lp`` evaluated exactly region-wise."""
        pv, g = self.reconstruct(v)
        l2 = np.sqrt(np.dot(self.pi_measure, pv ** 2))
        gn = np.hypot(g[:, 0], g[:, 1])
        lp = np.dot(self.grad_measure, gn ** p) ** (1.0 / p)
        return float(l2 + lp)

    def locate(self, points):
        """Pi-region index containing each point (for profile extraction)."""
        return self._locator(np.asarray(points, dtype=float))


@dataclass(frozen=True)
class DofVector:
    """DOF values tagged with the id of the GD they belong to."""

    gid: int
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("DOF vector has non-finite entries")

    def __len__(self):
        return len(self.values)


def norm_D(gd, v, p):
    return gd.norm(v, p)


def _find_triangle(A, B, C, points, tol=1e-10):
    """Index of a triangle containing each point and its barycentrics."""
    out = np.full(len(points), -1)
    bary = np.zeros((len(points), 3))
    area = triangle_area(A, B, C)
    for k, x in enumerate(points):
        l0 = triangle_area(np.broadcast_to(x, B.shape), B, C) / area
        l1 = triangle_area(A, np.broadcast_to(x, B.shape), C) / area
        l2 = 1.0 - l0 - l1
        inside = np.flatnonzero((l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol))
        if inside.size == 0:
            raise PointOutsideDomain(f"point {tuple(x)} lies outside the mesh")
        t = inside[0]
        out[k] = t
        bary[k] = (l0[t], l1[t], l2[t])
    return out, bary


def _p1_gradients(P):
    """Gradients (M, 3, 2) of the barycentric coordinates of triangles P."""
    area2 = 2.0 * triangle_area(P[:, 0], P[:, 1], P[:, 2])
    g = np.empty_like(P)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        g[:, k, 0] = (P[:, i, 1] - P[:, j, 1]) / area2
        g[:, k, 1] = (P[:, j, 0] - P[:, i, 0]) / area2
    return g


def _mass_lumped(mesh, kind):
    if not mesh.is_simplicial:
        raise NonSimplicialMesh(f"{kind} GD requires a simplicial mesh")
    tri = mesh.triangles()
    P = mesh.vertices[tri]
    M = len(tri)
    dual = build_dual(mesh, "vertex" if kind == "cvfe" else "face")
    n_sub = len(dual.sub_owner)
    if kind == "cvfe":
        n = mesh.n_vertices
        dof_points = mesh.vertices
        owners = tri
        grads = _p1_gradients(P)
    else:
        n = mesh.n_faces
        dof_points = mesh.face_center
        owners = dual.sub_owner.reshape(M, 3)
        # Crouzeix-Raviart basis of the face opposite vertex k: 1 - 2*lambda_k
        grads = -2.0 * _p1_gradients(P)
    Pi = sp.csr_matrix((np.ones(n_sub), (np.arange(n_sub), dual.sub_owner)),
                       shape=(n_sub, n))
    rows = np.repeat(np.arange(M), 3)
    Gx = sp.csr_matrix((grads[..., 0].ravel(), (rows, owners.ravel())), shape=(M, n))
    Gy = sp.csr_matrix((grads[..., 1].ravel(), (rows, owners.ravel())), shape=(M, n))

    if kind == "cvfe":
        poly = dual.sub_polygon
        pq = Quadrature.concat(
            Quadrature.from_triangles(poly[:, 0], poly[:, 1], poly[:, 2], np.arange(n_sub)),
            Quadrature.from_triangles(poly[:, 0], poly[:, 2], poly[:, 3], np.arange(n_sub)))
    else:
        poly = dual.sub_polygon
        pq = Quadrature.from_triangles(poly[:, 0], poly[:, 1], poly[:, 2], np.arange(n_sub))
    gq = Quadrature.from_triangles(P[:, 0], P[:, 1], P[:, 2], np.arange(M))

    def locator(points):
        t, bary = _find_triangle(P[:, 0], P[:, 1], P[:, 2], points)
        k = np.argmax(bary, axis=1) if kind == "cvfe" else np.argmin(bary, axis=1)
        return 3 * t + k

    gd = GradientDiscretisation(
        name=kind, dof_count=n, h=mesh.h, dof_points=dof_points,
        pi_measure=dual.sub_measure, pi_center=dual.sub_center, Pi=Pi,
        grad_measure=mesh.cell_area.copy(), grad_center=mesh.cell_center.copy(),
        Gx=Gx, Gy=Gy, ov_pi=np.arange(n_sub), ov_grad=dual.sub_cell,
        ov_measure=dual.sub_measure, ov_center=dual.sub_center,
        pi_quad=pq, grad_quad=gq, mesh=mesh, params={"dual": dual})
    gd._locator = locator
    return gd


def build_cvfe(mesh):
    """Mass-lumped conforming P1: vertex DOFs, vertex dual cells, P1 gradients."""
    return _mass_lumped(mesh, "cvfe")


def build_mlnc_p1(mesh):
    """Mass-lumped Crouzeix-Raviart: face DOFs, face dual cells, broken gradients."""
    return _mass_lumped(mesh, "mlnc-p1")


def build_hfv(mesh, gamma=0.3, beta=1.0):
    """Hybrid finite volume variant with cell and face unknowns.

    DOFs are ordered cells first, then faces.  A fraction ``gamma`` of each
    cell is reconstructed from the cell unknown and the rest is shared evenly
    among its faces.  The geometry of these sub-regions is never needed: their
    overlap with the half-diamonds is taken proportional to measure.

    Parameters
    ----------
    mesh : Mesh
        Any star-shaped polygonal mesh.
    gamma : float
        Cell fraction in (0, 1].  Values close to 0 are accepted but give
        oscillatory solutions.
    beta : float or array
        Per-cell stabilisation factor of the half-diamond gradient.
    """
    gamma = float(gamma)
    if not 0.0 < gamma <= 1.0:
        raise InvalidGamma(f"gamma must lie in (0, 1], got {gamma}")
    nK, nE = mesh.n_cells, mesh.n_faces
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (nK,)).copy()
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    n = nK + nE
    cf_cell = mesh.cf_cell
    cf_face = mesh.cf_face
    n_cf = len(cf_face)
    card = np.diff(mesh.cf_ptr).astype(float)
    xk = mesh.cell_point[cf_cell]
    xs = mesh.face_center[cf_face]
    nrm = mesh.cf_normal
    dist = mesh.cf_dist
    area = mesh.cell_area[cf_cell]
    sig = mesh.face_measure[cf_face]

    # pi-regions: [0, nK) cell parts, [nK, nK + n_cf) (cell, face) parts
    pi_measure = np.concatenate([gamma * mesh.cell_area,
                                 (1.0 - gamma) * area / card[cf_cell]])
    pi_center = np.concatenate([mesh.cell_center, xs])
    pi_dof = np.concatenate([np.arange(nK), nK + cf_face])
    n_pi = nK + n_cf
    Pi = sp.csr_matrix((np.ones(n_pi), (np.arange(n_pi), pi_dof)), shape=(n_pi, n))

    # grad-regions: half-diamonds, one per cell-face incidence.
    # grad = gbar_K + beta sqrt(2)/d [u_s - u_K - gbar_K.(x_s - x_K)] n
    # with gbar_K = sum_s |s| u_s n_Ks / |K|
    rows, cols, vx, vy = [], [], [], []
    for K in range(nK):
        lo, hi = mesh.cf_ptr[K], mesh.cf_ptr[K + 1]
        fK = cf_face[lo:hi]
        coef = (mesh.face_measure[fK, None] * nrm[lo:hi]) / mesh.cell_area[K]   # d gbar / d u_s
        for r in range(lo, hi):
            s = cf_face[r]
            w = beta[K] * np.sqrt(2.0) / dist[r]
            dx = xs[r] - xk[r]
            # gbar part and its projection on (x_s - x_K)
            proj = coef @ dx                                   # d(gbar.dx)/d u_s'
            gx = coef[:, 0] - w * proj * nrm[r, 0]
            gy = coef[:, 1] - w * proj * nrm[r, 1]
            rows.extend([r] * len(fK))
            cols.extend((nK + fK).tolist())
            vx.extend(gx.tolist())
            vy.extend(gy.tolist())
            # + w * (u_s - u_K) * n
            rows.extend([r, r])
            cols.extend([nK + s, K])
            vx.extend([w * nrm[r, 0], -w * nrm[r, 0]])
            vy.extend([w * nrm[r, 1], -w * nrm[r, 1]])
    Gx = sp.csr_matrix((vx, (rows, cols)), shape=(n_cf, n))
    Gy = sp.csr_matrix((vy, (rows, cols)), shape=(n_cf, n))
    Gx.sum_duplicates()
    Gy.sum_duplicates()
    grad_measure = 0.5 * sig * dist
    grad_center = (xk + 2.0 * xs) / 3.0

    # overlap: cell part covers gamma|D|, each face part (1-gamma)|D|/card
    ov_pi, ov_grad, ov_meas = [cf_cell], [np.arange(n_cf)], [gamma * grad_measure]
    for K in range(nK):
        lo, hi = mesh.cf_ptr[K], mesh.cf_ptr[K + 1]
        m = hi - lo
        D = np.arange(lo, hi)
        parts = nK + np.arange(lo, hi)
        ov_pi.append(np.repeat(parts, m))
        ov_grad.append(np.tile(D, m))
        ov_meas.append(np.tile((1.0 - gamma) * grad_measure[lo:hi] / m, m))
    ov_pi = np.concatenate(ov_pi)
    ov_grad = np.concatenate(ov_grad)
    ov_measure = np.concatenate(ov_meas)
    ov_center = grad_center[ov_grad]

    # diagnostic quadrature: cell part = half-diamonds shrunk by sqrt(gamma)
    # towards x_K, face part = the remaining strip (rescaled to its measure)
    fv = mesh.face_vertices[cf_face]
    a, b = mesh.vertices[fv[:, 0]], mesh.vertices[fv[:, 1]]
    sg = np.sqrt(gamma)
    ia, ib = xk + sg * (a - xk), xk + sg * (b - xk)
    cellq = Quadrature.from_triangles(xk, ia, ib, cf_cell)
    strip_area = (1.0 - gamma) * grad_measure
    scale = np.where(strip_area > 0,
                     pi_measure[nK:] / np.where(strip_area > 0, strip_area, 1.0), 0.0)
    faceq = Quadrature.concat(
        Quadrature.from_triangles(ia, a, b, nK + np.arange(n_cf), scale),
        Quadrature.from_triangles(ia, b, ib, nK + np.arange(n_cf), scale))
    pq = Quadrature.concat(cellq, faceq) if gamma < 1 else cellq
    gq = Quadrature.from_triangles(xk, a, b, np.arange(n_cf))

    def locator(points):
        r, _ = _find_triangle(xk, a, b, points)
        # distance to the face line, compared with the outer strip width
        dfx = np.einsum("ij,ij->i", xs[r] - points, nrm[r])
        in_strip = dfx < (1.0 - sg) * dist[r]
        return np.where(in_strip, nK + r, cf_cell[r])

    gd = GradientDiscretisation(
        name="hfv", dof_count=n, h=mesh.h,
        dof_points=np.concatenate([mesh.cell_center, mesh.face_center]),
        pi_measure=pi_measure, pi_center=pi_center, Pi=Pi,
        grad_measure=grad_measure, grad_center=grad_center, Gx=Gx, Gy=Gy,
        ov_pi=ov_pi, ov_grad=ov_grad, ov_measure=ov_measure,
        ov_center=ov_center, pi_quad=pq, grad_quad=gq, mesh=mesh,
        params={"gamma": gamma, "beta": beta})
    gd._locator = locator
    return gd


def build_gd(method, mesh, gamma=0.3, beta=1.0):
    if method == "cvfe":
        return build_cvfe(mesh)
    if method == "mlnc-p1":
        return build_mlnc_p1(mesh)
    if method == "hfv":
        return build_hfv(mesh, gamma, beta)
    raise ValueError(f"unknown method {method!r}")
