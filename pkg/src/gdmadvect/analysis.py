"""Post-processing: final-time error norms, convergence tables, profiles,
energy budgets and sampled estimators of the consistency and
limit-conformity measures of a gradient discretisation.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BoundaryFluxNonzero, GDMError, PointOutsideDomain
from .gd import build_gd


@dataclass
class ErrorReport:
    h: float
    errl1: float
    errl2: float
    errlinf: float
    rates: dict
    umin: float
    umax: float
    dof_count: int = 0
    failed: str | None = None


def compute_errors(gd, u, reference, q=2, t=None):
    """Weighted discrete ``L^q`` error against ``reference`` at the DOF points.

    Each DOF carries the measure of the pi-regions it reconstructs (vertex
    dual cell, face dual cell, or the gamma-split of HFV), so the same formula
    serves every discretisation.  ``q = inf`` is the unweighted maximum.

    ``reference`` is either an array of nodal values or a callable
    ``reference(points)`` (``reference(points, t)`` when ``t`` is given).
    """
    u = gd.values(u)
    if callable(reference):
        ref = reference(gd.dof_points) if t is None else reference(gd.dof_points, t)
    else:
        ref = np.asarray(reference, dtype=float)
    d = np.abs(u - ref)
    if q == np.inf or q == "inf":
        return float(d.max())
    q = float(q)
    return float(np.dot(gd.mass, d ** q) ** (1.0 / q))


def _rate(e_prev, e, h_prev, h):
    if not (e_prev > 0 and e > 0) or h_prev == h or not (h_prev > 0 and h > 0):
        return None
    return math.log(e_prev / e) / math.log(h_prev / h)


def error_report(gd, u, reference, t=None, previous=None):
    ref = reference(gd.dof_points) if t is None else reference(gd.dof_points, t)
    vals = gd.values(u)
    e1 = compute_errors(gd, vals, ref, 1)
    e2 = compute_errors(gd, vals, ref, 2)
    ei = compute_errors(gd, vals, ref, np.inf)
    rates = {"l1": None, "l2": None, "linf": None}
    if previous is not None and previous.failed is None:
        rates = {"l1": _rate(previous.errl1, e1, previous.h, gd.h),
                 "l2": _rate(previous.errl2, e2, previous.h, gd.h),
                 "linf": _rate(previous.errlinf, ei, previous.h, gd.h)}
    return ErrorReport(h=gd.h, errl1=e1, errl2=e2, errlinf=ei, rates=rates,
                       umin=float(vals.min()), umax=float(vals.max()),
                       dof_count=gd.dof_count)


def convergence_study(problem, method, meshes, config, gamma=0.3, beta=1.0,
                      on_run=None):
    """Run ``method`` on each mesh and tabulate final-time errors and rates.

    A failing refinement is kept as a row with ``failed`` set and NaN errors;
    the following rate is left blank.
    """
    from .scheme import run
    from .upstream import run_upwind

    if len(meshes) < 1:
        raise ValueError("at least one refinement is required")
    reports = []
    prev = None
    for mesh in meshes:
        try:
            if method == "upwind":
                rec, gd = run_upwind(mesh, problem, config)
            else:
                gd = build_gd(method, mesh, gamma, beta)
                rec = run(gd, problem, config)
            rep = error_report(gd, rec.u_final, problem.reference, problem.T, prev)
            if on_run is not None:
                on_run(rec, gd)
        except GDMError as exc:
            rep = ErrorReport(h=mesh.h, errl1=math.nan, errl2=math.nan, errlinf=math.nan,
                              rates={"l1": None, "l2": None, "linf": None},
                              umin=math.nan, umax=math.nan, failed=str(exc))
        reports.append(rep)
        prev = rep
    return reports


TABLE_COLUMNS = ["h", "errl2", "rate2", "errl1", "rate1", "errlinf", "rateinf", "umin", "umax"]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.9e}"


def table_rows(reports):
    return [[_fmt(r.h), _fmt(r.errl2), _fmt(r.rates["l2"]), _fmt(r.errl1),
             _fmt(r.rates["l1"]), _fmt(r.errlinf), _fmt(r.rates["linf"]),
             _fmt(r.umin), _fmt(r.umax)] for r in reports]


def to_csv(header, rows, comments=()):
    """CSV text with optional leading ``# key=value`` comment lines."""
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def extract_profile(gd, u, a, b, samples):
    """Values of ``Pi_D u`` at ``samples`` equispaced points of segment [a, b].

    Returns a list of ``(s, value)`` with ``s`` the arc length from ``a``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    s = np.array([0.0]) if samples == 1 else np.linspace(0.0, length, samples)
    direction = (b - a) / length if length > 0 else np.zeros(2)
    pts = a + s[:, None] * direction
    tol = 1e-12
    if np.any(pts < -tol) or np.any(pts > 1 + tol):
        raise PointOutsideDomain("profile segment leaves the unit square")
    pts = np.clip(pts, 0.0, 1.0)
    region = gd.locate(pts)
    vals = gd.Pi[region] @ gd.values(u)
    return list(zip(s.tolist(), np.asarray(vals).tolist()))


ENERGY_COLUMNS = ["k", "t", "kinetic", "reaction", "stabilisation", "stab_p", "source",
                  "advection", "slack", "scale"]


def energy_budget(record):
    """Cumulative energy terms per step and the slack of the energy inequality.

    ``slack = source - (kinetic_k - kinetic_0) - reaction - stabilisation``,
    all terms cumulated up to step ``k``.  It is ``>= 0`` for theta >= 1/2
    and vanishes up to rounding for theta = 1/2 (advection work excluded; it
    is zero for the skew-symmetric form).  ``scale`` is the sum of the
    magnitudes entering the balance, for relative checks.
    """
    k0 = record.kinetic0
    rows = [{"k": 0, "t": record.times[0], "kinetic": k0, "reaction": 0.0,
             "stabilisation": 0.0, "stab_p": 0.0, "source": 0.0, "advection": 0.0,
             "slack": 0.0, "scale": abs(k0)}]
    cum = {"reaction": 0.0, "stabilisation": 0.0, "stab_p": 0.0, "source": 0.0,
           "advection": 0.0}
    abs_src = 0.0
    for k, st in enumerate(record.steps, start=1):
        cum["reaction"] += st.get("reaction", 0.0)
        cum["stabilisation"] += st.get("stab_work", 0.0)
        cum["stab_p"] += st.get("stab_p", 0.0)
        cum["source"] += st.get("source", 0.0)
        cum["advection"] += st.get("advection", 0.0)
        abs_src += abs(st.get("source", 0.0))
        kin = st["kinetic"]
        slack = cum["source"] - (kin - k0) - cum["reaction"] - cum["stabilisation"]
        scale = abs(k0) + abs(kin) + abs_src + cum["reaction"] + abs(cum["stabilisation"])
        rows.append({"k": k, "t": st["t"], "kinetic": kin, **cum, "slack": slack,
                     "scale": scale})
    return rows


def apriori_constant(record):
    """``1/2 ||Pi u0||^2 + 1/2 ||q_I||_inf ||f||^2_{L2(0,T;L2)}``.

    Bounds the kinetic energy and the cumulated stabilisation work at every
    step: ``f q_I w <= q_I (w^2 + f^2)/2`` and the reaction absorbs the
    ``q_I w^2 / 2`` part.
    """
    k0 = energy_budget(record)[0]["kinetic"]
    return k0 + 0.5 * record.qi_sup * record.f_l2 ** 2


# -- consistency / limit-conformity estimators ---------------------------------

def _region_average(quad, n_regions, values):
    return np.bincount(quad.region, quad.weights * values, minlength=n_regions)


def estimate_sd(gd, phi, grad_phi, p=2.0):
    """Upper estimate of the interpolation measure ``S_D(phi)``.

    Minimises ``||Pi v - phi||_2^2 + ||grad_D v - grad phi||_2^2`` (one SPD
    solve) and evaluates ``||Pi v - phi||_{L^max(2,p')} +
    ||grad_D v - grad phi||_{L^max(2,p)}`` at the minimiser with the
    discretisation's quadrature rules.
    """
    pq, gq = gd.pi_quad, gd.grad_quad
    n_pi, n_g = len(gd.pi_measure), len(gd.grad_measure)
    fv = phi(pq.points)
    gv = grad_phi(gq.points)
    W = sp.diags(gd.pi_measure)
    Wg = sp.diags(gd.grad_measure)
    A = (gd.Pi.T @ W @ gd.Pi + gd.Gx.T @ Wg @ gd.Gx + gd.Gy.T @ Wg @ gd.Gy).tocsc()
    rhs = (gd.Pi.T @ _region_average(pq, n_pi, fv)
           + gd.Gx.T @ _region_average(gq, n_g, gv[:, 0])
           + gd.Gy.T @ _region_average(gq, n_g, gv[:, 1]))
    v = spla.spsolve(A, rhs)
    p_dual = p / (p - 1.0)
    r_pi = max(2.0, p_dual)
    r_g = max(2.0, p)
    d_pi = (gd.Pi @ v)[pq.region] - fv
    dg = np.column_stack([(gd.Gx @ v)[gq.region], (gd.Gy @ v)[gq.region]]) - gv
    e_pi = np.dot(pq.weights, np.abs(d_pi) ** r_pi) ** (1.0 / r_pi)
    e_g = np.dot(gq.weights, np.hypot(dg[:, 0], dg[:, 1]) ** r_g) ** (1.0 / r_g)
    return float(e_pi + e_g)


def _boundary_flux(phi, k=257):
    s = np.linspace(0.0, 1.0, k)
    z, o = np.zeros(k), np.ones(k)
    sides = [(np.column_stack([s, z]), (0, -1)), (np.column_stack([s, o]), (0, 1)),
             (np.column_stack([z, s]), (-1, 0)), (np.column_stack([o, s]), (1, 0))]
    return max(float(np.abs(phi(x) @ np.array(n, dtype=float)).max()) for x, n in sides)


def _basis_norms(gd, p):
    pi_part = np.sqrt(gd.mass)
    sq = (gd.Gx.multiply(gd.Gx) + gd.Gy.multiply(gd.Gy)).tocsc()
    sq.data = sq.data ** (0.5 * p)
    g_part = (sq.T @ gd.grad_measure) ** (1.0 / p)
    return pi_part + g_part


def _random_smooth(rng, count):
    fields = []
    for _ in range(count):
        kx, ky = rng.integers(0, 4, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        amp = rng.normal()
        fields.append(lambda x, kx=kx, ky=ky, ph=ph, amp=amp:
                      amp * np.cos(np.pi * (kx * x[:, 0] + ky * x[:, 1]) + ph))
    return fields


def estimate_wd(gd, phi, div_phi, p=2.0, n_random=20, seed=0, snapshots=(),
                return_samples=False):
    """Sampled lower bound of the conformity defect ``W_D(phi)``.

    The ratio ``|int grad_D v . phi + Pi v div phi| / ||v||_D`` is maximised
    over the canonical basis vectors, the interpolants of ``n_random``
    random smooth functions, and any extra DOF vectors in ``snapshots``.
    """
    if _boundary_flux(phi) > 1e-10:
        raise BoundaryFluxNonzero("phi . n does not vanish on the boundary")
    pq, gq = gd.pi_quad, gd.grad_quad
    pv = phi(gq.points)
    c = (gd.Gx.T @ _region_average(gq, len(gd.grad_measure), pv[:, 0])
         + gd.Gy.T @ _region_average(gq, len(gd.grad_measure), pv[:, 1])
         + gd.Pi.T @ _region_average(pq, len(gd.pi_measure), div_phi(pq.points)))
    basis = float((np.abs(c) / _basis_norms(gd, p)).max())
    samples = {"basis": basis}
    rng = np.random.default_rng(seed)
    best_rand = 0.0
    for fn in _random_smooth(rng, n_random):
        v = gd.values(gd.interpolate(fn))
        nv = gd.norm(v, p)
        if nv > 0:
            best_rand = max(best_rand, abs(float(c @ v)) / nv)
    samples["random"] = best_rand
    best_snap = 0.0
    for v in snapshots:
        v = gd.values(v)
        nv = gd.norm(v, p)
        if nv > 0:
            best_snap = max(best_snap, abs(float(c @ v)) / nv)
    samples["snapshots"] = best_snap
    value = max(samples.values())
    return (value, samples) if return_samples else value


def _scalar_catalog():
    pi = np.pi
    c, s = np.cos, np.sin

    def trig(a, b):
        return (lambda x: c(a * pi * x[:, 0]) * c(b * pi * x[:, 1]),
                lambda x: np.column_stack([-a * pi * s(a * pi * x[:, 0]) * c(b * pi * x[:, 1]),
                                           -b * pi * c(a * pi * x[:, 0]) * s(b * pi * x[:, 1])]),
                max(1.0, a * pi, b * pi, (max(a, b) * pi) ** 2))

    quad = (lambda x: x[:, 0] ** 2 + x[:, 1] ** 2,
            lambda x: 2.0 * x, 2.0 * math.sqrt(2.0))
    expo = (lambda x: np.exp(x[:, 0] + x[:, 1]),
            lambda x: np.exp(x[:, 0] + x[:, 1])[:, None] * np.ones((1, 2)), math.sqrt(2.0) * math.e ** 2)
    cubic = (lambda x: x[:, 0] ** 3 - x[:, 0] * x[:, 1],
             lambda x: np.column_stack([3 * x[:, 0] ** 2 - x[:, 1], -x[:, 0]]), 6.0)
    return [trig(1, 1), trig(2, 1), trig(1, 3), quad, expo, cubic]


def _vector_catalog():
    pi = np.pi
    s, c = np.sin, np.cos

    def swirl(k):
        f = (lambda x: np.column_stack([s(k * pi * x[:, 0]) * c(pi * x[:, 1]),
                                        -c(pi * x[:, 0]) * s(k * pi * x[:, 1])]))
        d = (lambda x: k * pi * c(k * pi * x[:, 0]) * c(pi * x[:, 1])
             - k * pi * c(pi * x[:, 0]) * c(k * pi * x[:, 1]))
        return f, d, math.sqrt(2.0) * max(1.0, k * pi)

    poly = (lambda x: np.column_stack([x[:, 0] - x[:, 0] ** 2, x[:, 1] - x[:, 1] ** 2]),
            lambda x: 2.0 - 2.0 * (x[:, 0] + x[:, 1]), 1.0)
    vort = (lambda x: np.column_stack([(1 - 2 * x[:, 1]) * (x[:, 0] - x[:, 0] ** 2),
                                       -(1 - 2 * x[:, 0]) * (x[:, 1] - x[:, 1] ** 2)]),
            lambda x: np.zeros(len(x)), 2.0)
    bubble = (lambda x: np.column_stack([s(pi * x[:, 0]) * x[:, 1],
                                         s(pi * x[:, 1]) * x[:, 0]]),
              lambda x: pi * c(pi * x[:, 0]) * x[:, 1] + pi * c(pi * x[:, 1]) * x[:, 0],
              math.sqrt(2.0) * pi)
    return [swirl(1), swirl(2), swirl(3), poly, vort, bubble]


def estimate_hd(gd, p=2.0, seed=0):
    """Sampled lower estimate of the space size ``h_D``.

    Maximum over a fixed catalog of six scalar functions (interpolation
    measure over their ``W^{2,inf}`` norm) and six vector fields with zero
    normal trace (conformity defect over their ``W^{1,inf}`` norm).  The
    norms are fixed upper bounds, so the ratios are labelled estimates only.
    """
    sd = max(estimate_sd(gd, f, g, p) / n for f, g, n in _scalar_catalog())
    wd = max(estimate_wd(gd, f, d, p, seed=seed) / n for f, d, n in _vector_catalog())
    return {"sd_part": sd, "wd_part": wd, "h_D": max(sd, wd), "kind": "sampled lower bound"}
