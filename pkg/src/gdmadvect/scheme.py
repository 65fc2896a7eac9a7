"""Theta-implicit gradient scheme with skew-symmetric advection and p-Laplace
vanishing viscosity.

Each step solves for ``w = u^(n+theta)``::

    M (w - u_n) / (theta dt) + B w + R w + S(w) = b

and sets ``u_(n+1) = u_n + (w - u_n) / theta``.  ``M`` and ``R`` are
diagonal, ``B`` is skew-symmetric by construction and ``S`` is the
(regularised) p-Laplace operator weighted by ``h**alpha``.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, LinearSolveFailure, NewtonDivergence

log = logging.getLogger(__name__)
_tokens = itertools.count(1)


@dataclass(frozen=True)
class SchemeConfig:
    theta: float = 0.5
    p: float = 2.0
    alpha: float = 2.0
    dt: float | None = None
    dt_factor: float = 0.4
    stabilised: bool = True
    skew: bool = True
    newton_tol: float = 1e-10
    newton_maxit: int = 50
    eps: float | None = None
    linear_solver: str = "direct"
    force_newton: bool = False

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError(f"theta={self.theta} outside the admissible range [1/2, 1]")
        if not self.p > 1.0:
            raise ConfigError(f"p={self.p} must be > 1")
        if not self.alpha > 0.0:
            raise ConfigError(f"alpha={self.alpha} must be > 0")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not self.dt_factor > 0:
            raise ConfigError("dt_factor must be > 0")
        if self.linear_solver not in ("direct", "gmres"):
            raise ConfigError(f"unknown linear solver {self.linear_solver!r}")
        if self.stabilised and self.alpha >= self.p:
            log.warning("alpha=%g >= p=%g: convergence is only proved for alpha < p",
                        self.alpha, self.p)

    @property
    def linear(self):
        return (self.p == 2.0 or not self.stabilised) and not self.force_newton

    def time_step(self, h):
        return self.dt if self.dt is not None else self.dt_factor * h

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class StabOperator:
    """``h^alpha * div(|g|_L^(p-2) L g)`` assembled over grad-regions.

    ``|g|_L = sqrt(g.L g + eps^2)``; with ``p == 2`` the operator is the
    linear stiffness matrix ``K`` and ``eps`` plays no role.
    """

    Gx: sp.csr_matrix
    Gy: sp.csr_matrix
    measure: np.ndarray
    lam: np.ndarray
    scale: float
    p: float
    eps: float
    K: sp.csr_matrix | None = None

    def gradients(self, w):
        return np.column_stack([self.Gx @ w, self.Gy @ w])

    def _norms(self, g):
        Lg = np.einsum("rij,rj->ri", self.lam, g)
        gLg = np.einsum("ri,ri->r", g, Lg)
        return Lg, gLg, np.sqrt(gLg + self.eps ** 2)

    def stiffness(self):
        if self.K is None:
            self.K = self._assemble(self.lam)
        return self.K

    def _assemble(self, D):
        wm = self.scale * self.measure
        Gx, Gy = self.Gx, self.Gy
        dg = sp.diags
        return (Gx.T @ dg(wm * D[:, 0, 0]) @ Gx + Gx.T @ dg(wm * D[:, 0, 1]) @ Gy
                + Gy.T @ dg(wm * D[:, 1, 0]) @ Gx + Gy.T @ dg(wm * D[:, 1, 1]) @ Gy).tocsr()

    def residual(self, w):
        if self.p == 2.0:
            return self.stiffness() @ w
        g = self.gradients(w)
        Lg, _, nrm = self._norms(g)
        flux = (self.scale * self.measure * nrm ** (self.p - 2.0))[:, None] * Lg
        return self.Gx.T @ flux[:, 0] + self.Gy.T @ flux[:, 1]

    def jacobian(self, w):
        if self.p == 2.0:
            return self.stiffness()
        g = self.gradients(w)
        Lg, _, nrm = self._norms(g)
        D = (nrm ** (self.p - 2.0))[:, None, None] * self.lam
        D = D + ((self.p - 2.0) * nrm ** (self.p - 4.0))[:, None, None] * (
            Lg[:, :, None] * Lg[:, None, :])
        return self._assemble(D)

    def work(self, w):
        """``w . S(w)``: the stabilisation contribution to the energy balance."""
        return float(np.dot(w, self.residual(w)))

    def p_energy(self, w):
        """``h^alpha * int |grad w|_L^p`` without regularisation."""
        g = self.gradients(w)
        _, gLg, _ = self._norms(g)
        return float(self.scale * np.dot(self.measure, np.maximum(gLg, 0.0) ** (self.p / 2.0)))


@dataclass(eq=False)
class AssembledForms:
    M: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    R: np.ndarray
    b: np.ndarray
    stab: StabOperator | None
    t_interval: tuple
    skew: bool = True
    token: int = field(default_factory=lambda: next(_tokens))


def assemble_forms(gd, problem, config, t_interval, eps=None):
    """Assemble all operators with data frozen at the interval midpoint.

    ``A[i, j] = int Pi_i (v . grad_j)`` is built from the overlap table; the
    advection operator is ``B = (A - A^T)/2`` (skew) or ``-A^T`` for the
    non-skew variant, whose reaction then only carries ``q_P``.
    """
    t0, t1 = t_interval
    tm = 0.5 * (t0 + t1)
    n = gd.dof_count
    v = problem.velocity(gd.ov_center, tm)
    # A = sum_o |o| Pi[pi(o), :]^T (v_o . G[grad(o), :])
    Po = gd.Pi[gd.ov_pi]
    Vg = (sp.diags(gd.ov_measure * v[:, 0]) @ gd.Gx[gd.ov_grad]
          + sp.diags(gd.ov_measure * v[:, 1]) @ gd.Gy[gd.ov_grad])
    A = (Po.T @ Vg).tocsr()
    A.eliminate_zeros()
    if config.skew:
        B = (0.5 * (A - A.T)).tocsr()
    else:
        B = (-A.T).tocsr()
    B.sort_indices()

    qi = problem.q_injection(gd.pi_center, tm)
    qp = problem.q_production(gd.pi_center, tm)
    f = problem.source(gd.pi_center, tm)
    react = 0.5 * (qi + qp) if config.skew else qp
    R = gd.Pi.T @ (gd.pi_measure * react)
    b = gd.Pi.T @ (gd.pi_measure * f * qi)

    stab = None
    if config.stabilised:
        lam = problem.lam(gd.grad_center, tm)
        stab = StabOperator(Gx=gd.Gx, Gy=gd.Gy, measure=gd.grad_measure,
                            lam=np.ascontiguousarray(lam),
                            scale=gd.h ** config.alpha, p=config.p,
                            eps=0.0 if eps is None else eps)
    return AssembledForms(M=gd.mass.copy(), A=A, B=B, R=np.asarray(R), b=np.asarray(b),
                          stab=stab, t_interval=(t0, t1), skew=config.skew)


def stab_residual(gd, forms, w):
    w = gd.values(w)
    if forms.stab is None:
        return np.zeros_like(w)
    return forms.stab.residual(w)


def stab_jacobian(gd, forms, w):
    w = gd.values(w)
    if forms.stab is None:
        return sp.csr_matrix((gd.dof_count, gd.dof_count))
    return forms.stab.jacobian(w)


class LinearSolver:
    """Sparse direct (cached LU) or restarted GMRES with Jacobi preconditioner."""

    def __init__(self, kind="direct"):
        self.kind = kind
        self._key = None
        self._lu = None

    def solve(self, mat, rhs, key=None):
        if self.kind == "direct":
            try:
                if key is None or key != self._key:
                    self._lu = spla.splu(mat.tocsc())
                    self._key = key
                x = self._lu.solve(rhs)
            except RuntimeError as exc:
                raise LinearSolveFailure(str(exc)) from exc
        else:
            d = mat.diagonal()
            pre = spla.LinearOperator(mat.shape, matvec=lambda r: r / d)
            x, info = spla.gmres(mat, rhs, M=pre, rtol=1e-13, atol=0.0, restart=50,
                                 maxiter=2000)
            if info != 0:
                raise LinearSolveFailure(f"GMRES did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailure("linear solve produced non-finite values")
        return x


@dataclass
class StepDiagnostics:
    w: np.ndarray
    iterations: int = 0
    residuals: list = field(default_factory=list)
    damping: list = field(default_factory=list)


def _operator(forms, theta, dt):
    c = 1.0 / (theta * dt)
    return (sp.diags(c * forms.M + forms.R) + forms.B).tocsr()


def theta_step(gd, forms, config, u_n, dt, w0=None, solver=None):
    """Advance one step; returns ``(u_next, StepDiagnostics)``."""
    u_n = gd.values(u_n)
    theta = config.theta
    c = 1.0 / (theta * dt)
    solver = solver or LinearSolver(config.linear_solver)
    rhs0 = forms.b + c * forms.M * u_n

    if config.linear:
        key = (forms.token, theta, dt)
        mat = None
        if solver.kind != "direct" or key != solver._key:
            mat = _operator(forms, theta, dt)
            if forms.stab is not None:
                mat = (mat + forms.stab.stiffness()).tocsr()
        w = solver.solve(mat, rhs0, key=key)
        diag = StepDiagnostics(w=w)
    else:
        base = _operator(forms, theta, dt)
        w, diag = _newton(forms, config, base, rhs0, u_n if w0 is None else gd.values(w0),
                          solver)
    return u_n + (w - u_n) / theta, diag


def _newton(forms, config, base, rhs0, w, solver):
    stab = forms.stab

    def F(w):
        r = base @ w - rhs0
        return r if stab is None else r + stab.residual(w)

    scale = np.linalg.norm(forms.b) + np.linalg.norm(rhs0 - forms.b)
    tol = config.newton_tol * max(scale, np.finfo(float).tiny)
    w = w.copy()
    r = F(w)
    rn = np.linalg.norm(r)
    diag = StepDiagnostics(w=w, residuals=[rn])
    for it in range(config.newton_maxit):
        if rn <= tol:
            break
        J = base if stab is None else (base + stab.jacobian(w)).tocsr()
        dw = solver.solve(J, -r)
        lam = 1.0
        while True:
            w_try = w + lam * dw
            r_try = F(w_try)
            rn_try = np.linalg.norm(r_try)
            if rn_try < rn or lam < 1e-4:
                break
            lam *= 0.5
        w, r, rn = w_try, r_try, rn_try
        diag.iterations = it + 1
        diag.residuals.append(rn)
        diag.damping.append(lam)
    else:
        if rn > tol:
            raise NewtonDivergence(
                f"Newton did not converge in {config.newton_maxit} iterations "
                f"(residual {rn:.3e}, tolerance {tol:.3e})", residual=rn)
    if rn > tol:
        raise NewtonDivergence(f"Newton stalled at residual {rn:.3e}", residual=rn)
    diag.w = w
    return w, diag


@dataclass
class RunRecord:
    """Result of a time integration.

    ``steps`` holds one dict per step with the time, step size, the energy
    increments of that step and the extrema of the solution.  ``states`` is
    filled only when requested.
    """

    method: str
    problem: str
    config: dict
    h: float
    dof_count: int
    times: list
    u0: np.ndarray
    u_final: np.ndarray
    steps: list
    umin_all: float
    umax_all: float
    f_l2: float = 0.0
    qi_sup: float = 0.0
    kinetic0: float = 0.0
    states: list | None = None
    assumptions: dict = field(default_factory=dict)

    @property
    def umin(self):
        return float(self.u_final.min())

    @property
    def umax(self):
        return float(self.u_final.max())

    def to_json(self):
        return {
            "method": self.method, "problem": self.problem, "config": self.config,
            "h": self.h, "dof_count": self.dof_count, "n_steps": len(self.steps),
            "T": self.times[-1], "kinetic0": self.kinetic0, "umin": self.umin, "umax": self.umax,
            "umin_all": self.umin_all, "umax_all": self.umax_all,
            "steps": self.steps, "assumptions": self.assumptions,
        }


def time_grid(T, dt):
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return [min(k * dt, T) for k in range(n)] + [T]


def _sup_sample(fn, t, k=101):
    s = np.linspace(0.0, 1.0, k)
    X, Y = np.meshgrid(s, s)
    return float(np.abs(fn(np.column_stack([X.ravel(), Y.ravel()]), t)).max())


def run(gd, problem, config, store_states=False, u0=None):
    """Integrate from ``I_D u_ini`` to the final time of ``problem``."""
    dt = config.time_step(gd.h)
    times = time_grid(problem.T, dt)
    u = gd.values(gd.interpolate(problem.u_ini) if u0 is None else u0).copy()
    u_init = u.copy()
    eps = config.eps
    if eps is None:
        g = np.column_stack([gd.Gx @ u, gd.Gy @ u])
        gl = np.dot(gd.grad_measure, np.hypot(g[:, 0], g[:, 1]) ** config.p) ** (1 / config.p)
        eps = 1e-10 * (1.0 + gl)
    solver = LinearSolver(config.linear_solver)
    M = gd.mass
    steps = []
    states = [u.copy()] if store_states else None
    forms = None
    umin_all, umax_all = float(u.min()), float(u.max())
    f_l2sq = 0.0
    qi_max = 0.0
    for n in range(len(times) - 1):
        t0, t1 = times[n], times[n + 1]
        dtn = t1 - t0
        if forms is None or not problem.autonomous:
            forms = assemble_forms(gd, problem, config, (t0, t1), eps=eps)
        try:
            u_next, diag = theta_step(gd, forms, config, u, dtn, solver=solver)
        except (NewtonDivergence, LinearSolveFailure) as exc:
            exc.step = n
            exc.args = (f"step {n} (t={t0:.6g}): {exc}",)
            raise
        w = diag.w
        stab_work = forms.stab.work(w) if forms.stab is not None else 0.0
        stab_p = forms.stab.p_energy(w) if forms.stab is not None else 0.0
        steps.append({
            "t": t1, "dt": dtn,
            "kinetic": 0.5 * float(np.dot(M, u_next ** 2)),
            "reaction": dtn * float(np.dot(forms.R, w ** 2)),
            "stab_work": dtn * stab_work,
            "stab_p": dtn * stab_p,
            "source": dtn * float(np.dot(forms.b, w)),
            "advection": dtn * float(w @ (forms.B @ w)),
            "umin": float(u_next.min()), "umax": float(u_next.max()),
            "newton_iterations": diag.iterations,
        })
        f_vals = problem.source(gd.pi_center, 0.5 * (t0 + t1))
        f_l2sq += dtn * float(np.dot(gd.pi_measure, f_vals ** 2))
        qi_vals = problem.q_injection(gd.pi_center, 0.5 * (t0 + t1))
        qi_max = max(qi_max, float(np.abs(qi_vals).max()))
        u = u_next
        umin_all, umax_all = min(umin_all, float(u.min())), max(umax_all, float(u.max()))
        if store_states:
            states.append(u.copy())
    cfg = config.to_dict()
    cfg["eps"] = eps
    cfg["dt"] = dt
    return RunRecord(method=gd.name, problem=problem.name, config=cfg, h=gd.h,
                     dof_count=gd.dof_count, times=times, u0=u_init, u_final=u,
                     steps=steps, umin_all=umin_all, umax_all=umax_all,
                     f_l2=math.sqrt(f_l2sq), kinetic0=0.5 * float(np.dot(M, u_init ** 2)),
                     qi_sup=max(qi_max, _sup_sample(problem.q_injection, 0.0)),
                     states=states,
                     assumptions={"time_average": "midpoint", "lambda": problem.lam_label,
                                  "h_D": "mesh size"})
