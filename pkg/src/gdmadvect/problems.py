"""Problem data for linear advection with injection/production terms and the
two benchmark cases on the unit square, with their reference solutions.

All fields take an (n, 2) array of points and a time, and return arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import TrajectoryLeftDomain


def _zero(x, t=0.0):
    return np.zeros(len(x))


def _identity_lambda(x, t=0.0):
    return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()


@dataclass(frozen=True)
class ProblemData:
    name: str
    velocity: Callable
    div_velocity: Callable
    q_injection: Callable
    q_production: Callable
    source: Callable
    u_ini: Callable
    T: float
    lam: Callable = _identity_lambda
    reference: Optional[Callable] = None
    autonomous: bool = True
    has_injection: bool = True
    lam_label: str = "id"

    def with_lambda(self, lam, label):
        return replace(self, lam=lam, lam_label=label)

    def lambda_bounds(self, points, t=0.0):
        """Smallest and largest eigenvalue of the diffusion tensor sampled at
        ``points``."""
        L = self.lam(points, t)
        ev = np.linalg.eigvalsh(0.5 * (L + np.swapaxes(L, 1, 2)))
        return float(ev.min()), float(ev.max())


def case1():
    """Rotating tracer: square pulse carried by a divergence-free vortex."""

    def velocity(x, t=0.0):
        x1, x2 = x[:, 0], x[:, 1]
        return np.column_stack([(1 - 2 * x2) * (x1 - x1 ** 2),
                                -(1 - 2 * x1) * (x2 - x2 ** 2)])

    def u_ini(x):
        x1, x2 = x[:, 0], x[:, 1]
        inside = (x1 > 0.1) & (x1 < 0.4) & (x2 > 0.1) & (x2 < 0.4)
        return inside.astype(float)

    prob = ProblemData(name="case1", velocity=velocity, div_velocity=_zero,
                       q_injection=_zero, q_production=_zero, source=_zero,
                       u_ini=u_ini, T=5.0, has_injection=False)

    def reference(x, t):
        return characteristics_reference(prob, x, t, step=1e-3)

    return replace(prob, reference=reference)


def case2_exact(x, t):
    """Closed-form solution of the injection case.

    On the axes the radicand is unbounded and the clamp ``alpha = 1`` is used.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[:, 0], x[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rad = (1 - x1) * (1 - x2) / (x1 * x2)
    alpha = np.where(np.isfinite(rad), np.minimum(1.0, np.sqrt(np.abs(rad))), 1.0)
    alpha = np.where(x1 * x2 == 0, 1.0, alpha)
    et = np.exp(t)
    num = et * (1 + x1 * (alpha - 1)) * (1 + x2 * (alpha - 1))
    den = alpha * (et * (1 - x1) + x1) * (et * (1 - x2) + x2)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 1.0 - (num / den) ** 2
    return np.where(alpha * et >= 1.0, val, 0.0)


def case2():
    """Injection/production case with a smooth closed-form solution."""

    def velocity(x, t=0.0):
        x1, x2 = x[:, 0], x[:, 1]
        return np.column_stack([x1 - x1 ** 2, x2 - x2 ** 2])

    def div_velocity(x, t=0.0):
        return 2.0 - 2.0 * (x[:, 0] + x[:, 1])

    def q_injection(x, t=0.0):
        return np.maximum(2.0 - 2.0 * (x[:, 0] + x[:, 1]), 0.0)

    def q_production(x, t=0.0):
        return np.maximum(2.0 * (x[:, 0] + x[:, 1]) - 2.0, 0.0)

    def source(x, t=0.0):
        return np.ones(len(x))

    return ProblemData(name="case2", velocity=velocity,
                       div_velocity=div_velocity, q_injection=q_injection,
                       q_production=q_production, source=source,
                       u_ini=_zero, T=1.0, reference=case2_exact)


CASES = {"case1": case1, "case2": case2}


def get_case(name):
    try:
        return CASES[name]()
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


def lambda_supg(problem, mu):
    """Streamline tensor ``sym(v/|v| (x) v) + mu Id``; ``mu Id`` where v vanishes."""
    if mu <= 0:
        raise ValueError("mu must be positive")

    def lam(x, t=0.0):
        v = problem.velocity(x, t)
        nv = np.hypot(v[:, 0], v[:, 1])
        safe = np.where(nv < 1e-14, 1.0, nv)
        A = (v / safe[:, None])[:, :, None] * v[:, None, :]
        A[nv < 1e-14] = 0.0
        return 0.5 * (A + np.swapaxes(A, 1, 2)) + mu * np.eye(2)

    return lam


def _rk4(fn, x, s, ds):
    k1 = fn(x, s)
    k2 = fn(x + 0.5 * ds * k1, s + 0.5 * ds)
    k3 = fn(x + 0.5 * ds * k2, s + 0.5 * ds)
    k4 = fn(x + ds * k3, s + ds)
    return x + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _steps(t, step):
    n = int(np.ceil(t / step - 1e-9)) if t > 0 else 0
    return [min(step, t - k * step) for k in range(n)]


def characteristics_reference(problem, points, t, step=1e-3, method="euler",
                              tol=1e-9):
    """Value of the exact solution at time ``t`` by tracing characteristics.

    Each point is traced backward along ``X' = -v(X, t - s)`` to its foot
    at time 0.  Without injection the value is ``u_ini`` at the foot.  With
    injection the value is then integrated forward along the characteristic
    through the foot, ``d/ds u = (f - u) q_I``.

    Parameters
    ----------
    method : {"euler", "rk4"}
        Integrator for both passes; ``step`` is its time step.
    """
    x = np.array(points, dtype=float, copy=True).reshape(-1, 2)
    adv = {"euler": lambda fn, y, s, ds: y + ds * fn(y, s), "rk4": _rk4}[method]

    def check(y):
        if np.any(y < -tol) or np.any(y > 1 + tol):
            raise TrajectoryLeftDomain("characteristic left the unit square")

    s = 0.0
    for ds in _steps(t, step):
        x = adv(lambda y, tau: -problem.velocity(y, t - tau), x, s, ds)
        s += ds
        check(x)
    value = problem.u_ini(x).astype(float)
    if not problem.has_injection:
        return value

    def rhs(z, s):
        y, u = z[:, :2], z[:, 2]
        qi = problem.q_injection(y, s)
        du = (problem.source(y, s) - u) * qi
        return np.column_stack([problem.velocity(y, s), du])

    z = np.column_stack([x, value])
    s = 0.0
    for ds in _steps(t, step):
        z = adv(rhs, z, s, ds)
        s += ds
    return z[:, 2]
