import logging

import numpy as np
import pytest
import scipy.sparse as sp

from gdmadvect.analysis import apriori_constant, energy_budget
from gdmadvect.errors import ConfigError, NewtonDivergence
from gdmadvect.gd import build_cvfe, build_gd
from gdmadvect.mesh import generate_triangular_mesh
from gdmadvect.problems import ProblemData, case1, case2
from gdmadvect.scheme import (LinearSolver, SchemeConfig, assemble_forms, run,
                              stab_jacobian, stab_residual, theta_step, time_grid)

from conftest import small_gds


def _still(problem):
    return ProblemData(name="still", velocity=lambda x, t=0: np.zeros_like(x),
                       div_velocity=lambda x, t=0: np.zeros(len(x)),
                       q_injection=lambda x, t=0: np.zeros(len(x)),
                       q_production=lambda x, t=0: np.zeros(len(x)),
                       source=lambda x, t=0: np.zeros(len(x)), u_ini=problem.u_ini,
                       T=problem.T, has_injection=False)


def test_config_validation(caplog):
    with pytest.raises(ConfigError, match=r"\[1/2, 1\]"):
        SchemeConfig(theta=0.3)
    with pytest.raises(ConfigError):
        SchemeConfig(p=1.0)
    with pytest.raises(ConfigError):
        SchemeConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        SchemeConfig(dt=-1.0)
    caplog.set_level(logging.WARNING, logger="gdmadvect.scheme")
    SchemeConfig(p=3, alpha=2)
    assert not caplog.records
    SchemeConfig(p=2, alpha=2)
    assert "alpha" in caplog.records[-1].getMessage()


def test_time_grid():
    assert time_grid(1.0, 0.25) == [0.0, 0.25, 0.5, 0.75, 1.0]
    g = time_grid(1.0, 0.3)
    assert g[-1] == 1.0 and len(g) == 5
    assert g[-1] - g[-2] == pytest.approx(0.1)


def test_forms_invariants(gd):
    P = case2()
    f = assemble_forms(gd, P, SchemeConfig(), (0.0, 0.1))
    assert np.all(f.M > 0) and abs(f.M.sum() - 1) <= 1e-12
    assert (f.B + f.B.T).count_nonzero() == 0
    assert np.all(f.R >= 0) and np.all(f.b >= 0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = rng.normal(size=gd.dof_count)
        assert abs(u @ (f.B @ u)) <= 1e-14 * (u @ u)


def test_zero_velocity(gd):
    f = assemble_forms(gd, _still(case1()), SchemeConfig(), (0.0, 0.1))
    assert f.A.count_nonzero() == 0 and f.B.count_nonzero() == 0


def test_constant_state_advection(gd):
    f = assemble_forms(gd, case1(), SchemeConfig(), (0.0, 0.1))
    u = gd.values(gd.interpolate(lambda x: np.ones(len(x))))
    assert np.abs(f.A @ u).max() <= 1e-13
    rng = np.random.default_rng(0)
    w = rng.normal(size=gd.dof_count)
    assert w @ (f.B @ u) == pytest.approx(-0.5 * (u @ (f.A @ w)), abs=1e-13)


def test_stab_linear_case():
    gd = build_cvfe(generate_triangular_mesh(5))
    f = assemble_forms(gd, case1(), SchemeConfig(p=2, alpha=2), (0, 0.1), eps=0.0)
    rng = np.random.default_rng(0)
    w = rng.normal(size=gd.dof_count)
    K = gd.Gx.T @ sp.diags(gd.grad_measure) @ gd.Gx + gd.Gy.T @ sp.diags(gd.grad_measure) @ gd.Gy
    assert np.allclose(stab_residual(gd, f, w), gd.h ** 2 * (K @ w), atol=1e-13)
    J1 = stab_jacobian(gd, f, w).toarray()
    J2 = stab_jacobian(gd, f, 3 * w + 1).toarray()
    assert np.allclose(J1, J2, atol=1e-14)


def test_stab_zero_state():
    gd = build_cvfe(generate_triangular_mesh(4))
    f = assemble_forms(gd, case1(), SchemeConfig(p=3, alpha=2), (0, 0.1), eps=1e-10)
    w = np.zeros(gd.dof_count)
    assert np.abs(stab_residual(gd, f, w)).max() == 0.0
    assert np.abs(stab_jacobian(gd, f, w).toarray()).max() <= 1e-9


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_stab_jacobian_fd(gd, p):
    f = assemble_forms(gd, case1(), SchemeConfig(p=p, alpha=1.0), (0, 0.1), eps=1e-10)
    rng = np.random.default_rng(7)
    w = rng.normal(size=gd.dof_count)
    J = stab_jacobian(gd, f, w).toarray()
    e = 1e-6 * np.linalg.norm(w)
    for j in rng.choice(gd.dof_count, 8, replace=False):
        d = np.zeros_like(w)
        d[j] = e
        fd = (stab_residual(gd, f, w + d) - stab_residual(gd, f, w - d)) / (2 * e)
        assert np.linalg.norm(J[:, j] - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-300)


def test_zero_fixed_point(gd):
    P = _still(case1())
    f = assemble_forms(gd, P, SchemeConfig(p=3), (0, 0.1))
    u, diag = theta_step(gd, f, SchemeConfig(p=3), np.zeros(gd.dof_count), 0.1)
    assert np.all(u == 0)


def test_linear_vs_newton():
    gd = build_cvfe(generate_triangular_mesh(8))
    P = case2()
    u0 = np.random.default_rng(1).uniform(size=gd.dof_count)
    lin, newt = SchemeConfig(), SchemeConfig(force_newton=True)
    f = assemble_forms(gd, P, lin, (0, 0.05))
    a, _ = theta_step(gd, f, lin, u0, 0.05)
    b, _ = theta_step(gd, f, lin, u0, 0.05)
    c, d = theta_step(gd, f, newt, u0, 0.05)
    assert np.array_equal(a, b)
    assert np.abs(a - c).max() <= 1e-12
    g = SchemeConfig(linear_solver="gmres")
    e, _ = theta_step(gd, f, g, u0, 0.05, solver=LinearSolver("gmres"))
    assert np.abs(a - e).max() <= 1e-10


def test_energy_identity_single_step():
    gd = build_cvfe(generate_triangular_mesh(8))
    P = case2()
    cfg = SchemeConfig()
    u0 = np.random.default_rng(2).uniform(size=gd.dof_count)
    dt = 0.05
    f = assemble_forms(gd, P, cfg, (0, dt), eps=1e-10)
    u1, diag = theta_step(gd, f, cfg, u0, dt)
    w = diag.w
    M = gd.mass
    lhs = 0.5 * M @ u1 ** 2 - 0.5 * M @ u0 ** 2 + dt * (w @ (f.R * w) + f.stab.work(w))
    rhs = dt * f.b @ w
    assert abs(lhs - rhs) <= 1e-9 * (abs(rhs) + 0.5 * M @ u0 ** 2)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_newton_quadratic_tail(p):
    gd = build_cvfe(generate_triangular_mesh(8))
    cfg = SchemeConfig(p=p, alpha=1.0)
    u0 = gd.values(gd.interpolate(case1().u_ini))
    f = assemble_forms(gd, case1(), cfg, (0, 0.2), eps=1e-10)
    _, d = theta_step(gd, f, cfg, u0, 0.2)
    r = d.residuals
    assert d.iterations >= 1
    for a, b in zip(r[:-1], r[1:]):
        if a <= 1e-3 and b > 1e-13:
            assert b <= 1e3 * a * a


def test_newton_divergence_reported():
    gd = build_cvfe(generate_triangular_mesh(6))
    cfg = SchemeConfig(p=3, newton_maxit=1, newton_tol=1e-16)
    u0 = gd.values(gd.interpolate(case1().u_ini))
    f = assemble_forms(gd, case1(), cfg, (0, 0.2), eps=1e-10)
    with pytest.raises(NewtonDivergence) as exc:
        theta_step(gd, f, cfg, u0, 0.2)
    assert exc.value.residual is not None


def test_case1_l2_decreasing():
    for gd in small_gds(6, 2):
        rec = run(gd, case1(), SchemeConfig(theta=0.5))
        k0 = rec.kinetic0
        kin = [s["kinetic"] for s in rec.steps]
        assert max(kin) <= k0 * (1 + 1e-12)
        assert np.all(np.diff(kin) <= 1e-12 * k0)


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_apriori_bounds(theta):
    for gd in small_gds(6, 2):
        for P in (case1(), case2()):
            rec = run(gd, P, SchemeConfig(theta=theta))
            C = apriori_constant(rec)
            eb = energy_budget(rec)
            assert max(r["kinetic"] for r in eb) <= C * (1 + 1e-10)
            assert eb[-1]["stabilisation"] <= C * (1 + 1e-10)


def test_variant_flags_run():
    gd = build_cvfe(generate_triangular_mesh(6))
    rec = run(gd, case2(), SchemeConfig(skew=False, stabilised=False))
    eb = energy_budget(rec)
    assert np.isfinite(eb[-1]["slack"]) and len(eb) == len(rec.steps) + 1


def test_run_deterministic():
    gd = build_gd("hfv", __import__("gdmadvect").generate_refined_nonconforming_mesh(2))
    a = run(gd, case2(), SchemeConfig(p=3, alpha=1))
    b = run(gd, case2(), SchemeConfig(p=3, alpha=1))
    assert np.array_equal(a.u_final, b.u_final)
    assert a.to_json() == b.to_json()
