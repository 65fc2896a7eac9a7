import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdmadvect.errors import GDMismatch, InvalidGamma, NonSimplicialMesh
from gdmadvect.gd import (DofVector, build_cvfe, build_gd, build_hfv, build_mlnc_p1,
                          norm_D)
from gdmadvect.mesh import generate_refined_nonconforming_mesh, generate_triangular_mesh


def _affine(a, b, c):
    return lambda x: a * x[:, 0] + b * x[:, 1] + c


def test_dof_counts():
    m = generate_triangular_mesh(4)
    assert build_cvfe(m).dof_count == 25
    assert build_mlnc_p1(m).dof_count == 56
    h = generate_refined_nonconforming_mesh(1)
    assert build_hfv(h).dof_count == h.n_cells + h.n_faces


def test_measures_partition(gd):
    assert abs(gd.pi_measure.sum() - 1) <= 1e-12
    assert abs(gd.grad_measure.sum() - 1) <= 1e-12
    assert abs(gd.ov_measure.sum() - 1) <= 1e-12
    per_pi = np.bincount(gd.ov_pi, gd.ov_measure, minlength=len(gd.pi_measure))
    per_grad = np.bincount(gd.ov_grad, gd.ov_measure, minlength=len(gd.grad_measure))
    assert np.allclose(per_pi, gd.pi_measure, atol=1e-15)
    assert np.allclose(per_grad, gd.grad_measure, atol=1e-15)
    assert np.all(gd.mass > 0)


def test_constant_interpolant(gd):
    v = gd.interpolate(lambda x: np.ones(len(x)))
    pv, g = gd.reconstruct(v)
    assert np.allclose(pv, 1.0, atol=1e-14)
    assert np.abs(g).max() <= 1e-12


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=10, deadline=None)
def test_affine_exactness(a, b, c):
    tri = generate_triangular_mesh(3)
    for gd in (build_cvfe(tri), build_mlnc_p1(tri),
               build_hfv(generate_refined_nonconforming_mesh(2))):
        fn = _affine(a, b, c)
        v = gd.interpolate(fn)
        _, g = gd.reconstruct(v)
        assert np.abs(g - [a, b]).max() <= 1e-12 * max(1, abs(a), abs(b), abs(c))
        assert np.allclose(gd.values(v), fn(gd.dof_points), atol=1e-12)


def test_cvfe_gradient_example():
    gd = build_cvfe(generate_triangular_mesh(4))
    _, g = gd.reconstruct(gd.interpolate(lambda x: 2 * x[:, 0] + 3 * x[:, 1]))
    assert np.allclose(g, [2.0, 3.0], atol=1e-12)


def test_hfv_half_diamonds_tile_cells():
    m = generate_refined_nonconforming_mesh(3)
    gd = build_hfv(m)
    per_cell = np.bincount(m.cf_cell, gd.grad_measure, minlength=m.n_cells)
    assert np.allclose(per_cell, m.cell_area, rtol=1e-13)


def test_simplicial_required():
    m = generate_refined_nonconforming_mesh(1)
    with pytest.raises(NonSimplicialMesh):
        build_cvfe(m)
    with pytest.raises(NonSimplicialMesh):
        build_mlnc_p1(m)


@pytest.mark.parametrize("gamma", [0.0, -0.1, 1.5])
def test_invalid_gamma(gamma):
    with pytest.raises(InvalidGamma):
        build_hfv(generate_refined_nonconforming_mesh(1), gamma=gamma)


def test_norm_examples():
    gd = build_cvfe(generate_triangular_mesh(6))
    assert norm_D(gd, np.zeros(gd.dof_count), 2) == 0.0
    v = gd.values(gd.interpolate(lambda x: x[:, 0]))
    l2 = np.sqrt(np.dot(gd.mass, v ** 2))
    assert norm_D(gd, v, 2) == pytest.approx(l2 + 1.0, abs=1e-12)
    assert norm_D(gd, 2 * v, 3) == pytest.approx(2 * norm_D(gd, v, 3), rel=1e-14)


def test_norm_positive_on_random(gd):
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert norm_D(gd, rng.normal(size=gd.dof_count), 1.5) > 0


def test_dofvector_tag():
    m = generate_triangular_mesh(2)
    a, b = build_cvfe(m), build_cvfe(m)
    v = a.interpolate(lambda x: x[:, 0])
    assert isinstance(v, DofVector)
    with pytest.raises(GDMismatch):
        b.values(v)
    with pytest.raises(ValueError):
        DofVector(a.gid, np.array([np.nan]))


def test_build_gd_unknown():
    with pytest.raises(ValueError):
        build_gd("dg", generate_triangular_mesh(2))
