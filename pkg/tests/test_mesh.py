import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdmadvect.errors import GeometryError, NonSimplicialMesh, ParseError
from gdmadvect.mesh import (build_dual, generate_refined_nonconforming_mesh,
                            generate_triangular_mesh, read_mesh, write_mesh)


def test_triangular_counts():
    m = generate_triangular_mesh(1)
    assert (m.n_cells, m.n_vertices, m.n_faces) == (2, 4, 5)
    m = generate_triangular_mesh(4)
    assert (m.n_cells, m.n_vertices, m.n_faces) == (32, 25, 56)
    assert m.n_vertices - m.n_faces + m.n_cells == 1


@given(st.integers(1, 12))
@settings(max_examples=12, deadline=None)
def test_triangular_invariants(n):
    m = generate_triangular_mesh(n).check()
    assert abs(m.cell_area.sum() - 1.0) <= 1e-12
    assert m.n_vertices - m.n_faces + m.n_cells == 1
    assert m.h == pytest.approx(np.sqrt(2) / n, rel=1e-15)
    assert generate_triangular_mesh(2 * n).h == pytest.approx(m.h / 2, rel=1e-15)
    nb = (m.face_cells >= 0).sum(axis=1)
    assert set(nb.tolist()) <= {1, 2}


def test_refined_level1():
    m = generate_refined_nonconforming_mesh(1).check()
    assert m.n_cells == 7
    assert abs(m.cell_area.sum() - 1.0) <= 1e-12
    assert not m.is_simplicial


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_refined_invariants(level):
    m = generate_refined_nonconforming_mesh(level).check()
    assert m.n_vertices - m.n_faces + m.n_cells == 1
    closure = np.zeros((m.n_cells, 2))
    np.add.at(closure, m.cf_cell, m.face_measure[m.cf_face, None] * m.cf_normal)
    assert np.abs(closure).max() <= 1e-12
    coarse = 1.0 / 2 ** level
    # cells with more than four faces carry hanging nodes
    hanging = [k for k in range(m.n_cells) if len(m.cells[k]) > 4]
    assert hanging
    for k in hanging:
        meas = m.face_measure[m.cell_faces(k)]
        assert np.all(np.isclose(meas, coarse) | np.isclose(meas, coarse / 2))
        assert np.isclose(meas, coarse / 2).sum() >= 2


def test_vertex_dual_n1():
    d = build_dual(generate_triangular_mesh(1), "vertex")
    assert sorted(d.region_measure.tolist()) == pytest.approx([1 / 6, 1 / 6, 1 / 3, 1 / 3])
    assert d.region_measure.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["vertex", "face"])
def test_dual_partition(kind):
    m = generate_triangular_mesh(5)
    d = build_dual(m, kind)
    assert abs(d.region_measure.sum() - 1.0) <= 1e-12
    per_cell = np.bincount(d.sub_cell, d.sub_measure, minlength=m.n_cells)
    assert np.allclose(per_cell, m.cell_area, rtol=0, atol=1e-15)
    assert np.allclose(d.sub_measure, m.cell_area[d.sub_cell] / 3, atol=1e-15)


def test_face_dual_interior_measure():
    m = generate_triangular_mesh(3)
    d = build_dual(m, "face")
    for f in range(m.n_faces):
        cells = m.face_cells[f][m.face_cells[f] >= 0]
        assert d.region_measure[f] == pytest.approx(m.cell_area[cells].sum() / 3, abs=1e-15)


def test_vertex_dual_segments_share_centroid():
    m = generate_triangular_mesh(3)
    d = build_dual(m, "vertex")
    for k in range(m.n_cells):
        ends = d.seg_ends[d.seg_cell == k]
        assert len(ends) == 3
        assert np.allclose(ends[:, 1], m.cell_center[k])
    assert np.all(d.seg_pair[:, 0] < d.seg_pair[:, 1])


def test_dual_needs_simplices():
    with pytest.raises(NonSimplicialMesh):
        build_dual(generate_refined_nonconforming_mesh(1), "vertex")


def test_round_trip(tmp_path):
    m = generate_triangular_mesh(2)
    write_mesh(m, tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt")
    assert (r.n_vertices, r.n_cells, r.n_faces) == (m.n_vertices, m.n_cells, m.n_faces)
    assert np.array_equal(r.cell_area, m.cell_area)
    h = generate_refined_nonconforming_mesh(2)
    write_mesh(h, tmp_path / "h.txt")
    assert read_mesh(tmp_path / "h.txt").n_faces == h.n_faces


def test_missing_vertex(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("gdmmesh 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n3 0 1 7\n")
    with pytest.raises(ParseError, match="line 7"):
        read_mesh(p)


def test_area_mismatch(tmp_path):
    p = tmp_path / "small.txt"
    # square of area 0.9 inside the unit square
    s = np.sqrt(0.9)
    p.write_text(f"gdmmesh 1\nvertices 4\n0 0\n{s} 0\n{s} {s}\n0 {s}\ncells 1\n4 0 1 2 3\n")
    with pytest.raises(GeometryError):
        read_mesh(p)


def test_bad_header(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("mesh 2\n")
    with pytest.raises(ParseError, match="line 1"):
        read_mesh(p)
