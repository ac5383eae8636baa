import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randeuler.mesh import (MeshParseError, MeshTopologyError, NonNestedError, build_structured,
                            circumcenters, face_average_jump, from_arrays, load_mesh,
                            locate_cells, mesh_constant_M, mesh_stats, nested_parent_map,
                            write_mesh)

from oracles import circumcenter, mass_inequality_sides, triangle_area


def closure_residual(mesh):
    out = np.zeros((mesh.n_cells, 2))
    for k in range(mesh.n_cells):
        for f, sgn in zip(mesh.cell_faces[k], mesh.cell_face_sign[k]):
            out[k] += sgn * mesh.face_length[f] * mesh.face_normal[f]
    return np.abs(out).max()


def test_single_square():
    m = build_structured(1, 1, 1.0, 1.0)
    assert m.n_cells == 2 and m.n_faces == 5
    assert len(m.interior) == 1 and len(m.boundary) == 4
    np.testing.assert_allclose(m.cell_area, 0.5, rtol=0, atol=1e-15)


def test_four_by_four_h():
    m = build_structured(4, 4, 1.0, 1.0)
    assert m.n_cells == 32
    assert m.h == pytest.approx(0.25 * math.sqrt(2), abs=1e-15)


def test_rectangle_area_partition():
    m = build_structured(2, 1, 2.0, 1.0)
    assert m.cell_area.sum() == 2.0


@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (3, 5, 2.0, 0.5), (8, 8, 1, 1), (16, 1, 1, 1 / 16)])
def test_invariants(shape):
    m = build_structured(*shape)
    np.testing.assert_allclose(np.linalg.norm(m.face_normal, axis=1), 1.0, atol=1e-12)
    assert closure_residual(m) <= 1e-10
    assert np.all(m.cell_area > 0)
    interior = m.interior
    assert np.all(m.face_left[interior] != m.face_right[interior])
    # boundary normals point away from the cell centroid, hence out of the rectangle
    b = m.boundary
    mid = m.vertices[m.face_vertices[b]].mean(axis=1)
    outward = ((mid - m.centroids[m.face_left[b]]) * m.face_normal[b]).sum(1)
    assert np.all(outward > 0)


def test_roundtrip(tmp_path):
    m = build_structured(1, 1, 1, 1)
    write_mesh(m, tmp_path / "a.mesh2d")
    m2 = load_mesh(tmp_path / "a.mesh2d")
    assert (m2.n_cells, m2.n_faces, m2.n_vertices) == (m.n_cells, m.n_faces, m.n_vertices)
    np.testing.assert_allclose(m2.cell_area, m.cell_area, rtol=0, atol=1e-14)


def test_face_shared_by_three_cells(tmp_path):
    text = """mesh2d 5 3
v 0 0
v 1 0
v 0.5 1
v 0.5 -1
v 0.6 0.8
c 0 1 2
c 1 0 3
c 0 1 4
"""
    (tmp_path / "bad.mesh2d").write_text(text)
    with pytest.raises(MeshTopologyError):
        load_mesh(tmp_path / "bad.mesh2d")


def test_negatively_oriented(tmp_path):
    (tmp_path / "neg.mesh2d").write_text("mesh2d 3 1\nv 0 0\nv 1 0\nv 0 1\nc 0 2 1\n")
    with pytest.raises(MeshTopologyError):
        load_mesh(tmp_path / "neg.mesh2d")


def test_hanging_node():
    # left square split in two, right square split in four around its left edge midpoint
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [2, 0], [2, 1], [1, 0.5]], dtype=float)
    cells = np.array([[0, 1, 2], [0, 2, 3], [1, 4, 6], [4, 5, 6], [5, 2, 6]])
    with pytest.raises(MeshTopologyError):
        from_arrays(verts, cells)


def test_malformed_file(tmp_path):
    (tmp_path / "x.mesh2d").write_text("mesh2d 3 1\nv 0 0\nv 1 zero\nv 0 1\nc 0 1 2\n")
    with pytest.raises(MeshParseError):
        load_mesh(tmp_path / "x.mesh2d")
    (tmp_path / "y.mesh2d").write_text("mesh2d 4 1\nv 0 0\nv 1 0\nv 0 1\nc 0 1 2\n")
    with pytest.raises(MeshParseError):
        load_mesh(tmp_path / "y.mesh2d")


def test_stats_uniform():
    s = mesh_stats(build_structured(4, 4, 1, 1))
    assert s.c1 == pytest.approx(0.25, abs=1e-14) and s.C1 == pytest.approx(0.25, abs=1e-14)
    assert s.c2 == pytest.approx(0.25 / (0.25 * math.sqrt(2)), abs=1e-14)
    assert s.C2 == pytest.approx(1.0, abs=1e-14)
    assert s.min_angle == pytest.approx(math.pi / 4, abs=1e-12)


def test_circumcenters_against_bisector_solve():
    m = build_structured(4, 3, 1.3, 0.7)
    cc = circumcenters(m)
    for k, c in enumerate(m.cells):
        np.testing.assert_allclose(cc[k], circumcenter(*m.vertices[c]), atol=1e-13)


def test_diagonal_faces_are_degenerate():
    m = build_structured(4, 4, 1, 1)
    s = mesh_stats(m)
    f = m.interior
    v = m.vertices[m.face_vertices[f]]
    d = v[:, 1] - v[:, 0]
    diagonal = np.abs(d[:, 0]) > 1e-12
    diagonal &= np.abs(d[:, 1]) > 1e-12
    assert s.degenerate_alignment_faces == diagonal.sum() == 16
    assert s.alignment_deviation == 1.0


def test_stats_permutation_invariant():
    m = build_structured(3, 4, 1, 2)
    rng = np.random.default_rng(3)
    vp = rng.permutation(m.n_vertices)
    inv = np.argsort(vp)
    cells = inv[m.cells][rng.permutation(m.n_cells)]
    cells = np.roll(cells, 1, axis=1)  # rotation keeps the orientation
    m2 = from_arrays(m.vertices[vp], cells)
    a, b = mesh_stats(m), mesh_stats(m2)
    for name in ("h", "c1", "C1", "c2", "C2", "min_angle", "constM", "alignment_deviation"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-13, abs=1e-15)
    assert a.degenerate_alignment_faces == b.degenerate_alignment_faces


def test_constant_M_single_square():
    assert mesh_constant_M(build_structured(1, 1, 1, 1)) == pytest.approx(2.0, rel=1e-14)


def test_constant_M_single_triangle():
    m = from_arrays(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    assert mesh_constant_M(m) == 0.0


def test_constant_M_four_by_four():
    m = build_structured(4, 4, 1, 1)
    h = m.h
    assert mesh_constant_M(m) == pytest.approx(h * (0.25 + 0.25 + h) / 2 / 0.03125, rel=1e-14)


def test_constant_M_inequality_random_fields():
    m = build_structured(4, 4, 1, 1)
    M = mesh_constant_M(m)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = rng.random(m.n_cells) * (rng.random(m.n_cells) < rng.random())
        lhs, rhs = mass_inequality_sides(m, r)
        assert lhs <= M * rhs * (1 + 1e-12) + 1e-300
    # equality for the indicator of a maximizing cell
    ratios = []
    for k in range(m.n_cells):
        r = np.zeros(m.n_cells)
        r[k] = 1.0
        lhs, rhs = mass_inequality_sides(m, r)
        ratios.append(lhs / rhs)
    assert max(ratios) == pytest.approx(M, rel=1e-14)


def test_face_average_jump_examples():
    m = build_structured(1, 1, 1, 1)
    f = int(m.interior[0])
    vals = np.zeros(2)
    vals[m.face_left[f]] = 2.0
    vals[m.face_right[f]] = 1.0
    assert face_average_jump(m, vals, f) == (1.5, -1.0)
    assert face_average_jump(m, np.full(2, 3.0), f) == (3.0, 0.0)
    vec = np.zeros((2, 2))
    vec[m.face_left[f]] = (1, 0)
    vec[m.face_right[f]] = (0, 1)
    avg, jmp = face_average_jump(m, vec, f)
    np.testing.assert_array_equal(avg, [0.5, 0.5])
    np.testing.assert_array_equal(jmp, [-1, 1])
    with pytest.raises(ValueError):
        face_average_jump(m, vals, int(m.boundary[0]))


@given(st.integers(0, 2**32 - 1))
def test_jump_antisymmetry(seed):
    m = build_structured(3, 3)
    flipped = m.flip_normals()
    vals = np.random.default_rng(seed).normal(size=m.n_cells)
    for f in m.interior:
        a1, j1 = face_average_jump(m, vals, f)
        a2, j2 = face_average_jump(flipped, vals, f)
        assert a1 == a2 and j1 == -j2


@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 3), st.floats(0.1, 3))
def test_structured_closure_property(nx, ny, Lx, Ly):
    m = build_structured(nx, ny, Lx, Ly)
    assert closure_residual(m) <= 1e-10
    assert m.cell_area.sum() == pytest.approx(Lx * Ly, rel=1e-13)
    for k in range(0, m.n_cells, max(1, m.n_cells // 5)):
        assert m.cell_area[k] == pytest.approx(triangle_area(*m.vertices[m.cells[k]]), rel=1e-13)


def test_locate_and_nesting():
    coarse = build_structured(4, 4)
    fine = build_structured(8, 8)
    parent = nested_parent_map(coarse, fine)
    assert np.all(locate_cells(coarse, fine.centroids) == parent)
    np.testing.assert_allclose(np.bincount(parent, weights=fine.cell_area), coarse.cell_area)
    with pytest.raises(NonNestedError):
        nested_parent_map(coarse, build_structured(6, 6))
