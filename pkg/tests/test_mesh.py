import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphokit.geometry import Curve, signed_area
from morphokit.mapping import DisplacementField
from morphokit.mesh import (
    MeshError,
    MeshInversionError,
    coarsen,
    deform,
    interpolate_p1,
    locate_points,
    point_in_polygon,
    quality_report,
    read_msh,
    refine,
    triangle_edge_lengths,
    triangulate,
    write_msh,
)
from morphokit.shapes import circle, kidney, random_star

from conftest import grid_mesh, unit_square


def _ring(mesh):
    return mesh.vertices[mesh.boundary_edges()[:, 0]]


# --------------------------------------------------------------------------
# Triangulation

def test_unit_square_quality(square_mesh):
    m = square_mesh
    rep = quality_report(m)
    assert rep.passed, rep.reasons
    assert rep.min_edge_ratio >= 0.1
    assert rep.max_edge_length <= 0.1 + 1e-12
    assert m.area == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.signed_areas() > 0)


def test_boundary_edges_follow_input(square_mesh):
    be = square_mesh.boundary_edges()
    p, q = square_mesh.vertices[be[:, 0]], square_mesh.vertices[be[:, 1]]
    # domain on the left: cross product with the centre direction is positive
    mid = 0.5 * (p + q)
    d = q - p
    to_c = np.array([0.5, 0.5]) - mid
    assert np.all(d[:, 0] * to_c[:, 1] - d[:, 1] * to_c[:, 0] > 0)
    on_side = np.isclose(p, 0) | np.isclose(p, 1)
    assert np.all(on_side.any(axis=1))
    assert set(square_mesh.boundary_edge_tags()) == {"boundary"}


def test_annulus_with_hole():
    outer = circle(2.0, 64, label="outer")
    hole = circle(1.0, 32, label="inner").reversed()
    m = triangulate(outer, [hole], target_h=0.2)
    assert m.area == pytest.approx(signed_area(outer) + signed_area(hole), rel=1e-12)
    cent = m.vertices[m.triangles].mean(axis=1)
    assert np.all(np.hypot(*cent.T) > 0.95)
    assert set(m.boundary_edge_tags()) == {"outer", "inner"}


def test_subdomain_regions():
    outer = circle(2.0, 64, label="mesenchyme")
    sub = circle(0.8, 32, center=(0.3, 0.0), label="epithelium")
    m = triangulate(outer, [sub], target_h=0.2)
    tags = np.array(m.triangle_region_tag)
    areas = m.signed_areas()
    assert areas[tags == "epithelium"].sum() == pytest.approx(signed_area(sub), rel=1e-12)
    assert areas[tags == "mesenchyme"].sum() == pytest.approx(signed_area(outer) - signed_area(sub), rel=1e-12)
    # interface edges are constrained but not on the boundary
    assert "epithelium" in m.edge_tags
    assert set(m.boundary_edge_tags()) == {"mesenchyme"}


def test_region_seed_override():
    outer = circle(2.0, 48, label="a")
    sub = circle(0.8, 24, label="b")
    m = triangulate(outer, [sub], target_h=0.25, region_labels=[((1.5, 0.0), "ring")])
    assert set(m.triangle_region_tag) == {"b", "ring"}


def test_open_interface_splits_domain():
    outer = Curve([[0, 0], [2, 0], [2, 1], [0, 1]], label="box")
    cut = Curve([[1, 0], [1, 1]], closed=False, label="cut")
    m = triangulate(outer, [cut], target_h=0.2, region_labels=[((0.5, 0.5), "left"), ((1.5, 0.5), "right")])
    tags = np.array(m.triangle_region_tag)
    assert m.signed_areas()[tags == "left"].sum() == pytest.approx(1.0)
    assert m.signed_areas()[tags == "right"].sum() == pytest.approx(1.0)
    cut_edges = m.edges[np.array(m.edge_tags) == "cut"]
    assert np.allclose(m.vertices[cut_edges.ravel(), 0], 1.0)


def test_crossing_curves_rejected():
    outer = circle(2.0, 64, label="outer")
    a = circle(0.8, 32, center=(-0.3, 0), label="a")
    b = circle(0.8, 32, center=(0.3, 0), label="b")
    with pytest.raises(MeshError, match="'a'.*'b'|'b'.*'a'"):
        triangulate(outer, [a, b], target_h=0.2)


def test_input_validation():
    with pytest.raises(MeshError, match="counter-clockwise"):
        triangulate(circle(1, 32).reversed())
    with pytest.raises(MeshError, match="closed"):
        triangulate(Curve([[0, 0], [1, 0], [1, 1]], closed=False))


def test_gradient_length_rule():
    # 50 um gradient, factor 5 -> edges of at most 10 um
    sq = Curve(np.array([[0, 0], [100, 0], [100, 100], [0, 100.0]]), label="tissue")
    m = triangulate(sq, target_h=50.0 / 5)
    rep = quality_report(m, gradient_length=50.0, factor=5)
    assert rep.passed, rep.reasons
    assert rep.max_edge_length <= 10.0
    assert not quality_report(m, gradient_length=40.0, factor=5).passed


def test_quality_report_flags_inversion():
    m = grid_mesh(3)
    v = np.array(m.vertices)
    v[5] = [2.0, 2.0]
    rep = quality_report(m.with_vertices(v))
    assert rep.n_inverted > 0 and not rep.passed


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_random_star_meshes_pass_quality(seed):
    c = random_star(np.random.default_rng(seed), 1.0, 0.35, 5, 96)
    m = triangulate(c, target_h=0.12)
    rep = quality_report(m)
    assert rep.passed
    assert rep.max_edge_length <= 0.12 + 1e-12
    assert m.area == pytest.approx(signed_area(c), rel=1e-12)


# --------------------------------------------------------------------------
# Refine / coarsen

def test_refine_quadruples(square_mesh):
    r = refine(square_mesh)
    assert len(r.triangles) == 4 * len(square_mesh.triangles)
    assert r.area == pytest.approx(1.0, abs=1e-12)
    assert quality_report(r).n_inverted == 0
    assert triangle_edge_lengths(r.vertices, r.triangles).max() == pytest.approx(
        triangle_edge_lengths(square_mesh.vertices, square_mesh.triangles).max() / 2)
    assert len(r.boundary_edges()) == 2 * len(square_mesh.boundary_edges())


def test_refine_snaps_to_curve():
    m = triangulate(circle(1.0, 32, label="c"), target_h=0.3, boundary_steiner=False)
    snap = {"c": lambda p: p / np.hypot(*p.T)[:, None]}
    r = refine(m, snap=snap)
    assert np.allclose(np.hypot(*_ring(r).T), 1.0)
    # default: midpoints stay on the stored polyline
    r0 = refine(m)
    assert r0.area == pytest.approx(m.area, rel=1e-12)


def test_coarsen_reduces_and_keeps_validity():
    m = triangulate(kidney(128, "k"), target_h=0.05)
    c = coarsen(m, factor=2.0)
    assert c.n_vertices < m.n_vertices
    rep = quality_report(c)
    assert rep.n_inverted == 0
    assert rep.min_edge_ratio >= 0.1
    assert c.area == pytest.approx(m.area, rel=0.02)


def test_refine_then_coarsen_no_inversions():
    m = triangulate(circle(1.0, 48, label="c"), target_h=0.2)
    for mesh in (refine(m), coarsen(refine(refine(m)), factor=3.0)):
        assert quality_report(mesh).n_inverted == 0


# --------------------------------------------------------------------------
# Deformation

def _radial_field(curve, factor):
    p = curve.points
    return DisplacementField(p, (factor - 1.0) * p)


def test_deform_zero_is_identity():
    m = triangulate(circle(1.0, 64, label="c"), target_h=0.2)
    d = deform(m, _radial_field(circle(1.0, 64), 1.5), s=0.0)
    np.testing.assert_array_equal(d.vertices, m.vertices)


def test_deform_radial_scaling():
    c = circle(1.0, 64, label="c")
    m = triangulate(c, target_h=0.2, boundary_steiner=False)
    d = deform(m, _radial_field(c, 1.5))
    # harmonic extension of a linear boundary map is that linear map
    np.testing.assert_allclose(d.vertices, 1.5 * m.vertices, atol=1e-10)
    np.testing.assert_array_equal(d.triangles, m.triangles)
    half = deform(m, _radial_field(c, 1.5), s=0.5)
    np.testing.assert_allclose(half.vertices, 1.25 * m.vertices, atol=1e-10)


def test_deform_inversion_detected():
    c = circle(1.0, 32, label="c")
    m = triangulate(c, target_h=0.3, boundary_steiner=False)
    p = c.points
    # reflect half the boundary through the origin: folds the mesh
    vec = np.where(p[:, :1] > 0, -2.2 * p, 0.0)
    with pytest.raises(MeshInversionError):
        deform(m, DisplacementField(p, vec))


def test_deform_uncovered_boundary_errors():
    c = circle(1.0, 32, label="c")
    m = triangulate(c, target_h=0.3)
    far = circle(5.0, 32)
    with pytest.raises(MeshError, match="not covered"):
        deform(m, DisplacementField(far.points, np.zeros((32, 2))))


def test_deform_fixed_labels():
    outer = Curve([[0, 0], [2, 0], [2, 1], [0, 1]], label="box")
    m = triangulate(outer, target_h=0.25, boundary_steiner=False)
    top = m.vertices[np.isclose(m.vertices[:, 1], 1.0)]
    order = np.argsort(top[:, 0])
    field = DisplacementField(top[order], np.tile([0.0, 0.2], (len(top), 1)), closed=False)
    with pytest.raises(MeshError):
        deform(m, field)
    d = deform(m, field, fixed_labels=("box",))
    assert d.area > m.area


# --------------------------------------------------------------------------
# Location, interpolation, files

def test_interpolation_reproduces_linear(square_mesh, rng):
    f = lambda p: 3 * p[:, 0] - 2 * p[:, 1] + 0.5
    q = rng.uniform(0, 1, (500, 2))
    np.testing.assert_allclose(interpolate_p1(square_mesh, f(square_mesh.vertices), q), f(q), atol=1e-12)
    tri, bary = locate_points(square_mesh, [[2.0, 2.0]])
    assert tri[0] == -1
    with pytest.raises(MeshError):
        interpolate_p1(square_mesh, f(square_mesh.vertices), [[2.0, 2.0]])


def test_point_in_polygon():
    sq = unit_square().points
    inside = point_in_polygon(np.array([[0.5, 0.5], [1.5, 0.5], [0.999, 0.001]]), sq)
    assert inside.tolist() == [True, False, True]


def test_msh_roundtrip(tmp_path):
    outer = circle(2.0, 48, label="mesenchyme")
    sub = circle(0.8, 24, label="epithelium")
    m = triangulate(outer, [sub], target_h=0.3)
    write_msh(m, tmp_path / "m.msh")
    text = (tmp_path / "m.msh").read_text()
    assert text.startswith("$MeshFormat\n2.2 0 8")
    back = read_msh(tmp_path / "m.msh")
    np.testing.assert_allclose(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    assert back.triangle_region_tag == m.triangle_region_tag
    assert sorted(back.edge_tags) == sorted(m.edge_tags)
