import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphokit.geometry import Curve, read_curve, resample_equidistant, signed_area
from morphokit.mapping import (
    DisplacementField,
    MappingConfig,
    MappingError,
    crossing_count,
    field_quality,
    map_diffusion,
    map_minimal_distance,
    map_normal,
    map_uniform,
    nearest_on_polyline,
    read_field,
    run_mapping_pipeline,
    unmapped_fraction,
    write_field,
)
from morphokit.mapping.field import max_stretch
from morphokit.geometry import segments_intersect
from morphokit.shapes import circle, kidney, random_star

from conftest import FIXTURES


def _brute_crossings(field):
    a, b = field.sources, field.targets
    return sum(segments_intersect(a[i], b[i], a[j], b[j])
               for i in range(len(a)) for j in range(i + 1, len(a)))


def _dist_to(points, curve):
    a, b = curve.segments
    d = b - a
    out = []
    for p in np.atleast_2d(points):
        t = np.clip(((p - a) * d).sum(1) / (d * d).sum(1), 0, 1)
        out.append(np.hypot(*(a + t[:, None] * d - p).T).min())
    return np.array(out)


def _arc_param(points, curve):
    """Arc-length position of the nearest polyline point (open curves)."""
    a, b = curve.segments
    d = b - a
    L = np.hypot(*d.T)
    cum = np.concatenate([[0], np.cumsum(L)])
    out = []
    for p in points:
        t = np.clip(((p - a) * d).sum(1) / (d * d).sum(1), 0, 1)
        k = np.argmin(np.hypot(*(a + t[:, None] * d - p).T))
        out.append(cum[k] + t[k] * L[k])
    return np.array(out)


def _load(name):
    return read_curve(FIXTURES / name / "c1.csv"), read_curve(FIXTURES / name / "c2.csv")


def _star_pair(seed, n=96):
    rng = np.random.default_rng(seed)
    inner = random_star(rng, 1.0, 0.3, 5, n)
    outer = random_star(rng, 2.4, 0.3, 4, n)
    return inner, outer


# --------------------------------------------------------------------------
# Minimal distance

def test_minimal_distance_identity_and_circles():
    c = kidney(64)
    assert np.all(map_minimal_distance(c, c).vectors == 0)
    f = map_minimal_distance(circle(1.0, 256), circle(2.0, 256))
    lens = np.hypot(*f.vectors.T)
    np.testing.assert_allclose(lens, 1.0, atol=1e-3)
    # the nearest point on the polygonal circle lies within half an angular step
    radial = f.vectors / lens[:, None]
    np.testing.assert_allclose(radial, f.sources, atol=np.pi / 256)


def test_nearest_on_polyline_matches_brute_force(rng):
    c = random_star(rng, 1.0, 0.3, 5, 80)
    pts = rng.uniform(-2, 2, (200, 2))
    q, _ = nearest_on_polyline(pts, c)
    np.testing.assert_allclose(np.hypot(*(q - pts).T), _dist_to(pts, c), atol=1e-12)
    assert _dist_to(q, c).max() < 1e-12


def test_minimal_distance_offset_circles_leaves_gaps():
    c1 = circle(1.0, 128)
    c2 = circle(1.0, 128, center=(1.5, 0.0))
    f = map_minimal_distance(c1, c2)
    assert field_quality(f, c2).unmapped_fraction > 0.2


# --------------------------------------------------------------------------
# Uniform

def test_uniform_segments():
    f = map_uniform(Curve([[0, 0], [1, 0]], closed=False), Curve([[0, 1], [2, 1]], closed=False), n=3)
    np.testing.assert_allclose(f.vectors, [[0, 1], [0.5, 1], [1, 1]], atol=1e-12)
    seg = Curve([[0, 0], [1, 0], [2, 0.5]], closed=False)
    assert np.all(map_uniform(seg, seg, n=10).vectors == 0) or np.abs(map_uniform(seg, seg, n=10).vectors).max() < 1e-12


def test_uniform_rejects_mixed():
    with pytest.raises(MappingError):
        map_uniform(circle(1, 16), Curve([[0, 0], [1, 0]], closed=False), n=8)
    with pytest.raises(MappingError, match="counts differ"):
        map_uniform(circle(1, 16), circle(2, 17))


def test_uniform_growth_bias_on_l_shape():
    # L-shape whose vertical arm grows from 1 to 3
    c1 = Curve([[2, 0], [0, 0], [0, 1]], closed=False)
    c2 = Curve([[2, 0], [0, 0], [0, 3]], closed=False)
    f = map_uniform(c1, c2, n=41)
    mag = np.hypot(*f.vectors.T)

    p1, p2 = resample_equidistant(c1, 41).points, resample_equidistant(c2, 41).points
    np.testing.assert_allclose(mag, np.hypot(*(p2 - p1).T), atol=1e-12)
    # growth is concentrated at the vertical arm: magnitudes rise along each arm
    horiz1, horiz2 = p1[:, 1] == 0, p2[:, 1] == 0
    assert np.all(np.diff(mag[horiz1 & horiz2]) > 0) and np.all(np.diff(mag[~horiz1]) > 0)
    assert mag[~horiz1].mean() > 2 * mag[horiz1].mean()
    assert mag[-1] == pytest.approx(2.0)


def test_uniform_closed_cyclic_offset():
    c = circle(1.0, 64)
    shifted = Curve(np.roll(circle(1.1, 64).points, 17, axis=0))
    f = map_uniform(c, shifted)
    np.testing.assert_allclose(np.hypot(*f.vectors.T), 0.1, atol=1e-12)
    assert f.info["offset"] == 17


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_uniform_preserves_order(seed):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.uniform(0.2, 1.0, 12))
    c1 = Curve(np.column_stack([x, rng.normal(0, 0.3, 12)]), closed=False)
    c2 = Curve(np.column_stack([1.5 * x, 1 + rng.normal(0, 0.3, 12)]), closed=False)
    f = map_uniform(c1, c2, n=50)
    assert np.all(np.diff(_arc_param(f.sources, c1)) > 0)
    assert np.all(np.diff(_arc_param(f.targets, c2)) > 0)


# --------------------------------------------------------------------------
# Normal

def test_normal_concentric_circles():
    f = map_normal(circle(1.0, 256), circle(2.0, 256))
    lens = np.hypot(*f.vectors.T)
    np.testing.assert_allclose(lens, 1.0, atol=1e-3)
    cosang = (f.vectors * f.sources).sum(1) / lens / np.hypot(*f.sources.T)
    assert cosang.min() > 1 - 1e-9
    assert _dist_to(f.targets, circle(2.0, 256)).max() < 1e-9


def test_normal_concentric_squares():
    def square(h, n):
        return resample_equidistant(Curve([[-h, -h], [h, -h], [h, h], [-h, h]]), n)

    f = map_normal(square(1.0, 64), square(2.0, 64))
    src = f.sources
    interior = np.abs(np.abs(src).max(1) - 1) < 1e-9
    interior &= np.abs(src).min(1) < 1 - 1e-6
    lens = np.hypot(*f.vectors.T)
    np.testing.assert_allclose(lens[interior], 1.0, atol=1e-9)
    # corners follow the averaged normal: the diagonal
    corner = np.all(np.isclose(np.abs(src), 1.0), axis=1)
    np.testing.assert_allclose(lens[corner], np.sqrt(2.0), atol=1e-9)


def test_normal_too_many_misses():
    # far-away target: most rays miss
    with pytest.raises(MappingError, match="diffusion"):
        map_normal(circle(1.0, 64), circle(0.5, 64, center=(10, 0)))


def test_kidney_fixture_forward_crosses_reverse_does_not():
    c1, c2 = _load("kidney_in_circle")
    a, b = resample_equidistant(c1, 128), resample_equidistant(c2, 128)
    fwd = map_normal(a, b)
    rev = map_normal(a, b, reverse=True)
    assert crossing_count(fwd) > 0
    assert crossing_count(rev) == 0
    assert crossing_count(fwd) == _brute_crossings(fwd)
    # reverse targets are the c2 samples themselves
    assert np.all(np.min(np.hypot(*(rev.targets[:, None, :] - b.points[None]).transpose(2, 0, 1)), axis=1) < 1e-12)
    assert _dist_to(rev.sources, a).max() < 1e-9


# --------------------------------------------------------------------------
# Diffusion

def test_diffusion_concentric_circles():
    f = map_diffusion(circle(1.0, 128), circle(2.0, 128), n_stream=64, mesh_h=0.05)
    lens = np.hypot(*f.vectors.T)
    np.testing.assert_allclose(lens, 1.0, atol=2e-2)
    cosang = (f.vectors * f.sources).sum(1) / lens / np.hypot(*f.sources.T)
    assert cosang.min() > 0.999
    assert _dist_to(f.targets, circle(2.0, 128)).max() < 1e-6


def test_diffusion_reverse_targets_on_c2():
    c1, c2 = circle(1.0, 96), circle(2.0, 96)
    f = map_diffusion(c1, c2, reverse=True, n_stream=48, mesh_h=0.1)
    assert f.method == "reverse_diffusion"
    assert _dist_to(f.targets, c2).max() < 1e-9
    assert _dist_to(f.sources, c1).max() < 1e-6
    assert crossing_count(f) == 0


def test_diffusion_thin_gap_small_vectors():
    c1 = circle(1.0, 96)
    c2 = circle(1.02, 96)
    f = map_diffusion(c1, c2, n_stream=32)
    assert np.hypot(*f.vectors.T).max() < 0.03


def test_diffusion_errors():
    with pytest.raises(MappingError, match="split_at_intersection"):
        map_diffusion(circle(1.0, 64), circle(1.0, 64, center=(0.5, 0)))
    with pytest.raises(MappingError, match="inside"):
        map_diffusion(circle(1.0, 64), circle(1.0, 64, center=(5, 0)))
    with pytest.raises(MappingError):
        map_diffusion(circle(1.0, 64), Curve([[0, 0], [1, 0], [2, 1]], closed=False))


def test_diffusion_kidney_has_no_crossings():
    c1, c2 = _load("kidney_in_circle")
    f = map_diffusion(resample_equidistant(c1, 128), resample_equidistant(c2, 128))
    assert _brute_crossings(f) == 0


@given(st.integers(0, 100_000))
@settings(max_examples=6, deadline=None)
def test_diffusion_random_stars_no_crossings(seed):
    inner, outer = _star_pair(seed)
    f = map_diffusion(inner, outer, n_stream=64)
    assert crossing_count(f) == 0
    assert _dist_to(f.targets, outer).max() < 1e-6


# --------------------------------------------------------------------------
# Quality measures

def test_quality_zero_field():
    c = kidney(64)
    q = field_quality(DisplacementField(c.points, np.zeros((64, 2))), c)
    assert q.crossing_count == 0 and q.unmapped_fraction == 0.0
    assert q.max_stretch == pytest.approx(1.0)


def test_crossed_vectors_counted():
    f = DisplacementField([[0, 0], [1, 0], [5, 5]], [[1, 1], [-1, 1], [0, 1]], closed=False)
    assert crossing_count(f) == 1


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_crossing_count_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 1, (30, 2))
    f = DisplacementField(src, rng.normal(0, 0.2, (30, 2)))
    assert crossing_count(f) == _brute_crossings(f)


def test_unmapped_fraction_exact_cases():
    sq = Curve([[0, 0], [4, 0], [4, 4], [0, 4]])
    # a single endpoint at a corner covers eps along each adjacent side
    assert unmapped_fraction(sq, [[0, 0]], 1.0) == pytest.approx(1 - 2 / 16)
    # endpoint in the middle of a side, off the curve by 0.6: half-chord 0.8
    assert unmapped_fraction(sq, [[2, -0.6]], 1.0) == pytest.approx(1 - 1.6 / 16)
    # overlapping discs are not double counted
    assert unmapped_fraction(sq, [[2, 0], [2.5, 0]], 1.0) == pytest.approx(1 - 2.5 / 16)
    assert unmapped_fraction(sq, sq.points, 10.0) == 0.0


def test_unmapped_fraction_matches_dense_sweep(rng):
    c = random_star(rng, 1.0, 0.3, 5, 64)
    ends = rng.uniform(-1.3, 1.3, (25, 2))
    eps = 0.2
    dense = resample_equidistant(c, 20000).points
    d = np.min(np.hypot(*(dense[:, None, :] - ends[None]).transpose(2, 0, 1)), axis=1)
    assert unmapped_fraction(c, ends, eps) == pytest.approx((d > eps).mean(), abs=2e-3)


def test_max_stretch():
    src = [[0, 0], [1, 0], [2, 0]]
    f = DisplacementField(src, [[0, 0], [1, 0], [4, 0]], closed=False)
    # target spacings 2 and 4 over unit source spacing
    assert max_stretch(f) == pytest.approx(4.0)


def test_field_rejects_bad_input():
    with pytest.raises(MappingError):
        DisplacementField([[0, 0]], [[1, 1]])
    with pytest.raises(MappingError):
        DisplacementField([[0, 0], [1, 1]], [[1, 1]])
    with pytest.raises(MappingError, match="method"):
        DisplacementField([[0, 0], [1, 1]], [[1, 1], [0, 0]], method="magic")


def test_field_io_roundtrip(tmp_path):
    f = map_normal(circle(1.0, 32), circle(1.5, 32))
    write_field(f, tmp_path / "f.csv")
    back = read_field(tmp_path / "f.csv")
    np.testing.assert_array_equal(back.sources, f.sources)
    np.testing.assert_array_equal(back.vectors, f.vectors)
    assert back.method == "normal" and back.closed


# --------------------------------------------------------------------------
# Pipeline

def test_pipeline_identical_curves():
    c = kidney(100)
    f, q = run_mapping_pipeline(c, c, MappingConfig(n=64))
    assert f.method == "normal"
    assert np.abs(f.vectors).max() < 1e-9
    assert q.crossing_count == 0


def test_pipeline_open_curve_uses_uniform():
    th = np.linspace(0, np.pi / 2, 30)
    arc1 = Curve(np.column_stack([np.cos(th), np.sin(th)]), closed=False)
    th2 = np.linspace(0, np.pi * 0.6, 30)
    arc2 = Curve(np.column_stack([1.5 * np.cos(th2), 1.5 * np.sin(th2)]), closed=False)
    f, q = run_mapping_pipeline(arc1, arc2, MappingConfig(n=40))
    assert f.method == "uniform"
    assert q.crossing_count == 0


def test_pipeline_kidney_escalates():
    c1, c2 = _load("kidney_in_circle")
    f, q = run_mapping_pipeline(c1, c2, MappingConfig(n=128))
    assert f.method != "normal"
    assert q.crossing_count == 0
    assert f.info["tried"][0].startswith("normal")


def test_pipeline_direction_and_mixed():
    c1 = circle(1.0, 64).reversed()
    f, _ = run_mapping_pipeline(c1, circle(1.5, 64), MappingConfig(n=32, method="normal"))
    np.testing.assert_allclose(np.hypot(*f.vectors.T), 0.5, atol=1e-2)
    with pytest.raises(MappingError):
        run_mapping_pipeline(circle(1, 32), Curve([[0, 0], [1, 0]], closed=False))


def test_pipeline_prescale_improves_offset_circles():
    c1, c2 = _load("offset_circles")
    raw = MappingConfig(method="minimal_distance", n=128)
    pre = MappingConfig(method="minimal_distance", n=128, prescale=True)
    f0, q0 = run_mapping_pipeline(c1, c2, raw)
    f1, q1 = run_mapping_pipeline(c1, c2, pre)
    assert q1.unmapped_fraction < q0.unmapped_fraction
    # sources are back on the original c1
    assert _dist_to(f1.sources, c1).max() < 1e-9
    assert _dist_to(f1.targets, resample_equidistant(c2, 128)).max() < 1e-9


def test_pipeline_config_from_dict():
    cfg = MappingConfig.from_dict({"method": "uniform", "n": 10, "unknown": 1})
    assert cfg.method == "uniform" and cfg.n == 10
