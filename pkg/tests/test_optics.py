import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from eghost.errors import ConfigInvalid, HoleClipped, NoIntersection, OpticsOutOfRange, OutsideNA
from eghost.optics import (Mask, OpticalSystem, ParabolicMirror, Ray, back_project, cat_mask,
                           effective_magnification, grating_mask, intersect, jacobian_determinant, preset,
                           reflect, sagitta, trace_to_image, transmit)
from oracles import angle_between, numeric_normal, oracle_trace, reflect_reference, surface_intersection

MIRROR = ParabolicMirror()
SYS16 = preset("grating-run")
SYS19 = preset("cat-run")


def cone_direction(m, theta, phi):
    return math.cos(theta) * m.b + math.sin(theta) * (math.cos(phi) * m.a + math.sin(phi) * m.e1)


# mirror

def test_mirror_validation():
    with pytest.raises(ConfigInvalid):
        ParabolicMirror(focal_length_um=0)
    with pytest.raises(ConfigInvalid):
        ParabolicMirror(numerical_aperture=1.0)
    with pytest.raises(ConfigInvalid):
        ParabolicMirror(beam_hole_diameter_um=-1)
    with pytest.raises(ConfigInvalid):
        ParabolicMirror(axis=(0, 0, 1), beam_axis=(0, 0.1, 1))


def test_ray_direction_is_unit():
    r = Ray((0, 0, 0), (3.0, 4.0, 12.0))
    assert abs(np.linalg.norm(r.d) - 1.0) < 1e-12


def test_focus_rays_emerge_parallel():
    rng = np.random.default_rng(0)
    dirs = []
    while len(dirs) < 300:
        th = math.acos(1 - rng.random() * (1 - math.cos(MIRROR.aperture_half_angle)))
        try:
            dirs.append(reflect(Ray((0, 0, 0), cone_direction(MIRROR, th, 2 * math.pi * rng.random())), MIRROR).d)
        except (HoleClipped, OutsideNA):
            pass
    dirs = np.array(dirs)
    worst = max(angle_between(u, v) for u in dirs[::7] for v in dirs)
    assert worst < 1e-9


def test_na_edge_ray_parallel_with_matching_offset():
    th = MIRROR.aperture_half_angle * (1 - 1e-9)
    out = reflect(Ray((0, 0, 0), cone_direction(MIRROR, th, 0.3)), MIRROR)
    assert angle_between(out.d, MIRROR.a) < 1e-9
    s = out.o
    radial = np.linalg.norm(s - (s @ MIRROR.a) * MIRROR.a)
    # distance of the outgoing line from the axis line (they are parallel)
    w = s - (s @ out.d) * out.d
    assert abs(np.linalg.norm(w) - radial) < 1e-9 * radial


def test_off_focus_ray_matches_numeric_oracle():
    o = np.array([2.0, 0.0, 0.0])
    for th, phi in [(0.3, 0.5), (0.5, 2.0), (0.2, -1.0)]:
        d = cone_direction(MIRROR, th, phi)
        out = reflect(Ray(o, d), MIRROR, clip=False)
        hit = surface_intersection(o, d, MIRROR.focal_length_um, MIRROR.a)
        ref = reflect_reference(d, numeric_normal(hit, MIRROR.focal_length_um, MIRROR.a))
        assert np.allclose(out.o, hit, atol=1e-8)
        assert abs(angle_between(out.d, MIRROR.a) - angle_between(ref, MIRROR.a)) < 1e-9


@given(st.floats(0.2, 0.6), st.floats(-math.pi, math.pi), st.floats(-5, 5), st.floats(-5, 5))
def test_reflection_law(th, phi, ox, oy):
    o = np.array([ox, 0.0, oy])
    r_in = Ray(o, cone_direction(MIRROR, th, phi))
    out = reflect(r_in, MIRROR, clip=False)
    n = MIRROR.normal(out.o)
    assert abs(np.linalg.norm(out.d) - 1) < 1e-12
    assert abs(abs(r_in.d @ n) - abs(out.d @ n)) < 1e-12


def test_reflect_errors():
    with pytest.raises(HoleClipped):
        reflect(Ray((0, 0, 0), MIRROR.b), MIRROR)
    with pytest.raises(OutsideNA):
        reflect(Ray((0, 0, 0), cone_direction(MIRROR, 0.9, 0.0)), MIRROR)
    with pytest.raises(NoIntersection):
        # parallel to the axis from outside the bowl, heading away from it
        intersect(Ray((0.0, 5000.0, -5000.0), (0.0, 1.0, 0.0)), MIRROR)


# mapping

def test_focus_maps_to_image_centre():
    assert np.allclose(trace_to_image([0.0, 0.0], SYS16), 0.0, atol=1e-12)
    assert np.allclose(back_project([0.0, 0.0], SYS16), 0.0, atol=1e-4)


def test_unit_point_at_m16():
    X, Y = trace_to_image([1.0, 0.0], SYS16)
    assert abs(X + 16.0) < 0.16 and abs(Y) < 1e-9


def test_trace_matches_independent_raytrace():
    rng = np.random.default_rng(1)
    for p in rng.uniform(-15, 15, (10, 2)):
        assert np.allclose(trace_to_image(p, SYS16), oracle_trace(p, SYS16), atol=1e-5)


def test_straight_line_maps_to_curved_locus():
    ys = np.linspace(-15, 15, 61)
    line = np.column_stack([np.full_like(ys, 5.0), ys])
    ours = sagitta(trace_to_image(line, SYS16))
    dense = sagitta(np.array([oracle_trace(p, SYS16) for p in line]))
    assert ours > 0.1
    assert abs(ours - dense) < 0.05 * dense


def test_out_of_range_points():
    with pytest.raises(OpticsOutOfRange):
        trace_to_image([200.0, 0.0], SYS16)
    with pytest.raises(OpticsOutOfRange):
        back_project([-16 * 300.0, 0.0], SYS16)


def test_back_project_round_trip():
    pts = np.random.default_rng(2).uniform(-15, 15, (100, 2))
    for sys in (SYS16, SYS19):
        assert np.abs(back_project(trace_to_image(pts, sys), sys) - pts).max() < 1e-3
        img = trace_to_image(pts, sys)
        assert np.abs(trace_to_image(back_project(img, sys), sys) - img).max() < 1e-3


def test_grating_spacing_at_sample_plane():
    img = np.column_stack([60.0 * np.arange(-3, 4), np.zeros(7)])
    x = back_project(img, SYS16)[:, 0]
    assert abs(np.abs(np.diff(x)).mean() - 3.75) < 0.04


def test_jacobian_bounded_away_from_zero():
    pts = np.random.default_rng(3).uniform(-40, 40, (200, 2))
    det = jacobian_determinant(pts, SYS16)
    assert np.all(det > 0.5 * 16 ** 2)


def test_effective_magnification_presets():
    assert abs(effective_magnification(SYS16) - 16.0) < 0.2
    assert abs(effective_magnification(SYS19) - 19.0) < 0.2
    assert SYS16.magnification == pytest.approx(16.0, rel=1e-9)


def test_doubling_image_distance_doubles_m():
    s1 = OpticalSystem(MIRROR, 150.0, 1.5, 20.0)
    s2 = OpticalSystem(MIRROR, 150.0, 1.5, 40.0)
    assert abs(s2.magnification / s1.magnification - 2.0) < 0.02


def test_system_validation():
    with pytest.raises(ConfigInvalid):
        OpticalSystem(MIRROR, 150.0, 1.5, -1.0)
    with pytest.raises(ConfigInvalid):
        preset("nope")


# masks

def test_open_mask_always_transmits():
    pts = np.random.default_rng(4).uniform(-500, 500, (1000, 2))
    assert transmit(Mask.open(), pts).all()
    assert transmit(None, pts).all()


def test_boundary_point_goes_to_lower_index():
    m = Mask(np.array([[False, True]]), 1.0, (0.0, 0.0))
    assert not transmit(m, [1.0, 0.5])
    assert transmit(m, [1.0 + 1e-9, 0.5])
    m2 = Mask(np.array([[True, False]]), 1.0, (0.0, 0.0))
    assert transmit(m2, [1.0, 0.5])
    assert not transmit(m2, [5.0, 0.5])  # outside the raster


def test_grating_transmits_half():
    g = grating_mask(60.0, 0.5, 0.0, 0.0)
    pts = np.random.default_rng(5).uniform(-450, 450, (100_000, 2))
    assert abs(transmit(g, pts).mean() - 0.5) < 0.01


def test_mask_validation():
    with pytest.raises(ConfigInvalid):
        Mask(np.zeros((0, 0), bool), 1.0)
    with pytest.raises(ConfigInvalid):
        Mask(np.ones((2, 2), bool), 0.0)


def test_cat_dimensions():
    cat = cat_mask()
    r = cat.raster
    rows, cols = np.flatnonzero(r.any(axis=1)), np.flatnonzero(r.any(axis=0))
    h = (rows[-1] - rows[0] + 1) * cat.pixel_pitch_um
    w = (cols[-1] - cols[0] + 1) * cat.pixel_pitch_um
    assert 450 <= w <= 650 and 500 <= h <= 700
    # eyes are opaque holes inside the head
    assert not transmit(cat, [-45.0, 135.0]) and not transmit(cat, [45.0, 135.0])
    assert transmit(cat, [0.0, 135.0])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_mirroring_raster_mirrors_transmission(seed):
    rng = np.random.default_rng(seed)
    m = Mask(rng.random((7, 9)) < 0.5, 1.5, (-4.0, -6.0))
    pts = rng.uniform(-8, 8, (500, 2))
    assume(np.all(np.abs(((pts - [-4.0, -6.0]) / 1.5) % 1) > 1e-9))
    flip = pts * [-1.0, 1.0]
    assert np.array_equal(transmit(m.mirrored("x"), flip), transmit(m, pts))
    flip = pts * [1.0, -1.0]
    assert np.array_equal(transmit(m.mirrored("y"), flip), transmit(m, pts))
