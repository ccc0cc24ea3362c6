import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import plane_distance_scalar, random_rotation, render_ring, sphere_cap
from slmetro.fitting import (
    Circle2,
    DegenerateInput,
    HoughParams,
    Plane,
    PointGrid,
    bilinear_point,
    circle_mask,
    fit_base_plane,
    fit_plane,
    fit_sphere,
    hough_circles,
    mask_circle_regions,
    point_plane_distance,
    segment_above_plane,
)
from slmetro.simulator import build_scene, trace_image

# ---------------------------------------------------------------- planes


def test_plane_through_axis_points():
    pl = fit_plane([[1, 0, 0], [0, 1, 0], [0, 0, 1]], reference=None)
    n = pl.normal * np.sign(pl.a)
    assert np.allclose(n, np.ones(3) / np.sqrt(3), atol=1e-12)
    assert abs(abs(pl.d) - 1 / np.sqrt(3)) < 1e-12


def test_plane_z_equals_zero():
    g = np.mgrid[0:5, 0:5].reshape(2, -1).T.astype(float)
    pl = fit_plane(np.column_stack([g, np.zeros(len(g))]), reference=(0, 0, 1))
    assert np.allclose(pl.normal, [0, 0, 1], atol=1e-14) and abs(pl.d) < 1e-14


def test_plane_orientation_follows_reference():
    P = np.array([[0, 0, 5.0], [1, 0, 5], [0, 1, 5], [1, 1, 5]])
    assert fit_plane(P).signed_distance([0, 0, 0]) > 0
    assert fit_plane(P, reference=(0, 0, 10)).signed_distance([0, 0, 10]) > 0


def test_plane_noisy_recovery(rng):
    n = np.array([0.2, -0.1, 1.0])
    n /= np.linalg.norm(n)
    u = np.cross(n, [1, 0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    ab = rng.uniform(-50, 50, (10_000, 2))
    P = 200 * n + ab[:, :1] * u + ab[:, 1:] * v + rng.normal(0, 1e-3, (10_000, 1)) * n
    pl = fit_plane(P)
    assert np.degrees(np.arccos(min(1.0, abs(pl.normal @ n)))) < 1e-3
    assert abs(abs(pl.d) - 200) < 1e-3


def test_plane_exact_points_rms(rng):
    pl0 = Plane.from_normal([1.0, 2.0, -3.0], 4.0)
    a = rng.normal(size=(500, 3))
    P = a - np.outer(pl0.signed_distance(a), pl0.normal)
    pl = fit_plane(P)
    r = pl.signed_distance(P)
    assert np.sqrt(np.mean(r**2)) < 1e-10


@given(st.integers(0, 2**31))
def test_plane_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(50, 3)) * [10, 10, 0.1]
    R = random_rotation(rng)
    t = rng.uniform(-100, 100, 3)
    pl = fit_plane(P, reference=None)
    moved = fit_plane(P @ R.T + t, reference=None)
    want = pl.transformed(R, t)
    if moved.normal @ want.normal < 0:
        moved = moved.flipped()
    assert np.allclose(moved.normal, want.normal, atol=1e-9)
    assert abs(moved.d - want.d) < 1e-8


def test_point_plane_distance_example():
    pl = Plane(0.0, 0.0, 1.0, 0.0)
    assert point_plane_distance([1, 1, 1], Plane.from_normal([1, 1, 1], 0)) == pytest.approx(np.sqrt(3))
    assert point_plane_distance([3, 4, -2], pl) == pytest.approx(2.0)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_point_plane_distance_matches_scalar(p, abcd):
    a, b, c, d = abcd
    if np.hypot(np.hypot(a, b), c) < 1e-3:
        return
    pl = Plane.from_normal([a, b, c], d)
    assert point_plane_distance(p, pl) == pytest.approx(plane_distance_scalar(p, a, b, c, d), abs=1e-9)


def test_plane_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        fit_plane([[0, 0, 0], [1, 1, 1]])
    with pytest.raises(DegenerateInput):
        fit_plane([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]])
    with pytest.raises(ValueError):
        Plane(1.0, 1.0, 0.0, 0.0)


# ---------------------------------------------------------------- spheres


def test_sphere_exact_points(rng):
    P = sphere_cap(200, 3.0, (1.0, -2.0, 50.0), 180, rng)
    s = fit_sphere(P)
    assert np.allclose(s.center, [1.0, -2.0, 50.0], atol=1e-9)
    assert abs(s.radius - 3.0) < 1e-9


def test_sphere_noisy_cap(rng):
    P = sphere_cap(20_000, 1.0, (0.0, 0.0, 200.0), 70, rng)
    P += rng.normal(0, 1e-3, P.shape) * (P - [0, 0, 200.0])
    s = fit_sphere(P)
    assert abs(s.radius - 1.0) < 2e-3
    assert np.linalg.norm(s.center - [0, 0, 200.0]) < 2e-3


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.5, 20))
def test_sphere_large_offsets(cx, cy, cz, r):
    rng = np.random.default_rng(0)
    P = sphere_cap(300, r, (cx, cy, cz), 90, rng, axis=(0.3, 0.1, -1.0))
    s = fit_sphere(P)
    assert np.allclose(s.center, [cx, cy, cz], atol=1e-6 * max(1.0, r))
    assert abs(s.radius - r) < 1e-6 * max(1.0, r)


def test_sphere_degenerate_inputs():
    g = np.mgrid[0:4, 0:4].reshape(2, -1).T.astype(float)
    with pytest.raises(DegenerateInput):
        fit_sphere(np.column_stack([g, np.zeros(len(g))]))
    with pytest.raises(DegenerateInput):
        fit_sphere([[0, 0, 0], [1, 0, 0], [0, 1, 0]])


# ---------------------------------------------------------------- Hough


def test_hough_single_ring():
    img = render_ring((480, 640), 320.0, 240.0, 30.0, width=6.0)
    found = hough_circles(img, 25, 35, HoughParams(polarity="dark", r_step=0.5))
    assert len(found) >= 1
    best = max(found, key=lambda c: c.score)
    assert np.hypot(best.x - 320, best.y - 240) < 0.5
    assert abs(best.radius - 30) < 1.5


def test_hough_disk_subpixel():
    img = render_ring((120, 120), 60.3, 58.7, 15.0)
    best = max(hough_circles(img, 12, 18, HoughParams(polarity="dark", r_step=0.5)), key=lambda c: c.score)
    assert np.hypot(best.x - 60.3, best.y - 58.7) < 0.5


def test_hough_blank_image():
    assert hough_circles(np.full((100, 100), 128.0), 5, 10) == []
    with pytest.raises(ValueError):
        hough_circles(np.zeros((10, 10)), 10, 5)


def test_hough_ring_grid_pitch():
    img = np.full((300, 380), 230.0)
    centres = [(40.0 + 75 * i, 40.0 + 75 * j) for j in range(4) for i in range(5)]
    for cx, cy in centres:
        img = np.minimum(img, render_ring(img.shape, cx, cy, 12.0, width=3.0))
    found = hough_circles(img, 10, 14, HoughParams(polarity="dark", r_step=0.5, min_dist=37))
    assert len(found) == 20
    got = np.array([[c.y, c.x] for c in sorted(found, key=lambda c: (round(c.y), round(c.x)))])
    pitch = np.diff(got.reshape(4, 5, 2)[:, :, 1], axis=1)
    assert np.all(np.abs(pitch - 75) < 0.5)


def test_hough_low_contrast_markers():
    # ink 50 counts below the background
    img = np.full((200, 260), 150.0)
    for cx in (50.0, 130.0, 210.0):
        img = np.minimum(img, render_ring(img.shape, cx, 100.0, 16.0, width=4.0, bg=150.0, ink=100.0))
    assert len(hough_circles(img, 13, 19, HoughParams(polarity="dark", r_step=0.5))) == 3


def test_hough_polarity():
    img = render_ring((100, 100), 50.0, 50.0, 15.0, bg=40.0, ink=220.0)
    assert hough_circles(img, 12, 18, HoughParams(polarity="dark")) == []
    assert len(hough_circles(img, 12, 18, HoughParams(polarity="bright"))) == 1


# ---------------------------------------------------------------- grids


def _plane_grid(h=40, w=50, z=100.0):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return PointGrid(np.dstack([xx, yy, np.full_like(xx, z)]), np.ones((h, w), bool))


def test_pointgrid_invalidates_nan():
    pts = np.zeros((2, 2, 3))
    pts[0, 0, 1] = np.nan
    g = PointGrid(pts, np.ones((2, 2), bool))
    assert g.valid.tolist() == [[False, True], [True, True]]
    with pytest.raises(ValueError):
        PointGrid(np.zeros((2, 2, 3)), np.ones((3, 2), bool))


def test_circle_mask_factor():
    c = Circle2(25.0, 20.0, 5.0)
    m1 = circle_mask((40, 50), [c], 1.0)
    m2 = circle_mask((40, 50), [c], 1.2)
    assert m1[20, 25] and m1[20, 30] and not m1[20, 31]
    assert m2[20, 31] and not m2[20, 32]
    assert (m1 <= m2).all()


def test_masking_removes_all_ink():
    # ink ring of radius 5 drawn into the grid validity; a 1.2 mask must cover it
    img = render_ring((40, 50), 25.3, 19.6, 5.0, width=1.5)
    ink = img < 229.0
    g = mask_circle_regions(_plane_grid(), [Circle2(25.3, 19.6, 5.0)], 1.2)
    assert not (g.valid & ink).any()


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 40), st.floats(0.5, 8)), max_size=5), st.integers(0, 100))
def test_masking_never_revalidates(circles, seed):
    rng = np.random.default_rng(seed)
    g = _plane_grid().with_mask(rng.random((40, 50)) > 0.3)
    m = mask_circle_regions(g, [Circle2(x, y, r) for x, y, r in circles], 1.2)
    assert not (m.valid & ~g.valid).any()


def test_mask_factor_below_one_rejected():
    with pytest.raises(ValueError):
        mask_circle_regions(_plane_grid(), [Circle2(1, 1, 1)], 0.9)


def test_bilinear_point():
    g = _plane_grid()
    assert np.allclose(bilinear_point(g, 3.25, 7.5), [3.25, 7.5, 100.0])
    assert bilinear_point(g, 49.5, 3.0) is None
    assert bilinear_point(g.with_mask(np.arange(50)[None, :] != 4), 3.5, 3.0) is None


@pytest.mark.parametrize("kind,expected", [("balls", 12), ("block", 1), ("flat", 0)])
def test_segmentation_counts(kind, expected, spec, calib):
    scene = build_scene(spec, 2.0, (0.2, -0.1, 1.0), kind)
    tr = trace_image(scene, calib)
    g = PointGrid(tr.points, tr.lit)
    base = fit_base_plane(g, 0.1)
    true = scene.base_plane()
    assert np.degrees(np.arccos(min(1.0, base.normal @ true.normal))) < 1e-6
    assert abs(base.d - true.d) < 1e-6
    comps = segment_above_plane(g, base, 0.1)
    assert len(comps) == expected
    sizes = [c.sum() for c in comps]
    assert sizes == sorted(sizes, reverse=True)


def test_segmentation_threshold_must_be_positive():
    with pytest.raises(ValueError):
        segment_above_plane(_plane_grid(), Plane(0, 0, 1, -100), 0.0)


def test_segmentation_bridges_dropout_lines(spec, calib):
    scene = build_scene(spec, 0.0, (0.0, 0.0, 0.0), "block")
    tr = trace_image(scene, calib)
    g = PointGrid(tr.points, tr.lit)
    base = fit_base_plane(g, 0.1)
    (block,) = segment_above_plane(g, base, 0.1)
    # one invalid column through the block, as left by a stripe-edge dropout
    col = int(np.median(np.nonzero(block)[1]))
    cut = g.with_mask(np.arange(g.valid.shape[1])[None, :] != col)
    (joined,) = segment_above_plane(cut, base, 0.1)
    assert np.array_equal(joined, block & cut.valid)
    assert not joined[:, col].any()
    assert len(segment_above_plane(cut, base, 0.1, bridge=0)) == 2
    with pytest.raises(ValueError):
        segment_above_plane(cut, base, 0.1, bridge=-1)
