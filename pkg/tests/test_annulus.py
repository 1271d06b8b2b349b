import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.spatial import cKDTree

from conftest import random_rotation, torus_mesh
from mitralmorph.annulus import (AnnulusCurve, RefinementError, ValveFrame, align_radial, expand_tube,
                                 extract_skeleton, fit_periodic_spline, fit_valve_frame, orient_normal)
from mitralmorph.mesh import TriangleMesh, surface_area


def _circle(n=100, r=10.0):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(n)])


def _z_frame(center=(0.0, 0.0, 0.0)):
    return ValveFrame(np.asarray(center, float), np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))


def _gap_keep(center, width):
    return lambda phi: np.abs(np.mod(phi - center + np.pi, 2 * np.pi) - np.pi) > width / 2


def _max_deviation(a, b):
    return max(cKDTree(a).query(b)[0].max(), cKDTree(b).query(a)[0].max())


def test_frame_of_planar_circle():
    f = fit_valve_frame(_circle())
    assert np.allclose(np.abs(f.normal), [0, 0, 1], atol=1e-6)
    assert np.allclose(f.center, 0, atol=1e-6)
    assert abs(np.linalg.norm(f.normal) - 1) < 1e-12 and abs(np.linalg.norm(f.radial) - 1) < 1e-12
    assert abs(f.normal @ f.radial) < 1e-9


def test_frame_rotates_with_points():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    pts = _circle() * np.array([1.0, 0.7, 1.0])  # ellipse so the in-plane axes are defined
    f0 = fit_valve_frame(pts)
    f1 = fit_valve_frame(pts @ R.T)
    for a, b in ((f0.normal, f1.normal), (f0.radial, f1.radial)):
        assert min(np.linalg.norm(R @ a - b), np.linalg.norm(R @ a + b)) < 1e-6


def test_frame_of_saddle_ring_within_2_degrees():
    t = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    pts = np.column_stack([15 * np.cos(t), 12 * np.sin(t), 2 * np.cos(2 * t)])
    # oracle: smallest right singular vector of the centred samples
    d = pts - pts.mean(axis=0)
    oracle = np.linalg.svd(d)[2][-1]
    n = fit_valve_frame(pts).normal
    assert np.degrees(np.arccos(min(1.0, abs(n @ [0, 0, 1])))) < 2.0
    assert abs(abs(n @ oracle) - 1) < 1e-12


def test_frame_rejects_collinear_points():
    with pytest.raises(RefinementError):
        fit_valve_frame(np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)]))


def test_torus_skeleton_24_centres_on_circle():
    sk = extract_skeleton(torus_mesh(15.0, 1.0), _z_frame(), 15.0)
    assert len(sk.points) == 24
    r = np.hypot(sk.points[:, 0], sk.points[:, 1])
    dev = np.hypot(r - 15.0, sk.points[:, 2])
    assert dev.max() < 0.1
    assert np.allclose(np.degrees(sk.angles), np.arange(24) * 15.0)


def test_torus_with_60_degree_gap():
    gap_lo, gap_hi = np.radians(100.0), np.radians(160.0)
    mesh = torus_mesh(15.0, 1.0, keep=_gap_keep(0.5 * (gap_lo + gap_hi), gap_hi - gap_lo))
    sk = extract_skeleton(mesh, _z_frame(), 15.0)
    assert len(sk.points) >= 20
    ang = np.mod(np.arctan2(sk.points[:, 1], sk.points[:, 0]), 2 * np.pi)
    assert not np.any((ang > gap_lo) & (ang < gap_hi))


def test_theta_offset_90_gives_four_centres():
    sk = extract_skeleton(torus_mesh(15.0, 1.0), _z_frame(), 90.0)
    assert len(sk.points) == 4


def test_skeleton_rejects_bad_offset():
    with pytest.raises(RefinementError):
        extract_skeleton(torus_mesh(), _z_frame(), 0.0)


def test_spline_circle_length_within_0_1_percent():
    pts = _circle(24, 15.0)
    curve = fit_periodic_spline(pts)
    # oracle: adaptive quadrature of the spline speed, independent of the internal table
    length, _ = quad(lambda t: float(curve.speed(t)), 0, 2 * np.pi, limit=200, epsabs=1e-10)
    assert abs(length / (2 * np.pi * 15) - 1) < 1e-3
    assert abs(curve.length - length) < 1e-6


def test_spline_through_square_corners():
    sq = np.array([[1, 1, 0], [-1, 1, 0], [-1, -1, 0], [1, -1, 0]], float)
    curve = fit_periodic_spline(sq)
    assert np.allclose(curve(curve.knots[:-1]), sq, atol=1e-9)
    assert np.allclose(curve(0.0), curve(2 * np.pi), atol=1e-12)


def test_spline_drops_consecutive_duplicates():
    pts = _circle(12, 5.0)
    dup = np.insert(pts, 3, pts[3], axis=0)
    curve = fit_periodic_spline(dup, np.sort(np.append(np.linspace(0, 2 * np.pi, 12, endpoint=False), 1.6)))
    assert len(curve.control_points) == 12


def test_spline_needs_four_points():
    with pytest.raises(RefinementError):
        fit_periodic_spline(_circle(3))


def test_arclength_inverse():
    curve = fit_periodic_spline(_circle(24, 15.0) * [1.0, 0.8, 1.0])
    s = np.linspace(0, curve.length, 17)[:-1]
    assert np.allclose(curve.arclength(curve.param_at_length(s)), s, atol=1e-9)


def test_tube_area_matches_torus():
    curve = fit_periodic_spline(_circle(24, 15.0))
    tube = expand_tube(curve, 1.0)
    torus_area = (2 * np.pi * 15) * (2 * np.pi * 1)
    assert abs(surface_area(tube) / torus_area - 1) < 0.02


def test_tube_vertices_at_radius():
    curve = fit_periodic_spline(_circle(24, 15.0) * [1.0, 0.8, 1.0] + [0, 0, 0])
    tube = expand_tube(curve, 1.0)
    samples, _ = curve.sample(20000)
    d, _ = cKDTree(samples).query(tube.vertices)
    assert d.min() >= 0.98 and d.max() <= 1.02


def test_tube_radius_zero_rejected():
    with pytest.raises(RefinementError):
        expand_tube(fit_periodic_spline(_circle(24, 15.0)), 0.0)


def _leaflet_at(z):
    return TriangleMesh(np.array([[0, 0, z], [1, 0, z], [0, 1, z]], float), np.array([[0, 1, 2]]))


def test_orient_flips_normal_away_from_leaflets():
    frame = ValveFrame(np.zeros(3), np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0]))
    out = orient_normal(frame, [_leaflet_at(-5.0)])
    assert np.allclose(out.normal, [0, 0, 1])
    assert abs(np.linalg.det(out.axes) - 1) < 1e-12


def test_orient_keeps_correct_normal():
    frame = _z_frame()
    assert orient_normal(frame, [_leaflet_at(-5.0)]) is frame


def test_orient_hint_overrides_leaflets():
    out = orient_normal(_z_frame(), [_leaflet_at(5.0)], hint=(0, 0, 1))
    assert np.allclose(out.normal, [0, 0, 1])


def test_orient_on_phantom_matches_atrial_direction(default_phantom):
    from mitralmorph.mesh import extract_surface

    vol, truth = default_phantom
    ann = extract_surface(vol, 1)
    leaflets = [extract_surface(vol, 2), extract_surface(vol, 3)]
    frame = orient_normal(fit_valve_frame(ann.vertices), leaflets)
    assert frame.normal @ np.asarray(truth.atrial_direction) > 0.99


def test_align_radial_points_to_highest():
    pts = np.array([[10, 0, -1], [-10, 0, 3], [0, 8, 0], [0, -8, 0]], float)
    f = align_radial(_z_frame(), pts)
    assert np.allclose(f.radial, [-1, 0, 0])


def test_skeleton_pipeline_idempotent():
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    pts = np.column_stack([18 * np.cos(t), 15 * np.sin(t), 3 * np.cos(2 * t) + 0.75 * np.cos(3 * t)])
    first = expand_tube(AnnulusCurve(pts, t), 1.0)
    frame = fit_valve_frame(first.vertices)
    sk1 = extract_skeleton(first, frame, 15.0)
    tube = expand_tube(fit_periodic_spline(sk1.points, sk1.angles), 1.0)
    sk2 = extract_skeleton(tube, frame, 15.0)
    assert len(sk1.points) == len(sk2.points)
    rms = np.sqrt(np.mean(np.sum((sk1.points - sk2.points) ** 2, axis=1)))
    assert rms < 0.2


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_skeleton_rigid_equivariance(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    tr = rng.normal(scale=50.0, size=3)
    mesh = torus_mesh(15.0, 1.0, nu=120, nv=12)
    frame = _z_frame((0.3, -0.2, 0.1))
    moved = ValveFrame(R @ frame.center + tr, R @ frame.normal, R @ frame.radial)
    a = extract_skeleton(mesh, frame, 15.0)
    b = extract_skeleton(mesh.transformed(R, tr), moved, 15.0)
    assert np.max(np.abs(a.points @ R.T + tr - b.points)) < 1e-6


@settings(max_examples=20, deadline=None)
@given(center=st.floats(0, 2 * np.pi), width=st.floats(1.0, 90.0))
def test_gap_changes_curve_by_under_1mm(center, width):
    from mitralmorph.pipeline import PipelineConfig, refine_annulus

    th = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
    truth = np.column_stack([15 * np.cos(th), 15 * np.sin(th), np.zeros_like(th)])
    mesh = torus_mesh(15.0, 1.0, keep=_gap_keep(center, np.radians(width)))
    used = np.unique(mesh.triangles, return_inverse=True)
    mesh = TriangleMesh(mesh.vertices[used[0]], used[1].reshape(-1, 3))
    _, curve, _, _ = refine_annulus(mesh, [], PipelineConfig(normal_hint=(0, 0, 1)))
    assert _max_deviation(curve.sample(4000)[0], truth) < 1.0
