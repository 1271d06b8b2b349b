import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ball_volume, grid_mesh, random_rotation, sphere_mesh, torus_mesh
from mitralmorph.mesh import (MeshError, Polyline3D, TriangleMesh, boundary_vertices, centroid, connected_components,
                              enclosed_volume, euler_characteristic, extract_surface, plane_section, polyline_length,
                              read_obj, read_polyline_csv, smooth_windowed_sinc, surface_area, write_obj,
                              write_polyline_csv)
from mitralmorph.volume import LabeledVolume

SPHERE_AREA = 4 * np.pi * 10 ** 2
SPHERE_VOLUME = 4 / 3 * np.pi * 10 ** 3


def test_digital_sphere_volume_within_5_percent():
    mesh = extract_surface(ball_volume(10), 1)
    assert abs(enclosed_volume(mesh) / SPHERE_VOLUME - 1) < 0.05


@pytest.mark.xfail(strict=True, reason="staircase surface of a binary mask overestimates area by about 9%")
def test_digital_sphere_raw_area_within_5_percent():
    mesh = extract_surface(ball_volume(10), 1)
    assert abs(surface_area(mesh) / SPHERE_AREA - 1) < 0.05


def test_digital_sphere_smoothed_area_within_5_percent():
    mesh = smooth_windowed_sinc(extract_surface(ball_volume(10), 1), 20, 0.1)
    assert abs(surface_area(mesh) / SPHERE_AREA - 1) < 0.05
    assert abs(enclosed_volume(mesh) / SPHERE_VOLUME - 1) < 0.05


def test_extracted_surface_in_world_coordinates():
    vol = ball_volume(6, spacing=0.5)
    vol = LabeledVolume(vol.labels, (0.5, 0.5, 0.5), (10.0, -4.0, 2.0))
    mesh = extract_surface(vol, 1)
    center = np.array([10.0, -4.0, 2.0]) + 0.5 * (vol.dims[0] // 2)
    assert np.allclose(centroid(mesh.vertices), center, atol=1e-6)
    r = np.linalg.norm(mesh.vertices - center, axis=1)
    assert 2.5 < r.min() and r.max() < 3.5


def test_single_voxel_gives_one_closed_component():
    labels = np.zeros((5, 5, 5), np.uint8)
    labels[2, 2, 2] = 2
    mesh = extract_surface(LabeledVolume(labels, (1.0, 1.0, 1.0)), 2)
    parts = connected_components(mesh)
    assert len(parts) == 1
    assert len(boundary_vertices(mesh)) == 0
    assert euler_characteristic(mesh) == 2
    assert np.allclose(centroid(mesh.vertices), [2, 2, 2], atol=1e-9)
    assert enclosed_volume(mesh) > 0


def test_voxel_at_grid_edge_still_closed():
    labels = np.zeros((3, 3, 3), np.uint8)
    labels[0, 0, 0] = 1
    mesh = extract_surface(LabeledVolume(labels, (1.0, 1.0, 1.0)), 1)
    assert len(boundary_vertices(mesh)) == 0


def test_two_disjoint_blobs_two_components():
    labels = np.zeros((20, 10, 10), np.uint8)
    labels[2:6, 2:6, 2:6] = 3
    labels[12:17, 3:7, 3:7] = 3
    parts = connected_components(extract_surface(LabeledVolume(labels, (1.0, 1.0, 1.0)), 3))
    assert len(parts) == 2


def test_absent_label_raises():
    with pytest.raises(MeshError, match="absent"):
        extract_surface(LabeledVolume(np.zeros((3, 3, 3), np.uint8), (1, 1, 1)), 1)


def test_smoothing_leaves_plane_fixed():
    mesh = grid_mesh(21, 20.0, lambda x, y: 0.3 * x - 0.2 * y + 1.0)
    out = smooth_windowed_sinc(mesh, 20, 0.1)
    assert np.max(np.abs(out.vertices - mesh.vertices)) < 1e-9


def test_smoothing_sphere_volume_within_2_percent():
    mesh = sphere_mesh(10.0, 40, 80)
    noisy = TriangleMesh(mesh.vertices * (1 + 0.02 * np.random.default_rng(1).standard_normal((mesh.n_vertices, 1))),
                         mesh.triangles)
    out = smooth_windowed_sinc(noisy, 20, 0.1)
    assert abs(enclosed_volume(out) / enclosed_volume(noisy) - 1) < 0.02
    # the filter removes the radial noise
    r = np.linalg.norm(out.vertices, axis=1)
    assert r.std() < 0.5 * np.linalg.norm(noisy.vertices, axis=1).std()


def test_zero_iterations_is_identity():
    mesh = sphere_mesh(3.0, 10, 20)
    out = smooth_windowed_sinc(mesh, 0, 0.1)
    assert np.array_equal(out.vertices, mesh.vertices)
    assert np.array_equal(out.triangles, mesh.triangles)


@pytest.mark.parametrize("kwargs", [{"iterations": -1}, {"passband": 0.0}, {"passband": 2.5}])
def test_smoothing_rejects_bad_parameters(kwargs):
    with pytest.raises(MeshError):
        smooth_windowed_sinc(sphere_mesh(1.0, 6, 12), **kwargs)


def test_section_through_sphere_center_is_one_circle():
    mesh = sphere_mesh(10.0, 90, 180)
    loops = plane_section(mesh, [0, 0, 0.1], [0, 0, 1])
    assert len(loops) == 1 and loops[0].closed
    assert abs(polyline_length(loops[0]) / (2 * np.pi * 10) - 1) < 0.02


def test_section_missing_the_mesh_is_empty():
    assert plane_section(sphere_mesh(10.0, 20, 40), [0, 0, 50], [0, 0, 1]) == []


def test_half_plane_through_torus_gives_one_loop():
    mesh = torus_mesh(15.0, 1.0)
    n = np.array([np.sin(0.3), -np.cos(0.3), 0.0])
    full = plane_section(mesh, [0, 0, 0], n)
    half = plane_section(mesh, [0, 0, 0], n, half_space_dir=[np.cos(0.3), np.sin(0.3), 0.0])
    assert len(full) == 2
    assert len(half) == 1 and half[0].closed
    c = centroid(half[0].points)
    assert abs(np.linalg.norm(c) - 15.0) < 0.05


def test_section_rejects_non_unit_normal():
    with pytest.raises(MeshError):
        plane_section(sphere_mesh(1.0, 6, 12), [0, 0, 0], [0, 0, 2])


def test_unit_square_area_exact():
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float), np.array([[0, 1, 2], [0, 2, 3]]))
    assert surface_area(mesh) == 1.0


def test_closed_unit_square_length():
    assert polyline_length(Polyline3D(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float), True)) == 4.0


def test_centroid_of_two_points():
    assert np.array_equal(centroid([[0, 0, 0], [2, 0, 0]]), [1.0, 0.0, 0.0])


def test_polyline_rejects_repeated_points():
    with pytest.raises(MeshError):
        Polyline3D(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], float))


def test_obj_and_csv_round_trip(tmp_path):
    mesh = sphere_mesh(2.0, 8, 16)
    write_obj(mesh, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-8)
    text = (tmp_path / "m.obj").read_text().splitlines()
    assert min(int(x) for ln in text if ln.startswith("f") for x in ln.split()[1:]) == 1
    poly = Polyline3D(np.array([[0, 0, 0], [1, 2, 3], [4, 5, 6.5]]), closed=True)
    write_polyline_csv(poly, tmp_path / "p.csv")
    got = read_polyline_csv(tmp_path / "p.csv")
    assert got.closed and np.allclose(got.points, poly.points)


@settings(max_examples=12, deadline=None)
@given(radius=st.integers(1, 7), shift=st.tuples(*[st.integers(0, 3)] * 3))
def test_digital_ball_is_genus_zero(radius, shift):
    n = 2 * radius + 8
    i, j, k = np.indices((n, n, n))
    c = np.array([radius + 2, radius + 2, radius + 2]) + np.array(shift)
    inside = (i - c[0]) ** 2 + (j - c[1]) ** 2 + (k - c[2]) ** 2 <= radius ** 2
    vol = LabeledVolume(inside.astype(np.uint8), (1.0, 1.0, 1.0))
    mesh = extract_surface(vol, 1)
    assert euler_characteristic(mesh) == 2
    if radius >= 4:
        # corner clipping dominates below that size
        assert abs(enclosed_volume(mesh) / inside.sum() - 1) < 0.05


@settings(max_examples=15, deadline=None)
@given(iterations=st.integers(1, 30), passband=st.floats(0.01, 2.0))
def test_smoothing_preserves_connectivity(iterations, passband):
    mesh = sphere_mesh(5.0, 12, 24)
    out = smooth_windowed_sinc(mesh, iterations, passband)
    assert out.n_vertices == mesh.n_vertices
    assert np.array_equal(out.triangles, mesh.triangles)


@settings(max_examples=30, deadline=None)
@given(
    normal=st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1),
    offset=st.floats(-8, 8),
)
def test_section_points_lie_in_plane(normal, offset):
    n = np.asarray(normal) / np.linalg.norm(normal)
    point = offset * n
    for poly in plane_section(sphere_mesh(10.0, 20, 40), point, n):
        assert np.max(np.abs((poly.points - point) @ n)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_area_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    mesh = sphere_mesh(4.0, 10, 20)
    R = random_rotation(rng)
    moved = mesh.transformed(R, rng.normal(scale=100.0, size=3))
    assert abs(surface_area(moved) / surface_area(mesh) - 1) < 1e-9
