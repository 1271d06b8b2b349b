import numpy as np
import pytest

from mitralmorph.mesh import TriangleMesh
from mitralmorph.volume import LabeledVolume


def torus_mesh(R=15.0, r=1.0, nu=240, nv=24, keep=None) -> TriangleMesh:
    """Parametric torus around the z axis; ``keep(phi)`` drops ring segments where it is False."""
    u = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    v = np.linspace(0, 2 * np.pi, nv, endpoint=False)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([(R + r * np.cos(V)) * np.cos(U), (R + r * np.cos(V)) * np.sin(U), r * np.sin(V)], -1)
    i = np.arange(nu)[:, None]
    k = np.arange(nv)[None, :]
    a = i * nv + k
    b = ((i + 1) % nu) * nv + k
    c = ((i + 1) % nu) * nv + (k + 1) % nv
    d = i * nv + (k + 1) % nv
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    if keep is not None:
        seg = np.repeat(np.arange(nu), nv)
        mid = (np.concatenate([seg, seg]) + 0.5) * (2 * np.pi / nu)
        tris = tris[keep(mid)]
    return TriangleMesh(pts.reshape(-1, 3), tris)


def sphere_mesh(radius=10.0, n_lat=60, n_lon=120, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed UV sphere with outward-facing triangles."""
    lat = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    lon = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    L, P = np.meshgrid(lat, lon, indexing="ij")
    ring = np.stack([np.sin(L) * np.cos(P), np.sin(L) * np.sin(P), np.cos(L)], -1).reshape(-1, 3)
    pts = np.vstack([[0, 0, 1], ring, [0, 0, -1]]) * radius + np.asarray(center)
    top, bottom = 0, len(pts) - 1
    idx = lambda i, j: 1 + i * n_lon + (j % n_lon)  # noqa: E731
    tris = []
    for j in range(n_lon):
        tris.append([top, idx(0, j), idx(0, j + 1)])
        tris.append([bottom, idx(n_lat - 2, j + 1), idx(n_lat - 2, j)])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            tris.append([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)])
            tris.append([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)])
    return TriangleMesh(pts, np.array(tris))


def grid_mesh(n=21, size=20.0, height=lambda x, y: 0.0 * x) -> TriangleMesh:
    """Regular triangulated square ``[-size/2, size/2]^2`` lifted by ``height``."""
    s = np.linspace(-size / 2, size / 2, n)
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), height(X, Y).ravel()])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    a = (i * n + j).ravel()
    b = a + n
    tris = np.concatenate([np.column_stack([a, b, b + 1]), np.column_stack([a, b + 1, a + 1])])
    return TriangleMesh(pts, tris)


def ball_volume(radius_vox=10, pad=3, spacing=1.0, label=1) -> LabeledVolume:
    n = 2 * (radius_vox + pad) + 1
    c = n // 2
    i, j, k = np.indices((n, n, n))
    inside = (i - c) ** 2 + (j - c) ** 2 + (k - c) ** 2 <= radius_vox ** 2
    return LabeledVolume(np.where(inside, label, 0).astype(np.uint8), (spacing,) * 3, (0.0, 0.0, 0.0))


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def default_phantom():
    from mitralmorph.phantom import PhantomParams, generate_phantom

    return generate_phantom(PhantomParams())


@pytest.fixture(scope="session")
def default_analysis(default_phantom):
    from mitralmorph.pipeline import PipelineConfig, analyze

    volume, truth = default_phantom
    return analyze(PipelineConfig(figures=False), volume=volume), truth


def densify(polyline, n=5000) -> np.ndarray:
    pts = np.asarray(polyline, dtype=float)
    t = np.linspace(0, 1, n) * (len(pts) - 1)
    i = np.minimum(t.astype(int), len(pts) - 2)
    f = (t - i)[:, None]
    return pts[i] * (1 - f) + pts[i + 1] * f


def tissue_arc(truth) -> np.ndarray:
    """Designed contact arc minus its ends inside or touching the annulus tube."""
    from scipy.spatial import cKDTree

    arc = densify(truth.coaptation_arc)
    clearance = truth.params["tube_radius"] + truth.params["leaflet_thickness"]
    d, _ = cKDTree(np.asarray(truth.centerline)).query(arc)
    return arc[d >= clearance]


def arc_cell_coverage(candidates, frame, arc, resolution) -> float:
    """Share of lattice cells crossed by ``arc`` whose closure holds a candidate."""
    covered = set()
    for x, y in candidates.uvh[:, :2] / resolution:
        for i in {int(np.floor(x)), int(np.ceil(x)) - 1}:
            for j in {int(np.floor(y)), int(np.ceil(y)) - 1}:
                covered.add((i, j))
    cells = set(map(tuple, np.floor(frame.to_local(arc)[:, :2] / resolution).astype(int)))
    return float(np.mean([c in covered for c in cells]))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
