"""Triangle mesh primitives.

Isosurface extraction, windowed-sinc smoothing, plane sectioning and the
small measures (area, length, volume, components) the pipeline is built on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc
from skimage.measure import marching_cubes

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


def _triangle_areas(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface with vertex positions in mm.

    Degenerate triangles (area below 1e-12 mm²) are dropped on construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if len(t):
            t = t[_triangle_areas(v, t) >= DEGENERATE_AREA]
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float).reshape(-1, 3))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        rotation = np.asarray(rotation, dtype=float)
        v = self.vertices @ rotation.T + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


@dataclass(frozen=True)
class Polyline3D:
    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(p) < 2:
            raise MeshError("a polyline needs at least 2 points")
        if np.any(np.all(p[1:] == p[:-1], axis=1)):
            raise MeshError("consecutive polyline points must be distinct")
        object.__setattr__(self, "points", p)


# -- measures ------------------------------------------------------------

def surface_area(mesh: TriangleMesh) -> float:
    if mesh.is_empty():
        raise MeshError("empty mesh")
    return float(_triangle_areas(mesh.vertices, mesh.triangles).sum())


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Signed volume by the divergence theorem; positive for outward winding."""
    if mesh.is_empty():
        raise MeshError("empty mesh")
    v = mesh.vertices
    t = mesh.triangles
    return float(np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6.0)


def polyline_length(p: Polyline3D) -> float:
    pts = p.points
    if p.closed:
        pts = np.vstack([pts, pts[:1]])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def centroid(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise MeshError("centroid of an empty point set")
    return pts.mean(axis=0)


def euler_characteristic(mesh: TriangleMesh) -> int:
    used = np.unique(mesh.triangles)
    return int(len(used) - len(mesh.edges()) + mesh.n_triangles)


def _vertex_adjacency(n, triangles):
    t = triangles
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    a = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    a.data[:] = 1.0
    return a


def connected_components(mesh: TriangleMesh) -> list[TriangleMesh]:
    """Split into vertex-connected pieces, largest first."""
    if mesh.is_empty():
        raise MeshError("empty mesh")
    n_comp, lab = _cc(_vertex_adjacency(mesh.n_vertices, mesh.triangles), directed=False)
    tri_lab = lab[mesh.triangles[:, 0]]
    pieces = []
    for c in np.unique(tri_lab):
        tris = mesh.triangles[tri_lab == c]
        used, inv = np.unique(tris, return_inverse=True)
        pieces.append(TriangleMesh(mesh.vertices[used], inv.reshape(-1, 3)))
    pieces.sort(key=lambda m: -m.n_triangles)
    return pieces


def boundary_vertices(mesh: TriangleMesh) -> np.ndarray:
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


# -- isosurface ------------------------------------------------------------

def extract_surface(volume, label: int) -> TriangleMesh:
    """Marching-cubes surface of one label's indicator at iso-level 0.5.

    The indicator is zero-padded by one voxel so every component is closed.
    Vertices are returned in world millimetres with outward winding.
    """
    mask = volume.labels == label
    if not mask.any():
        raise MeshError(f"label {label} absent from volume")
    idx = np.argwhere(mask)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0) + 1
    crop = mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    padded = np.pad(crop, 1).astype(np.float32)
    verts, faces, _, _ = marching_cubes(padded, level=0.5, method="lewiner",
                                        allow_degenerate=False)
    ijk = verts - 1.0 + lo
    world = volume.index_to_world(ijk)
    faces = faces.astype(np.int64)
    out = TriangleMesh(world, faces)
    if enclosed_volume(out) < 0:
        out = TriangleMesh(world, faces[:, ::-1])
    return out


# -- smoothing -------------------------------------------------------------

def smooth_windowed_sinc(mesh: TriangleMesh, iterations: int = 20, passband: float = 0.1) -> TriangleMesh:
    """Windowed-sinc low-pass filter on vertex positions.

    A Hamming-windowed sinc transfer function in the umbrella-operator
    frequency domain, evaluated with the Chebyshev three-term recurrence.
    Coefficients are normalised to unit DC gain so translations and flat
    regions are reproduced exactly. Open-boundary vertices stay fixed.

    Parameters
    ----------
    iterations : int
        Chebyshev order; 0 returns the input unchanged.
    passband : float
        In (0, 2]; smaller values smooth more.
    """
    if mesh.is_empty():
        raise MeshError("empty mesh")
    if iterations < 0:
        raise MeshError("iterations must be >= 0")
    if not 0.0 < passband <= 2.0:
        raise MeshError("passband must lie in (0, 2]")
    if iterations == 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy())

    n = mesh.n_vertices
    adj = _vertex_adjacency(n, mesh.triangles)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    movable = deg > 0
    movable[boundary_vertices(mesh)] = False
    inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    w = sparse.diags(inv_deg) @ adj
    mask = movable[:, None].astype(float)

    # work relative to the centroid and a unit scale for conditioning
    center = mesh.vertices.mean(axis=0)
    scale = max(np.abs(mesh.vertices - center).max(), 1e-12)
    x = (mesh.vertices - center) / scale

    def half_step(y):
        # (I - K/2) y with K = I - W, frozen rows untouched
        return y - 0.5 * mask * (y - w @ y)

    theta = np.arccos(1.0 - 0.5 * passband)
    k = np.arange(iterations + 1)
    window = 0.54 + 0.46 * np.cos(k * np.pi / (iterations + 1))
    coef = np.empty(iterations + 1)
    coef[0] = theta / np.pi
    coef[1:] = 2.0 * np.sin(k[1:] * theta) / (k[1:] * np.pi)
    coef *= window
    coef /= coef.sum()

    t_prev = x
    t_cur = half_step(x)
    out = coef[0] * t_prev + coef[1] * t_cur
    for i in range(2, iterations + 1):
        t_next = 2.0 * half_step(t_cur) - t_prev
        out += coef[i] * t_next
        t_prev, t_cur = t_cur, t_next
    return TriangleMesh(out * scale + center, mesh.triangles.copy())


# -- plane sectioning ------------------------------------------------------

def _chain_segments(seg: np.ndarray) -> list[tuple[list[int], bool]]:
    """Order segments (pairs of point ids) into open or closed chains."""
    nbrs: dict[int, list[int]] = {}
    for a, b in seg:
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    seen_edges: set[tuple[int, int]] = set()
    chains = []

    def walk(start):
        chain = [start]
        cur = start
        while True:
            nxt = None
            for cand in nbrs[cur]:
                key = (min(cur, cand), max(cur, cand))
                if key not in seen_edges:
                    seen_edges.add(key)
                    nxt = cand
                    break
            if nxt is None:
                return chain, False
            if nxt == start:
                return chain, True
            chain.append(nxt)
            cur = nxt

    # open chains first start at endpoints (degree 1)
    for node in sorted(nbrs):
        if len(nbrs[node]) == 1 and any((min(node, c), max(node, c)) not in seen_edges for c in nbrs[node]):
            chains.append(walk(node))
    for node in sorted(nbrs):
        if any((min(node, c), max(node, c)) not in seen_edges for c in nbrs[node]):
            chains.append(walk(node))
    return chains


def section_segments(mesh: TriangleMesh, point, normal):
    """Raw mesh/plane intersection as an (m, 2, 3) array of segments plus point ids."""
    v = mesh.vertices
    t = mesh.triangles
    d = (v - np.asarray(point, dtype=float)) @ np.asarray(normal, dtype=float)
    # vertices numerically on the plane are snapped onto it
    scale = max(float(np.abs(v - point).max()), 1.0)
    d[np.abs(d) < 1e-12 * scale] = 0.0
    side = d >= 0.0
    s = side[t]
    n_pos = s.sum(axis=1)
    cross = (n_pos == 1) | (n_pos == 2)
    if not cross.any():
        return np.empty((0, 2, 3)), np.empty((0, 2), dtype=np.int64), np.empty((0, 3))
    tc = t[cross]
    sc = s[cross]
    # lone vertex: the one whose side differs from the other two
    lone_is_pos = sc.sum(axis=1) == 1
    lone_col = np.where(lone_is_pos, np.argmax(sc, axis=1), np.argmin(sc, axis=1))
    rows = np.arange(len(tc))
    a = tc[rows, lone_col]
    b = tc[rows, (lone_col + 1) % 3]
    c = tc[rows, (lone_col + 2) % 3]
    e1 = np.sort(np.stack([a, b], axis=1), axis=1)
    e2 = np.sort(np.stack([a, c], axis=1), axis=1)
    n = len(v)
    keys = np.concatenate([e1[:, 0] * n + e1[:, 1], e2[:, 0] * n + e2[:, 1]])
    uniq, inv = np.unique(keys, return_inverse=True)
    lo = uniq // n
    hi = uniq % n
    tt = d[lo] / (d[lo] - d[hi])
    pts = v[lo] + tt[:, None] * (v[hi] - v[lo])
    pts[d[lo] == 0.0] = v[lo][d[lo] == 0.0]
    pts[d[hi] == 0.0] = v[hi][d[hi] == 0.0]
    ids = np.stack([inv[: len(tc)], inv[len(tc):]], axis=1)
    return pts[ids], ids, pts


def plane_section(mesh: TriangleMesh, point, normal, half_space_dir=None) -> list[Polyline3D]:
    """Intersect ``mesh`` with a plane and assemble ordered polylines.

    With ``half_space_dir`` only segments whose midpoint lies on the positive
    side of the line through ``point`` orthogonal to it are kept, i.e. the
    section by the half-plane {point + a*half_space_dir + b*(normal x dir), a > 0}.
    """
    normal = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise MeshError("plane normal must be a unit vector")
    point = np.asarray(point, dtype=float)
    if half_space_dir is not None:
        half_space_dir = np.asarray(half_space_dir, dtype=float)
        if abs(half_space_dir @ normal) > 1e-9:
            raise MeshError("half-space direction must be orthogonal to the normal")
    if mesh.is_empty():
        return []
    segs, ids, pts = section_segments(mesh, point, normal)
    if len(segs) == 0:
        return []
    if half_space_dir is not None:
        mid = segs.mean(axis=1)
        keep = (mid - point) @ half_space_dir > 0.0
        ids = ids[keep]
        if len(ids) == 0:
            return []
    # collapse coincident intersection points (plane through a vertex)
    _, first, canon = np.unique(np.round(pts, 12), axis=0, return_index=True, return_inverse=True)
    table = pts[first]
    ids = canon.ravel()[ids]
    ids = ids[ids[:, 0] != ids[:, 1]]
    out = []
    for chain, closed in _chain_segments(ids):
        if len(chain) < 2:
            continue
        p = table[chain]
        if closed and len(chain) < 3:
            closed = False
        out.append(Polyline3D(p, closed))
    return out


# -- export ----------------------------------------------------------------

def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def write_polyline_csv(poly: Polyline3D, path) -> None:
    rows = [f"# closed: {'true' if poly.closed else 'false'}", "x,y,z"]
    rows += [f"{x:.9g},{y:.9g},{z:.9g}" for x, y, z in poly.points]
    Path(path).write_text("\n".join(rows) + "\n")


def read_polyline_csv(path) -> Polyline3D:
    lines = Path(path).read_text().splitlines()
    closed = lines[0].strip().lower().endswith("true")
    pts = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:] if ln.strip()])
    return Polyline3D(pts, closed)
