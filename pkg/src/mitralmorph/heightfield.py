"""Height functions over the valve plane.

Leaflet middle surfaces and the orifice surface are all stored as heights
along the valve normal, sampled on a regular lattice in plane coordinates
(u along ``radial``, v along ``lateral``). The lattice is anchored at the
frame centre so that two fields built in the same frame share nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from matplotlib.path import Path as _MplPath
from scipy.spatial import Delaunay

from .annulus import ValveFrame
from .mesh import TriangleMesh


class HeightFieldError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Lattice ``u = i0*res + i*res``, ``v = j0*res + j*res`` in plane coordinates."""

    i0: int
    j0: int
    nu: int
    nv: int
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise HeightFieldError("grid resolution must be positive")
        if self.nu < 1 or self.nv < 1:
            raise HeightFieldError("grid needs at least one node per axis")

    @classmethod
    def covering(cls, uv, resolution: float, margin: float = 0.0) -> "Grid":
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        lo = np.floor((uv.min(axis=0) - margin) / resolution).astype(int)
        hi = np.ceil((uv.max(axis=0) + margin) / resolution).astype(int)
        return cls(int(lo[0]), int(lo[1]), int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1), float(resolution))

    def union(self, other: "Grid") -> "Grid":
        if self.resolution != other.resolution:
            raise HeightFieldError("cannot merge grids of different resolution")
        i0, j0 = min(self.i0, other.i0), min(self.j0, other.j0)
        i1 = max(self.i0 + self.nu, other.i0 + other.nu)
        j1 = max(self.j0 + self.nv, other.j0 + other.nv)
        return Grid(i0, j0, i1 - i0, j1 - j0, self.resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nu, self.nv)

    @property
    def u(self) -> np.ndarray:
        return (self.i0 + np.arange(self.nu)) * self.resolution

    @property
    def v(self) -> np.ndarray:
        return (self.j0 + np.arange(self.nv)) * self.resolution

    def nodes(self) -> np.ndarray:
        """(nu, nv, 2) array of node coordinates."""
        uu, vv = np.meshgrid(self.u, self.v, indexing="ij")
        return np.stack([uu, vv], axis=-1)


class AlphaShape:
    """Planar alpha-shape: Delaunay triangles with circumradius below ``alpha``."""

    def __init__(self, uv, alpha: float):
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        if len(uv) < 3:
            raise HeightFieldError("alpha shape needs at least 3 points")
        self.alpha = float(alpha)
        self._tri = Delaunay(uv)
        p = self._tri.points[self._tri.simplices]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        cross = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            radius = a * b * c / (2.0 * cross)
        self._keep = np.isfinite(radius) & (radius < self.alpha)
        if not self._keep.any():
            raise HeightFieldError("alpha shape is empty; increase alpha")

    @property
    def points(self) -> np.ndarray:
        return self._tri.points

    @property
    def triangles(self) -> np.ndarray:
        return self._tri.simplices[self._keep]

    def contains(self, uv) -> np.ndarray:
        q = np.asarray(uv, dtype=float).reshape(-1, 2)
        simplex = self._tri.find_simplex(q)
        return (simplex >= 0) & self._keep[np.maximum(simplex, 0)]


class PolygonRegion:
    """Interior of a simple closed polygon, optionally with a conforming triangulation."""

    def __init__(self, polygon, triangulation=None):
        self.polygon = np.asarray(polygon, dtype=float).reshape(-1, 2)
        self._path = _MplPath(np.vstack([self.polygon, self.polygon[:1]]), closed=True)
        self._triangulation = triangulation

    def contains(self, uv) -> np.ndarray:
        q = np.asarray(uv, dtype=float).reshape(-1, 2)
        return self._path.contains_points(q)

    @property
    def points(self):
        return None if self._triangulation is None else self._triangulation[0]

    @property
    def triangles(self):
        return None if self._triangulation is None else self._triangulation[1]


@dataclass(frozen=True)
class HeightField:
    """Heights along ``frame.normal`` on a lattice, valid where ``mask`` is set.

    ``surface`` (optional) evaluates the continuous model at arbitrary plane
    points, and ``support`` (optional) tests footprint membership and may
    carry a boundary-conforming triangulation used for area.
    """

    frame: ValveFrame
    grid: Grid
    values: np.ndarray
    mask: np.ndarray
    surface: Callable | None = None
    support: object | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != self.grid.shape or mask.shape != self.grid.shape:
            raise HeightFieldError("values/mask shape does not match the grid")
        if not np.all(np.isfinite(values[mask])):
            raise HeightFieldError("non-finite height on a masked node")
        values = np.where(mask, values, np.nan)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    def shares_grid(self, other: "HeightField") -> bool:
        f, g = self.frame, other.frame
        return (
            self.grid == other.grid
            and np.allclose(f.center, g.center, atol=1e-12)
            and np.allclose(f.normal, g.normal, atol=1e-12)
            and np.allclose(f.radial, g.radial, atol=1e-12)
        )

    def inside(self, uv) -> np.ndarray:
        """Footprint membership of arbitrary plane points."""
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        if self.support is not None:
            return self.support.contains(uv)
        idx = np.rint(uv / self.resolution).astype(int) - [self.grid.i0, self.grid.j0]
        ok = (idx[:, 0] >= 0) & (idx[:, 0] < self.grid.nu) & (idx[:, 1] >= 0) & (idx[:, 1] < self.grid.nv)
        out = np.zeros(len(uv), dtype=bool)
        out[ok] = self.mask[idx[ok, 0], idx[ok, 1]]
        return out

    def evaluate(self, uv) -> np.ndarray:
        """Height at plane points: the model if present, else bilinear on the lattice."""
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        if self.surface is not None:
            return np.asarray(self.surface(uv), dtype=float)
        g = self.grid
        x = uv[:, 0] / g.resolution - g.i0
        y = uv[:, 1] / g.resolution - g.j0
        i = np.clip(np.floor(x).astype(int), 0, max(g.nu - 2, 0))
        j = np.clip(np.floor(y).astype(int), 0, max(g.nv - 2, 0))
        fx, fy = x - i, y - j
        vals = self.values
        i1 = np.minimum(i + 1, g.nu - 1)
        j1 = np.minimum(j + 1, g.nv - 1)
        return (
            vals[i, j] * (1 - fx) * (1 - fy) + vals[i1, j] * fx * (1 - fy)
            + vals[i, j1] * (1 - fx) * fy + vals[i1, j1] * fx * fy
        )

    def masked_points(self) -> np.ndarray:
        """World coordinates of the masked lattice nodes."""
        nodes = self.grid.nodes()[self.mask]
        return self.frame.to_world(np.column_stack([nodes, self.values[self.mask]]))

    def lattice_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        """Triangulate masked cells: 2 triangles per full cell, 1 per 3-node corner."""
        g = self.grid
        m = self.mask
        index = -np.ones(g.shape, dtype=int)
        index[m] = np.arange(int(m.sum()))
        a = index[:-1, :-1]
        b = index[1:, :-1]
        c = index[1:, 1:]
        d = index[:-1, 1:]
        tris = []
        full = (a >= 0) & (b >= 0) & (c >= 0) & (d >= 0)
        tris.append(np.stack([a[full], b[full], c[full]], -1))
        tris.append(np.stack([a[full], c[full], d[full]], -1))
        for p, q, r, missing in ((a, b, c, d), (b, c, d, a), (c, d, a, b), (d, a, b, c)):
            sel = (p >= 0) & (q >= 0) & (r >= 0) & (missing < 0)
            tris.append(np.stack([p[sel], q[sel], r[sel]], -1))
        tris = np.concatenate(tris).reshape(-1, 3)
        nodes = g.nodes()[m]
        return np.column_stack([nodes, self.values[m]]), tris

    def to_mesh(self) -> TriangleMesh:
        """World-space triangulation (conforming one if the support carries it)."""
        tri_pts = getattr(self.support, "points", None)
        tri_idx = getattr(self.support, "triangles", None)
        if tri_pts is not None and tri_idx is not None and self.surface is not None:
            used = np.unique(tri_idx)
            remap = -np.ones(len(tri_pts), dtype=int)
            remap[used] = np.arange(len(used))
            uv = tri_pts[used]
            h = self.evaluate(uv)
            uvh = np.column_stack([uv, h])
            tris = remap[tri_idx]
        else:
            uvh, tris = self.lattice_triangles()
        if len(tris) == 0:
            raise HeightFieldError("empty footprint")
        return TriangleMesh(self.frame.to_world(uvh), tris)

