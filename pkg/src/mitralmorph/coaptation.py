"""Leaflet middle surfaces, near-contact point set and coaptation line."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.spatial import cKDTree

from .annulus import ValveFrame
from .heightfield import AlphaShape, Grid, HeightField
from .mesh import Polyline3D, TriangleMesh, boundary_vertices, enclosed_volume, surface_area
from .rbf import PolyharmonicRBF, RBFError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.001
MAX_EPSILON = 1.0
POLY_DEGREE = 5


class CoaptationError(ValueError):
    pass


def _bin_sites(uvh: np.ndarray, cell: float):
    """One site per occupied cell: mean (u, v) and mid-range height."""
    keys = np.floor(uvh[:, :2] / cell).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    n = inv.max() + 1
    counts = np.bincount(inv, minlength=n).astype(float)
    u = np.bincount(inv, uvh[:, 0], n) / counts
    v = np.bincount(inv, uvh[:, 1], n) / counts
    hmax = np.full(n, -np.inf)
    hmin = np.full(n, np.inf)
    np.maximum.at(hmax, inv, uvh[:, 2])
    np.minimum.at(hmin, inv, uvh[:, 2])
    return np.column_stack([u, v]), 0.5 * (hmax + hmin)


def footprint_fraction(uvh: np.ndarray, cell: float = 2.0, thickness: float | None = None) -> float:
    """Share of footprint cells whose height spread is below twice the median spread.

    Heights are detrended by a least-squares plane per cell and the spread
    is measured along that plane's normal, so a steep but single-valued
    shell reads as its thickness and only folds stand out. Without an
    explicit ``thickness`` the median over cells is used.
    """
    keys = np.floor(uvh[:, :2] / cell).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    n = inv.max() + 1
    cnt = np.bincount(inv, minlength=n).astype(float)
    mean = np.stack([np.bincount(inv, uvh[:, k], n) / cnt for k in range(3)], axis=1)
    d = uvh - mean[inv]
    suu = np.bincount(inv, d[:, 0] * d[:, 0], n)
    suv = np.bincount(inv, d[:, 0] * d[:, 1], n)
    svv = np.bincount(inv, d[:, 1] * d[:, 1], n)
    suh = np.bincount(inv, d[:, 0] * d[:, 2], n)
    svh = np.bincount(inv, d[:, 1] * d[:, 2], n)
    ridge = 1e-9 * cell * cell
    det = (suu + ridge) * (svv + ridge) - suv * suv
    gu = ((svv + ridge) * suh - suv * svh) / det
    gv = ((suu + ridge) * svh - suv * suh) / det
    resid = d[:, 2] - gu[inv] * d[:, 0] - gv[inv] * d[:, 1]
    hmax = np.full(n, -np.inf)
    hmin = np.full(n, np.inf)
    np.maximum.at(hmax, inv, resid)
    np.minimum.at(hmin, inv, resid)
    # thickness along the local surface normal
    spread = (hmax - hmin) / np.sqrt(1.0 + gu * gu + gv * gv)
    if thickness is None:
        thickness = float(np.median(spread))
    return float(np.mean(spread <= 2.0 * thickness + 1e-6 * cell))


def fit_middle_surface(
    mesh: TriangleMesh,
    frame: ValveFrame,
    resolution: float = 0.5,
    smoothing: float | None = None,
    grid: Grid | None = None,
    alpha: float = 2.0,
    max_sites: int = 3000,
    min_footprint_fraction: float = 0.9,
) -> HeightField:
    """Smooth quintic-RBF height function through a (thickened) leaflet mesh.

    With ``smoothing=None`` the ridge weight is ``1e-3 * N * s**5`` where
    ``s`` is the mean nearest-site spacing. Large meshes are reduced to one
    site per ``resolution``-sized cell (mid-range height) before the solve.
    """
    if mesh.is_empty():
        raise CoaptationError("empty leaflet mesh")
    uvh = frame.to_local(mesh.vertices)
    thickness = None
    if len(boundary_vertices(mesh)) == 0:
        thickness = 2.0 * abs(enclosed_volume(mesh)) / surface_area(mesh)
    frac = footprint_fraction(uvh, thickness=thickness)
    if frac < min_footprint_fraction:
        raise CoaptationError(
            f"footprint check failed: only {frac:.0%} of cells look single-valued over the valve plane"
        )
    if len(uvh) > max_sites:
        cell = resolution
        sites, values = _bin_sites(uvh, cell)
        while len(sites) > max_sites:
            cell *= 1.25
            sites, values = _bin_sites(uvh, cell)
    else:
        sites, values = uvh[:, :2], uvh[:, 2]
    if smoothing is None:
        d, _ = cKDTree(sites).query(sites, k=2)
        spacing = float(d[:, 1].mean())
        smoothing = 1e-3 * len(sites) * spacing ** 5
    try:
        model = PolyharmonicRBF(sites, values, kernel="quintic", smoothing=smoothing)
    except RBFError as exc:
        raise CoaptationError(str(exc)) from None
    support = AlphaShape(uvh[:, :2], alpha)
    if grid is None:
        grid = Grid.covering(uvh[:, :2], resolution, margin=resolution)
    nodes = grid.nodes().reshape(-1, 2)
    mask = support.contains(nodes)
    values_grid = np.full(len(nodes), np.nan)
    if mask.any():
        values_grid[mask] = model(nodes[mask])
    return HeightField(frame, grid, values_grid.reshape(grid.shape), mask.reshape(grid.shape), model, support)


@dataclass(frozen=True)
class CoaptationCandidates:
    """Near-contact points of two middle surfaces on their shared lattice."""

    points: np.ndarray  # (k, 3) world
    uvh: np.ndarray  # (k, 3) frame coordinates
    epsilon: float
    n_nodes: int  # how many came from lattice nodes (rest are edge crossings)

    @property
    def found(self) -> bool:
        return len(self.points) > 0


def _edge_crossings(diff, mean_h, both, grid: Grid):
    """Linear zero-crossings of ``diff`` along lattice edges with both ends valid."""
    out = []
    res = grid.resolution
    nodes = grid.nodes()
    for axis in (0, 1):
        sl_a = (slice(None, -1), slice(None)) if axis == 0 else (slice(None), slice(None, -1))
        sl_b = (slice(1, None), slice(None)) if axis == 0 else (slice(None), slice(1, None))
        da, db = diff[sl_a], diff[sl_b]
        ok = both[sl_a] & both[sl_b] & (np.sign(da) * np.sign(db) < 0)
        if not ok.any():
            continue
        da, db = da[ok], db[ok]
        t = da / (da - db)
        ha, hb = mean_h[sl_a][ok], mean_h[sl_b][ok]
        base = nodes[sl_a][ok]
        uv = base.copy()
        uv[:, axis] += t * res
        out.append(np.column_stack([uv, ha + t * (hb - ha)]))
    return np.vstack(out) if out else np.empty((0, 3))


def find_coaptation_candidates(
    anterior: HeightField,
    posterior: HeightField,
    epsilon: float = DEFAULT_EPSILON,
    max_epsilon: float = MAX_EPSILON,
    include_crossings: bool = True,
) -> CoaptationCandidates:
    """Lattice realisation of the contact set ``|h_A - h_P| < eps``.

    Nodes with both footprints set and heights closer than ``epsilon`` are
    lifted at the mean height. Sign changes of the difference along lattice
    edges are added at the linearly interpolated crossing. If nothing is
    found, ``epsilon`` doubles up to ``max_epsilon``.
    """
    if not anterior.shares_grid(posterior):
        raise CoaptationError("mismatched grids: both surfaces must share frame and lattice")
    if not epsilon > 0:
        raise CoaptationError("epsilon must be positive")
    both = anterior.mask & posterior.mask
    diff = np.where(both, anterior.values - posterior.values, 0.0)
    mean_h = np.where(both, 0.5 * (anterior.values + posterior.values), 0.0)
    crossings = _edge_crossings(diff, mean_h, both, anterior.grid) if include_crossings else np.empty((0, 3))
    nodes = anterior.grid.nodes()
    eps = epsilon
    while True:
        sel = both & (np.abs(diff) < eps)
        node_pts = np.column_stack([nodes[sel], mean_h[sel]])
        uvh = np.vstack([node_pts, crossings])
        if len(uvh) or eps >= max_epsilon:
            break
        eps = min(2.0 * eps, max_epsilon)
        log.info("no contact points; widening epsilon to %.4g mm", eps)
    return CoaptationCandidates(anterior.frame.to_world(uvh), uvh, eps, len(node_pts))


@dataclass(frozen=True)
class CoaptationCurve:
    """Two polynomials of the inter-commissural coordinate, in a frame with
    origin at the valve centre, ``axis_u`` towards LC and ``axis_v = n x axis_u``."""

    v_poly: Polynomial
    h_poly: Polynomial
    u_range: tuple[float, float]
    origin: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    normal: np.ndarray
    rms: float
    n_points: int
    polyline: Polyline3D

    def evaluate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (
            self.origin
            + u[..., None] * self.axis_u
            + self.v_poly(u)[..., None] * self.axis_v
            + self.h_poly(u)[..., None] * self.normal
        )

    def coefficients(self) -> dict:
        """Coefficients in the scaled basis, u mapped onto [-1, 1]."""
        return {
            "v": self.v_poly.coef.tolist(),
            "h": self.h_poly.coef.tolist(),
            "u_min_mm": self.u_range[0],
            "u_max_mm": self.u_range[1],
        }


def fit_coaptation_line(points, commissure_a, commissure_b, frame: ValveFrame,
                        degree: int = POLY_DEGREE, n_samples: int = 100) -> CoaptationCurve:
    """Least-squares degree-5 fits of v(u) and h(u) over the candidate points.

    ``commissure_a`` and ``commissure_b`` are MC and LC; u runs from MC to LC.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    need = 2 * (degree + 1)
    if len(pts) < need:
        raise CoaptationError(f"need at least {need} contact points, got {len(pts)}")
    n = frame.normal
    axis = np.asarray(commissure_b, dtype=float) - np.asarray(commissure_a, dtype=float)
    axis = axis - (axis @ n) * n
    norm = np.linalg.norm(axis)
    if norm < 1e-9:
        raise CoaptationError("commissures coincide in the valve plane")
    axis_u = axis / norm
    axis_v = np.cross(n, axis_u)
    d = pts - frame.center
    u, v, h = d @ axis_u, d @ axis_v, d @ n
    if len(np.unique(np.round(u, 9))) <= degree:
        raise CoaptationError("ill-conditioned fit: too few distinct u values")
    domain = [float(u.min()), float(u.max())]
    v_poly = Polynomial.fit(u, v, degree, domain=domain)
    h_poly = Polynomial.fit(u, h, degree, domain=domain)
    resid = np.concatenate([v - v_poly(u), h - h_poly(u)])
    rms = float(np.sqrt(np.mean(resid ** 2)))
    curve = CoaptationCurve(v_poly, h_poly, (domain[0], domain[1]), frame.center.copy(),
                            axis_u, axis_v, n.copy(), rms, len(pts), None)
    us = np.linspace(domain[0], domain[1], n_samples)
    poly = Polyline3D(curve.evaluate(us), closed=False)
    return CoaptationCurve(v_poly, h_poly, curve.u_range, curve.origin, axis_u, axis_v, n.copy(),
                           rms, len(pts), poly)
