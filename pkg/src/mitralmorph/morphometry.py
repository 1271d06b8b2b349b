"""Annulus and leaflet measurements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.spatial import Delaunay, cKDTree

from .annulus import TWO_PI, AnnulusCurve, ValveFrame
from .heightfield import Grid, HeightField, PolygonRegion
from .landmarks import AnnularLandmarks
from .mesh import Polyline3D, TriangleMesh, surface_area
from .rbf import PolyharmonicRBF, RBFError


class MorphometryError(ValueError):
    pass


def annular_diameters(landmarks: AnnularLandmarks) -> tuple[float, float]:
    """(D_AP, D_CC): SH-PAM and MC-LC distances."""
    d_ap = float(np.linalg.norm(landmarks.SH.point - landmarks.PAM.point))
    d_cc = float(np.linalg.norm(landmarks.MC.point - landmarks.LC.point))
    return d_ap, d_cc


def annular_length(curve: AnnulusCurve, rtol: float = 1e-10) -> float:
    """Perimeter by adaptive quadrature, one integral per spline piece."""
    total = 0.0
    for a, b in zip(curve.knots[:-1], curve.knots[1:]):
        val, _ = quad(lambda t: float(curve.speed(t)), a, b, epsrel=rtol, epsabs=0.0, limit=200)
        total += val
    return total


def annular_height(curve: AnnulusCurve, frame: ValveFrame, n_samples: int = 3600) -> float:
    """Extent of the curve along the valve normal."""
    t = curve.t0 + np.linspace(0.0, TWO_PI, n_samples, endpoint=False)
    h = frame.height(curve(t))
    dt = TWO_PI / n_samples
    out = []
    for idx, sign in ((int(np.argmax(h)), 1.0), (int(np.argmin(h)), -1.0)):
        res = minimize_scalar(lambda x: -sign * float(frame.height(curve(x))),
                              bounds=(t[idx] - dt, t[idx] + dt), method="bounded",
                              options={"xatol": 1e-10})
        out.append(max(sign * h[idx], -res.fun) * sign)
    return float(out[0] - out[1])


def _segments_intersect(poly: np.ndarray) -> bool:
    """True if any two non-adjacent edges of the closed polygon cross."""
    p = poly
    q = np.roll(poly, -1, axis=0)
    n = len(p)

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    for i in range(n):
        j = np.arange(i + 2, n)
        if i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        d1 = orient(p[i], q[i], p[j])
        d2 = orient(p[i], q[i], q[j])
        d3 = orient(p[j], q[j], p[i])
        d4 = orient(p[j], q[j], q[i])
        # touching counts; the box test rules out collinear edges that do not overlap
        boxes = (
            (np.minimum(p[j, 0], q[j, 0]) <= max(p[i, 0], q[i, 0]))
            & (np.maximum(p[j, 0], q[j, 0]) >= min(p[i, 0], q[i, 0]))
            & (np.minimum(p[j, 1], q[j, 1]) <= max(p[i, 1], q[i, 1]))
            & (np.maximum(p[j, 1], q[j, 1]) >= min(p[i, 1], q[i, 1]))
        )
        if np.any((d1 * d2 <= 0) & (d3 * d4 <= 0) & boxes):
            return True
    return False


def orifice_surface(curve: AnnulusCurve, frame: ValveFrame, resolution: float = 0.5,
                    grid: Grid | None = None) -> tuple[HeightField, float]:
    """Thin-plate surface spanning the annulus and its 3D area.

    The curve is sampled uniformly in arc length at about ``resolution``;
    the TPS interpolates those heights over the projected interior. The area
    comes from a boundary-conforming Delaunay triangulation of the boundary
    samples plus interior lattice nodes, lifted onto the surface.
    """
    if not resolution > 0:
        raise MorphometryError("resolution must be positive")
    n_b = max(128, int(np.ceil(curve.length / resolution)))
    pts, _ = curve.sample(n_b)
    uvh = frame.to_local(pts)
    poly = uvh[:, :2]
    if _segments_intersect(poly):
        raise MorphometryError("projected annulus self-intersects")
    try:
        model = PolyharmonicRBF(poly, uvh[:, 2], kernel="thin_plate")
    except RBFError as exc:
        raise MorphometryError(str(exc)) from None
    if grid is None:
        grid = Grid.covering(poly, resolution, margin=resolution)
    region = PolygonRegion(poly)
    nodes = grid.nodes().reshape(-1, 2)
    mask = region.contains(nodes)
    values = np.full(len(nodes), np.nan)
    values[mask] = model(nodes[mask])

    # conforming triangulation on its own lattice at the requested resolution
    tri_grid = Grid.covering(poly, resolution, margin=resolution)
    tnodes = tri_grid.nodes().reshape(-1, 2)
    dense, _ = curve.sample(4 * n_b)
    dist, _ = cKDTree(frame.to_local(dense)[:, :2]).query(tnodes)
    interior = tnodes[region.contains(tnodes) & (dist > 0.5 * resolution)]
    tri_uv = np.vstack([poly, interior])
    tri = Delaunay(tri_uv).simplices
    cent = tri_uv[tri].mean(axis=1)
    tri = tri[region.contains(cent)]
    tri_h = np.concatenate([uvh[:, 2], model(interior)])
    area = surface_area(TriangleMesh(frame.to_world(np.column_stack([tri_uv, tri_h])), tri))
    region = PolygonRegion(poly, (tri_uv, tri))
    field = HeightField(frame, grid, values.reshape(grid.shape), mask.reshape(grid.shape), model, region)
    return field, float(area)


@dataclass(frozen=True)
class LengthTrace:
    length: float
    polyline: Polyline3D


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True values."""
    padded = np.concatenate([[False], flags, [False]]).astype(int)
    d = np.diff(padded)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def _project_on_polyline(pts: np.ndarray, q: np.ndarray):
    """(distance, arc position) of the closest point of an open polyline to ``q``."""
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", q - a, ab) / np.where(ll > 0, ll, 1.0), 0.0, 1.0)
    foot = a + t[:, None] * ab
    d = np.linalg.norm(foot - q, axis=1)
    k = int(np.argmin(d))
    cum = np.concatenate([[0.0], np.cumsum(np.sqrt(ll))])
    return float(d[k]), float(cum[k] + t[k] * np.sqrt(ll[k])), cum


def _clip_polyline(pts, cum, s0, s1):
    lo, hi = min(s0, s1), max(s0, s1)
    inner = pts[(cum > lo) & (cum < hi)]
    ends = [np.array([np.interp(s, cum, pts[:, k]) for k in range(3)]) for s in (lo, hi)]
    return np.vstack([ends[0], inner, ends[1]])


def leaflet_length(field: HeightField, plane_point, plane_normal, anchor, tip,
                   tolerance: float = 3.0, step: float | None = None) -> LengthTrace:
    """Arc length of the surface section between the projections of anchor and tip.

    The section of the height surface with a plane containing the valve normal
    is traced along a line in plane coordinates, split into connected
    branches by footprint membership, and the branch closest to ``tip`` is
    kept. Both ``anchor`` and ``tip`` must lie within ``tolerance`` of it.
    """
    frame = field.frame
    pn = np.asarray(plane_normal, dtype=float)
    n_uv = np.array([pn @ frame.radial, pn @ frame.lateral])
    if np.linalg.norm(n_uv) < 1e-9:
        raise MorphometryError("section plane must contain the valve normal")
    n_uv /= np.linalg.norm(n_uv)
    d_uv = np.array([-n_uv[1], n_uv[0]])
    base = frame.to_local(np.asarray(plane_point, dtype=float))[:2]
    step = field.resolution / 5.0 if step is None else step
    g = field.grid
    corners = np.array([[g.u[0], g.v[0]], [g.u[-1], g.v[0]], [g.u[0], g.v[-1]], [g.u[-1], g.v[-1]]])
    reach = np.abs((corners - base) @ d_uv).max() + field.resolution
    s = np.arange(-reach, reach + step, step)
    line_uv = base + s[:, None] * d_uv
    inside = field.inside(line_uv)
    runs = [r for r in _runs(inside) if r[1] - r[0] >= 2]
    if not runs:
        raise MorphometryError("section plane misses the leaflet surface")
    anchor = np.asarray(anchor, dtype=float)
    tip = np.asarray(tip, dtype=float)
    best = None
    for a, b in runs:
        uv = line_uv[a:b]
        pts = frame.to_world(np.column_stack([uv, field.evaluate(uv)]))
        d_tip, s_tip, cum = _project_on_polyline(pts, tip)
        if best is None or d_tip < best[0]:
            best = (d_tip, s_tip, cum, pts)
    d_tip, s_tip, cum, pts = best
    if d_tip > tolerance:
        raise MorphometryError(f"tip is {d_tip:.2f} mm from the section branch")
    d_anchor, s_anchor, _ = _project_on_polyline(pts, anchor)
    if d_anchor > tolerance:
        raise MorphometryError(f"anchor is {d_anchor:.2f} mm from the section branch")
    if abs(s_tip - s_anchor) <= 0.0:
        raise MorphometryError("anchor and tip project onto the same point")
    clipped = _clip_polyline(pts, cum, s_anchor, s_tip)
    return LengthTrace(abs(s_tip - s_anchor), Polyline3D(clipped, closed=False))


def leaflet_length_on_mesh(sections, anchor, tip, tolerance: float = 3.0) -> LengthTrace:
    """Length along the thickened-mesh section from the point nearest ``anchor`` to ``tip``.

    On a closed section loop the shorter way round is taken.
    """
    if not sections:
        raise MorphometryError("empty leaflet section")
    anchor = np.asarray(anchor, dtype=float)
    tip = np.asarray(tip, dtype=float)
    best = None
    for line in sections:
        pts = line.points
        if line.closed:
            pts = np.vstack([pts, pts[:1]])
        d_tip, s_tip, cum = _project_on_polyline(pts, tip)
        if best is None or d_tip < best[0]:
            best = (d_tip, s_tip, cum, pts, line.closed)
    d_tip, s_tip, cum, pts, closed = best
    if d_tip > tolerance:
        raise MorphometryError(f"tip is {d_tip:.2f} mm from the leaflet section")
    d_anchor, s_anchor, _ = _project_on_polyline(pts, anchor)
    if d_anchor > tolerance:
        raise MorphometryError(f"anchor is {d_anchor:.2f} mm from the leaflet section")
    length = abs(s_tip - s_anchor)
    clipped = _clip_polyline(pts, cum, s_anchor, s_tip)
    if closed and cum[-1] - length < length:
        length = cum[-1] - length
        lo, hi = sorted((s_anchor, s_tip))
        clipped = np.vstack([_clip_polyline(pts, cum, hi, cum[-1]), _clip_polyline(pts, cum, 0.0, lo)[1:]])
    return LengthTrace(float(length), Polyline3D(_dedup(clipped), closed=False))


def _dedup(pts):
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12])
    return pts[keep]


def leaflet_area(field: HeightField) -> float:
    """3D area of the lifted footprint triangulation."""
    if not field.mask.any() and getattr(field.support, "triangles", None) is None:
        raise MorphometryError("empty footprint")
    return float(surface_area(field.to_mesh()))


@dataclass(frozen=True)
class SignedHeight:
    field: HeightField
    min: float
    max: float
    mean: float
    summary: dict = field(default_factory=dict)

    @property
    def prolapse(self) -> bool:
        return self.max > 0


def leaflet_height_field(leaflet: HeightField, orifice: HeightField) -> SignedHeight:
    """``h_leaflet - h_orifice`` on the common footprint; positive is atrial."""
    if not leaflet.shares_grid(orifice):
        raise MorphometryError("leaflet and orifice surfaces are on different lattices")
    both = leaflet.mask & orifice.mask
    if not both.any():
        raise MorphometryError("leaflet and orifice footprints are disjoint")
    diff = np.where(both, leaflet.values - orifice.values, np.nan)
    out = HeightField(leaflet.frame, leaflet.grid, diff, both)
    vals = diff[both]
    lo, hi, mean = float(vals.min()), float(vals.max()), float(vals.mean())
    return SignedHeight(out, lo, hi, mean, {"min_mm": lo, "max_mm": hi, "mean_mm": mean})
