"""Annulus refinement: valve frame, skeleton by rotating half-planes,
periodic spline fit and radial tube expansion.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .mesh import MeshError, TriangleMesh, centroid, enclosed_volume, plane_section

TWO_PI = 2.0 * np.pi
# 5-point Gauss-Legendre nodes/weights on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class RefinementError(ValueError):
    pass


@dataclass(frozen=True)
class ValveFrame:
    """Orifice centre, plane normal ``normal`` and radial axis ``radial``."""

    center: np.ndarray
    normal: np.ndarray
    radial: np.ndarray

    @property
    def lateral(self) -> np.ndarray:
        return np.cross(self.normal, self.radial)

    @property
    def axes(self) -> np.ndarray:
        """Rows: radial (u), lateral (v), normal (h)."""
        return np.vstack([self.radial, self.lateral, self.normal])

    def to_local(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.center) @ self.axes.T

    def to_world(self, uvh) -> np.ndarray:
        return self.center + np.asarray(uvh, dtype=float) @ self.axes

    def height(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.normal

    def flipped(self) -> "ValveFrame":
        return replace(self, normal=-self.normal, radial=-self.radial)


def fit_valve_frame(points) -> ValveFrame:
    """Centroid plus SVD principal directions of ``points``.

    ``radial`` is the direction of largest spread, ``normal`` the smallest.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise RefinementError("need at least 3 points for a valve frame")
    center = pts.mean(axis=0)
    d = pts - center
    _, s, vt = np.linalg.svd(d, full_matrices=False)
    if s[0] <= 0 or s[1] < 1e-9 * s[0]:
        raise RefinementError("points are collinear or coincident (rank < 2)")
    radial = vt[0] / np.linalg.norm(vt[0])
    normal = np.cross(radial, vt[1])
    normal /= np.linalg.norm(normal)
    return ValveFrame(center, normal, radial)


def orient_normal(frame: ValveFrame, leaflet_meshes, hint=None) -> ValveFrame:
    """Point ``normal`` away from the leaflets (towards the atrium).

    The leaflets should sit on the negative side of the orifice plane. With
    ``hint`` (an approximate atrial direction) the leaflet vote is skipped.
    """
    if hint is not None:
        s = float(np.asarray(hint, dtype=float) @ frame.normal)
        if s == 0.0:
            raise RefinementError("normal hint is orthogonal to the valve normal")
        return frame if s > 0 else frame.flipped()
    pts = [m.vertices for m in leaflet_meshes if m is not None and not m.is_empty()]
    if not pts:
        raise RefinementError("no leaflet mesh to orient the valve normal")
    mean_h = float(frame.height(np.vstack(pts)).mean())
    if abs(mean_h) < 1e-9:
        raise RefinementError("leaflets balanced on the orifice plane; pass an explicit normal hint")
    return frame.flipped() if mean_h > 0 else frame


def align_radial(frame: ValveFrame, points) -> ValveFrame:
    """Fix the sign of ``radial`` so the highest point has positive u."""
    pts = np.asarray(points, dtype=float)
    top = pts[np.argmax(frame.height(pts))]
    if (top - frame.center) @ frame.radial < 0:
        return replace(frame, radial=-frame.radial)
    return frame


class SkeletonPoints(NamedTuple):
    points: np.ndarray
    angles: np.ndarray  # section angle in radians


def section_angles(theta_offset: float) -> np.ndarray:
    n = int(np.ceil(360.0 / theta_offset - 1e-9))
    return np.deg2rad(np.arange(n) * theta_offset)


def extract_skeleton(annulus_mesh: TriangleMesh, frame: ValveFrame, theta_offset: float = 15.0) -> SkeletonPoints:
    """Centres of mass of half-plane sections of the annulus mesh.

    For every angle the half-plane bounded by the axis (centre, normal) and
    containing ``Rot_theta(radial)`` is intersected with the mesh; empty
    sections, and sections that only cut the rim of a hole, are skipped so
    gaps in the annulus are tolerated.
    """
    if annulus_mesh.is_empty():
        raise RefinementError("empty annulus mesh")
    if not 0.0 < theta_offset <= 90.0:
        raise RefinementError("theta_offset must lie in (0, 90] degrees")
    centers, kept = [], []
    for theta in section_angles(theta_offset):
        r_theta = np.cos(theta) * frame.radial + np.sin(theta) * frame.lateral
        plane_n = np.cross(frame.normal, r_theta)
        plane_n /= np.linalg.norm(plane_n)
        lines = plane_section(annulus_mesh, frame.center, plane_n, half_space_dir=r_theta)
        # open chains mean the half-plane grazes a gap edge; their centroid is biased
        lines = [p for p in lines if p.closed]
        if not lines:
            continue
        centers.append(centroid(np.vstack([p.points for p in lines])))
        kept.append(theta)
    if len(centers) < 4:
        raise RefinementError(f"only {len(centers)} non-empty sections; cannot close the annulus")
    return SkeletonPoints(np.array(centers), np.array(kept))


class AnnulusCurve:
    """Closed C2 cubic spline through ordered points, periodic in [0, 2π).

    The parameter is the section angle; arc length is tabulated with
    Gauss-Legendre quadrature so ``param_at_length`` is cheap.
    """

    def __init__(self, points, params=None):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if params is None:
            params = np.linspace(0.0, TWO_PI, len(pts), endpoint=False)
        params = np.asarray(params, dtype=float)
        # dedup consecutive (and wrap-around) duplicates
        keep = np.ones(len(pts), dtype=bool)
        for i in range(1, len(pts)):
            if np.linalg.norm(pts[i] - pts[np.flatnonzero(keep[:i])[-1]]) < 1e-9:
                keep[i] = False
        pts, params = pts[keep], params[keep]
        if len(pts) > 1 and np.linalg.norm(pts[-1] - pts[0]) < 1e-9:
            pts, params = pts[:-1], params[:-1]
        if len(pts) < 4:
            raise RefinementError("a closed spline needs at least 4 distinct points")
        if np.any(np.diff(params) <= 0) or params[-1] - params[0] >= TWO_PI:
            raise RefinementError("parameters must increase within one turn")
        self.control_points = pts
        self.t0 = float(params[0])
        knots = np.append(params, params[0] + TWO_PI)
        self.knots = knots
        self._spline = CubicSpline(knots, np.vstack([pts, pts[:1]]), bc_type="periodic")
        self._d1 = self._spline.derivative(1)
        self._build_table()

    def _wrap(self, t):
        return self.t0 + np.mod(np.asarray(t, dtype=float) - self.t0, TWO_PI)

    def __call__(self, t) -> np.ndarray:
        return self._spline(self._wrap(t))

    def derivative(self, t) -> np.ndarray:
        return self._d1(self._wrap(t))

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.derivative(t), axis=-1)

    def _build_table(self, per_interval: int = 32):
        edges = np.concatenate([
            np.linspace(a, b, per_interval, endpoint=False) for a, b in zip(self.knots[:-1], self.knots[1:])
        ] + [[self.knots[-1]]])
        h = np.diff(edges)
        nodes = edges[:-1, None] + h[:, None] * _GL_X[None, :]
        seg = (np.linalg.norm(self._d1(nodes.ravel()), axis=1).reshape(nodes.shape) * _GL_W).sum(axis=1) * h
        self._t_table = edges
        self._s_table = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self._s_table[-1])

    def arclength(self, t) -> np.ndarray:
        """Arc length from the first knot to parameter ``t``."""
        return self._arclength_unwrapped(self._wrap(t))

    def _arclength_unwrapped(self, t):
        tw = np.clip(np.asarray(t, dtype=float), self.knots[0], self.knots[-1])
        i = np.clip(np.searchsorted(self._t_table, tw, side="right") - 1, 0, len(self._t_table) - 2)
        a = self._t_table[i]
        h = tw - a
        nodes = a[..., None] + h[..., None] * _GL_X
        sp = np.linalg.norm(self._d1(nodes), axis=-1)
        return self._s_table[i] + (sp * _GL_W).sum(axis=-1) * h

    def param_at_length(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.length)
        t = np.interp(s, self._s_table, self._t_table)
        for _ in range(3):
            t = t - (self._arclength_unwrapped(t) - s) / self.speed(t)
            t = np.clip(t, self.knots[0], self.knots[-1])
        return self._wrap(t)

    def sample(self, n: int, uniform_length: bool = True):
        """``n`` points (and their parameters) around the curve."""
        if uniform_length:
            t = self.param_at_length(np.linspace(0.0, self.length, n, endpoint=False))
        else:
            t = self.t0 + np.linspace(0.0, TWO_PI, n, endpoint=False)
        return self(t), t

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> "AnnulusCurve":
        rotation = np.asarray(rotation, dtype=float)
        pts = self.control_points @ rotation.T + np.asarray(translation, dtype=float)
        return AnnulusCurve(pts, self.knots[:-1])


def fit_periodic_spline(centers, angles=None) -> AnnulusCurve:
    """Interpolating closed cubic spline, parameterised by section angle."""
    pts = np.asarray(centers, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise RefinementError("need at least 4 centres for a closed spline")
    return AnnulusCurve(pts, angles)


def _rotation_minimizing_frames(points, tangents):
    """Double-reflection frames along a closed polyline, twist-corrected."""
    m = len(points)
    t0 = tangents[0]
    ref = np.eye(3)[np.argmin(np.abs(t0))]
    n0 = np.cross(t0, ref)
    n0 /= np.linalg.norm(n0)
    normals = np.empty_like(points)
    normals[0] = n0
    for i in range(m):
        j = (i + 1) % m
        v1 = points[j] - points[i]
        c1 = v1 @ v1
        r_l = normals[i] - (2.0 / c1) * (v1 @ normals[i]) * v1
        t_l = tangents[i] - (2.0 / c1) * (v1 @ tangents[i]) * v1
        v2 = tangents[j] - t_l
        c2 = v2 @ v2
        r_next = r_l - (2.0 / c2) * (v2 @ r_l) * v2 if c2 > 1e-30 else r_l
        if j == 0:
            end = r_next
        else:
            normals[j] = r_next / np.linalg.norm(r_next)
    # close the loop: spread the holonomy angle evenly along the curve
    b0 = np.cross(tangents[0], normals[0])
    phi = np.arctan2(end @ b0, end @ normals[0])
    frac = np.arange(m) / m
    out_n = np.empty_like(normals)
    out_b = np.empty_like(normals)
    for i in range(m):
        bi = np.cross(tangents[i], normals[i])
        a = -phi * frac[i]
        out_n[i] = np.cos(a) * normals[i] + np.sin(a) * bi
        out_b[i] = np.cross(tangents[i], out_n[i])
    return out_n, out_b


def expand_tube(curve: AnnulusCurve, radius: float = 1.0, n_around: int = 24, step: float | None = None) -> TriangleMesh:
    """Swept circular tube of ``radius`` around a closed curve."""
    if not radius > 0:
        raise RefinementError("tube radius must be positive")
    if step is None:
        step = radius / 2.0
    m = max(64, int(np.ceil(curve.length / step)))
    pts, t = curve.sample(m)
    tan = curve.derivative(t)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    nrm, bin_ = _rotation_minimizing_frames(pts, tan)
    ang = np.linspace(0.0, TWO_PI, n_around, endpoint=False)
    ring = np.cos(ang)[None, :, None] * nrm[:, None, :] + np.sin(ang)[None, :, None] * bin_[:, None, :]
    verts = (pts[:, None, :] + radius * ring).reshape(-1, 3)
    i = np.arange(m)[:, None]
    k = np.arange(n_around)[None, :]
    a = i * n_around + k
    b = ((i + 1) % m) * n_around + k
    c = ((i + 1) % m) * n_around + (k + 1) % n_around
    d = i * n_around + (k + 1) % n_around
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    mesh = TriangleMesh(verts, tris)
    if enclosed_volume(mesh) < 0:
        mesh = TriangleMesh(verts, tris[:, ::-1])
    return mesh
