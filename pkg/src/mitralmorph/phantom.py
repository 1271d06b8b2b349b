"""Synthetic labeled valves with an analytic truth record.

Geometry (before voxelisation, in mm, atrial direction +z):

* annulus centreline ``A(θ) = (a cosθ, b sinθ, h1 cos2θ + (h2/2) cos3θ)``;
  the saddle horn sits near θ = 0, the posterior mid-point near θ = π and
  the commissures at the two height minima ``±θc``;
* coaptation arc ``K(t)``, t in [-1, 1], running between the commissures and
  dipping ``coaptation_depth`` below them at its middle;
* leaflet middle surfaces ruled from ``A(θ)`` towards ``K(t)`` (anterior
  ``t = θ/θc``, posterior ``t = (π - θ)/(π - θc)``), continued ``overlap``
  mm past the arc so the two leaflets cross;
* optional prolapse: a smooth bump lifting the posterior middle surface to
  exactly ``prolapse_bump`` mm above the orifice surface at its peak.

The truth frame is the SVD plane of arc-length-uniform centreline samples,
and every truth quantity is measured in it with its own numerics (dense
sampling, spectral quadrature, scipy's thin-plate interpolator), never with
the pipeline code.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.optimize import minimize_scalar
from scipy.spatial import Delaunay, cKDTree
from matplotlib.path import Path as _MplPath

from .volume import LabeledVolume

TWO_PI = 2.0 * np.pi
N_ANGLE = 20000  # >= 1e4 samples for truth extrema
N_ORIFICE = 600
BUMP_S0, BUMP_HALF_S = 0.5, 0.45  # prolapse bump centre/half-width along the ruling


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomParams:
    d_cc: float = 36.0
    d_ap: float = 32.0
    h1: float = 3.0
    h2: float = 1.5
    tube_radius: float = 1.0
    leaflet_thickness: float = 1.2
    coaptation_offset: float = 0.6  # anterior share of the SH-PAM span
    prolapse_bump: float = 0.0
    spacing: float = 0.4
    gap_arc: float = 0.0  # degrees
    gap_center: float = 225.0  # degrees
    coaptation_depth: float = 5.0
    overlap: float = 1.5
    dims: tuple[int, int, int] | None = None

    def validate(self) -> None:
        for name in ("d_cc", "d_ap", "tube_radius", "leaflet_thickness", "spacing", "coaptation_depth"):
            if not getattr(self, name) > 0:
                raise PhantomError(f"{name} must be positive")
        if self.h1 < 0 or self.h2 < 0:
            raise PhantomError("h1 and h2 must be >= 0")
        if self.h2 > 0 and not self.h2 < 8.0 * self.h1 / 9.0:
            raise PhantomError("need h2 < 8*h1/9 so the posterior mid-point is a local height maximum")
        if not 0.0 < self.coaptation_offset < 1.0:
            raise PhantomError("coaptation_offset must lie in (0, 1)")
        if self.prolapse_bump < 0 or self.gap_arc < 0 or self.overlap < 0:
            raise PhantomError("prolapse_bump, gap_arc and overlap must be >= 0")
        if self.gap_arc >= 360:
            raise PhantomError("gap_arc must be below 360 degrees")
        if self.spacing > self.tube_radius:
            raise PhantomError("spacing too coarse to resolve the annulus tube (spacing > tube_radius)")
        if self.spacing > self.leaflet_thickness:
            raise PhantomError("spacing too coarse to resolve the leaflet thickness")
        if self.d_ap <= self.h2:
            raise PhantomError("d_ap must exceed h2")


# -- analytic curve -------------------------------------------------------

def _centerline(theta, a, b, p: PhantomParams):
    th = np.asarray(theta, dtype=float)
    return np.stack([a * np.cos(th), b * np.sin(th),
                     p.h1 * np.cos(2 * th) + 0.5 * p.h2 * np.cos(3 * th)], axis=-1)


def _centerline_d(theta, a, b, p: PhantomParams):
    th = np.asarray(theta, dtype=float)
    return np.stack([-a * np.sin(th), b * np.cos(th),
                     -2 * p.h1 * np.sin(2 * th) - 1.5 * p.h2 * np.sin(3 * th)], axis=-1)


def perimeter(a, b, p: PhantomParams, n: int = 1 << 14) -> float:
    """Periodic trapezoid rule on the speed (spectrally accurate)."""
    th = np.arange(n) * (TWO_PI / n)
    return float(np.linalg.norm(_centerline_d(th, a, b, p), axis=1).sum() * TWO_PI / n)


class _ArcTable:
    def __init__(self, a, b, p, n=1 << 15):
        th = np.arange(n + 1) * (TWO_PI / n)
        sp = np.linalg.norm(_centerline_d(th, a, b, p), axis=1)
        self.theta = th
        self.s = np.concatenate([[0.0], np.cumsum(0.5 * (sp[1:] + sp[:-1]) * (TWO_PI / n))])
        self.length = self.s[-1]

    def theta_at(self, s):
        return np.interp(np.mod(s, self.length), self.s, self.theta)

    def s_at(self, theta):
        return np.interp(np.mod(theta, TWO_PI), self.theta, self.s)


@dataclass(frozen=True)
class _Frame:
    center: np.ndarray
    axes: np.ndarray  # rows u, v, n

    def local(self, x):
        return (np.asarray(x, dtype=float) - self.center) @ self.axes.T

    def world(self, uvh):
        return self.center + np.asarray(uvh, dtype=float) @ self.axes


def _truth_frame(a, b, p, table: _ArcTable) -> _Frame:
    th = table.theta_at(np.linspace(0.0, table.length, 4096, endpoint=False))
    pts = _centerline(th, a, b, p)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[2] if vt[2][2] > 0 else -vt[2]
    top = _centerline(0.0, a, b, p)
    r = vt[0] - (vt[0] @ n) * n
    r /= np.linalg.norm(r)
    if (top - c) @ r < 0:
        r = -r
    return _Frame(c, np.vstack([r, np.cross(n, r), n]))


def _landmark_angles(a, b, p, frame: _Frame, table: _ArcTable):
    """Brute-force height extrema over N_ANGLE samples, refined by bounded search."""
    th = np.arange(N_ANGLE) * (TWO_PI / N_ANGLE)
    h = frame.local(_centerline(th, a, b, p))[:, 2]
    dt = TWO_PI / N_ANGLE

    def height(t):
        return float(frame.local(_centerline(t, a, b, p))[2])

    def refine(t0, sign):
        res = minimize_scalar(lambda t: -sign * height(t), bounds=(t0 - dt, t0 + dt),
                              method="bounded", options={"xatol": 1e-12})
        return float(np.mod(res.x, TWO_PI))

    if np.ptp(h) < 1e-12:
        return 0.0, np.pi, np.pi / 2, 3 * np.pi / 2
    t_sh = refine(th[int(np.argmax(h))], 1.0)
    idx = np.flatnonzero((h < np.roll(h, 1)) & (h <= np.roll(h, -1)))
    mins = sorted((refine(th[i], -1.0) for i in idx), key=height)
    first = mins[0]
    second = None
    for t in mins[1:]:
        d = abs(t - first) % TWO_PI
        if min(d, TWO_PI - d) >= np.deg2rad(60.0):
            second = t
            break
    if second is None:
        raise PhantomError("saddle law has no two separated commissure minima")
    t_pam = float(table.theta_at(table.s_at(t_sh) + 0.5 * table.length))
    c1, c2 = sorted([first, second])
    return t_sh, t_pam, c1, c2


@dataclass
class _Geometry:
    p: PhantomParams
    a: float
    b: float
    frame: _Frame
    table: _ArcTable
    t_sh: float
    t_pam: float
    theta_c: float  # commissures at +theta_c and 2π - theta_c
    orifice: RBFInterpolator
    orifice_poly: np.ndarray

    def A(self, theta):
        return _centerline(theta, self.a, self.b, self.p)

    def K(self, t):
        p = self.p
        t = np.asarray(t, dtype=float)
        c = self.A(self.theta_c)
        x_end, y_end, z_c = c
        x_mid = self.a - 2.0 * self.a * p.coaptation_offset
        w = 1.0 - t * t
        return np.stack([x_end + (x_mid - x_end) * w, t * y_end, z_c - p.coaptation_depth * w], axis=-1)

    def leaflet_t(self, theta, which):
        theta = np.asarray(theta, dtype=float)
        if which == "anterior":
            th = np.where(theta > np.pi, theta - TWO_PI, theta)
            return th / self.theta_c
        return (np.pi - theta) / (np.pi - self.theta_c)

    def theta_range(self, which):
        if which == "anterior":
            return -self.theta_c, self.theta_c
        return self.theta_c, TWO_PI - self.theta_c

    def ruling_end(self, theta, which):
        """Parameter s where the middle surface ends (past K by the overlap)."""
        t = self.leaflet_t(theta, which)
        span = np.linalg.norm(self.K(t) - self.A(theta), axis=-1)
        ext = self.p.overlap * (1.0 - t * t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(span > 1e-12, 1.0 + ext / np.where(span > 1e-12, span, 1.0), 1.0)

    def bump_weight(self, theta, s):
        """Smooth weight in [0, 1], 1 only at the bump centre (posterior)."""
        half = 0.6 * (np.pi - self.theta_c)
        x = (np.asarray(theta) - np.pi) / half
        y = (np.asarray(s) - BUMP_S0) / BUMP_HALF_S
        wx = np.where(np.abs(x) < 1, np.cos(0.5 * np.pi * x) ** 2, 0.0)
        wy = np.where(np.abs(y) < 1, np.cos(0.5 * np.pi * y) ** 2, 0.0)
        return wx * wy

    def surface(self, theta, s, which):
        """Middle-surface points for parameter arrays of equal shape."""
        theta = np.asarray(theta, dtype=float)
        s = np.asarray(s, dtype=float)
        a = self.A(theta)
        k = self.K(self.leaflet_t(theta, which))
        pts = a + s[..., None] * (k - a)
        if which == "posterior" and self.p.prolapse_bump > 0:
            g = self.bump_weight(theta, s)
            sel = g > 0
            if np.any(sel):
                loc = self.frame.local(pts[sel])
                base = self.orifice(loc[:, :2])
                loc[:, 2] = (1 - g[sel]) * loc[:, 2] + g[sel] * (base + self.p.prolapse_bump)
                pts = pts.copy()
                pts[sel] = self.frame.world(loc)
        return pts


def _solve_axes(p: PhantomParams):
    """Ellipse semi-axes so the measured truth diameters equal the requested ones."""
    a = 0.5 * np.sqrt(p.d_ap ** 2 - p.h2 ** 2)
    b = 0.5 * p.d_cc
    for _ in range(60):
        table = _ArcTable(a, b, p)
        frame = _truth_frame(a, b, p, table)
        t_sh, t_pam, c1, c2 = _landmark_angles(a, b, p, frame, table)
        ap = np.linalg.norm(_centerline(t_sh, a, b, p) - _centerline(t_pam, a, b, p))
        cc = np.linalg.norm(_centerline(c1, a, b, p) - _centerline(c2, a, b, p))
        if abs(ap - p.d_ap) < 1e-11 and abs(cc - p.d_cc) < 1e-11:
            break
        a *= p.d_ap / ap
        b *= p.d_cc / cc
    else:
        raise PhantomError("could not match the requested diameters")
    return a, b, table, frame, (t_sh, t_pam, c1, c2)


def _build_geometry(p: PhantomParams) -> _Geometry:
    p.validate()
    a, b, table, frame, (t_sh, t_pam, c1, c2) = _solve_axes(p)
    if abs(np.mod(t_sh + np.pi, TWO_PI) - np.pi) > 1e-6:
        raise PhantomError("saddle horn is not at θ = 0; parameters break the valve symmetry")
    theta_c = min(c1, TWO_PI - c2)
    th = table.theta_at(np.linspace(0.0, table.length, N_ORIFICE, endpoint=False))
    loc = frame.local(_centerline(th, a, b, p))
    orifice = RBFInterpolator(loc[:, :2], loc[:, 2], kernel="thin_plate_spline", degree=1)
    return _Geometry(p, a, b, frame, table, t_sh, t_pam, theta_c, orifice, loc[:, :2])


# -- truth record ----------------------------------------------------------

@dataclass
class AnalyticTruth:
    d_cc: float
    d_ap: float
    annulus_length: float
    annulus_height: float
    annulus_area: float
    anterior_length: float
    posterior_length: float
    anterior_area: float
    posterior_area: float
    anterior_tip: list
    posterior_tip: list
    landmarks: dict  # name -> {"point": [x,y,z], "theta_deg": float}
    coaptation_arc: list  # [[x,y,z], ...]
    atrial_direction: list
    frame: dict  # center, radial, normal
    max_leaflet_height: dict  # anterior/posterior: max height above the orifice surface
    centerline: list = field(default_factory=list)  # dense world samples
    params: dict = field(default_factory=dict)

    def measurements(self) -> dict[str, float]:
        """Scalar measurements keyed like the analysis report."""
        return {
            "d_cc_mm": self.d_cc,
            "d_ap_mm": self.d_ap,
            "height_mm": self.annulus_height,
            "length_mm": self.annulus_length,
            "area_mm2": self.annulus_area,
            "anterior_length_mm": self.anterior_length,
            "posterior_length_mm": self.posterior_length,
            "anterior_area_mm2": self.anterior_area,
            "posterior_area_mm2": self.posterior_area,
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AnalyticTruth":
        return cls(**json.loads(text))


def _annulus_height(g: _Geometry) -> float:
    th = np.arange(N_ANGLE) * (TWO_PI / N_ANGLE)
    h = g.frame.local(g.A(th))[:, 2]
    dt = TWO_PI / N_ANGLE
    out = []
    for i, sign in ((int(np.argmax(h)), 1.0), (int(np.argmin(h)), -1.0)):
        res = minimize_scalar(lambda t: -sign * float(g.frame.local(g.A(t))[2]),
                              bounds=(th[i] - dt, th[i] + dt), method="bounded", options={"xatol": 1e-12})
        out.append(-sign * res.fun if sign > 0 else res.fun)
    return float(max(out[0], h.max()) - min(out[1], h.min()))


def _orifice_area(g: _Geometry, step: float = 0.2) -> float:
    poly = g.orifice_poly
    path = _MplPath(np.vstack([poly, poly[:1]]), closed=True)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    uu, vv = np.meshgrid(np.arange(lo[0], hi[0] + step, step), np.arange(lo[1], hi[1] + step, step), indexing="ij")
    nodes = np.column_stack([uu.ravel(), vv.ravel()])
    d, _ = cKDTree(poly).query(nodes)
    inner = nodes[path.contains_points(nodes) & (d > 0.5 * step)]
    uv = np.vstack([poly, inner])
    tri = Delaunay(uv).simplices
    tri = tri[path.contains_points(uv[tri].mean(axis=1))]
    h = np.concatenate([g.frame.local(g.A(g.table.theta_at(
        np.linspace(0.0, g.table.length, len(poly), endpoint=False))))[:, 2], g.orifice(inner)])
    xyz = np.column_stack([uv, h])
    e1 = xyz[tri[:, 1]] - xyz[tri[:, 0]]
    e2 = xyz[tri[:, 2]] - xyz[tri[:, 0]]
    return float(0.5 * np.linalg.norm(np.cross(e1, e2), axis=1).sum())


def _dense_centerline(g: _Geometry, step: float = 0.01):
    n = int(np.ceil(g.table.length / step))
    th = g.table.theta_at(np.linspace(0.0, g.table.length, n, endpoint=False))
    return g.A(th), th


def _tube_exit(g: _Geometry, theta, which, tree: cKDTree) -> np.ndarray:
    """Smallest s where the middle surface is ``tube_radius`` from the centreline (bisection)."""
    r = g.p.tube_radius
    lo = np.zeros_like(theta)
    hi = g.ruling_end(theta, which)
    d_hi, _ = tree.query(g.surface(theta, hi, which))
    ok = d_hi > r
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        d, _ = tree.query(g.surface(theta, mid, which))
        inside = d < r
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return np.where(ok, 0.5 * (lo + hi), np.nan)


def _tissue_grid(g: _Geometry, which, tree, n_theta=600, n_s=200):
    """Middle-surface samples over the visible tissue: tube exit to free edge + half thickness."""
    t0, t1 = g.theta_range(which)
    theta = np.linspace(t0, t1, n_theta)[1:-1]
    s0 = _tube_exit(g, theta, which, tree)
    keep = np.isfinite(s0)
    theta, s0 = theta[keep], s0[keep]
    span = np.linalg.norm(g.K(g.leaflet_t(theta, which)) - g.A(theta), axis=-1)
    s1 = g.ruling_end(theta, which) + 0.5 * g.p.leaflet_thickness / span
    frac = np.linspace(0.0, 1.0, n_s)
    ss = s0[:, None] + (s1 - s0)[:, None] * frac[None, :]
    tt = np.repeat(theta[:, None], n_s, axis=1)
    return g.surface(tt, ss, which), tt, ss


def _grid_area(pts: np.ndarray) -> float:
    a = pts[:-1, :-1]
    b = pts[1:, :-1]
    c = pts[1:, 1:]
    d = pts[:-1, 1:]
    t1 = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    t2 = 0.5 * np.linalg.norm(np.cross(c - a, d - a), axis=-1)
    return float(t1.sum() + t2.sum())


def _section_length(g: _Geometry, theta, which, tree, n: int = 20001):
    """Length along the ruling at ``theta`` (a plane curve by symmetry) and its far end."""
    s0 = float(_tube_exit(g, np.array([theta]), which, tree)[0])
    span = float(np.linalg.norm(g.K(g.leaflet_t(theta, which)) - g.A(theta)))
    s1 = float(g.ruling_end(np.array([theta]), which)[0]) + 0.5 * g.p.leaflet_thickness / span
    s = np.linspace(s0, s1, n)
    pts = g.surface(np.full(n, theta), s, which)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()), pts[-1]


def _truth(g: _Geometry) -> AnalyticTruth:
    p = g.p
    dense, _ = _dense_centerline(g)
    tree = cKDTree(dense)
    lm_theta = {"SH": g.t_sh, "PAM": g.t_pam}
    # LC by the chirality rule: det[x_c - SH, c - x_c, n] > 0
    sh = g.A(g.t_sh)
    cands = [g.theta_c, TWO_PI - g.theta_c]
    chir = [np.linalg.det(np.stack([g.frame.center - sh, g.A(t) - g.frame.center, g.frame.axes[2]])) for t in cands]
    lm_theta["LC"], lm_theta["MC"] = (cands[0], cands[1]) if chir[0] >= chir[1] else (cands[1], cands[0])
    landmarks = {k: {"point": g.A(t).tolist(), "theta_deg": float(np.rad2deg(t))} for k, t in lm_theta.items()}

    lengths, tips, areas, heights = {}, {}, {}, {}
    for which, theta in (("anterior", 0.0), ("posterior", np.pi)):
        lengths[which], tip = _section_length(g, theta, which, tree)
        tips[which] = tip.tolist()
        pts, tt, ss = _tissue_grid(g, which, tree)
        areas[which] = _grid_area(pts)
        loc = g.frame.local(pts[::3, ::3].reshape(-1, 3))
        heights[which] = float((loc[:, 2] - g.orifice(loc[:, :2])).max())
    if p.prolapse_bump > 0:
        # the bump peak is the exact maximum by construction
        peak = g.surface(np.array([np.pi]), np.array([BUMP_S0]), "posterior")
        loc = g.frame.local(peak)
        heights["posterior"] = max(heights["posterior"], float((loc[:, 2] - g.orifice(loc[:, :2]))[0]))

    d_ap = float(np.linalg.norm(g.A(g.t_sh) - g.A(g.t_pam)))
    d_cc = float(np.linalg.norm(g.A(g.theta_c) - g.A(TWO_PI - g.theta_c)))
    arc = g.K(np.linspace(-1.0, 1.0, 201))
    stride = max(1, len(dense) // 2000)
    return AnalyticTruth(
        d_cc=d_cc,
        d_ap=d_ap,
        annulus_length=perimeter(g.a, g.b, p),
        annulus_height=_annulus_height(g),
        annulus_area=_orifice_area(g),
        anterior_length=lengths["anterior"],
        posterior_length=lengths["posterior"],
        anterior_area=areas["anterior"],
        posterior_area=areas["posterior"],
        anterior_tip=tips["anterior"],
        posterior_tip=tips["posterior"],
        landmarks=landmarks,
        coaptation_arc=arc.tolist(),
        atrial_direction=g.frame.axes[2].tolist(),
        frame={"center": g.frame.center.tolist(), "radial": g.frame.axes[0].tolist(),
               "normal": g.frame.axes[2].tolist()},
        max_leaflet_height=heights,
        centerline=dense[::stride].tolist(),
        params={k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(p).items()},
    )


def analytic_measurements(params: PhantomParams) -> AnalyticTruth:
    """Truth record without voxelisation."""
    return _truth(_build_geometry(params))


# -- voxelisation ------------------------------------------------------------

def _leaflet_samples(g: _Geometry, which, step):
    t0, t1 = g.theta_range(which)
    arc = float(np.linalg.norm(np.diff(g.A(np.linspace(t0, t1, 2001)), axis=0), axis=1).sum())
    n_theta = max(64, int(np.ceil(arc / step)) + 1)
    theta = np.linspace(t0, t1, n_theta)
    span = np.linalg.norm(g.K(g.leaflet_t(theta, which)) - g.A(theta), axis=-1)
    s_end = g.ruling_end(theta, which)
    n_s = max(16, int(np.ceil((span * s_end).max() / step)) + 1)
    frac = np.linspace(0.0, 1.0, n_s)
    ss = s_end[:, None] * frac[None, :]
    tt = np.repeat(theta[:, None], n_s, axis=1)
    return g.surface(tt, ss, which).reshape(-1, 3)


def _block_distance(points, origin, spacing, dims, radius):
    """Distance (capped at ``radius``) from voxel centres near ``points`` to the sample set."""
    tree = cKDTree(points)
    lo = np.maximum(np.floor((points.min(axis=0) - radius - origin) / spacing).astype(int), 0)
    hi = np.minimum(np.ceil((points.max(axis=0) + radius - origin) / spacing).astype(int) + 1, dims)
    if np.any(hi <= lo):
        return lo, hi, np.full((0, 0, 0), np.inf), None
    axes = [origin[k] + spacing * np.arange(lo[k], hi[k]) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    d, idx = tree.query(grid, distance_upper_bound=radius)
    shape = tuple(hi - lo)
    return lo, hi, d.reshape(shape), idx.reshape(shape)


def _volume_layout(g: _Geometry, extent_pts):
    p = g.p
    margin = 3.0 * p.spacing + 1.0
    lo = extent_pts.min(axis=0) - margin
    hi = extent_pts.max(axis=0) + margin
    need = np.ceil((hi - lo) / p.spacing).astype(int) + 1
    if p.dims is not None:
        dims = np.asarray(p.dims, dtype=int)
        if np.any(dims < need):
            raise PhantomError(f"dims {tuple(dims)} too small; need at least {tuple(need)}")
    else:
        dims = need
    center = 0.5 * (lo + hi)
    # snap the origin to the spacing lattice so the valve centre keeps a fixed voxel offset
    origin = np.round((center - 0.5 * (dims - 1) * p.spacing) / p.spacing) * p.spacing
    return origin, dims


def generate_phantom(params: PhantomParams) -> tuple[LabeledVolume, AnalyticTruth]:
    """Voxelise the phantom (labels 1 annulus, 2 anterior, 3 posterior) and its truth."""
    g = _build_geometry(params)
    p = params
    step = p.spacing / 4.0
    dense, dense_theta = _dense_centerline(g, step=min(0.05, step))
    ant = _leaflet_samples(g, "anterior", step)
    post = _leaflet_samples(g, "posterior", step)
    extent = np.vstack([dense, ant, post])
    origin, dims = _volume_layout(g, extent)
    labels = np.zeros(tuple(dims), dtype=np.uint8)
    half = 0.5 * p.leaflet_thickness

    dist = {}
    for code, pts in ((2, ant), (3, post)):
        lo, hi, d, _ = _block_distance(pts, origin, p.spacing, dims, half)
        full = np.full(tuple(dims), np.inf)
        full[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = d
        dist[code] = full
    a_in = dist[2] <= half
    p_in = dist[3] <= half
    labels[a_in & (~p_in | (dist[2] <= dist[3]))] = 2
    labels[p_in & (~a_in | (dist[3] < dist[2]))] = 3

    lo, hi, d, idx = _block_distance(dense, origin, p.spacing, dims, p.tube_radius)
    tube = d <= p.tube_radius
    if p.gap_arc > 0:
        th = np.where(tube, dense_theta[np.minimum(idx, len(dense_theta) - 1)], 0.0)
        delta = np.abs(np.mod(th - np.deg2rad(p.gap_center) + np.pi, TWO_PI) - np.pi)
        tube &= ~(delta <= np.deg2rad(0.5 * p.gap_arc))
    block = labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    block[tube] = 1

    volume = LabeledVolume(labels, (p.spacing,) * 3, tuple(origin))
    return volume, _truth(g)
