"""Annular landmarks (SH, PAM, MC, LC) and leaflet tips."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .annulus import TWO_PI, AnnulusCurve, ValveFrame
from .mesh import TriangleMesh, plane_section

MIN_SEPARATION_DEG = 60.0
LANDMARK_NAMES = ("SH", "MC", "PAM", "LC")


class LandmarkError(ValueError):
    pass


@dataclass(frozen=True)
class Landmark:
    point: np.ndarray
    param: float  # curve parameter
    arclength: float  # from the curve's first knot


@dataclass(frozen=True)
class AnnularLandmarks:
    SH: Landmark
    PAM: Landmark
    MC: Landmark
    LC: Landmark

    def as_dict(self) -> dict[str, Landmark]:
        return {name: getattr(self, name) for name in LANDMARK_NAMES}

    def cyclic_order(self, curve: AnnulusCurve) -> list[str]:
        """Landmark names sorted by arc length, starting from SH."""
        L = curve.length
        s0 = self.SH.arclength
        items = sorted(self.as_dict().items(), key=lambda kv: (kv[1].arclength - s0) % L)
        return [k for k, _ in items]


def _refine(curve, frame, t_center, dt, sign):
    """Local extremum of ``sign * height`` near ``t_center``."""
    res = minimize_scalar(
        lambda t: -sign * float(frame.height(curve(t))),
        bounds=(t_center - dt, t_center + dt),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(curve._wrap(res.x))


def _circular_gap(a: float, b: float) -> float:
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


def detect_annular_landmarks(curve: AnnulusCurve, frame: ValveFrame, n_samples: int = 3600,
                             min_separation_deg: float = MIN_SEPARATION_DEG) -> AnnularLandmarks:
    """SH = highest point, MC/LC = two lowest separated minima, PAM = antipode of SH by arc length.

    ``frame.normal`` must already point to the atrial side. LC is the
    commissure ``c`` with ``det[x_c - SH, c - x_c, n] > 0``.
    """
    t = curve.t0 + np.linspace(0.0, TWO_PI, n_samples, endpoint=False)
    pts = curve(t)
    h = frame.height(pts)
    scale = float(np.ptp(frame.to_local(pts)[:, :2], axis=0).max())
    if np.ptp(h) <= 1e-9 * max(scale, 1.0):
        raise LandmarkError("no distinct height minima: annulus is flat")
    dt = TWO_PI / n_samples

    t_sh = _refine(curve, frame, t[int(np.argmax(h))], dt, +1)

    prev, nxt = np.roll(h, 1), np.roll(h, -1)
    minima = np.flatnonzero((h < prev) & (h <= nxt))
    if len(minima) < 2:
        raise LandmarkError("fewer than two distinct height minima on the annulus")
    refined = sorted(((_refine(curve, frame, t[i], dt, -1)) for i in minima),
                     key=lambda tt: float(frame.height(curve(tt))))
    first = refined[0]
    sep = np.deg2rad(min_separation_deg)
    second = next((tt for tt in refined[1:] if _circular_gap(tt, first) >= sep), None)
    if second is None:
        raise LandmarkError(f"fewer than two height minima separated by {min_separation_deg:g} degrees")

    s_sh = float(curve.arclength(t_sh))
    t_pam = float(curve.param_at_length(s_sh + 0.5 * curve.length))

    sh = curve(t_sh)

    def make(tt):
        return Landmark(curve(tt), float(tt), float(curve.arclength(tt)))

    def chirality(c):
        return float(np.linalg.det(np.stack([frame.center - sh, c - frame.center, frame.normal])))

    ca, cb = make(first), make(second)
    # opposite signs in any sane valve; otherwise the larger value wins
    if chirality(ca.point) >= chirality(cb.point):
        lc, mc = ca, cb
    else:
        lc, mc = cb, ca
    return AnnularLandmarks(SH=make(t_sh), PAM=make(t_pam), MC=mc, LC=lc)


@dataclass(frozen=True)
class LeafletTips:
    anterior_tip: np.ndarray | None
    posterior_tip: np.ndarray | None
    plane_point: np.ndarray
    plane_normal: np.ndarray
    anterior_section: list | None = None
    posterior_section: list | None = None


def sh_pam_plane(landmarks: AnnularLandmarks, frame: ValveFrame):
    """Plane through SH and PAM containing the valve normal."""
    d = landmarks.PAM.point - landmarks.SH.point
    normal = np.cross(d, frame.normal)
    norm = np.linalg.norm(normal)
    if norm < 1e-12:
        raise LandmarkError("SH and PAM coincide in the valve plane")
    return landmarks.SH.point.copy(), normal / norm


def _farthest(mesh: TriangleMesh, point, normal, ref, name):
    lines = plane_section(mesh, point, normal)
    if not lines:
        raise LandmarkError(f"{name} leaflet: no intersection with the SH-PAM plane")
    pts = np.vstack([p.points for p in lines])
    return pts[int(np.argmax(np.linalg.norm(pts - ref, axis=1)))], lines


def detect_leaflet_tips(anterior: TriangleMesh | None, posterior: TriangleMesh | None,
                        landmarks: AnnularLandmarks, frame: ValveFrame) -> LeafletTips:
    """Section both leaflets with the SH-PAM plane; tips are the section points
    farthest from SH (anterior) and from PAM (posterior). Missing meshes give ``None``."""
    point, normal = sh_pam_plane(landmarks, frame)
    a_tip = p_tip = a_sec = p_sec = None
    if anterior is not None:
        if anterior.is_empty():
            raise LandmarkError("anterior leaflet mesh is empty")
        a_tip, a_sec = _farthest(anterior, point, normal, landmarks.SH.point, "anterior")
    if posterior is not None:
        if posterior.is_empty():
            raise LandmarkError("posterior leaflet mesh is empty")
        p_tip, p_sec = _farthest(posterior, point, normal, landmarks.PAM.point, "posterior")
    return LeafletTips(a_tip, p_tip, point, normal, a_sec, p_sec)
