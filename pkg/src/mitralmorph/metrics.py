"""Segmentation overlap, surface distance and agreement statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh
from .volume import LabeledVolume

LOA_Z = 1.96


class MetricsError(ValueError):
    pass


def dice(a: LabeledVolume, b: LabeledVolume, label: int | None = None) -> float:
    """Dice overlap of one label, or of all foreground labels when ``label`` is None."""
    if a.dims != b.dims or not np.allclose(a.spacing, b.spacing):
        raise MetricsError("grid mismatch: volumes differ in dims or spacing")
    if label is None:
        ia, ib = a.labels > 0, b.labels > 0
    else:
        ia, ib = a.labels == label, b.labels == label
    total = int(ia.sum()) + int(ib.sum())
    if total == 0:
        raise MetricsError("Dice undefined: both sets are empty")
    return 2.0 * int(np.logical_and(ia, ib).sum()) / total


def dense_surface_samples(mesh: TriangleMesh, spacing: float = 0.2) -> np.ndarray:
    """Vertices plus barycentric samples so no triangle is sampled coarser than ``spacing``."""
    v, t = mesh.vertices, mesh.triangles
    out = [v]
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    longest = np.max(np.stack([np.linalg.norm(b - a, axis=1), np.linalg.norm(c - b, axis=1),
                               np.linalg.norm(a - c, axis=1)]), axis=0)
    levels = np.ceil(longest / spacing).astype(int)
    for k in np.unique(levels[levels > 1]):
        sel = levels == k
        i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        keep = (i + j <= k) & ~(((i == 0) & (j == 0)) | ((i == k) & (j == 0)) | ((i == 0) & (j == k)))
        wi, wj = i[keep] / k, j[keep] / k
        pts = (a[sel, None, :] * (1 - wi - wj)[None, :, None] + b[sel, None, :] * wi[None, :, None]
               + c[sel, None, :] * wj[None, :, None])
        out.append(pts.reshape(-1, 3))
    return np.vstack(out)


def _as_points(x, dense: bool = False) -> np.ndarray:
    if isinstance(x, TriangleMesh):
        pts = dense_surface_samples(x) if dense else x.vertices
    else:
        pts = np.asarray(x, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise MetricsError("empty point set")
    return pts


def msd(s, s_prime, dense: bool = False) -> float:
    """Symmetric mean of nearest-point distances between two point sets (or mesh vertices)."""
    p = _as_points(s, dense)
    q = _as_points(s_prime, dense)
    d_pq, _ = cKDTree(q).query(p)
    d_qp, _ = cKDTree(p).query(q)
    return float((d_pq.sum() + d_qp.sum()) / (len(p) + len(q)))


@dataclass(frozen=True)
class AgreementStats:
    bias: float
    loa_low: float | None
    loa_high: float | None
    sd: float | None
    n: int

    def as_dict(self) -> dict:
        return {"bias": self.bias, "loa_low": self.loa_low, "loa_high": self.loa_high, "sd": self.sd, "n": self.n}


def bland_altman(pairs) -> AgreementStats:
    """Bias (mean of b - a) and bias -/+ 1.96 sample SD; limits need two pairs."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        raise MetricsError("no pairs")
    # differences on the shortest decimal form, so 43.79 - 36.24 is 7.55
    d = [float(Decimal(repr(float(b))) - Decimal(repr(float(a)))) for a, b in arr]
    bias = math.fsum(d) / len(d)
    if len(d) < 2:
        return AgreementStats(bias, None, None, None, 1)
    sd = math.sqrt(math.fsum((x - bias) ** 2 for x in d) / (len(d) - 1))
    return AgreementStats(bias, bias - LOA_Z * sd, bias + LOA_Z * sd, sd, len(d))
