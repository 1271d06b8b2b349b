"""Polyharmonic radial basis function interpolation in the plane.

Two kernels are used by the pipeline: the quintic ``-r**5`` (leaflet middle
surfaces, with ridge smoothing) and the thin-plate ``r**2 log r`` (orifice
surface). Both are conditionally positive definite, so a polynomial drift
is appended and the saddle-point system is solved directly.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

# kernel -> (phi, minimum polynomial degree, homogeneity exponent)
_KERNELS = {
    "quintic": (lambda r: -(r ** 5), 2, 5),
    "thin_plate": (lambda r: np.where(r > 0, r * r * np.log(np.where(r > 0, r, 1.0)), 0.0), 1, 2),
}


class RBFError(ValueError):
    pass


def _monomials(xy: np.ndarray, degree: int) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    cols = [np.ones(len(xy))]
    if degree >= 1:
        cols += [x, y]
    if degree >= 2:
        cols += [x * x, x * y, y * y]
    return np.stack(cols, axis=1)


class PolyharmonicRBF:
    """Smoothing polyharmonic spline ``f(x) = sum c_i phi(|x - x_i|) + p(x)``.

    Sites are shifted and scaled to unit size before assembly; the smoothing
    weight is rescaled with the kernel's homogeneity so results do not depend
    on the units of the input.

    Parameters
    ----------
    sites : (N, 2) array
    values : (N,) array
    kernel : {"quintic", "thin_plate"}
    smoothing : float
        Ridge weight added to the kernel diagonal (in input units).
    degree : int, optional
        Polynomial drift degree; defaults to the kernel minimum.
    """

    def __init__(self, sites, values, kernel="quintic", smoothing=0.0, degree=None):
        if kernel not in _KERNELS:
            raise RBFError(f"unknown kernel {kernel!r}")
        phi, min_degree, homog = _KERNELS[kernel]
        degree = min_degree if degree is None else degree
        if degree < min_degree:
            raise RBFError(f"{kernel} kernel needs polynomial degree >= {min_degree}")
        sites = np.asarray(sites, dtype=float).reshape(-1, 2)
        values = np.asarray(values, dtype=float).ravel()
        if len(sites) != len(values):
            raise RBFError("sites and values differ in length")
        n_poly = {0: 1, 1: 3, 2: 6}[degree]
        if len(sites) < n_poly:
            raise RBFError(f"need at least {n_poly} sites")
        if smoothing < 0:
            raise RBFError("smoothing must be >= 0")

        self._shift = sites.mean(axis=0)
        self._scale = max(float(np.abs(sites - self._shift).max()), 1e-12)
        x = (sites - self._shift) / self._scale
        lam = smoothing / self._scale ** homog

        if smoothing == 0.0:
            _, counts = np.unique(np.round(x, 12), axis=0, return_counts=True)
            if np.any(counts > 1):
                raise RBFError("rank-deficient system: duplicate sites without smoothing")

        self.kernel = kernel
        self.degree = degree
        self._phi = phi
        r = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        a = phi(r)
        a[np.diag_indices_from(a)] += lam
        p = _monomials(x, degree)
        n = len(x)
        lhs = np.zeros((n + n_poly, n + n_poly))
        lhs[:n, :n] = a
        lhs[:n, n:] = p
        lhs[n:, :n] = p.T
        rhs = np.concatenate([values, np.zeros(n_poly)])
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                sol = scipy.linalg.solve(lhs, rhs, assume_a="sym")
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
                raise RBFError(f"rank-deficient system: {exc}") from None
        if not np.all(np.isfinite(sol)):
            raise RBFError("rank-deficient system: non-finite solution")
        self._x = x
        self._coef = sol[:n]
        self._poly = sol[n:]
        self.n_sites = n

    def __call__(self, points, chunk: int = 4096) -> np.ndarray:
        q = (np.asarray(points, dtype=float).reshape(-1, 2) - self._shift) / self._scale
        out = np.empty(len(q))
        for start in range(0, len(q), chunk):
            block = q[start:start + chunk]
            r = np.linalg.norm(block[:, None, :] - self._x[None, :, :], axis=-1)
            out[start:start + chunk] = self._phi(r) @ self._coef + _monomials(block, self.degree) @ self._poly
        return out
