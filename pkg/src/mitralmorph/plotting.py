"""Figures for analysis and comparison outputs (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LANDMARK_STYLE = {"SH": "tab:red", "PAM": "tab:blue", "MC": "tab:green", "LC": "tab:purple"}


def _top_view(ax, result) -> None:
    frame = result.frame
    if result.curve is not None:
        pts, _ = result.curve.sample(512)
        uvh = frame.to_local(np.vstack([pts, pts[:1]]))
        ax.plot(uvh[:, 0], uvh[:, 1], color="k", lw=1.5, label="annulus")
    if result.skeleton is not None and len(result.skeleton):
        sk = frame.to_local(result.skeleton)
        ax.plot(sk[:, 0], sk[:, 1], "o", ms=3, mfc="none", color="0.4", label="section centres")
    for name, field in result.surfaces.items():
        nodes = field.grid.nodes()[field.mask]
        ax.plot(nodes[:, 0], nodes[:, 1], ",", alpha=0.4,
                color="tab:orange" if name == "anterior" else "tab:cyan")
    if result.coaptation is not None:
        c = frame.to_local(result.coaptation.polyline.points)
        ax.plot(c[:, 0], c[:, 1], color="tab:red", lw=2, label="coaptation line")
    if result.landmarks is not None:
        for name, lm in result.landmarks.as_dict().items():
            u, v, _ = frame.to_local(lm.point[None])[0]
            ax.plot(u, v, "s", color=LANDMARK_STYLE[name])
            ax.annotate(name, (u, v), textcoords="offset points", xytext=(4, 4))
    ax.set_aspect("equal")
    ax.set_xlabel("u in valve plane (mm)")
    ax.set_ylabel("v in valve plane (mm)")
    ax.legend(loc="lower right", fontsize=7)


def _height_map(fig, ax, name: str, signed) -> None:
    field = signed.field
    u, v = field.grid.u, field.grid.v
    vals = np.where(field.mask, field.values, np.nan)
    lim = max(float(np.nanmax(np.abs(vals))), 1e-6) if field.mask.any() else 1.0
    im = ax.pcolormesh(u, v, vals.T, cmap="coolwarm", vmin=-lim, vmax=lim, shading="nearest")
    fig.colorbar(im, ax=ax, label="height above orifice (mm)")
    ax.set_aspect("equal")
    ax.set_title(f"{name} leaflet")
    ax.set_xlabel("u in valve plane (mm)")
    ax.set_ylabel("v in valve plane (mm)")


def analysis_figures(result, outdir) -> list[Path]:
    """Top view of annulus, landmarks and coaptation line, plus one height map per leaflet."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if result.frame is None:
        return written
    fig, ax = plt.subplots(figsize=(6, 6))
    _top_view(ax, result)
    path = outdir / "top_view.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    for name, signed in result.heights.items():
        fig, ax = plt.subplots(figsize=(6, 5))
        _height_map(fig, ax, name, signed)
        path = outdir / f"{name}_height_map.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def bland_altman_figure(reference: dict, test: dict, rows: dict, path) -> Path | None:
    """Grid of difference-vs-mean panels, one per measurement with at least one pair.

    ``reference`` and ``test`` map measurement name to a list of values
    (None where missing); ``rows`` holds the matching agreement statistics.
    """
    names = [n for n, st in rows.items() if st is not None]
    if not names:
        return None
    ncol = min(3, len(names))
    nrow = int(np.ceil(len(names) / ncol))
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3.2 * nrow), squeeze=False)
    for ax, name in zip(axes.ravel(), names):
        pairs = [(a, b) for a, b in zip(reference[name], test[name]) if a is not None and b is not None]
        a, b = np.asarray(pairs, dtype=float).T
        ax.plot((a + b) / 2, b - a, "o", ms=4)
        st = rows[name]
        ax.axhline(st.bias, color="k")
        if st.loa_low is not None:
            ax.axhline(st.loa_low, color="k", ls="--")
            ax.axhline(st.loa_high, color="k", ls="--")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("mean")
        ax.set_ylabel("test - reference")
    for ax in axes.ravel()[len(names):]:
        ax.set_visible(False)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
