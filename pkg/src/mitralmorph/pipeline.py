"""End-to-end analysis: mask -> refined annulus -> features -> measurements.

Each stage failure is tagged with an exit code; later stages that depend on
it are skipped, but everything that can still be measured is reported.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ANNULUS, ANTERIOR, POSTERIOR, __version__
from .annulus import (AnnulusCurve, RefinementError, ValveFrame, align_radial, expand_tube,
                      extract_skeleton, fit_periodic_spline, fit_valve_frame, orient_normal)
from .coaptation import (CoaptationCandidates, CoaptationCurve, CoaptationError, find_coaptation_candidates,
                         fit_coaptation_line, fit_middle_surface)
from .heightfield import Grid, HeightField, HeightFieldError
from .landmarks import AnnularLandmarks, LandmarkError, LeafletTips, detect_annular_landmarks, detect_leaflet_tips
from .mesh import MeshError, Polyline3D, TriangleMesh, extract_surface, smooth_windowed_sinc, write_obj, write_polyline_csv
from .metrics import AgreementStats, bland_altman
from .morphometry import (MorphometryError, annular_diameters, annular_height, annular_length, leaflet_area,
                          leaflet_height_field, leaflet_length, leaflet_length_on_mesh, orifice_surface)
from .rbf import RBFError
from .volume import LabeledVolume, VolumeError, load_mask

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 2
EXIT_REFINEMENT = 3
EXIT_LANDMARKS = 4
EXIT_COAPTATION = 5
EXIT_QUANTIFICATION = 6

STAGE_CODES = {
    "io": EXIT_IO,
    "refinement": EXIT_REFINEMENT,
    "landmarks": EXIT_LANDMARKS,
    "leaflet-features": EXIT_COAPTATION,
    "coaptation": EXIT_COAPTATION,
    "quantification": EXIT_QUANTIFICATION,
}

LEAFLETS = (("anterior", ANTERIOR), ("posterior", POSTERIOR))
# flat measurement names shared by reports, truth records and compare tables
MEASUREMENTS = (
    ("d_cc_mm", ("annulus", "d_cc_mm")),
    ("d_ap_mm", ("annulus", "d_ap_mm")),
    ("height_mm", ("annulus", "height_mm")),
    ("length_mm", ("annulus", "length_mm")),
    ("area_mm2", ("annulus", "area_mm2")),
    ("anterior_length_mm", ("leaflets", "anterior", "length_mm")),
    ("anterior_area_mm2", ("leaflets", "anterior", "area_mm2")),
    ("posterior_length_mm", ("leaflets", "posterior", "length_mm")),
    ("posterior_area_mm2", ("leaflets", "posterior", "area_mm2")),
)


@dataclass
class PipelineConfig:
    input_path: str | None = None
    output_dir: str | None = None
    label_map: dict[int, int] | None = None
    theta_offset: float = 15.0
    tube_radius: float = 1.0
    grid_resolution: float = 0.5
    epsilon: float = 0.001
    smoothing_iterations: int = 20
    smoothing_passband: float = 0.1
    rbf_smoothing: float | None = None
    normal_hint: tuple[float, float, float] | None = None
    leaflet_length_source: str = "surface"
    write_meshes: bool = True
    figures: bool = True

    def validate(self) -> None:
        checks = [
            (0.0 < self.theta_offset <= 90.0, "theta_offset must lie in (0, 90] degrees"),
            (0.0 < self.tube_radius <= 10.0, "tube_radius must lie in (0, 10] mm"),
            (0.05 <= self.grid_resolution <= 5.0, "grid resolution must lie in [0.05, 5] mm"),
            (0.0 < self.epsilon <= 1.0, "epsilon must lie in (0, 1] mm"),
            (0 <= self.smoothing_iterations <= 200, "smoothing iterations must lie in [0, 200]"),
            (0.0 < self.smoothing_passband <= 2.0, "smoothing passband must lie in (0, 2]"),
            (self.rbf_smoothing is None or self.rbf_smoothing >= 0, "RBF smoothing must be >= 0"),
            (self.leaflet_length_source in ("surface", "mesh"), "leaflet length source must be 'surface' or 'mesh'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def provenance(self) -> dict:
        d = asdict(self)
        d.pop("output_dir")
        d.pop("write_meshes")
        d.pop("figures")
        if d["label_map"] is not None:
            d["label_map"] = {str(k): v for k, v in sorted(d["label_map"].items())}
        if d["normal_hint"] is not None:
            d["normal_hint"] = [float(x) for x in d["normal_hint"]]
        d["tool"] = "mitralmorph"
        d["version"] = __version__
        return d


@dataclass
class StageTiming:
    refinement_s: float = 0.0
    feature_extraction_s: float = 0.0
    quantification_s: float = 0.0
    total_s: float = 0.0


@dataclass
class AnalysisResult:
    report: dict
    exit_code: int
    timing: StageTiming
    meshes: dict[str, TriangleMesh] = field(default_factory=dict)
    frame: ValveFrame | None = None
    skeleton: np.ndarray | None = None
    curve: AnnulusCurve | None = None
    landmarks: AnnularLandmarks | None = None
    tips: LeafletTips | None = None
    surfaces: dict[str, HeightField] = field(default_factory=dict)
    heights: dict = field(default_factory=dict)
    candidates: CoaptationCandidates | None = None
    coaptation: CoaptationCurve | None = None
    length_traces: dict = field(default_factory=dict)


_STAGE_ERRORS = (RefinementError, LandmarkError, CoaptationError, MorphometryError, MeshError,
                 HeightFieldError, RBFError, np.linalg.LinAlgError)


def _vec(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float)]


def refine_annulus(annulus: TriangleMesh, leaflets, config: PipelineConfig):
    """Skeleton, corrected spline, tube and oriented valve frame."""
    frame = orient_normal(fit_valve_frame(annulus.vertices), leaflets, config.normal_hint)
    # a gap pulls the vertex centroid off-centre; one more pass around the
    # centre of the first spline evens out the section angles
    for _ in range(2):
        skeleton = extract_skeleton(annulus, frame, config.theta_offset)
        curve = fit_periodic_spline(skeleton.points, skeleton.angles)
        samples, _ = curve.sample(512)
        frame = orient_normal(fit_valve_frame(samples), leaflets, config.normal_hint)
    frame = align_radial(frame, samples)
    tube = expand_tube(curve, config.tube_radius)
    return skeleton, curve, frame, tube


def _shared_grid(frame: ValveFrame, meshes, curve: AnnulusCurve, resolution: float) -> Grid:
    pts = [frame.to_local(m.vertices)[:, :2] for m in meshes if m is not None]
    pts.append(frame.to_local(curve.sample(256)[0])[:, :2])
    return Grid.covering(np.vstack(pts), resolution, margin=2 * resolution)


def _empty_report(config: PipelineConfig) -> dict:
    leaflet = {"length_mm": None, "area_mm2": None, "height_min_mm": None, "height_max_mm": None,
               "height_mean_mm": None}
    return {
        "annulus": {"d_cc_mm": None, "d_ap_mm": None, "height_mm": None, "length_mm": None, "area_mm2": None},
        "leaflets": {"anterior": dict(leaflet), "posterior": dict(leaflet)},
        "landmarks": None,
        "coaptation": None,
        "timing_s": None,
        "provenance": config.provenance(),
        "status": {"exit_code": 0, "failures": [], "null_reasons": {}},
    }


def _null_reasons(report: dict, default: str) -> dict:
    out = {}

    def walk(node, path):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(v, path + [k])
        elif node is None:
            out[".".join(path)] = default

    for key in ("annulus", "leaflets", "landmarks", "coaptation"):
        walk(report[key], [key])
    return out


def analyze(config: PipelineConfig, volume: LabeledVolume | None = None) -> AnalysisResult:
    """Run the full pipeline. ``volume`` overrides reading ``config.input_path``."""
    config.validate()
    t_start = time.perf_counter()
    timing = StageTiming()
    report = _empty_report(config)
    result = AnalysisResult(report, EXIT_OK, timing)
    failures = report["status"]["failures"]
    reasons: dict[str, str] = {}

    def fail(stage, exc, fields=()):
        msg = str(exc) or type(exc).__name__
        failures.append({"stage": stage, "exit_code": STAGE_CODES[stage], "message": msg})
        for f in fields:
            reasons[f] = f"{stage}: {msg}"
        log.warning("%s stage failed: %s", stage, msg)

    # -- input --
    if volume is None:
        try:
            volume = load_mask(config.input_path, config.label_map)
        except (OSError, VolumeError) as exc:
            fail("io", exc)
            return _finish(result, reasons, t_start, config)
    elif config.label_map:
        from .volume import remap_labels
        volume = volume.with_labels(remap_labels(volume.labels, config.label_map))

    # -- refinement --
    t0 = time.perf_counter()
    meshes = result.meshes
    leaflet_meshes: dict[str, TriangleMesh | None] = {}
    try:
        for name, code in LEAFLETS:
            try:
                raw = extract_surface(volume, code)
                leaflet_meshes[name] = smooth_windowed_sinc(raw, config.smoothing_iterations,
                                                            config.smoothing_passband)
                meshes[name] = leaflet_meshes[name]
            except MeshError as exc:
                leaflet_meshes[name] = None
                fail("leaflet-features", exc, [f"leaflets.{name}", "coaptation"])
        annulus = smooth_windowed_sinc(extract_surface(volume, ANNULUS), config.smoothing_iterations,
                                       config.smoothing_passband)
        meshes["annulus_raw"] = annulus
        skeleton, curve, frame, tube = refine_annulus(annulus, list(leaflet_meshes.values()), config)
        meshes["annulus_corrected"] = tube
        result.skeleton, result.curve, result.frame = skeleton.points, curve, frame
    except _STAGE_ERRORS as exc:
        fail("refinement", exc, ["annulus", "leaflets", "landmarks", "coaptation"])
        timing.refinement_s = time.perf_counter() - t0
        return _finish(result, reasons, t_start, config)
    timing.refinement_s = time.perf_counter() - t0

    # -- feature extraction --
    t0 = time.perf_counter()
    try:
        lm = detect_annular_landmarks(curve, frame)
        result.landmarks = lm
        report["landmarks"] = {
            name: {"x": float(l.point[0]), "y": float(l.point[1]), "z": float(l.point[2]),
                   "param_rad": l.param, "arclength_mm": l.arclength}
            for name, l in lm.as_dict().items()
        }
    except _STAGE_ERRORS as exc:
        fail("landmarks", exc, ["landmarks", "coaptation", "annulus.d_cc_mm", "annulus.d_ap_mm", "leaflets"])
        lm = None

    grid = _shared_grid(frame, leaflet_meshes.values(), curve, config.grid_resolution)
    surfaces = result.surfaces
    if lm is not None:
        try:
            result.tips = detect_leaflet_tips(leaflet_meshes["anterior"], leaflet_meshes["posterior"], lm, frame)
        except _STAGE_ERRORS as exc:
            fail("leaflet-features", exc, ["leaflets", "coaptation"])
    for name, _ in LEAFLETS:
        if leaflet_meshes[name] is None:
            continue
        try:
            surfaces[name] = fit_middle_surface(leaflet_meshes[name], frame, config.grid_resolution,
                                                config.rbf_smoothing, grid=grid)
        except _STAGE_ERRORS as exc:
            fail("leaflet-features", exc, [f"leaflets.{name}", "coaptation"])
    if lm is not None and "anterior" in surfaces and "posterior" in surfaces:
        try:
            cand = find_coaptation_candidates(surfaces["anterior"], surfaces["posterior"], config.epsilon)
            result.candidates = cand
            if not cand.found:
                raise CoaptationError("no coaptation: leaflet surfaces never come within 1 mm")
            coapt = fit_coaptation_line(cand.points, lm.MC.point, lm.LC.point, frame)
            result.coaptation = coapt
            report["coaptation"] = {
                "coefficients": coapt.coefficients(),
                "rms_mm": coapt.rms,
                "n_points": coapt.n_points,
                "epsilon_mm": cand.epsilon,
                "axis_u": _vec(coapt.axis_u),
                "axis_v": _vec(coapt.axis_v),
            }
        except _STAGE_ERRORS as exc:
            fail("coaptation", exc, ["coaptation"])
    timing.feature_extraction_s = time.perf_counter() - t0

    # -- quantification --
    t0 = time.perf_counter()
    ann = report["annulus"]
    try:
        ann["length_mm"] = annular_length(curve)
        ann["height_mm"] = annular_height(curve, frame)
        orifice, area = orifice_surface(curve, frame, config.grid_resolution, grid=grid)
        surfaces["orifice"] = orifice
        ann["area_mm2"] = area
        if lm is not None:
            ann["d_ap_mm"], ann["d_cc_mm"] = annular_diameters(lm)
    except _STAGE_ERRORS as exc:
        fail("quantification", exc, ["annulus"])
        orifice = None
    for name, _ in LEAFLETS:
        if name not in surfaces:
            continue
        entry = report["leaflets"][name]
        try:
            entry["area_mm2"] = leaflet_area(surfaces[name])
            if orifice is not None:
                hf = leaflet_height_field(surfaces[name], orifice)
                result.heights[name] = hf
                entry["height_min_mm"], entry["height_max_mm"], entry["height_mean_mm"] = hf.min, hf.max, hf.mean
            tips = result.tips
            tip = None if tips is None else getattr(tips, f"{name}_tip")
            if lm is not None and tip is not None:
                anchor = lm.SH.point if name == "anterior" else lm.PAM.point
                if config.leaflet_length_source == "surface":
                    trace = leaflet_length(surfaces[name], tips.plane_point, tips.plane_normal, anchor, tip)
                else:
                    trace = leaflet_length_on_mesh(getattr(tips, f"{name}_section"), anchor, tip)
                result.length_traces[name] = trace
                entry["length_mm"] = trace.length
        except _STAGE_ERRORS as exc:
            fail("quantification", exc, [f"leaflets.{name}"])
    timing.quantification_s = time.perf_counter() - t0
    return _finish(result, reasons, t_start, config)


def _finish(result: AnalysisResult, reasons: dict, t_start: float, config: PipelineConfig) -> AnalysisResult:
    report = result.report
    status = report["status"]
    null = {}
    for path, default in _null_reasons(report, "not computed").items():
        why = next((r for prefix, r in reasons.items() if path == prefix or path.startswith(prefix + ".")), default)
        null[path] = why
    status["null_reasons"] = null
    status["exit_code"] = status["failures"][0]["exit_code"] if status["failures"] else EXIT_OK
    result.exit_code = status["exit_code"]
    result.timing.total_s = time.perf_counter() - t_start
    report["timing_s"] = {k: round(v, 6) for k, v in asdict(result.timing).items()}
    if config.output_dir:
        write_outputs(result, config)
    return result


def report_json(report: dict, include_timing: bool = True) -> str:
    data = dict(report)
    if not include_timing:
        data.pop("timing_s", None)
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False)


def write_outputs(result: AnalysisResult, config: PipelineConfig) -> None:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(result.report) + "\n")
    if config.write_meshes:
        for name, mesh in result.meshes.items():
            write_obj(mesh, out / f"{name}.obj")
        for name, field_ in result.surfaces.items():
            try:
                write_obj(field_.to_mesh(), out / f"{name}_surface.obj")
            except HeightFieldError:
                pass
    if result.curve is not None:
        pts, _ = result.curve.sample(256)
        write_polyline_csv(Polyline3D(pts, closed=True), out / "annulus_centerline.csv")
    if result.skeleton is not None:
        _write_points(out / "skeleton_points.csv", result.skeleton)
    if result.landmarks is not None:
        with open(out / "landmarks.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "x", "y", "z"])
            for name, l in result.landmarks.as_dict().items():
                w.writerow([name] + [repr(float(v)) for v in l.point])
    if result.coaptation is not None:
        write_polyline_csv(result.coaptation.polyline, out / "coaptation_line.csv")
        _write_points(out / "coaptation_points.csv", result.candidates.points)
    for name, hf in result.heights.items():
        _write_height_field(out, name, hf.field, result.surfaces[name])
    for name, trace in result.length_traces.items():
        write_polyline_csv(trace.polyline, out / f"{name}_length_path.csv")
    if config.figures:
        from .plotting import analysis_figures
        analysis_figures(result, out / "figures")


def _write_points(path: Path, pts) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in np.asarray(pts):
            w.writerow([repr(float(v)) for v in p])


def _write_height_field(out: Path, name: str, signed: HeightField, leaflet: HeightField) -> None:
    """Lattice CSV (u, v, signed height), leaflet-surface OBJ and per-vertex value sidecar."""
    nodes = signed.grid.nodes()
    with open(out / f"{name}_height_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u_mm", "v_mm", "height_mm"])
        for (u, v), val, m in zip(nodes.reshape(-1, 2), signed.values.ravel(), signed.mask.ravel()):
            if m:
                w.writerow([repr(float(u)), repr(float(v)), repr(float(val))])
    uvh, tris = signed.lattice_triangles()
    if len(tris) == 0:
        return
    geometry = np.column_stack([uvh[:, :2], leaflet.values[signed.mask]])
    write_obj(TriangleMesh(signed.frame.to_world(geometry), tris), out / f"{name}_height.obj")
    with open(out / f"{name}_height_values.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "height_mm"])
        for i, val in enumerate(uvh[:, 2]):
            w.writerow([i + 1, repr(float(val))])


# -- comparison ------------------------------------------------------------

def flat_measurements(doc: dict) -> dict[str, float | None]:
    """Measurement name -> value for an analysis report or a truth record."""
    if "annulus" in doc and "leaflets" in doc:
        out = {}
        for name, path in MEASUREMENTS:
            node = doc
            for key in path:
                if not isinstance(node, dict) or key not in node:
                    raise ValueError(f"schema mismatch: report lacks {'.'.join(path)}")
                node = node[key]
            out[name] = node
        return out
    if "d_cc" in doc and "annulus_area" in doc:
        from .phantom import AnalyticTruth
        return AnalyticTruth(**doc).measurements()
    raise ValueError("schema mismatch: neither an analysis report nor a truth record")


def compare(reference: list[dict], test: list[dict]) -> dict[str, AgreementStats | None]:
    """Bland-Altman rows (test minus reference) per measurement over paired documents."""
    if len(reference) != len(test) or not reference:
        raise ValueError("need the same non-zero number of reference and test documents")
    ref = [flat_measurements(d) for d in reference]
    tst = [flat_measurements(d) for d in test]
    rows = {}
    for name, _ in MEASUREMENTS:
        pairs = [(a[name], b[name]) for a, b in zip(ref, tst) if a[name] is not None and b[name] is not None]
        rows[name] = bland_altman(pairs) if pairs else None
    return rows


def write_compare_csv(rows: dict, path_or_file) -> None:
    header = ["measurement", "n", "bias", "loa_low", "loa_high", "sd"]

    def fmt(x):
        return "" if x is None else repr(float(x))

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, st in rows.items():
            if st is None:
                w.writerow([name, 0, "", "", "", ""])
            else:
                w.writerow([name, st.n, fmt(st.bias), fmt(st.loa_low), fmt(st.loa_high), fmt(st.sd)])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)
