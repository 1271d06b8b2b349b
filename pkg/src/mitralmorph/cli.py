"""Command-line entry point: analyze, metrics, phantom, compare."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ANNULUS, ANTERIOR, POSTERIOR, __version__
from .mesh import MeshError, extract_surface
from .metrics import MetricsError, dice, msd
from .pipeline import (EXIT_IO, MEASUREMENTS, PipelineConfig, analyze, compare, flat_measurements, report_json,
                       write_compare_csv)
from .volume import VolumeError, load_mask, save_mask

log = logging.getLogger("mitralmorph")

LABEL_NAMES = {ANNULUS: "annulus", ANTERIOR: "anterior", POSTERIOR: "posterior"}


def _label_map(text: str | None) -> dict[int, int] | None:
    """Parse ``raw:target,...`` such as ``5:1,6:2,7:3``."""
    if not text:
        return None
    out = {}
    for item in text.split(","):
        src, _, dst = item.partition(":")
        try:
            out[int(src)] = int(dst)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad label map entry {item!r}; expected raw:target") from None
    return out


def _vector(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return tuple(parts)


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


# -- analyze ---------------------------------------------------------------

def cmd_analyze(args) -> int:
    config = PipelineConfig(
        input_path=args.input,
        output_dir=args.output,
        label_map=args.label_map,
        theta_offset=args.theta_offset,
        tube_radius=args.tube_radius,
        grid_resolution=args.grid_res,
        epsilon=args.epsilon,
        smoothing_iterations=args.smooth_iter,
        smoothing_passband=args.smooth_passband,
        rbf_smoothing=args.rbf_smoothing,
        normal_hint=args.normal_hint,
        leaflet_length_source=args.leaflet_length_source,
        write_meshes=not args.no_meshes,
        figures=not args.no_figures,
    )
    try:
        config.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    result = analyze(config)
    print(report_json(result.report))
    for failure in result.report["status"]["failures"]:
        print(f"stage {failure['stage']} failed: {failure['message']}", file=sys.stderr)
    return result.exit_code


# -- metrics ---------------------------------------------------------------

def _surface_or_none(volume, label):
    if label is None:
        volume = volume.with_labels((volume.labels > 0).astype(np.uint8))
        label = 1
    try:
        return extract_surface(volume, label)
    except MeshError:
        return None


def segmentation_metrics(reference, test, dense: bool = False) -> dict:
    """Dice and MSD per label and for the complete foreground mask."""
    out = {}
    for label, name in list(LABEL_NAMES.items()) + [(None, "complete")]:
        entry = {}
        try:
            entry["dice"] = dice(reference, test, label)
        except MetricsError as exc:
            if "grid mismatch" in str(exc):
                raise
            entry["dice"] = None
        sa, sb = _surface_or_none(reference, label), _surface_or_none(test, label)
        entry["msd_mm"] = msd(sa, sb, dense=dense) if sa is not None and sb is not None else None
        out[name] = entry
    return out


def cmd_metrics(args) -> int:
    try:
        ref = load_mask(args.reference, args.label_map)
        test = load_mask(args.test, args.label_map)
        result = segmentation_metrics(ref, test, dense=args.dense)
    except (OSError, VolumeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MetricsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, allow_nan=False))
    return 0


# -- phantom ---------------------------------------------------------------

def cmd_phantom(args) -> int:
    from .phantom import PhantomError, PhantomParams, generate_phantom

    params = PhantomParams(
        d_cc=args.d_cc, d_ap=args.d_ap, h1=args.h1, h2=args.h2, tube_radius=args.tube_radius,
        leaflet_thickness=args.thickness, coaptation_offset=args.coaptation_offset,
        prolapse_bump=args.prolapse_bump, spacing=args.spacing, gap_arc=args.gap_arc,
        gap_center=args.gap_center, coaptation_depth=args.coaptation_depth, overlap=args.overlap,
        dims=tuple(args.dims) if args.dims else None,
    )
    try:
        volume, truth = generate_phantom(params)
    except PhantomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        save_mask(volume, out, encoding=args.encoding)
        truth_path = Path(args.truth) if args.truth else out.with_name(out.name.split(".")[0] + "_truth.json")
        truth_path.write_text(truth.to_json() + "\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"volume": str(out), "truth": str(truth_path), "dims": list(volume.dims),
                      "measurements": truth.measurements()}, indent=2, sort_keys=True))
    return 0


# -- compare ---------------------------------------------------------------

def cmd_compare(args) -> int:
    try:
        reference = [_read_json(p) for p in args.reference]
        test = [_read_json(p) for p in args.test]
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        rows = compare(reference, test)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_compare_csv(rows, sys.stdout)
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        write_compare_csv(rows, out / "agreement.csv")
        if not args.no_figures:
            from .plotting import bland_altman_figure

            ref = [flat_measurements(d) for d in reference]
            tst = [flat_measurements(d) for d in test]
            names = [n for n, _ in MEASUREMENTS]
            bland_altman_figure({n: [r[n] for r in ref] for n in names},
                                {n: [t[n] for t in tst] for n in names}, rows, out / "bland_altman.png")
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mitralmorph", description="Mitral valve morphometry from label masks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full pipeline on a label mask")
    p.add_argument("input", help="NRRD label mask (1 annulus, 2 anterior, 3 posterior)")
    p.add_argument("-o", "--output", help="directory for report.json, meshes, CSVs and figures")
    p.add_argument("--label-map", type=_label_map, help="remap raw labels, e.g. 5:1,6:2,7:3")
    p.add_argument("--theta-offset", type=float, default=15.0, help="section spacing in degrees (default 15)")
    p.add_argument("--tube-radius", type=float, default=1.0, help="annulus tube radius in mm (default 1.0)")
    p.add_argument("--grid-res", type=float, default=0.5, help="height-field lattice spacing in mm (default 0.5)")
    p.add_argument("--epsilon", type=float, default=0.001, help="contact tolerance in mm (default 0.001)")
    p.add_argument("--smooth-iter", type=int, default=20, help="mesh smoothing iterations (default 20)")
    p.add_argument("--smooth-passband", type=float, default=0.1, help="mesh smoothing passband (default 0.1)")
    p.add_argument("--rbf-smoothing", type=float, default=None, help="RBF ridge weight (default: automatic)")
    p.add_argument("--normal-hint", type=_vector, help="approximate atrial direction as x,y,z")
    p.add_argument("--leaflet-length-source", choices=("surface", "mesh"), default="surface",
                   help="measure leaflet length on the middle surface or on the thickened mesh")
    p.add_argument("--no-meshes", action="store_true", help="skip OBJ output")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("metrics", help="Dice and mean surface distance between two masks")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--label-map", type=_label_map)
    p.add_argument("--dense", action="store_true", help="sample triangle interiors, not only vertices")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("phantom", help="write a synthetic valve mask and its analytic truth")
    p.add_argument("output", help="output NRRD path")
    p.add_argument("--truth", help="truth JSON path (default: <output stem>_truth.json)")
    p.add_argument("--d-cc", type=float, default=36.0)
    p.add_argument("--d-ap", type=float, default=32.0)
    p.add_argument("--h1", type=float, default=3.0, help="saddle amplitude in mm")
    p.add_argument("--h2", type=float, default=1.5, help="anterior-posterior asymmetry in mm")
    p.add_argument("--tube-radius", type=float, default=1.0)
    p.add_argument("--thickness", type=float, default=1.2, help="leaflet thickness in mm")
    p.add_argument("--coaptation-offset", type=float, default=0.6)
    p.add_argument("--coaptation-depth", type=float, default=5.0)
    p.add_argument("--overlap", type=float, default=1.5)
    p.add_argument("--prolapse-bump", type=float, default=0.0, help="posterior bulge above the orifice in mm")
    p.add_argument("--spacing", type=float, default=0.4)
    p.add_argument("--gap-arc", type=float, default=0.0, help="degrees of annulus removed")
    p.add_argument("--gap-center", type=float, default=225.0)
    p.add_argument("--dims", type=int, nargs=3)
    p.add_argument("--encoding", choices=("raw", "gzip"), default="gzip")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("compare", help="Bland-Altman agreement between paired reports or truth records")
    p.add_argument("--reference", nargs="+", required=True, help="reference reports or truth JSON files")
    p.add_argument("--test", nargs="+", required=True, help="test reports, paired in order")
    p.add_argument("-o", "--output", help="directory for agreement.csv and bland_altman.png")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
