import csv
import io
import json
import math

import numpy as np
import pytest

from mitralmorph.cli import main
from mitralmorph.pipeline import (EXIT_COAPTATION, EXIT_IO, EXIT_OK, MEASUREMENTS, PipelineConfig, analyze, compare,
                                  flat_measurements, report_json, write_compare_csv)


def _numbers(node, path=""):
    if isinstance(node, dict):
        for k, v in node.items():
            yield from _numbers(v, f"{path}.{k}" if path else k)
    elif isinstance(node, list):
        for i, v in enumerate(node):
            yield from _numbers(v, f"{path}[{i}]")
    else:
        yield path, node


def test_default_phantom_report_within_tolerances(default_analysis):
    result, truth = default_analysis
    assert result.exit_code == EXIT_OK
    got = flat_measurements(result.report)
    want = truth.measurements()
    for k in ("d_cc_mm", "d_ap_mm", "height_mm"):
        assert abs(got[k] - want[k]) <= 0.8
    assert abs(got["length_mm"] / want["length_mm"] - 1) <= 0.02
    assert abs(got["area_mm2"] / want["area_mm2"] - 1) <= 0.03
    for leaflet in ("anterior", "posterior"):
        assert abs(got[f"{leaflet}_length_mm"] - want[f"{leaflet}_length_mm"]) <= 1.0
        assert abs(got[f"{leaflet}_area_mm2"] / want[f"{leaflet}_area_mm2"] - 1) <= 0.05


def test_report_schema(default_analysis):
    report = default_analysis[0].report
    assert set(report["annulus"]) == {"d_cc_mm", "d_ap_mm", "height_mm", "length_mm", "area_mm2"}
    for leaflet in ("anterior", "posterior"):
        assert {"length_mm", "area_mm2", "height_min_mm", "height_max_mm"} <= set(report["leaflets"][leaflet])
    assert set(report["landmarks"]) == {"SH", "MC", "PAM", "LC"}
    assert {"coefficients", "rms_mm", "n_points"} <= set(report["coaptation"])
    assert set(report["timing_s"]) == {"refinement_s", "feature_extraction_s", "quantification_s", "total_s"}
    assert all(v >= 0 for v in report["timing_s"].values())
    assert report["status"]["null_reasons"] == {}


def test_provenance_echoes_default_constants(default_analysis):
    prov = default_analysis[0].report["provenance"]
    assert prov["theta_offset"] == 15.0
    assert prov["tube_radius"] == 1.0
    assert prov["epsilon"] == 0.001
    assert prov["grid_resolution"] == 0.5


def test_every_value_is_finite_number_or_explained_null(default_phantom):
    vol, _ = default_phantom
    no_post = vol.with_labels(np.where(vol.labels == 3, 0, vol.labels).astype(np.uint8))
    result = analyze(PipelineConfig(figures=False), volume=no_post)
    reasons = result.report["status"]["null_reasons"]
    for key in ("annulus", "leaflets", "landmarks", "coaptation"):
        for path, value in _numbers(result.report[key], key):
            if value is None:
                assert any(path == r or path.startswith(r + ".") for r in reasons), path
            elif not isinstance(value, str):
                assert math.isfinite(value), path


def test_missing_posterior_is_partial(default_phantom):
    vol, truth = default_phantom
    no_post = vol.with_labels(np.where(vol.labels == 3, 0, vol.labels).astype(np.uint8))
    result = analyze(PipelineConfig(figures=False), volume=no_post)
    assert result.exit_code == EXIT_COAPTATION
    assert result.report["status"]["failures"][0]["stage"] == "leaflet-features"
    ann = result.report["annulus"]
    assert all(v is not None for v in ann.values())
    assert abs(ann["d_cc_mm"] - truth.d_cc) <= 0.8
    assert result.report["coaptation"] is None
    assert result.report["leaflets"]["posterior"]["area_mm2"] is None
    assert result.report["leaflets"]["anterior"]["area_mm2"] is not None
    assert "coaptation" in result.report["status"]["null_reasons"]


def test_report_is_deterministic(default_phantom, default_analysis):
    again = analyze(PipelineConfig(figures=False), volume=default_phantom[0])
    first = default_analysis[0]
    assert report_json(first.report, include_timing=False) == report_json(again.report, include_timing=False)


def test_invalid_config_rejected():
    with pytest.raises(ValueError, match="epsilon"):
        analyze(PipelineConfig(epsilon=0.0))


def test_unreadable_input_gives_io_exit(tmp_path):
    result = analyze(PipelineConfig(input_path=str(tmp_path / "missing.nrrd")))
    assert result.exit_code == EXIT_IO
    assert result.report["annulus"]["d_cc_mm"] is None


def test_compare_self_gives_zero_bias(default_analysis):
    report = default_analysis[0].report
    rows = compare([report], [report])
    assert all(rows[name].bias == 0.0 for name, _ in MEASUREMENTS)


def _stub_report(d_cc):
    return {"annulus": {"d_cc_mm": d_cc, "d_ap_mm": None, "height_mm": None, "length_mm": None, "area_mm2": None},
            "leaflets": {n: {"length_mm": None, "area_mm2": None} for n in ("anterior", "posterior")}}


def test_compare_single_case_bias():
    rows = compare([_stub_report(36.24)], [_stub_report(43.79)])
    assert rows["d_cc_mm"].bias == 7.55
    assert rows["d_ap_mm"] is None
    buf = io.StringIO()
    write_compare_csv(rows, buf)
    table = {r["measurement"]: r for r in csv.DictReader(io.StringIO(buf.getvalue()))}
    assert float(table["d_cc_mm"]["bias"]) == 7.55
    assert table["d_cc_mm"]["loa_low"] == ""


def test_compare_report_against_truth(default_analysis):
    result, truth = default_analysis
    rows = compare([json.loads(truth.to_json())], [result.report])
    assert abs(rows["d_cc_mm"].bias) <= 0.8


def test_compare_schema_mismatch():
    with pytest.raises(ValueError, match="schema"):
        compare([{"annulus": {}, "leaflets": {}}], [_stub_report(1.0)])
    with pytest.raises(ValueError, match="schema"):
        flat_measurements({"foo": 1})


@pytest.fixture(scope="module")
def cli_phantom(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["phantom", str(d / "valve.nrrd"), "--d-cc", "34", "--d-ap", "30"]) == 0
    return d


def test_cli_phantom_writes_volume_and_truth(cli_phantom, capsys):
    truth = json.loads((cli_phantom / "valve_truth.json").read_text())
    assert truth["d_cc"] == pytest.approx(34.0, abs=1e-9)
    assert (cli_phantom / "valve.nrrd").stat().st_size > 0


def test_cli_analyze_and_compare(cli_phantom, capsys):
    out = cli_phantom / "run"
    code = main(["analyze", str(cli_phantom / "valve.nrrd"), "-o", str(out)])
    printed = json.loads(capsys.readouterr().out)
    assert code == 0 and printed["status"]["exit_code"] == 0
    for name in ("report.json", "annulus_corrected.obj", "coaptation_line.csv", "landmarks.csv",
                 "posterior_height_grid.csv", "figures/top_view.png"):
        assert (out / name).exists(), name
    truth = json.loads((cli_phantom / "valve_truth.json").read_text())
    assert abs(printed["annulus"]["d_cc_mm"] - truth["d_cc"]) <= 0.8

    code = main(["compare", "--reference", str(cli_phantom / "valve_truth.json"),
                 "--test", str(out / "report.json"), "-o", str(cli_phantom / "agree")])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["measurement"] for r in rows] == [n for n, _ in MEASUREMENTS]
    assert (cli_phantom / "agree" / "bland_altman.png").exists()


def test_cli_metrics_self(cli_phantom, capsys):
    path = str(cli_phantom / "valve.nrrd")
    assert main(["metrics", path, path]) == 0
    res = json.loads(capsys.readouterr().out)
    for name in ("annulus", "anterior", "posterior", "complete"):
        assert res[name]["dice"] == 1.0 and res[name]["msd_mm"] == 0.0


def test_cli_errors(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nope.nrrd"), "--no-figures"]) == EXIT_IO
    assert main(["analyze", str(tmp_path / "nope.nrrd"), "--epsilon", "5"]) == EXIT_IO
    assert main(["metrics", str(tmp_path / "a.nrrd"), str(tmp_path / "b.nrrd")]) == EXIT_IO
    assert main(["compare", "--reference", str(tmp_path / "x.json"), "--test", str(tmp_path / "y.json")]) == EXIT_IO
    capsys.readouterr()


def test_cli_label_map(cli_phantom, tmp_path, capsys):
    from mitralmorph.volume import load_mask, save_mask

    # raw codes above 3 only exist on disk, so patch the payload of a raw-encoded file
    vol = load_mask(cli_phantom / "valve.nrrd")
    save_mask(vol, tmp_path / "raw.nrrd", encoding="raw")
    header, _, body = (tmp_path / "raw.nrrd").read_bytes().partition(b"\n\n")
    codes = np.frombuffer(body, np.uint8)
    shifted = np.where(codes > 0, codes + 4, 0).astype(np.uint8)
    (tmp_path / "raw.nrrd").write_bytes(header + b"\n\n" + shifted.tobytes())
    path = str(cli_phantom / "valve.nrrd")
    assert main(["metrics", path, str(tmp_path / "raw.nrrd"), "--label-map", "5:1,6:2,7:3"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["complete"]["dice"] == 1.0
