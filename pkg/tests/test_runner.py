import csv
import dataclasses
import os

import numpy as np
import pytest
from PIL import Image

from grid import Direction
from optimizer import OptimizationError, binarize
from problem import ProblemValidationError, load_problem
from renderers.voxels import read_voxels
from runner import RunReport, read_summary, run, write_summary
from support import FINAL_TAU, DetectionParams, build_kernel, unsupported_elements


def _report(**fields):
    values = dict(problem="beam", mode="both", dims="150x60", directions=("+y",), compliance=92.81234567891,
                  volume_fraction=0.5999, unsupported=0, iterations=412, wall_seconds=61.25, feasible=True,
                  c_ref=92.7, ratio=92.81234567891 / 92.7, reference_unsupported=37)
    values.update(fields)
    return RunReport(**values)


def test_summary_reads_back(tmp_path):
    reports = [_report(), _report(mode="selfsupporting", directions=("+x", "-x"), c_ref=None, ratio=None,
                                  reference_unsupported=None, feasible=False, unsupported=2)]
    path = str(tmp_path / "summary.csv")
    write_summary(reports, path)
    assert read_summary(path) == reports
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert rows[1]["c_ref"] == ""
    assert rows[1]["directions"] == "+x -x"


def test_unknown_mode(tiny_problem, tmp_path):
    with pytest.raises(ProblemValidationError) as info:
        run(tiny_problem, "fastest", str(tmp_path / "run"))
    assert info.value.field == "mode"
    assert not os.path.exists(tmp_path / "run")


def test_reference_run_directory(tiny_problem, tmp_path):
    out_dir = str(tmp_path / "reference")
    report = run(tiny_problem, "reference", out_dir)

    assert report.c_ref == report.compliance
    assert report.ratio == 1.0
    assert report.directions == ("+y",)
    assert report.reference_unsupported == report.unsupported
    for name in ("history", "density", "summary", "report", "log"):
        assert os.path.isfile(report.artifacts[name])
    with open(report.artifacts["history"]) as f:
        assert len(f.read().splitlines()) == report.iterations + 1

    summary = read_summary(report.artifacts["summary"])[0]
    assert summary == dataclasses.replace(report, artifacts={})
    with open(report.artifacts["log"]) as f:
        assert "Running tiny-cantilever" in f.read()


def test_failed_run_keeps_its_history(tiny_problem, tmp_path):
    schedule = dataclasses.replace(tiny_problem.schedule, max_iters=5, coarse_max_iters=3)
    problem = dataclasses.replace(tiny_problem, schedule=schedule)
    out_dir = tmp_path / "capped"
    with pytest.raises(OptimizationError) as info:
        run(problem, "selfsupporting", str(out_dir))
    assert info.value.history_path == str(out_dir / "history.csv")
    with open(info.value.history_path) as f:
        assert len(f.read().splitlines()) == 6


def test_same_seed_gives_identical_history(tiny_problem, tmp_path):
    texts = []
    for name in ("first", "second"):
        report = run(tiny_problem, "reference", str(tmp_path / name))
        with open(report.artifacts["history"], "rb") as f:
            texts.append(f.read())
    assert texts[0] == texts[1]


@pytest.mark.slow
def test_beam_costs_little_compliance(tmp_path):
    report = run(load_problem("beam"), "both", str(tmp_path / "beam"))
    assert report.unsupported == 0
    assert report.feasible
    assert report.ratio <= 1.10
    assert report.volume_fraction <= 0.601
    with Image.open(report.artifacts["density"]) as image:
        black = (np.asarray(image) < 128).mean()
    assert black == pytest.approx(report.volume_fraction, abs=0.02)
    assert os.path.isfile(report.artifacts["reference_density"])


@pytest.mark.slow
def test_mbb_is_supported_from_both_sides(tmp_path):
    spec = load_problem("mbb-half")
    report = run(spec, "both", str(tmp_path / "mbb"))
    assert report.directions == ("+x", "-x")
    assert report.unsupported == 0
    assert report.ratio <= 1.15


@pytest.mark.slow
def test_steeper_angle_costs_more(tmp_path):
    ratios = {}
    for angle in (30, 45, 60):
        report = run(load_problem(f"beam-angle{angle}"), "both", str(tmp_path / str(angle)))
        assert report.unsupported == 0
        ratios[angle] = report.ratio
    assert ratios[60] > ratios[45]


@pytest.mark.slow
def test_reduced_3d_cantilever(tmp_path):
    report = run(load_problem("cantilever3d-small"), "both", str(tmp_path / "cantilever3d"))
    assert report.unsupported == 0
    assert report.volume_fraction <= 0.301
    assert report.ratio <= 1.25


@pytest.mark.slow
def test_wheel_field_file_is_self_supporting(tmp_path):
    spec = load_problem("wheel-small")
    report = run(spec, "selfsupporting", str(tmp_path / "wheel"))
    assert report.directions == ("-y",)
    field = binarize(read_voxels(report.artifacts["field"]))
    kernel = build_kernel(spec.overhang_angle, spec.detection.layers, 3)
    params = DetectionParams(FINAL_TAU, Direction.parse("-y"))
    assert unsupported_elements(field, kernel, params).size == 0
