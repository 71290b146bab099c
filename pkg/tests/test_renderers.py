import re

import numpy as np
import pytest
from PIL import Image

from grid import RHO_MIN, DensityField, GridDims
from renderers.density_image import UNSUPPORTED_COLOR, ExportError, density_pixels, export_density_image
from renderers.report import render_report
from renderers.voxels import export_voxels, read_voxels, render_voxels
from runner import RunReport


def _cells(text: str):
    lines = text.splitlines()
    start = lines.index("LOOKUP_TABLE default") + 1
    return " ".join(lines[start:]).split()


def test_solid_field_is_black_and_void_is_white():
    dims = GridDims(4, 3)
    assert (density_pixels(DensityField.uniform(dims, 1.0)) == 0).all()
    assert (density_pixels(DensityField.uniform(dims, RHO_MIN)) == 255).all()


def test_checkerboard_pixels():
    dims = GridDims(4, 4)
    ii, jj = np.meshgrid(np.arange(4), np.arange(4))
    values = np.where((ii + jj) % 2 == 0, 1.0, RHO_MIN)
    pixels = density_pixels(DensityField(dims, values.ravel()))
    assert pixels.shape == (4, 4)
    assert set(np.unique(pixels).tolist()) == {0, 255}
    assert (pixels[:, :-1] != pixels[:, 1:]).all()
    assert (pixels[:-1, :] != pixels[1:, :]).all()


def test_bottom_layer_is_the_last_image_row():
    dims = GridDims(3, 2)
    field = DensityField(dims, [1.0, 1.0, 1.0, RHO_MIN, RHO_MIN, RHO_MIN])
    pixels = density_pixels(field)
    assert (pixels[-1] == 0).all()
    assert (pixels[0] == 255).all()


def test_image_export_needs_2d(tmp_path):
    field = DensityField.uniform(GridDims(2, 2, 2), 0.5)
    with pytest.raises(ExportError):
        export_density_image(field, str(tmp_path / "x.png"))


def test_image_export(tmp_path):
    field = DensityField.uniform(GridDims(5, 3), 0.5)
    path = export_density_image(field, str(tmp_path / "density.png"))
    with Image.open(path) as image:
        assert image.mode == "L"
        assert image.size == (5, 3)


def test_highlighted_elements_are_red(tmp_path):
    field = DensityField.uniform(GridDims(5, 3), 1.0)
    path = export_density_image(field, str(tmp_path / "marked.png"), highlight=[0])
    with Image.open(path) as image:
        assert image.mode == "RGB"
        assert image.getpixel((0, 2)) == UNSUPPORTED_COLOR
        assert image.getpixel((1, 2)) == (0, 0, 0)


def test_unwritable_image_path(tmp_path):
    field = DensityField.uniform(GridDims(2, 2), 1.0)
    with pytest.raises(ExportError):
        export_density_image(field, str(tmp_path / "missing" / "density.png"))


def test_voxel_cells_are_x_fastest():
    values = (np.arange(8) + 1) / 8
    field = DensityField(GridDims(2, 2, 2), values)
    text = render_voxels(field)
    assert "DIMENSIONS 3 3 3" in text
    assert "CELL_DATA 8" in text
    assert [float(v) for v in _cells(text)] == pytest.approx(values.tolist())


def test_void_voxels(tmp_path):
    field = DensityField.uniform(GridDims(2, 2, 2), RHO_MIN)
    assert all(float(v) == RHO_MIN for v in _cells(render_voxels(field)))
    paths = export_voxels(field, str(tmp_path / "void.vtk"), threshold=0.5)
    with open(paths[1]) as f:
        assert all(float(v) == 0.0 for v in _cells(f.read()))
    assert (read_voxels(paths[1]).values == RHO_MIN).all()


def test_out_of_range_voxel_file(tmp_path):
    path = tmp_path / "bad.vtk"
    path.write_text(render_voxels(DensityField.uniform(GridDims(2, 2, 2), 0.5)).replace("0.5", "2.5"))
    with pytest.raises(ExportError):
        read_voxels(str(path))


def test_voxel_file_reads_back(tmp_path, random_field):
    field = random_field(GridDims(5, 4, 3))
    paths = export_voxels(field, str(tmp_path / "field.vtk"), threshold=0.5)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["field.vtk", "field_binary.vtk"]
    again = read_voxels(paths[0])
    assert again.dims == field.dims
    assert np.allclose(again.values, field.values, atol=1e-6)
    binary = read_voxels(paths[1])
    assert np.array_equal(binary.values, np.where(field.values >= 0.5, 1.0, RHO_MIN))


def test_report_lists_results(tiny_problem):
    report = RunReport(problem="tiny-cantilever", mode="both", dims="20x10", directions=("+y",),
                       compliance=92.8, volume_fraction=0.5, unsupported=0, iterations=120,
                       wall_seconds=3.5, feasible=True, c_ref=92.7, ratio=92.8 / 92.7,
                       reference_unsupported=4, artifacts={"history": "runs/history.csv"})
    text = render_report({"report": report, "problem": tiny_problem})
    assert text.startswith("Run report: tiny-cantilever")
    assert re.search(r"C/C_ref\s+1\.0011", text)
    assert re.search(r"#unsupported ref\s+4", text)
    assert "runs/history.csv" in text
    assert re.search(r"feasible\s+yes", text)
