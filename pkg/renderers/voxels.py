#!/usr/bin/env python3

# renderers/voxels.py
"""Legacy VTK structured-points files with one density scalar per cell."""
import logging
import os
from typing import List, Optional

import numpy as np
from jinja2 import Environment, FileSystemLoader

from grid import RHO_MIN, DensityField, GridDims, GridError
from renderers.density_image import ExportError

logger = logging.getLogger(__name__)

VALUES_PER_LINE = 9


def _environment() -> Environment:
    template_dir = os.path.dirname(os.path.abspath(__file__))
    return Environment(
        loader=FileSystemLoader(template_dir),
        trim_blocks=True,
        lstrip_blocks=True
    )


def _value_lines(values: np.ndarray) -> List[str]:
    text = [f"{v:.9g}" for v in values.tolist()]
    return [" ".join(text[i:i + VALUES_PER_LINE]) for i in range(0, len(text), VALUES_PER_LINE)]


def _render(dims: GridDims, values: np.ndarray, title: str) -> str:
    return _environment().get_template("field.vtk.j2").render(
        title=title,
        dimensions=(dims.nx + 1, dims.ny + 1, dims.nz + 1),
        cell_count=dims.count,
        lines=_value_lines(values),
    )


def render_voxels(field: DensityField, title: str = "density") -> str:
    return _render(field.dims, field.values, title)


def export_voxels(field: DensityField, path: str, threshold: Optional[float] = None,
                  title: str = "density") -> List[str]:
    """
    Write the field to path, cells in x-fastest order. With a threshold a
    binary companion '<stem>_binary.vtk' holding 1/0 cells is written too.

    Returns:
        paths written
    """
    written = [path]
    outputs = [(path, field.values)]
    if threshold is not None:
        stem, ext = os.path.splitext(path)
        outputs.append((f"{stem}_binary{ext}", (field.values >= threshold).astype(float)))
        written.append(outputs[-1][0])
    for target, values in outputs:
        try:
            with open(target, "w") as f:
                f.write(_render(field.dims, values, title))
        except OSError as e:
            raise ExportError(f"Cannot write voxel file {target}: {e}")
    logger.debug(f"Wrote voxel file(s) {', '.join(written)}")
    return written


def read_voxels(path: str) -> DensityField:
    """Parse a file written by export_voxels back into a field. Void cells of 0 read back as RHO_MIN."""
    with open(path) as f:
        tokens = f.read().split("\n")
    dims = None
    start = None
    for i, line in enumerate(tokens):
        parts = line.split()
        if parts[:1] == ["DIMENSIONS"]:
            nx, ny, nz = (int(p) - 1 for p in parts[1:4])
            dims = GridDims(nx, ny, nz)
        elif parts[:1] == ["LOOKUP_TABLE"]:
            start = i + 1
            break
    if dims is None or start is None:
        raise ExportError(f"{path} is not a structured-points density file")
    values = np.array(" ".join(tokens[start:]).split(), dtype=float)
    if values.size != dims.count:
        raise ExportError(f"{path} holds {values.size} cells, expected {dims.count}")
    try:
        return DensityField(dims, np.maximum(values, RHO_MIN))
    except GridError as e:
        raise ExportError(f"{path}: {e}")
