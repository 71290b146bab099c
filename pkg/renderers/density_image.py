#!/usr/bin/env python3

# renderers/density_image.py
import logging
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from grid import RHO_MIN, DensityField

logger = logging.getLogger(__name__)

UNSUPPORTED_COLOR = (220, 30, 30)


class ExportError(Exception):
    """Raised when a field cannot be written in the requested format."""
    pass


def density_pixels(field: DensityField) -> np.ndarray:
    """
    8-bit grayscale pixels, one per element: black = 1.0, white = RHO_MIN.
    Row 0 is the top layer so the y axis points up in the image.
    """
    if field.dims.dim != 2:
        raise ExportError(f"Density images are 2D only, got {field.dims}; use the voxel export for 3D fields")
    rho = np.clip(field.grid()[0], RHO_MIN, 1.0)
    gray = np.rint(255.0 * (1.0 - rho) / (1.0 - RHO_MIN)).astype(np.uint8)
    return gray[::-1, :]


def export_density_image(field: DensityField, path: str, highlight: Optional[Sequence[int]] = None) -> str:
    """
    Write the field as an image. The format follows the file extension
    (.pgm, .png, ...). Elements listed in highlight are drawn in red.

    Raises:
        ExportError: field is 3D or the file cannot be written
    """
    gray = density_pixels(field)
    if highlight is not None and len(highlight):
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
        mask = np.zeros(field.dims.count, dtype=bool)
        mask[np.asarray(highlight, dtype=int)] = True
        rgb[mask.reshape(field.dims.ny, field.dims.nx)[::-1, :]] = UNSUPPORTED_COLOR
        image = Image.fromarray(rgb)
    else:
        image = Image.fromarray(gray)
    try:
        image.save(path)
    except (OSError, ValueError) as e:
        raise ExportError(f"Cannot write image {path}: {e}")
    logger.debug(f"Wrote {field.dims} density image to {path}")
    return path
