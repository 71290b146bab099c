#!/usr/bin/env python3

# grid.py
"""
Structured grid addressing, density storage and passive-region masking.

Element storage is a flat array in x-fastest order. The equivalent shaped
view is ``(nz, ny, nx)`` so that a C-order reshape keeps elements of one
build layer (fixed y) contiguous per z-slab.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

RHO_MIN = 1e-3
VALUE_TOL = 1e-9

AXES = ("x", "y", "z")


class GridError(Exception):
    """Base class for grid related errors."""
    pass


class IndexOutOfRangeError(GridError):
    """Raised when an element index lies outside the grid."""
    pass


class InvalidDirectionError(GridError):
    """Raised when a build direction cannot be used on a grid."""
    pass


@dataclass(frozen=True)
class GridDims:
    nx: int
    ny: int
    nz: int = 1

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise GridError(f"Grid dimension {name} must be a positive integer, got {value}")

    @property
    def dim(self) -> int:
        return 2 if self.nz == 1 else 3

    @property
    def count(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Shape of the (nz, ny, nx) view."""
        return (self.nz, self.ny, self.nx)

    def as_list(self) -> List[int]:
        return [self.nx, self.ny] if self.dim == 2 else [self.nx, self.ny, self.nz]

    def __str__(self) -> str:
        return "x".join(str(n) for n in self.as_list())


def parse_dims(text: str) -> GridDims:
    """Parse ``NXxNY`` or ``NXxNYxNZ``."""
    parts = text.lower().split("x")
    if len(parts) not in (2, 3):
        raise GridError(f"'{text}' is not of the form NXxNY[xNZ]")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise GridError(f"'{text}' is not of the form NXxNY[xNZ]")
    return GridDims(*values)


@dataclass(frozen=True)
class Direction:
    """Build direction: material is deposited layer by layer along sign*axis."""
    axis: str
    sign: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise InvalidDirectionError(f"Unknown axis '{self.axis}'")
        if self.sign not in (1, -1):
            raise InvalidDirectionError(f"Direction sign must be +1 or -1, got {self.sign}")

    @classmethod
    def parse(cls, text: str) -> "Direction":
        text = text.strip().lower()
        if len(text) != 2 or text[0] not in "+-":
            raise InvalidDirectionError(f"'{text}' is not a direction like +y or -x")
        return cls(text[1], 1 if text[0] == "+" else -1)

    def check(self, dims: GridDims) -> None:
        if self.axis == "z" and dims.nz == 1:
            raise InvalidDirectionError(f"Direction {self} needs a 3D grid, got {dims}")

    def __str__(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}{self.axis}"


BUILD_UP = Direction("y", 1)


def default_candidates(dims: GridDims) -> List[Direction]:
    """Axis-aligned candidates in tie-break order."""
    names = ["+y", "-y", "+x", "-x"]
    if dims.dim == 3:
        names += ["+z", "-z"]
    return [Direction.parse(n) for n in names]


@dataclass(frozen=True)
class DensityField:
    dims: GridDims
    values: np.ndarray
    passive: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.dims.count:
            raise GridError(f"Expected {self.dims.count} densities for {self.dims}, got {values.size}")
        outside = ~((values >= RHO_MIN - VALUE_TOL) & (values <= 1.0 + VALUE_TOL))
        if outside.any():
            e = int(np.flatnonzero(outside)[0])
            raise GridError(f"Density {float(values[e])!r} of element {e} is outside [{RHO_MIN:g}, 1] "
                            f"({int(outside.sum())} element(s) out of range)")
        # rounding from filtering and projection
        np.clip(values, RHO_MIN, 1.0, out=values)
        if self.passive is None:
            passive = np.zeros(self.dims.count, dtype=bool)
        else:
            passive = np.array(self.passive, dtype=bool).ravel()
            if passive.size != self.dims.count:
                raise GridError(f"Passive mask has {passive.size} entries, expected {self.dims.count}")
        values.setflags(write=False)
        passive.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "passive", passive)

    @classmethod
    def uniform(cls, dims: GridDims, value: float, passive: Optional[np.ndarray] = None) -> "DensityField":
        return cls(dims, np.full(dims.count, float(value)), passive)

    def grid(self) -> np.ndarray:
        """Read-only (nz, ny, nx) view of the densities."""
        return self.values.reshape(self.dims.shape)

    def passive_grid(self) -> np.ndarray:
        return self.passive.reshape(self.dims.shape)

    def with_values(self, values: np.ndarray) -> "DensityField":
        return DensityField(self.dims, values, self.passive)

    @property
    def active(self) -> np.ndarray:
        return ~self.passive

    def volume_fraction(self) -> float:
        """Mean density over the non-passive elements."""
        active = self.active
        if not active.any():
            return 0.0
        return float(self.values[active].mean())


def element_index(n: int, m: int, l: int, dims: GridDims) -> int:
    """Linear index of the element at 1-based grid position (n, m, l)."""
    if not (1 <= n <= dims.nx and 1 <= m <= dims.ny and 1 <= l <= dims.nz):
        raise IndexOutOfRangeError(f"Element ({n}, {m}, {l}) is outside grid {dims}")
    return (n - 1) + dims.nx * ((m - 1) + dims.ny * (l - 1))


def element_position(index: int, dims: GridDims) -> Tuple[int, int, int]:
    """Inverse of element_index."""
    if not 0 <= index < dims.count:
        raise IndexOutOfRangeError(f"Element index {index} is outside grid {dims}")
    n = index % dims.nx
    m = (index // dims.nx) % dims.ny
    l = index // (dims.nx * dims.ny)
    return n + 1, m + 1, l + 1


def element_centers(dims: GridDims) -> np.ndarray:
    """Element center coordinates (count x 3) in element units, x-fastest order."""
    z, y, x = np.meshgrid(np.arange(dims.nz), np.arange(dims.ny), np.arange(dims.nx), indexing="ij")
    return np.column_stack((x.ravel(), y.ravel(), z.ravel())).astype(float) + 0.5


def _oriented_dims(dims: GridDims, direction: Direction) -> GridDims:
    if direction.axis == "x":
        return GridDims(dims.ny, dims.nx, dims.nz)
    if direction.axis == "z":
        return GridDims(dims.nx, dims.nz, dims.ny)
    return dims


def orient_array(array: np.ndarray, direction: Direction, inverse: bool = False) -> np.ndarray:
    """
    Reorient an (nz, ny, nx) array so that its y axis points along direction.

    The forward map swaps the build axis into y and then flips y for a
    negative sign; the inverse flips first and swaps back.
    """
    swap = {"x": (0, 2, 1), "y": None, "z": (1, 0, 2)}[direction.axis]
    out = array
    if not inverse:
        if swap is not None:
            out = out.transpose(swap)
        if direction.sign < 0:
            out = out[:, ::-1, :]
    else:
        if direction.sign < 0:
            out = out[:, ::-1, :]
        if swap is not None:
            out = out.transpose(swap)
    return np.ascontiguousarray(out)


def reorient(field: DensityField, direction: Direction, inverse: bool = False) -> DensityField:
    """Return the field expressed in build coordinates (+y = build direction)."""
    direction.check(field.dims)
    dims = _oriented_dims(field.dims, direction)
    values = orient_array(field.grid(), direction, inverse)
    passive = orient_array(field.passive_grid(), direction, inverse)
    return DensityField(dims, values.ravel(), passive.ravel())


def apply_passive(field: DensityField) -> DensityField:
    """Force every passive element to RHO_MIN."""
    if not field.passive.any():
        return field
    values = np.array(field.values)
    values[field.passive] = RHO_MIN
    return field.with_values(values)


# Passive shapes, rasterized by element-center membership.

def circle_mask(dims: GridDims, center: Sequence[float], radius: float) -> np.ndarray:
    """Elements whose centers lie strictly inside a circle (2D) or cylinder along z."""
    c = element_centers(dims)
    return (c[:, 0] - center[0]) ** 2 + (c[:, 1] - center[1]) ** 2 < radius ** 2


def sphere_mask(dims: GridDims, center: Sequence[float], radius: float) -> np.ndarray:
    c = element_centers(dims)
    cz = center[2] if len(center) > 2 else 0.0
    return ((c[:, 0] - center[0]) ** 2 + (c[:, 1] - center[1]) ** 2
            + (c[:, 2] - cz) ** 2) < radius ** 2


def box_mask(dims: GridDims, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    """Elements whose centers lie inside the closed box [lower, upper]."""
    c = element_centers(dims)
    inside = np.ones(dims.count, dtype=bool)
    for axis in range(min(len(lower), 3)):
        inside &= (c[:, axis] >= lower[axis]) & (c[:, axis] <= upper[axis])
    return inside


def combine_masks(dims: GridDims, masks: Iterable[np.ndarray]) -> np.ndarray:
    out = np.zeros(dims.count, dtype=bool)
    for mask in masks:
        out |= mask
    return out
