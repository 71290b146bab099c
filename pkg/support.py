#!/usr/bin/env python3

# support.py
"""
Overhang kernels and detection of supported/unsupported elements.

All detection runs in build coordinates (+y is the build direction); callers
holding a field in problem coordinates go through unsupported_elements(),
which reorients, detects and maps the result back.
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from grid import BUILD_UP, RHO_MIN, DensityField, Direction, GridDims, orient_array, reorient

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.1
FINAL_TAU = 0.5
_LINE_TOL = 1e-9

Offset = Tuple[int, int, int]


class SupportError(Exception):
    """Base class for self-supporting detection errors."""
    pass


class KernelError(SupportError):
    """Raised for an invalid overhang angle or layer count."""
    pass


class DetectionMismatchError(SupportError):
    """Raised when batched detection and enumeration disagree."""
    pass


@dataclass(frozen=True)
class OverhangKernel:
    offsets: Tuple[Offset, ...]
    angle: float
    layers: int
    dim: int

    @property
    def reach(self) -> int:
        return max(max(abs(dx), abs(dz)) for dx, _, dz in self.offsets)


@dataclass(frozen=True)
class DetectionParams:
    tau: float = DEFAULT_TAU
    direction: Direction = BUILD_UP

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise SupportError(f"Detection threshold must lie in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class SupportMask:
    dims: GridDims
    supported: np.ndarray

    def __post_init__(self):
        supported = np.array(self.supported, dtype=bool).ravel()
        supported.setflags(write=False)
        object.__setattr__(self, "supported", supported)

    def __eq__(self, other) -> bool:
        return (isinstance(other, SupportMask) and self.dims == other.dims
                and np.array_equal(self.supported, other.supported))

    def __hash__(self):
        return hash((self.dims, self.supported.tobytes()))


def default_layers(theta: float) -> int:
    """One layer expresses exactly the 45 degree rule; other angles need a second layer."""
    return 1 if math.isclose(theta, 45.0) else 2


def _first_depth(h: float, slope: float) -> int:
    """Depth of the first element in a column whose center lies on or below line L."""
    return max(1, math.ceil(h * slope - _LINE_TOL))


def build_kernel(theta: float, layers: Optional[int] = None, dim: int = 2) -> OverhangKernel:
    """
    For every column within reach, keep the first element below the anchor
    whose center lies on or below the line through the anchor center with
    slope tan(theta). 3D revolves the rule using the horizontal distance
    sqrt(dx^2 + dz^2).

    Raises:
        KernelError: theta outside (0, 90), layers < 1 or dim not in (2, 3)
    """
    if not 0 < theta < 90:
        raise KernelError(f"Overhang angle must lie in (0, 90) degrees, got {theta}")
    if layers is None:
        layers = default_layers(theta)
    if layers < 1:
        raise KernelError(f"Kernel needs at least one layer, got {layers}")
    if dim not in (2, 3):
        raise KernelError(f"Kernel dimension must be 2 or 3, got {dim}")
    slope = math.tan(math.radians(theta))
    reach = int(math.floor(layers / slope + _LINE_TOL))
    zreach = reach if dim == 3 else 0
    offsets = []
    for dz in range(-zreach, zreach + 1):
        for dx in range(-reach, reach + 1):
            depth = _first_depth(math.hypot(dx, dz), slope)
            if depth <= layers:
                offsets.append((dx, -depth, dz))
    offsets.sort(key=lambda o: (o[1], o[2], o[0]))
    logger.debug(f"Kernel for {theta} degrees, {layers} layer(s), {dim}D: {len(offsets)} offsets")
    return OverhangKernel(tuple(offsets), float(theta), int(layers), dim)


def kernel_matrix(kernel: OverhangKernel) -> np.ndarray:
    """Dense 0/1 stencil in (z, y, x) order, anchored at the array center."""
    reach = kernel.reach
    zreach = reach if kernel.dim == 3 else 0
    weights = np.zeros((2 * zreach + 1, 2 * kernel.layers + 1, 2 * reach + 1), dtype=np.int32)
    for dx, dy, dz in kernel.offsets:
        weights[zreach + dz, kernel.layers + dy, reach + dx] = 1
    return weights


def _solid(field: DensityField, tau: float) -> np.ndarray:
    return (field.values >= tau) & ~field.passive


def detect_supported(field: DensityField, kernel: OverhangKernel, params: DetectionParams) -> SupportMask:
    """
    Batched stencil detection on a field in build coordinates.

    Out-of-grid neighbors count as void (constant zero padding); the bottom
    layer rests on the baseboard; void and passive elements are reported
    supported.
    """
    solid = _solid(field, params.tau)
    grid = solid.reshape(field.dims.shape).astype(np.int32)
    counts = ndimage.correlate(grid, kernel_matrix(kernel), mode="constant", cval=0)
    supported = counts > 0
    supported[:, 0, :] = True
    supported = supported.ravel() | ~solid
    return SupportMask(field.dims, supported)


def enumerate_supported(field: DensityField, kernel: OverhangKernel, params: DetectionParams) -> SupportMask:
    """Element-by-element detection with the same contract as detect_supported."""
    dims = field.dims
    nx, ny, nz = dims.nx, dims.ny, dims.nz
    solid = _solid(field, params.tau).tolist()
    supported = [True] * dims.count
    for l in range(nz):
        for m in range(1, ny):
            for n in range(nx):
                e = n + nx * (m + ny * l)
                if not solid[e]:
                    continue
                found = False
                for dx, dy, dz in kernel.offsets:
                    nn, mm, ll = n + dx, m + dy, l + dz
                    if 0 <= nn < nx and 0 <= mm < ny and 0 <= ll < nz and solid[nn + nx * (mm + ny * ll)]:
                        found = True
                        break
                supported[e] = found
    return SupportMask(dims, np.array(supported, dtype=bool))


def unsupported_set(mask: SupportMask, field: DensityField, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Sorted indices of non-passive elements with density >= tau that are not supported."""
    if mask.dims != field.dims:
        raise SupportError(f"Mask for {mask.dims} applied to field {field.dims}")
    return np.flatnonzero(~mask.supported & _solid(field, tau))


def unsupported_elements(field: DensityField, kernel: OverhangKernel, params: DetectionParams,
                         method: str = "convolution") -> np.ndarray:
    """Unsupported element indices of a field in problem coordinates for params.direction."""
    detect = detect_supported if method == "convolution" else enumerate_supported
    oriented = reorient(field, params.direction)
    mask = detect(oriented, kernel, params)
    back = orient_array(mask.supported.reshape(oriented.dims.shape), params.direction, inverse=True)
    return unsupported_set(SupportMask(field.dims, back.ravel()), field, params.tau)


def unsupported_by_direction(field: DensityField, kernel: OverhangKernel, directions: Sequence[Direction],
                             tau: float = DEFAULT_TAU) -> Dict[Direction, np.ndarray]:
    return {d: unsupported_elements(field, kernel, DetectionParams(tau, d)) for d in directions}


def constraint_value(field: DensityField, unsupported: np.ndarray) -> float:
    """U = sum of squared densities over the unsupported elements."""
    rho = field.values[np.asarray(unsupported, dtype=int)]
    return float(rho @ rho)


def constraint_sensitivity(field: DensityField, unsupported: np.ndarray) -> np.ndarray:
    """dU/drho_e = 2 rho_e on the (frozen) unsupported set, 0 elsewhere."""
    grad = np.zeros(field.dims.count)
    idx = np.asarray(unsupported, dtype=int)
    grad[idx] = 2.0 * field.values[idx]
    return grad


@dataclass(frozen=True)
class DetectionBenchmark:
    dims: GridDims
    enum_seconds: float
    conv_seconds: float
    speedup: float

    CSV_HEADER = ("dims", "enum_seconds", "conv_seconds", "speedup")

    def csv_row(self) -> List[str]:
        return [str(self.dims), f"{self.enum_seconds:.6f}", f"{self.conv_seconds:.6f}", f"{self.speedup:.2f}"]


def benchmark_detection(dims: GridDims, repeats: int = 3, theta: float = 45.0,
                        tau: float = FINAL_TAU, seed: int = 0) -> DetectionBenchmark:
    """
    Time convolution against enumeration on identical seeded random fields.

    Raises:
        DetectionMismatchError: the two detectors disagree on any field
    """
    if repeats < 1:
        raise SupportError(f"Benchmark needs at least one repeat, got {repeats}")
    rng = np.random.default_rng(seed)
    kernel = build_kernel(theta, dim=dims.dim)
    params = DetectionParams(tau)
    enum_seconds = conv_seconds = 0.0
    for r in range(repeats):
        field = DensityField(dims, RHO_MIN + (1 - RHO_MIN) * rng.random(dims.count))
        start = time.perf_counter()
        enumerated = enumerate_supported(field, kernel, params)
        enum_seconds += time.perf_counter() - start
        start = time.perf_counter()
        convolved = detect_supported(field, kernel, params)
        conv_seconds += time.perf_counter() - start
        if enumerated != convolved:
            diff = int(np.count_nonzero(enumerated.supported != convolved.supported))
            raise DetectionMismatchError(f"Detectors disagree on {diff} elements of field {r} ({dims})")
    enum_seconds /= repeats
    conv_seconds /= repeats
    speedup = enum_seconds / conv_seconds if conv_seconds > 0 else float("inf")
    logger.info(f"Detection on {dims}: enumeration {enum_seconds:.4f}s, convolution {conv_seconds:.4f}s, "
                f"speedup {speedup:.1f}")
    return DetectionBenchmark(dims, enum_seconds, conv_seconds, speedup)
