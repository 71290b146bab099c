import math

import numpy as np
import pytest

from grid import RHO_MIN, DensityField, Direction, GridDims, element_index
from support import (DetectionBenchmark, DetectionParams, KernelError, SupportError, SupportMask,
                     benchmark_detection, build_kernel, constraint_sensitivity, constraint_value,
                     default_layers, detect_supported, enumerate_supported, kernel_matrix,
                     unsupported_by_direction, unsupported_elements)


def solid_field(dims: GridDims, positions) -> DensityField:
    """Field with 1.0 at the given 0-based (x, y[, z]) positions and RHO_MIN elsewhere."""
    values = np.full(dims.count, RHO_MIN)
    for pos in positions:
        n, m, l = (list(pos) + [0])[:3]
        values[element_index(n + 1, m + 1, l + 1, dims)] = 1.0
    return DensityField(dims, values)


def oracle_supported(field: DensityField, offsets, tau: float) -> np.ndarray:
    """Element-wise reference: solid elements above the bottom layer need a solid kernel neighbor."""
    dims = field.dims
    solid = field.values.reshape(dims.shape) >= tau
    supported = np.ones(dims.shape, dtype=bool)
    for l, m, n in zip(*np.nonzero(solid)):
        if m == 0:
            continue
        hits = [solid[l + dz, m + dy, n + dx] for dx, dy, dz in offsets
                if 0 <= n + dx < dims.nx and 0 <= m + dy < dims.ny and 0 <= l + dz < dims.nz]
        supported[l, m, n] = any(hits)
    return supported.ravel()


def test_45_degree_kernel_is_the_row_below():
    kernel = build_kernel(45)
    assert kernel.layers == 1
    assert kernel.offsets == ((-1, -1, 0), (0, -1, 0), (1, -1, 0))
    assert kernel_matrix(kernel)[0].tolist() == [[1, 1, 1], [0, 0, 0], [0, 0, 0]]


def test_45_degree_3d_kernel_is_a_cross():
    kernel = build_kernel(45, dim=3)
    assert set(kernel.offsets) == {(0, -1, 0), (-1, -1, 0), (1, -1, 0), (0, -1, -1), (0, -1, 1)}


def test_steep_angle_kernel_reaches_two_layers():
    kernel = build_kernel(60)
    assert kernel.layers == 2
    assert set(kernel.offsets) == {(0, -1, 0), (-1, -2, 0), (1, -2, 0)}


def test_shallow_angle_kernel_is_wider():
    kernel = build_kernel(30)
    assert set(kernel.offsets) == {(-1, -1, 0), (0, -1, 0), (1, -1, 0),
                                   (-3, -2, 0), (-2, -2, 0), (2, -2, 0), (3, -2, 0)}
    assert kernel.reach == 3


def test_kernel_rejects_bad_arguments():
    assert default_layers(45.0) == 1
    assert default_layers(50.0) == 2
    for theta in (0, 90, -5):
        with pytest.raises(KernelError):
            build_kernel(theta)
    with pytest.raises(KernelError):
        build_kernel(45, layers=0)
    with pytest.raises(KernelError):
        build_kernel(45, dim=4)


def test_floating_element_is_unsupported():
    dims = GridDims(5, 3)
    field = solid_field(dims, [(2, 2)])
    idx = unsupported_elements(field, build_kernel(45), DetectionParams(0.5))
    assert idx.tolist() == [element_index(3, 3, 1, dims)]
    column = solid_field(dims, [(2, 0), (2, 1), (2, 2)])
    assert unsupported_elements(column, build_kernel(45), DetectionParams(0.5)).size == 0


def test_staircase_depends_on_the_angle():
    dims = GridDims(5, 3)
    stairs = solid_field(dims, [(0, 0), (1, 1), (2, 2)])
    params = DetectionParams(0.5)
    assert unsupported_elements(stairs, build_kernel(45), params).size == 0
    assert unsupported_elements(stairs, build_kernel(30), params).size == 0
    steep = unsupported_elements(stairs, build_kernel(60), params)
    assert steep.tolist() == [element_index(2, 2, 1, dims), element_index(3, 3, 1, dims)]


def test_build_direction_changes_the_baseboard():
    dims = GridDims(4, 3)
    top = solid_field(dims, [(1, 2)])
    kernel = build_kernel(45)
    found = unsupported_by_direction(top, kernel, [Direction.parse(d) for d in ("+y", "-y", "+x", "-x")], 0.5)
    assert found[Direction.parse("+y")].size == 1
    assert found[Direction.parse("-y")].size == 0
    assert found[Direction.parse("+x")].size == 1
    assert found[Direction.parse("-x")].size == 1
    left = solid_field(dims, [(0, 1)])
    assert unsupported_elements(left, kernel, DetectionParams(0.5, Direction.parse("+x"))).size == 0


def test_bottom_layer_and_void_are_supported(random_field):
    dims = GridDims(9, 6)
    field = random_field(dims, passive_fraction=0.2)
    mask = detect_supported(field, build_kernel(45), DetectionParams(0.5))
    grid = mask.supported.reshape(dims.shape)
    assert grid[:, 0, :].all()
    solid = (field.values >= 0.5) & ~field.passive
    assert mask.supported[~solid].all()


@pytest.mark.parametrize("theta", [30, 45, 60])
def test_batched_detection_matches_the_oracle_2d(theta, random_field):
    dims = GridDims(23, 17)
    field = random_field(dims)
    kernel = build_kernel(theta)
    params = DetectionParams(0.5)
    batched = detect_supported(field, kernel, params)
    assert np.array_equal(batched.supported, oracle_supported(field, kernel.offsets, 0.5))
    assert batched == enumerate_supported(field, kernel, params)


@pytest.mark.parametrize("theta", [45, 55])
def test_batched_detection_matches_the_oracle_3d(theta, random_field):
    dims = GridDims(8, 7, 6)
    field = random_field(dims)
    kernel = build_kernel(theta, dim=3)
    params = DetectionParams(0.3)
    assert np.array_equal(detect_supported(field, kernel, params).supported,
                          oracle_supported(field, kernel.offsets, 0.3))


def test_methods_agree_for_every_direction(random_field):
    dims = GridDims(6, 5, 4)
    field = random_field(dims)
    kernel = build_kernel(45, dim=3)
    for name in ("+y", "-y", "+x", "-x", "+z", "-z"):
        params = DetectionParams(0.5, Direction.parse(name))
        assert np.array_equal(unsupported_elements(field, kernel, params),
                              unsupported_elements(field, kernel, params, method="enumeration"))


def test_adding_material_below_never_unsupports(random_field):
    dims = GridDims(12, 8)
    field = random_field(dims)
    kernel = build_kernel(45)
    params = DetectionParams(0.5)
    before = set(unsupported_elements(field, kernel, params).tolist())
    values = np.array(field.values)
    values[:dims.nx * 3] = 1.0
    after = set(unsupported_elements(field.with_values(values), kernel, params).tolist())
    assert after <= before


def test_constraint_value_and_sensitivity(random_field):
    dims = GridDims(6, 5)
    field = random_field(dims)
    idx = unsupported_elements(field, build_kernel(45), DetectionParams(0.1))
    U = constraint_value(field, idx)
    assert U == pytest.approx(float(np.sum(field.values[idx] ** 2)))
    grad = constraint_sensitivity(field, idx)
    h = 1e-7
    for e in range(dims.count):
        values = np.array(field.values)
        values[e] += h
        fd = (constraint_value(field.with_values(values), idx) - U) / h
        assert grad[e] == pytest.approx(fd, abs=1e-5)


def test_detection_params_validation():
    with pytest.raises(SupportError):
        DetectionParams(0.0)
    with pytest.raises(SupportError):
        DetectionParams(1.0)


def test_support_mask_equality():
    dims = GridDims(2, 2)
    assert SupportMask(dims, [True] * 4) == SupportMask(dims, np.ones(4))
    assert SupportMask(dims, [True] * 4) != SupportMask(dims, [True, False, True, True])


def test_benchmark_reports_consistent_timings():
    result = benchmark_detection(GridDims(30, 20), repeats=1)
    assert isinstance(result, DetectionBenchmark)
    assert result.enum_seconds > 0 and result.conv_seconds > 0
    assert result.speedup == pytest.approx(result.enum_seconds / result.conv_seconds)
    row = result.csv_row()
    assert len(row) == len(DetectionBenchmark.CSV_HEADER)
    assert row[0] == "30x20"
    with pytest.raises(SupportError):
        benchmark_detection(GridDims(4, 4), repeats=0)


@pytest.mark.slow
def test_batched_detection_is_much_faster_on_a_large_grid():
    result = benchmark_detection(GridDims(600, 400), repeats=1)
    assert result.speedup >= 10


@pytest.mark.parametrize("dim", [2, 3])
def test_single_layer_kernels_shrink_as_the_angle_steepens(dim):
    angles = [15, 20, 30, 40, 45, 50, 60, 70, 80]
    kernels = [set(build_kernel(theta, layers=1, dim=dim).offsets) for theta in angles]
    for shallow, steep in zip(kernels, kernels[1:]):
        assert steep <= shallow
    assert kernels[-1] == {(0, -1, 0)}


def test_detectors_agree_on_a_thousand_random_fields():
    rng = np.random.default_rng(2024)
    grids = [GridDims(12, 9), GridDims(80, 40), GridDims(10, 10, 8)]
    cases = [(dims, tau, theta) for dims in grids for tau in (0.05, 0.1, 0.5) for theta in (30, 45, 60)]
    checked = 0
    for i in range(1000):
        dims, tau, theta = cases[i % len(cases)]
        # the exponent varies the solid fraction from field to field
        values = RHO_MIN + (1 - RHO_MIN) * rng.random(dims.count) ** rng.uniform(0.5, 4.0)
        field = DensityField(dims, values)
        kernel = build_kernel(theta, dim=dims.dim)
        params = DetectionParams(tau)
        assert detect_supported(field, kernel, params) == enumerate_supported(field, kernel, params), \
            f"field {i}: {dims}, tau {tau}, theta {theta}"
        checked += 1
    assert checked == 1000
