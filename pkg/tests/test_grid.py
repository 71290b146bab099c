import numpy as np
import pytest

from grid import (BUILD_UP, RHO_MIN, DensityField, Direction, GridDims, GridError, IndexOutOfRangeError,
                  InvalidDirectionError, apply_passive, box_mask, circle_mask, combine_masks,
                  default_candidates, element_centers, element_index, element_position, orient_array,
                  parse_dims, reorient)


def test_parse_dims():
    assert parse_dims("150x60") == GridDims(150, 60)
    assert parse_dims("40X40X40").dim == 3
    assert str(GridDims(150, 60)) == "150x60"
    with pytest.raises(GridError):
        parse_dims("150")
    with pytest.raises(GridError):
        parse_dims("axb")
    with pytest.raises(GridError):
        GridDims(0, 4)


def test_element_index_is_x_fastest():
    dims = GridDims(4, 3, 2)
    assert element_index(1, 1, 1, dims) == 0
    assert element_index(2, 1, 1, dims) == 1
    assert element_index(1, 2, 1, dims) == 4
    assert element_index(1, 1, 2, dims) == 12
    assert element_position(23, dims) == (4, 3, 2)
    for e in (0, 5, 17):
        assert element_index(*element_position(e, dims), dims) == e


def test_element_index_out_of_range():
    dims = GridDims(4, 3)
    with pytest.raises(IndexOutOfRangeError):
        element_index(5, 1, 1, dims)
    with pytest.raises(IndexOutOfRangeError):
        element_position(12, dims)


def test_direction_parse():
    assert Direction.parse("+y") == BUILD_UP
    assert str(Direction.parse("-x")) == "-x"
    with pytest.raises(InvalidDirectionError):
        Direction.parse("y")
    with pytest.raises(InvalidDirectionError):
        Direction.parse("+w")
    with pytest.raises(InvalidDirectionError):
        Direction.parse("+z").check(GridDims(4, 3))


def test_default_candidates():
    assert [str(d) for d in default_candidates(GridDims(4, 3))] == ["+y", "-y", "+x", "-x"]
    assert len(default_candidates(GridDims(4, 3, 2))) == 6


def test_density_field_validation():
    dims = GridDims(3, 2)
    with pytest.raises(GridError):
        DensityField(dims, np.ones(5))
    with pytest.raises(GridError):
        DensityField(dims, np.ones(6), np.zeros(4, dtype=bool))
    field = DensityField(dims, np.ones(6))
    with pytest.raises(ValueError):
        field.values[0] = 0.5


@pytest.mark.parametrize("bad", [0.0, -0.2, 1.01, float("nan")])
def test_density_field_rejects_values_outside_the_bounds(bad):
    values = np.full(6, 0.5)
    values[4] = bad
    with pytest.raises(GridError, match="element 4"):
        DensityField(GridDims(3, 2), values)


def test_density_field_clips_rounding_at_the_bounds():
    field = DensityField(GridDims(2, 1), [1.0 + 1e-12, RHO_MIN - 1e-12])
    assert field.values.tolist() == [1.0, RHO_MIN]


def test_volume_fraction_ignores_passive():
    dims = GridDims(2, 2)
    passive = np.array([True, False, False, False])
    field = DensityField(dims, [1.0, 0.75, 0.5, 0.25], passive)
    assert field.volume_fraction() == pytest.approx(0.5)
    assert apply_passive(field).values[0] == RHO_MIN


def test_reorient_moves_build_axis_to_y():
    dims = GridDims(3, 2)
    field = DensityField(dims, (np.arange(6) + 1) / 8)
    up = reorient(field, Direction.parse("+x"))
    assert up.dims == GridDims(2, 3)
    # first build layer of +x is the left column of the original grid
    assert list(up.grid()[0, 0, :]) == [0.125, 0.5]
    down = reorient(field, Direction.parse("-y"))
    assert list(down.grid()[0, 0, :]) == [0.5, 0.625, 0.75]
    back = reorient(reorient(field, Direction.parse("-x")), Direction.parse("-x"), inverse=True)
    assert np.array_equal(back.values, field.values)


def test_orient_array_inverse_3d():
    grid = np.arange(24).reshape(2, 3, 4)
    direction = Direction.parse("-z")
    assert np.array_equal(orient_array(orient_array(grid, direction), direction, inverse=True), grid)


def test_passive_masks():
    dims = GridDims(10, 10)
    circle = circle_mask(dims, [5, 5], 2)
    assert circle[element_index(5, 5, 1, dims)]
    assert not circle[0]
    box = box_mask(dims, [0, 0], [2, 2])
    assert box.sum() == 4
    assert combine_masks(dims, [circle, box]).sum() == circle.sum() + 4


def test_apply_passive_clears_a_circular_hole():
    dims = GridDims(20, 20)
    mask = circle_mask(dims, [10, 10], 5)
    field = apply_passive(DensityField.uniform(dims, 0.5, mask))
    centers = element_centers(dims)
    inside = (centers[:, 0] - 10) ** 2 + (centers[:, 1] - 10) ** 2 < 25
    assert inside.any() and not inside.all()
    for e in range(dims.count):
        assert field.values[e] == (RHO_MIN if inside[e] else 0.5)


def test_apply_passive_on_an_all_passive_field():
    dims = GridDims(3, 3)
    field = apply_passive(DensityField.uniform(dims, 0.7, np.ones(dims.count, dtype=bool)))
    assert (field.values == RHO_MIN).all()
