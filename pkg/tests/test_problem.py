import json

import numpy as np
import pytest

from grid import Direction, GridDims
from problem import (ProblemError, ProblemParseError, ProblemValidationError, build_load_case, load_problem,
                     problem_from_dict, save_problem, select_nodes)
from suggestors import list_presets

from conftest import cantilever_dict

BENCHMARK_PRESETS = [
    "beam", "beam-hole", "beam-r2", "beam-r3", "beam-point", "beam-distributed", "beam-mixed",
    "beam-vf06", "beam-vf05", "beam-vf04", "beam-vf025", "beam-angle30", "beam-angle45", "beam-angle60",
    "mbb-half", "square", "wheel-small", "cantilever3d-small", "desk-small",
]


def test_every_benchmark_preset_is_available():
    assert set(BENCHMARK_PRESETS) <= set(list_presets())


@pytest.mark.parametrize("name", BENCHMARK_PRESETS)
def test_presets_load(name):
    spec = load_problem(name)
    assert spec.name == name
    assert 0 < spec.volume_fraction < 1
    lc = spec.load_case()
    assert lc.load_dofs.size > 0


def test_beam_preset():
    spec = load_problem("beam")
    assert spec.dims == GridDims(150, 60)
    assert spec.volume_fraction == 0.6
    assert spec.penalization == 3.0
    assert spec.material.E == 1.0 and spec.material.nu == 0.3
    assert spec.directions is None
    assert [str(d) for d in spec.candidates] == ["+y", "-y", "+x", "-x"]


def test_mbb_half_preset_pins_two_directions():
    spec = load_problem("mbb-half")
    assert spec.dims == GridDims(160, 30)
    assert spec.volume_fraction == 0.5
    assert spec.directions == (Direction.parse("+x"), Direction.parse("-x"))


def test_extends_overrides_fields():
    spec = load_problem("beam-hole")
    assert spec.dims == GridDims(150, 60)
    assert spec.volume_fraction == 0.5
    assert spec.passive_mask().sum() > 0


def test_overrides_are_validated():
    with pytest.raises(ProblemValidationError) as info:
        load_problem("beam", {"volume_fraction": 1.5})
    assert info.value.field == "volume_fraction"
    with pytest.raises(ProblemValidationError) as info:
        load_problem("beam", {"overhang_angle": 90})
    assert info.value.field == "overhang_angle"
    with pytest.raises(ProblemValidationError) as info:
        load_problem("beam", {"directions": ["+z"]})
    assert info.value.field == "directions"


def test_overrides_apply():
    spec = load_problem("beam", {"filter_radius": 3, "schedule": {"max_iters": 50}})
    assert spec.filter_radius == 3.0
    assert spec.schedule.max_iters == 50
    assert spec.schedule.beta_max == 64.0


def test_parse_error_reports_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "dims": [10, 5],\n  "volume_fraction": ,\n}\n')
    with pytest.raises(ProblemParseError) as info:
        load_problem(str(path))
    assert info.value.line == 3


def test_unknown_problem():
    with pytest.raises(ProblemError):
        load_problem("no-such-preset")


def test_unknown_field_and_missing_field():
    with pytest.raises(ProblemValidationError) as info:
        problem_from_dict(cantilever_dict(volume=0.4))
    assert info.value.field == "volume"
    data = cantilever_dict()
    del data["loads"]
    with pytest.raises(ProblemValidationError) as info:
        problem_from_dict(data)
    assert info.value.field == "loads"


def test_insufficient_supports_are_rejected():
    with pytest.raises(ProblemValidationError) as info:
        problem_from_dict(cantilever_dict(supports=[{"where": {"point": [0, 0]}}]))
    assert info.value.field == "supports"


def test_selectors():
    dims = GridDims(4, 2)
    assert select_nodes(dims, "left").tolist() == [0, 5, 10]
    assert select_nodes(dims, {"point": [4, 2]}).tolist() == [14]
    assert select_nodes(dims, {"relative": [1.0, 0.5]}).tolist() == [9]
    assert select_nodes(dims, {"corners": "bottom"}).tolist() == [0, 4]
    assert select_nodes(dims, {"box": [[1, 0], [2, 0]]}).tolist() == [1, 2]
    with pytest.raises(ProblemValidationError):
        select_nodes(dims, "front")
    with pytest.raises(ProblemValidationError):
        select_nodes(dims, {"point": [5, 0]})


def test_total_load_is_distributed_consistently():
    dims = GridDims(4, 2)
    lc = build_load_case(dims, [{"where": "left"}],
                         [{"where": "top", "component": "y", "magnitude": -1.0, "mode": "total"}])
    assert lc.load_values.sum() == pytest.approx(-1.0)
    assert np.allclose(lc.load_values, [-0.125, -0.25, -0.25, -0.25, -0.125])


def test_saved_problem_loads_back(tmp_path):
    spec = load_problem("mbb-half", {"overhang_angle": 50})
    path = tmp_path / "mbb.json"
    save_problem(spec, str(path))
    assert json.loads(path.read_text())["overhang_angle"] == 50.0
    again = load_problem(str(path))
    assert again.directions == spec.directions
    assert again.overhang_angle == 50.0
    assert again.schedule == spec.schedule


def test_initial_noise_is_a_schedule_setting():
    spec = load_problem("beam", {"seed": 7, "schedule": {"initial_noise": 0.0}})
    assert spec.seed == 7
    assert spec.schedule.initial_noise == 0.0
    assert load_problem("beam").schedule.initial_noise == 0.01
    with pytest.raises(ProblemValidationError) as info:
        load_problem("beam", {"schedule": {"initial_noise": 0.7}})
    assert info.value.field == "schedule"
