import numpy as np
import pytest

from grid import RHO_MIN, DensityField, GridDims
from problem import problem_from_dict

FAST_SCHEDULE = {
    "coarse_max_iters": 40,
    "eps_init": 0.5,
    "eps_interval": 2,
    "beta_max": 4.0,
    "beta_interval": 8,
    "strict_trigger": 5,
    "min_phase_iters": 3,
    "max_removal_fraction": 0.5,
    "max_iters": 400,
}


def cantilever_dict(dims=(20, 10), **fields):
    """Raw problem dict of a small cantilever clamped left, loaded mid-right."""
    point = [1.0, 0.5] if len(dims) == 2 else [1.0, 0.5, 0.5]
    data = {
        "name": "tiny-cantilever",
        "dims": list(dims),
        "volume_fraction": 0.5,
        "supports": [{"where": "left", "components": "all"}],
        "loads": [{"where": {"relative": point}, "component": "y", "magnitude": -1.0}],
    }
    data.update(fields)
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_problem():
    return problem_from_dict(cantilever_dict(schedule=dict(FAST_SCHEDULE), directions=["+y"]))


@pytest.fixture
def random_field(rng):
    def make(dims: GridDims, passive_fraction: float = 0.0) -> DensityField:
        passive = rng.random(dims.count) < passive_fraction if passive_fraction else None
        return DensityField(dims, RHO_MIN + (1 - RHO_MIN) * rng.random(dims.count), passive)
    return make
