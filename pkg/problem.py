#!/usr/bin/env python3

# problem.py
"""
Problem definitions: JSON problem files, named presets and the boundary
selectors that turn them into fixed dofs, loads and passive regions.

A problem file may name a preset in "extends"; its fields are merged over
the preset (objects merge key by key, everything else replaces).
"""
import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fem import FEError, LoadCase, mesh_for
from grid import (AXES, Direction, GridDims, GridError, box_mask, circle_mask, combine_masks,
                  default_candidates, sphere_mask)
from mma import MmaParams
from optimizer import Schedule
from support import DEFAULT_TAU
from validators import validators

logger = logging.getLogger(__name__)

SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PRESET_DIR = os.path.join(SCRIPT_DIR, "presets")

FACES = {
    "left": (0, 0), "right": (0, 1),
    "bottom": (1, 0), "top": (1, 1),
    "back": (2, 0), "front": (2, 1),
}

KNOWN_FIELDS = {
    "name", "description", "extends", "dims", "volume_fraction", "filter_radius", "overhang_angle",
    "penalization", "material", "supports", "loads", "passive", "directions", "candidates",
    "detection", "schedule", "mma", "solver", "seed",
}


class ProblemError(Exception):
    """Base class for problem definition errors."""
    pass


class ProblemParseError(ProblemError):
    """Raised when a problem file is not valid JSON."""

    def __init__(self, path: str, line: int, column: int, message: str):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = path
        self.line = line
        self.column = column


class ProblemValidationError(ProblemError):
    """Raised when a problem field holds an invalid value."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Material:
    E: float = 1.0
    nu: float = 0.3


@dataclass(frozen=True)
class DetectionSettings:
    tau: float = DEFAULT_TAU
    layers: Optional[int] = None


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dims: GridDims
    volume_fraction: float
    supports: Tuple[Dict[str, Any], ...]
    loads: Tuple[Dict[str, Any], ...]
    filter_radius: float = 1.5
    overhang_angle: float = 45.0
    penalization: float = 3.0
    material: Material = field(default_factory=Material)
    passive: Tuple[Dict[str, Any], ...] = ()
    directions: Optional[Tuple[Direction, ...]] = None
    candidates: Tuple[Direction, ...] = ()
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    schedule: Schedule = field(default_factory=Schedule)
    mma: MmaParams = field(default_factory=MmaParams)
    solver: str = "auto"
    seed: int = 0
    description: str = ""

    def load_case(self) -> LoadCase:
        return build_load_case(self.dims, self.supports, self.loads)

    def passive_mask(self) -> np.ndarray:
        return build_passive_mask(self.dims, self.passive)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "dims": self.dims.as_list(),
            "volume_fraction": self.volume_fraction,
            "filter_radius": self.filter_radius,
            "overhang_angle": self.overhang_angle,
            "penalization": self.penalization,
            "material": asdict(self.material),
            "supports": [copy.deepcopy(s) for s in self.supports],
            "loads": [copy.deepcopy(l) for l in self.loads],
            "passive": [copy.deepcopy(p) for p in self.passive],
            "directions": "auto" if self.directions is None else [str(d) for d in self.directions],
            "candidates": [str(d) for d in self.candidates],
            "detection": asdict(self.detection),
            "schedule": asdict(self.schedule),
            "mma": asdict(self.mma),
            "solver": self.solver,
            "seed": self.seed,
        }


# Boundary selectors

def _node_grid(dims: GridDims) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    k, j, i = np.meshgrid(np.arange(dims.nz + 1 if dims.dim == 3 else 1), np.arange(dims.ny + 1),
                          np.arange(dims.nx + 1), indexing="ij")
    return i.ravel(), j.ravel(), k.ravel()


def _extent(dims: GridDims) -> List[int]:
    return [dims.nx, dims.ny, dims.nz if dims.dim == 3 else 0]


def _face_nodes(dims: GridDims, face: str) -> np.ndarray:
    if face not in FACES:
        raise ProblemValidationError("where", f"unknown face '{face}', expected one of {', '.join(FACES)}")
    axis, side = FACES[face]
    if axis == 2 and dims.dim == 2:
        raise ProblemValidationError("where", f"face '{face}' needs a 3D grid")
    coords = _node_grid(dims)
    return np.flatnonzero(coords[axis] == side * _extent(dims)[axis])


def _point_node(dims: GridDims, point: Sequence[float], relative: bool) -> np.ndarray:
    extent = _extent(dims)
    if len(point) != dims.dim:
        raise ProblemValidationError("where", f"point {list(point)} needs {dims.dim} coordinates")
    ijk = []
    for axis, value in enumerate(point):
        if relative:
            if not 0 <= value <= 1:
                raise ProblemValidationError("where", f"relative coordinate {value} outside [0, 1]")
            value = int(round(value * extent[axis]))
        if int(value) != value or not 0 <= value <= extent[axis]:
            raise ProblemValidationError("where", f"node coordinate {value} outside [0, {extent[axis]}]")
        ijk.append(int(value))
    return np.array([mesh_for(dims).node_index(*ijk)])


def _box_nodes(dims: GridDims, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    coords = _node_grid(dims)
    inside = np.ones(coords[0].size, dtype=bool)
    for axis in range(dims.dim):
        inside &= (coords[axis] >= lower[axis]) & (coords[axis] <= upper[axis])
    nodes = np.flatnonzero(inside)
    if nodes.size == 0:
        raise ProblemValidationError("where", f"box {list(lower)}..{list(upper)} holds no nodes")
    return nodes


def _corner_nodes(dims: GridDims, face: str) -> np.ndarray:
    nodes = _face_nodes(dims, face)
    coords = _node_grid(dims)
    extent = _extent(dims)
    corner = np.ones(nodes.size, dtype=bool)
    for axis in range(dims.dim):
        c = coords[axis][nodes]
        corner &= (c == 0) | (c == extent[axis])
    return nodes[corner]


def select_nodes(dims: GridDims, where: Any) -> np.ndarray:
    """Resolve a selector to sorted node indices."""
    if isinstance(where, str):
        return _face_nodes(dims, where)
    if isinstance(where, dict) and len(where) == 1:
        kind, arg = next(iter(where.items()))
        if kind == "point":
            return _point_node(dims, arg, relative=False)
        if kind == "relative":
            return _point_node(dims, arg, relative=True)
        if kind == "box" and len(arg) == 2:
            return _box_nodes(dims, arg[0], arg[1])
        if kind == "corners":
            return _corner_nodes(dims, arg)
    raise ProblemValidationError("where", f"unrecognized selector {where!r}")


def _components(spec: Any, dim: int) -> List[int]:
    names = AXES[:dim]
    if spec in (None, "all"):
        return list(range(dim))
    if isinstance(spec, str):
        spec = [spec]
    out = []
    for name in spec:
        if name not in names:
            raise ProblemValidationError("components", f"'{name}' is not one of {', '.join(names)}")
        out.append(names.index(name))
    return out


def _consistent_weights(dims: GridDims, nodes: np.ndarray) -> np.ndarray:
    """Trapezoid weights of linear elements over a rectangular node patch, summing to one."""
    coords = _node_grid(dims)
    weights = np.ones(nodes.size)
    for axis in range(dims.dim):
        c = coords[axis][nodes]
        if c.min() != c.max():
            weights[(c == c.min()) | (c == c.max())] *= 0.5
    return weights / weights.sum()


def build_load_case(dims: GridDims, supports: Sequence[Dict[str, Any]], loads: Sequence[Dict[str, Any]]) -> LoadCase:
    dim = dims.dim
    fixed = []
    for support in supports:
        nodes = select_nodes(dims, support.get("where"))
        for comp in _components(support.get("components", "all"), dim):
            fixed.append(nodes * dim + comp)
    values: Dict[int, float] = {}
    for load in loads:
        nodes = select_nodes(dims, load.get("where"))
        comp = _components(load.get("component", "y"), dim)
        if len(comp) != 1:
            raise ProblemValidationError("loads", "each load acts along exactly one component")
        magnitude = float(load.get("magnitude", -1.0))
        mode = load.get("mode", "nodal")
        if mode == "nodal":
            share = np.full(nodes.size, magnitude)
        elif mode == "total":
            share = magnitude * _consistent_weights(dims, nodes)
        else:
            raise ProblemValidationError("loads", f"unknown load mode '{mode}', expected nodal or total")
        for node, f in zip(nodes.tolist(), share.tolist()):
            dof = node * dim + comp[0]
            values[dof] = values.get(dof, 0.0) + f
    fixed_dofs = np.concatenate(fixed) if fixed else np.zeros(0, dtype=int)
    return LoadCase.from_loads(fixed_dofs, values)


def build_passive_mask(dims: GridDims, shapes: Sequence[Dict[str, Any]]) -> np.ndarray:
    masks = []
    for shape in shapes:
        kind = shape.get("shape")
        try:
            if kind == "circle":
                masks.append(circle_mask(dims, shape["center"], shape["radius"]))
            elif kind == "sphere":
                masks.append(sphere_mask(dims, shape["center"], shape["radius"]))
            elif kind == "box":
                masks.append(box_mask(dims, shape["lower"], shape["upper"]))
            else:
                raise ProblemValidationError("passive", f"unknown shape '{kind}'")
        except KeyError as e:
            raise ProblemValidationError("passive", f"{kind} is missing {e}")
    return combine_masks(dims, masks)


# Loading

def preset_path(name: str) -> str:
    return os.path.join(PRESET_DIR, f"{name}.json")


def _read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ProblemError(f"Cannot read problem file {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemParseError(path, e.lineno, e.colno, e.msg)
    if not isinstance(data, dict):
        raise ProblemParseError(path, 1, 1, "top level must be a JSON object")
    return data


def merge_config(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_raw(source: str, _seen: Optional[List[str]] = None) -> Dict[str, Any]:
    """Raw problem dict for a path or preset name with 'extends' chains applied."""
    seen = _seen or []
    path = source if source.endswith(".json") or os.sep in source else preset_path(source)
    if not os.path.exists(path):
        raise ProblemError(f"No problem file or preset named '{source}'")
    if path in seen:
        raise ProblemValidationError("extends", f"cycle through {path}")
    data = _read_json(path)
    data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    parent = data.pop("extends", None)
    if parent is None:
        return data
    base = resolve_raw(parent, seen + [path])
    base.pop("name", None)
    base.pop("description", None)
    return merge_config(base, data)


def _check(field_name: str, validator: str, value: Any) -> None:
    if not validators[validator](value):
        raise ProblemValidationError(field_name, f"{value!r} is not a valid {validator.replace('-', ' ')}")


def _dataclass_from(cls, field_name: str, values: Optional[Dict[str, Any]]):
    values = values or {}
    if not isinstance(values, dict):
        raise ProblemValidationError(field_name, "must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ProblemValidationError(field_name, f"unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ProblemValidationError(field_name, str(e))


def _directions(field_name: str, values: Sequence[str], dims: GridDims) -> Tuple[Direction, ...]:
    out = []
    for text in values:
        _check(field_name, "direction", text)
        direction = Direction.parse(text)
        try:
            direction.check(dims)
        except GridError as e:
            raise ProblemValidationError(field_name, str(e))
        out.append(direction)
    return tuple(out)


def problem_from_dict(data: Dict[str, Any]) -> ProblemSpec:
    """
    Validate a raw problem dict and apply defaults.

    Raises:
        ProblemValidationError: names the first offending field
    """
    unknown = sorted(set(data) - KNOWN_FIELDS)
    if unknown:
        raise ProblemValidationError(unknown[0], "unknown field")
    for required in ("dims", "volume_fraction", "supports", "loads"):
        if required not in data:
            raise ProblemValidationError(required, "missing")

    raw_dims = data["dims"]
    _check("dims", "dims", raw_dims)
    dims = GridDims(*raw_dims) if isinstance(raw_dims, list) else GridDims(*map(int, raw_dims.lower().split("x")))

    _check("volume_fraction", "volume-fraction", data["volume_fraction"])
    filter_radius = data.get("filter_radius", 1.5)
    _check("filter_radius", "filter-radius", filter_radius)
    angle = data.get("overhang_angle", 45.0)
    _check("overhang_angle", "overhang-angle", angle)
    penalization = data.get("penalization", 3.0)
    _check("penalization", "penalization", penalization)
    solver = data.get("solver", "auto")
    _check("solver", "solver", solver)
    seed = data.get("seed", 0)
    _check("seed", "non-negative-int", seed)

    material = _dataclass_from(Material, "material", data.get("material"))
    if not material.E > 0 or not 0 <= material.nu < 0.5:
        raise ProblemValidationError("material", f"needs E > 0 and 0 <= nu < 0.5, got {material}")
    detection = _dataclass_from(DetectionSettings, "detection", data.get("detection"))
    _check("detection", "threshold", detection.tau)
    if detection.layers is not None:
        _check("detection", "positive-int", detection.layers)

    raw_directions = data.get("directions", "auto")
    if raw_directions == "auto":
        directions = None
    elif isinstance(raw_directions, list) and raw_directions:
        directions = _directions("directions", raw_directions, dims)
    else:
        raise ProblemValidationError("directions", "must be \"auto\" or a non-empty list")
    raw_candidates = data.get("candidates")
    candidates = (_directions("candidates", raw_candidates, dims) if raw_candidates is not None
                  else tuple(default_candidates(dims)))

    for name in ("supports", "loads", "passive"):
        if not isinstance(data.get(name, []), list):
            raise ProblemValidationError(name, "must be a list")

    spec = ProblemSpec(
        name=str(data.get("name", "problem")),
        description=str(data.get("description", "")),
        dims=dims,
        volume_fraction=float(data["volume_fraction"]),
        supports=tuple(data["supports"]),
        loads=tuple(data["loads"]),
        filter_radius=float(filter_radius),
        overhang_angle=float(angle),
        penalization=float(penalization),
        material=material,
        passive=tuple(data.get("passive", [])),
        directions=directions,
        candidates=candidates,
        detection=detection,
        schedule=_dataclass_from(Schedule, "schedule", data.get("schedule")),
        mma=_dataclass_from(MmaParams, "mma", data.get("mma")),
        solver=solver,
        seed=int(seed),
    )
    try:
        spec.load_case().validate(mesh_for(dims))
    except FEError as e:
        raise ProblemValidationError("supports", str(e))
    if spec.passive_mask().all():
        raise ProblemValidationError("passive", "every element is passive")
    return spec


def load_problem(source: str, overrides: Optional[Dict[str, Any]] = None) -> ProblemSpec:
    """
    Load a problem from a JSON path or a preset name.

    Args:
        source: path ending in .json, or a name under presets/
        overrides: raw fields merged over the file before validation
    """
    data = resolve_raw(source)
    if overrides:
        data = merge_config(data, overrides)
    spec = problem_from_dict(data)
    logger.info(f"Loaded problem '{spec.name}' on {spec.dims}, volume fraction {spec.volume_fraction}")
    return spec


def save_problem(spec: ProblemSpec, path: str) -> None:
    with open(path, "w") as f:
        json.dump(spec.to_dict(), f, indent=2)
