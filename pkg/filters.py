#!/usr/bin/env python3

# filters.py
"""Cone-weight density filter and tanh Heaviside projection."""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from grid import RHO_MIN, DensityField, GridDims

logger = logging.getLogger(__name__)


class FilterWeights:
    """
    Per-element neighbor weights w(e,i) = max(0, r_min - dist(e, i)), stored
    as a symmetric sparse matrix H together with the row sums Hs.

    Boundary elements normalize by their truncated row sums.
    """

    def __init__(self, dims: GridDims, rmin: float):
        if not rmin > 0:
            raise ValueError(f"Filter radius must be positive, got {rmin}")
        self.dims = dims
        self.radius = float(rmin)
        self._repr_string = f"{self.__class__.__name__}(dims={dims}, rmin={rmin:g})"
        reach = int(np.ceil(rmin)) - 1
        zreach = reach if dims.dim == 3 else 0
        k, j, i = np.meshgrid(np.arange(dims.nz), np.arange(dims.ny), np.arange(dims.nx), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        rows, cols, vals = [], [], []
        for dz in range(-zreach, zreach + 1):
            for dy in range(-reach, reach + 1):
                for dx in range(-reach, reach + 1):
                    weight = rmin - np.sqrt(dx * dx + dy * dy + dz * dz)
                    if weight <= 0:
                        continue
                    ii, jj, kk = i + dx, j + dy, k + dz
                    inside = ((ii >= 0) & (ii < dims.nx) & (jj >= 0) & (jj < dims.ny)
                              & (kk >= 0) & (kk < dims.nz))
                    rows.append(np.flatnonzero(inside))
                    cols.append(ii[inside] + dims.nx * (jj[inside] + dims.ny * kk[inside]))
                    vals.append(np.full(int(inside.sum()), weight))
        self.H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(dims.count, dims.count))
        self.Hs = np.asarray(self.H.sum(axis=1)).ravel()

    def __repr__(self) -> str:
        return self._repr_string

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (self.H @ values) / self.Hs

    def apply_transpose(self, values: np.ndarray) -> np.ndarray:
        return self.H.T @ (values / self.Hs)


@lru_cache(maxsize=16)
def filter_weights(dims: GridDims, rmin: float) -> FilterWeights:
    return FilterWeights(dims, rmin)


@dataclass(frozen=True)
class ProjectionParams:
    beta: float = 0.0
    eta: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"Projection sharpness must be finite and >= 0, got {self.beta}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"Projection threshold must lie in [0, 1], got {self.eta}")


def density_filter(x: DensityField, w: FilterWeights) -> DensityField:
    values = w.apply(x.values)
    values[x.passive] = RHO_MIN
    return x.with_values(values)


def project(values: np.ndarray, pp: ProjectionParams) -> np.ndarray:
    """(tanh(b*eta) + tanh(b*(x - eta))) / (tanh(b*eta) + tanh(b*(1 - eta)))"""
    values = np.asarray(values, dtype=float)
    if pp.beta == 0:
        return values.copy()
    b, eta = pp.beta, pp.eta
    return (np.tanh(b * eta) + np.tanh(b * (values - eta))) / (np.tanh(b * eta) + np.tanh(b * (1 - eta)))


def project_derivative(values: np.ndarray, pp: ProjectionParams) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if pp.beta == 0:
        return np.ones_like(values)
    b, eta = pp.beta, pp.eta
    return b * (1 - np.tanh(b * (values - eta)) ** 2) / (np.tanh(b * eta) + np.tanh(b * (1 - eta)))


def _to_unit(values: np.ndarray) -> np.ndarray:
    return (values - RHO_MIN) / (1 - RHO_MIN)


def heaviside_project(x_tilde: DensityField, pp: ProjectionParams) -> DensityField:
    if pp.beta == 0:
        return x_tilde
    values = RHO_MIN + (1 - RHO_MIN) * project(_to_unit(x_tilde.values), pp)
    values[x_tilde.passive] = RHO_MIN
    return x_tilde.with_values(values)


def physical_density(x: DensityField, w: FilterWeights, pp: ProjectionParams) -> Tuple[DensityField, DensityField]:
    """
    Filter then project. Filtered densities in [RHO_MIN, 1] are mapped onto
    [0, 1] before projection and back afterwards, so physical densities keep
    the RHO_MIN floor.

    Returns:
        (x_tilde, x_bar)
    """
    x_tilde = density_filter(x, w)
    return x_tilde, heaviside_project(x_tilde, pp)


def chain_sensitivity(g: np.ndarray, x_tilde: DensityField, pp: ProjectionParams, w: FilterWeights) -> np.ndarray:
    """Gradient w.r.t. raw design variables: W^T diag(dx_bar/dx_tilde) g."""
    slope = project_derivative(_to_unit(x_tilde.values), pp)
    local = np.asarray(g, dtype=float) * slope
    local[x_tilde.passive] = 0.0
    return w.apply_transpose(local)
