#!/usr/bin/env python3

# optimizer.py
"""
Staged self-supporting compliance minimization.

Stages of run_selfsupporting:
    coarse        plain SIMP with the volume constraint until M_nd < bw_trigger
    constrained   U(rho) <= eps per build direction, eps decreasing to eps_final
    black-white   eps held at eps_final, projection sharpness beta doubling to beta_max
    strict        unsupported elements of the binarized field set to RHO_MIN

The problem object only needs the attributes read by _Context: dims,
volume_fraction, filter_radius, overhang_angle, penalization, material,
detection, schedule, mma, solver, seed, directions, candidates, load_case()
and passive_mask().

Both runs start from the volume fraction plus a uniform perturbation of
amplitude schedule.initial_noise drawn from a generator seeded with the
problem seed, so a reference and a self-supporting run of one problem share
their initial design.
"""
import csv
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fem import compliance_sensitivity, element_stiffness, solve
from filters import ProjectionParams, chain_sensitivity, filter_weights, physical_density
from grid import BUILD_UP, RHO_MIN, DensityField, Direction
from mma import MmaParams, MmaState, MmaSubproblemError, OptimizationError, mma_step
from support import (DEFAULT_TAU, FINAL_TAU, DetectionParams, OverhangKernel, build_kernel,
                     constraint_sensitivity, constraint_value, unsupported_elements)

logger = logging.getLogger(__name__)

__all__ = [
    "MmaParams", "MmaSubproblemError", "OptimizationError", "StrictRemovalError", "DirectionSelectionError",
    "Schedule", "IterationRecord", "OptRun", "measure_nondiscreteness", "binarize", "select_direction",
    "run_reference", "run_selfsupporting", "compliance_ratio", "write_history", "read_history",
]


class StrictRemovalError(OptimizationError):
    """Raised when strict removal would delete more material than allowed."""
    pass


class DirectionSelectionError(OptimizationError):
    """Raised when no build direction can be selected."""
    pass


@dataclass(frozen=True)
class Schedule:
    eps_init: Optional[float] = None
    eps_final: float = 1e-3
    eps_decay: float = 0.7
    eps_interval: int = 5
    bw_trigger: float = 0.36
    beta_init: float = 1.0
    beta_max: float = 64.0
    beta_interval: int = 30
    strict_trigger: int = 15
    max_removal_fraction: float = 0.005
    max_iters: int = 800
    coarse_max_iters: int = 150
    change_tol: float = 0.01
    min_phase_iters: int = 5
    initial_noise: float = 0.01

    def __post_init__(self):
        if not self.eps_final > 0:
            raise ValueError(f"eps_final must be positive, got {self.eps_final}")
        if self.eps_init is not None and self.eps_init < self.eps_final:
            raise ValueError("eps_init must not be below eps_final")
        if not 0 < self.eps_decay < 1:
            raise ValueError(f"eps_decay must lie in (0, 1), got {self.eps_decay}")
        if not 0 < self.bw_trigger < 1:
            raise ValueError(f"bw_trigger must lie in (0, 1), got {self.bw_trigger}")
        if not 0 < self.beta_init <= self.beta_max:
            raise ValueError("beta_init must lie in (0, beta_max]")
        if not 0 <= self.initial_noise < 0.5:
            raise ValueError(f"initial_noise must lie in [0, 0.5), got {self.initial_noise}")
        for name in ("eps_interval", "beta_interval", "strict_trigger", "max_iters",
                     "coarse_max_iters", "min_phase_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


HISTORY_COLUMNS = ("iter", "stage", "compliance", "vol_frac", "U", "unsupported", "m_nd", "eps", "beta", "change")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    stage: str
    compliance: float
    volume_fraction: float
    U_value: float
    unsupported_count: int
    m_nd: float
    eps: float
    beta: float
    change: float

    def as_row(self) -> List[str]:
        numbers = [self.compliance, self.volume_fraction, self.U_value]
        tail = [self.m_nd, self.eps, self.beta, self.change]
        return ([str(self.iter), self.stage] + [repr(float(v)) for v in numbers]
                + [str(int(self.unsupported_count))] + [repr(float(v)) for v in tail])

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "IterationRecord":
        return cls(int(row["iter"]), row["stage"], float(row["compliance"]), float(row["vol_frac"]),
                   float(row["U"]), int(row["unsupported"]), float(row["m_nd"]), float(row["eps"]),
                   float(row["beta"]), float(row["change"]))


@dataclass
class OptRun:
    history: List[IterationRecord]
    field: DensityField
    directions: Tuple[Direction, ...]
    compliance: float
    volume_fraction: float
    unsupported_count: int
    c_ref: Optional[float] = None
    reference_unsupported: Optional[int] = None
    removed: int = 0
    coarse_iterations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.history)

    def feasible(self, target: float) -> bool:
        return self.unsupported_count == 0 and self.volume_fraction <= target + 1e-3


def measure_nondiscreteness(field: DensityField) -> float:
    """Mean of 4 rho (1 - rho) over the non-passive elements, as a fraction."""
    rho = field.values[field.active]
    if rho.size == 0:
        return 0.0
    return float(np.mean(4.0 * rho * (1.0 - rho)))


def binarize(field: DensityField, threshold: float = FINAL_TAU) -> DensityField:
    values = np.where(field.values >= threshold, 1.0, RHO_MIN)
    values[field.passive] = RHO_MIN
    return field.with_values(values)


def select_direction(coarse: DensityField, candidates: Sequence[Direction], kernel: OverhangKernel,
                     tau: float = DEFAULT_TAU) -> Direction:
    """Candidate with the fewest unsupported elements; ties keep candidate order."""
    if not candidates:
        raise DirectionSelectionError("No candidate build directions given")
    best, best_count = None, None
    for direction in candidates:
        count = len(unsupported_elements(coarse, kernel, DetectionParams(tau, direction)))
        logger.info(f"Direction {direction}: {count} unsupported elements")
        if best_count is None or count < best_count:
            best, best_count = direction, count
    logger.info(f"Selected build direction {best} ({best_count} unsupported)")
    return best


class _Context:
    """Everything one optimization run reuses between iterations."""

    def __init__(self, problem, on_iteration: Optional[Callable[[IterationRecord], None]] = None):
        self.problem = problem
        self.dims = problem.dims
        self.passive = np.asarray(problem.passive_mask(), dtype=bool)
        self.active = ~self.passive
        self.n_active = int(self.active.sum())
        if self.n_active == 0:
            raise OptimizationError("Every element is passive")
        self.target = problem.volume_fraction
        self.p = problem.penalization
        self.ke = element_stiffness(self.dims.dim, problem.material.E, problem.material.nu)
        self.lc = problem.load_case()
        self.weights = filter_weights(self.dims, problem.filter_radius)
        self.kernel = build_kernel(problem.overhang_angle, problem.detection.layers, self.dims.dim)
        self.tau = problem.detection.tau
        self.schedule: Schedule = problem.schedule
        self.mma_params: MmaParams = problem.mma
        self.mma_state = MmaState()
        self.history: List[IterationRecord] = []
        self.on_iteration = on_iteration
        self.c0: Optional[float] = None
        self.u_last: Optional[np.ndarray] = None

    def initial_design(self) -> np.ndarray:
        rng = np.random.default_rng(self.problem.seed)
        noise = self.schedule.initial_noise * (2.0 * rng.random(self.n_active) - 1.0)
        return np.clip(self.target + noise, RHO_MIN, 1.0)

    def design(self, xa: np.ndarray) -> DensityField:
        values = np.full(self.dims.count, RHO_MIN)
        values[self.active] = xa
        return DensityField(self.dims, values, self.passive)

    def physical(self, xa: np.ndarray, pp: ProjectionParams) -> Tuple[DensityField, DensityField]:
        return physical_density(self.design(xa), self.weights, pp)

    def compliance(self, x_bar: DensityField) -> float:
        return solve(x_bar, self.p, self.lc, self.ke, self.problem.solver).compliance

    def iterate(self, xa: np.ndarray, pp: ProjectionParams, stage: str,
                directions: Sequence[Direction] = (), eps: Optional[float] = None) -> Tuple[np.ndarray, IterationRecord]:
        """Evaluate the design, take one MMA step and record the evaluated state."""
        x_tilde, x_bar = self.physical(xa, pp)
        state = solve(x_bar, self.p, self.lc, self.ke, self.problem.solver, x0=self.u_last)
        self.u_last = state.displacements
        c = state.compliance
        if self.c0 is None:
            self.c0 = c if c > 0 else 1.0
        dc = compliance_sensitivity(x_bar, self.p, state, self.ke)
        df0 = chain_sensitivity(dc / self.c0, x_tilde, pp, self.weights)[self.active]

        vf = x_bar.volume_fraction()
        dv = np.where(self.active, 1.0 / (self.n_active * self.target), 0.0)
        g = [vf / self.target - 1.0]
        dg = [chain_sensitivity(dv, x_tilde, pp, self.weights)[self.active]]

        n_solid = max(1, int(np.count_nonzero(x_bar.values[self.active] >= self.tau)))
        U_total = 0.0
        flagged = set()
        for direction in directions:
            idx = unsupported_elements(x_bar, self.kernel, DetectionParams(self.tau, direction))
            U = constraint_value(x_bar, idx)
            U_total += U
            flagged.update(idx.tolist())
            if eps is not None:
                g.append((U - eps) / n_solid)
                dU = constraint_sensitivity(x_bar, idx) / n_solid
                dg.append(chain_sensitivity(dU, x_tilde, pp, self.weights)[self.active])

        try:
            xa_new = mma_step(xa, c / self.c0, df0, np.array(g), np.vstack(dg), RHO_MIN, 1.0,
                              self.mma_params, self.mma_state)
        except MmaSubproblemError as e:
            e.history = list(self.history)
            raise
        change = float(np.max(np.abs(xa_new - xa)))
        record = IterationRecord(len(self.history) + 1, stage, c, vf, U_total, len(flagged),
                                 measure_nondiscreteness(x_bar), eps if eps is not None else float("nan"),
                                 pp.beta, change)
        self.history.append(record)
        logger.debug(f"{record.iter:4d} {stage:11s} c={c:.4f} vf={vf:.4f} U={U_total:.4g} "
                     f"#U={len(flagged)} mnd={record.m_nd:.3f} beta={pp.beta:g} change={change:.4f}")
        if self.on_iteration is not None:
            self.on_iteration(record)
        return xa_new, record

    def out_of_iterations(self) -> bool:
        return len(self.history) >= self.schedule.max_iters


def _coarse_stage(ctx: _Context, xa: np.ndarray) -> Tuple[np.ndarray, int]:
    sched = ctx.schedule
    plain = ProjectionParams()
    for it in range(1, sched.coarse_max_iters + 1):
        if ctx.out_of_iterations():
            raise OptimizationError(f"Coarse run still gray after {sched.max_iters} iterations", ctx.history)
        xa, record = ctx.iterate(xa, plain, "coarse")
        if record.m_nd < sched.bw_trigger:
            logger.info(f"Coarse structure after {it} iterations (M_nd {100 * record.m_nd:.1f}%)")
            return xa, it
    logger.warning(f"Coarse run stopped at its {sched.coarse_max_iters} iteration cap "
                   f"before M_nd fell below {sched.bw_trigger}")
    return xa, sched.coarse_max_iters


def _black_white_stage(ctx: _Context, xa: np.ndarray, directions: Sequence[Direction] = (),
                       eps: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    Beta continuation; returns once beta is capped and the design has settled.

    Raises:
        OptimizationError: iteration cap reached first
    """
    sched = ctx.schedule
    beta = sched.beta_init
    since_beta = 0
    stall = 0
    last_count = None
    logger.info(f"Black-white phase from beta {beta:g}")
    while True:
        if ctx.out_of_iterations():
            raise OptimizationError(f"Black-white phase unfinished after {sched.max_iters} iterations "
                                    f"(beta {beta:g} of {sched.beta_max:g})", ctx.history)
        xa, record = ctx.iterate(xa, ProjectionParams(beta), "black-white", directions, eps)
        since_beta += 1
        settled = since_beta >= sched.min_phase_iters and record.change < sched.change_tol
        if beta < sched.beta_max:
            if since_beta >= sched.beta_interval or settled:
                beta = min(2 * beta, sched.beta_max)
                since_beta = 0
                logger.info(f"Projection sharpness raised to {beta:g}")
            continue
        stall = stall + 1 if record.unsupported_count == last_count else 0
        last_count = record.unsupported_count
        if settled or stall >= sched.strict_trigger or (not directions and since_beta >= sched.beta_interval):
            return xa, beta


def _strict_removal(ctx: _Context, x_bar: DensityField, directions: Sequence[Direction]) -> Tuple[DensityField, int]:
    """
    Repeatedly delete unsupported elements of the binarized field until none
    remain under any direction. Removed elements become RHO_MIN in x_bar too.

    Raises:
        StrictRemovalError: more than max_removal_fraction of the solid elements removed
    """
    solid = binarize(x_bar)
    n_solid = int(np.count_nonzero(solid.values >= FINAL_TAU))
    values = np.array(x_bar.values)
    bits = np.array(solid.values)
    removed = 0
    while True:
        current = solid.with_values(bits)
        found = set()
        for direction in directions:
            found.update(unsupported_elements(current, ctx.kernel, DetectionParams(FINAL_TAU, direction)).tolist())
        if not found:
            break
        idx = np.fromiter(sorted(found), dtype=int)
        bits[idx] = RHO_MIN
        values[idx] = RHO_MIN
        removed += idx.size
    limit = ctx.schedule.max_removal_fraction * max(n_solid, 1)
    if removed > limit:
        raise StrictRemovalError(f"Strict removal deleted {removed} of {n_solid} solid elements "
                                 f"(limit {limit:.0f})", ctx.history)
    logger.info(f"Strict removal deleted {removed} element(s)")
    return x_bar.with_values(values), removed


def _count_unsupported(ctx: _Context, field: DensityField, directions: Sequence[Direction],
                       method: str = "convolution") -> int:
    solid = binarize(field)
    found = set()
    for direction in directions:
        found.update(unsupported_elements(solid, ctx.kernel, DetectionParams(FINAL_TAU, direction), method).tolist())
    return len(found)


def run_reference(problem, directions: Optional[Sequence[Direction]] = None,
                  on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> OptRun:
    """
    Standard SIMP run with the volume constraint only, using the same filter,
    projection continuation and MMA settings as the self-supporting run.
    Unsupported elements are counted under directions (pinned, else +y).
    """
    ctx = _Context(problem, on_iteration)
    directions = tuple(directions or problem.directions or (BUILD_UP,))
    xa = ctx.initial_design()
    xa, coarse_its = _coarse_stage(ctx, xa)
    xa, beta = _black_white_stage(ctx, xa)
    _, x_bar = ctx.physical(xa, ProjectionParams(beta))
    c_ref = ctx.compliance(x_bar)
    count = _count_unsupported(ctx, x_bar, directions)
    logger.info(f"Reference compliance {c_ref:.4f}, {count} unsupported under "
                f"{', '.join(str(d) for d in directions)}")
    return OptRun(ctx.history, x_bar, directions, c_ref, x_bar.volume_fraction(), count,
                  c_ref=c_ref, reference_unsupported=count, coarse_iterations=coarse_its)


def run_selfsupporting(problem, on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> OptRun:
    """
    Raises:
        OptimizationError: iteration cap reached in any stage
        DirectionSelectionError: empty candidate list
        StrictRemovalError: final removal exceeds its bound
    """
    ctx = _Context(problem, on_iteration)
    sched = ctx.schedule
    xa = ctx.initial_design()
    xa, coarse_its = _coarse_stage(ctx, xa)

    if problem.directions:
        directions = tuple(problem.directions)
        logger.info(f"Build directions pinned to {', '.join(str(d) for d in directions)}")
    else:
        _, coarse = ctx.physical(xa, ProjectionParams())
        directions = (select_direction(coarse, problem.candidates, ctx.kernel, ctx.tau),)

    _, x_bar = ctx.physical(xa, ProjectionParams())
    U0 = max(constraint_value(x_bar, unsupported_elements(x_bar, ctx.kernel, DetectionParams(ctx.tau, d)))
             for d in directions)
    eps = sched.eps_init if sched.eps_init is not None else max(U0, sched.eps_final)
    logger.info(f"Self-supporting constraint active, eps {eps:.4g} -> {sched.eps_final:g}")
    k = 0
    while eps > sched.eps_final:
        if ctx.out_of_iterations():
            raise OptimizationError(f"No black-white phase within {sched.max_iters} iterations "
                                    f"(eps still {eps:.4g})", ctx.history)
        xa, _ = ctx.iterate(xa, ProjectionParams(), "constrained", directions, eps)
        k += 1
        if k % sched.eps_interval == 0:
            eps = max(eps * sched.eps_decay, sched.eps_final)

    xa, beta = _black_white_stage(ctx, xa, directions, sched.eps_final)
    _, x_bar = ctx.physical(xa, ProjectionParams(beta))
    final, removed = _strict_removal(ctx, x_bar, directions)
    remaining = _count_unsupported(ctx, final, directions, method="enumeration")
    if remaining:
        raise OptimizationError(f"{remaining} unsupported elements left after strict removal", ctx.history)
    c = ctx.compliance(final)
    vf = final.volume_fraction()
    logger.info(f"Self-supporting compliance {c:.4f}, volume fraction {vf:.4f}, "
                f"{len(ctx.history)} iterations")
    return OptRun(ctx.history, final, directions, c, vf, 0, removed=removed, coarse_iterations=coarse_its)


def compliance_ratio(run: OptRun) -> float:
    if run.c_ref is None or run.c_ref <= 0:
        raise OptimizationError("Compliance ratio needs a positive reference compliance", run.history)
    return run.compliance / run.c_ref


class HistoryWriter:
    """Appends iteration records to a CSV file as they are produced."""

    def __init__(self, path):
        self._handle = open(path, "w", newline="")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(HISTORY_COLUMNS)

    def __call__(self, record: IterationRecord) -> None:
        self._writer.writerow(record.as_row())
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()


def write_history(history: Sequence[IterationRecord], path) -> None:
    writer = HistoryWriter(path)
    try:
        for record in history:
            writer(record)
    finally:
        writer.close()


def read_history(path) -> List[IterationRecord]:
    with open(path, newline="") as f:
        return [IterationRecord.from_row(row) for row in csv.DictReader(f)]
