#!/usr/bin/env python3

# runner.py
"""
Run orchestration: executes the reference and/or self-supporting optimization
for a problem, writes the per-run artifacts and returns a RunReport.

Run directory layout:
    history.csv             iteration log of the main run
    history_reference.csv   iteration log of the reference run (mode both)
    summary.csv             one result row
    density.png             final 2D field (field.vtk + field_binary.vtk in 3D)
    reference_*.png/.vtk    reference field (mode both)
    reference_unsupported.png  reference field with unsupported elements in red (2D)
    report.txt
    run.log
"""
import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from tabulate import tabulate

from grid import DensityField
from optimizer import (HistoryWriter, OptimizationError, OptRun, binarize, compliance_ratio,
                       run_reference, run_selfsupporting)
from problem import ProblemSpec, ProblemValidationError
from renderers.density_image import export_density_image
from renderers.report import write_report
from renderers.voxels import export_voxels
from support import FINAL_TAU, DetectionBenchmark, build_kernel, unsupported_by_direction
from validators import RUN_MODES

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

SUMMARY_COLUMNS = ("problem", "mode", "dims", "directions", "c_ref", "compliance", "ratio",
                   "reference_unsupported", "unsupported", "volume_fraction", "iterations",
                   "wall_seconds", "feasible")


@dataclass
class RunReport:
    problem: str
    mode: str
    dims: str
    directions: Tuple[str, ...]
    compliance: float
    volume_fraction: float
    unsupported: int
    iterations: int
    wall_seconds: float
    feasible: bool
    c_ref: Optional[float] = None
    ratio: Optional[float] = None
    reference_unsupported: Optional[int] = None
    artifacts: Dict[str, str] = field(default_factory=dict)

    def as_row(self) -> List[str]:
        def text(value):
            if value is None:
                return ""
            if isinstance(value, float):
                return repr(float(value))
            return str(value)

        return [
            self.problem, self.mode, self.dims, " ".join(self.directions),
            text(self.c_ref), text(self.compliance), text(self.ratio),
            text(self.reference_unsupported), text(self.unsupported),
            text(self.volume_fraction), text(self.iterations),
            text(self.wall_seconds), "1" if self.feasible else "0",
        ]

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "RunReport":
        def optional(value: str, kind: Callable):
            return kind(value) if value != "" else None

        return cls(
            problem=row["problem"],
            mode=row["mode"],
            dims=row["dims"],
            directions=tuple(row["directions"].split()),
            compliance=float(row["compliance"]),
            volume_fraction=float(row["volume_fraction"]),
            unsupported=int(row["unsupported"]),
            iterations=int(row["iterations"]),
            wall_seconds=float(row["wall_seconds"]),
            feasible=row["feasible"] == "1",
            c_ref=optional(row["c_ref"], float),
            ratio=optional(row["ratio"], float),
            reference_unsupported=optional(row["reference_unsupported"], int),
        )


def write_summary(reports: List[RunReport], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for report in reports:
            writer.writerow(report.as_row())


def read_summary(path: str) -> List[RunReport]:
    with open(path, newline="") as f:
        return [RunReport.from_row(row) for row in csv.DictReader(f)]


def report_table(report: RunReport) -> str:
    rows = [
        ["problem", report.problem],
        ["mode", report.mode],
        ["directions", " ".join(report.directions)],
        ["C_ref", "" if report.c_ref is None else f"{report.c_ref:.6g}"],
        ["C", f"{report.compliance:.6g}"],
        ["C/C_ref", "" if report.ratio is None else f"{report.ratio:.4f}"],
        ["volume fraction", f"{report.volume_fraction:.4f}"],
        ["#unsupported", report.unsupported],
        ["iterations", report.iterations],
        ["wall time [s]", f"{report.wall_seconds:.1f}"],
        ["feasible", "yes" if report.feasible else "no"],
    ]
    return tabulate(rows, tablefmt="plain")


def benchmark_table(results: List[DetectionBenchmark]) -> str:
    rows = [[str(r.dims), f"{r.enum_seconds:.4f}", f"{r.conv_seconds:.4f}", f"{r.speedup:.1f}"] for r in results]
    return tabulate(rows, headers=["grid", "enumeration [s]", "batched [s]", "speedup"])


def _tracked(optimize: Callable[..., OptRun], path: str, *args) -> OptRun:
    """Run an optimizer entry point with its history streamed to path."""
    writer = HistoryWriter(path)
    try:
        return optimize(*args, on_iteration=writer)
    except OptimizationError as e:
        e.history_path = path
        logger.error(f"Optimization failed: {e} (history in {path})")
        raise
    finally:
        writer.close()


def export_field(field: DensityField, out_dir: str, prefix: str = "") -> Dict[str, str]:
    """Write density.png for 2D fields, field.vtk and field_binary.vtk for 3D fields."""
    if field.dims.dim == 2:
        path = os.path.join(out_dir, f"{prefix}density.png")
        return {f"{prefix}density": export_density_image(field, path)}
    paths = export_voxels(field, os.path.join(out_dir, f"{prefix}field.vtk"), threshold=FINAL_TAU)
    return {f"{prefix}field": paths[0], f"{prefix}field_binary": paths[1]}


def _export_unsupported(spec: ProblemSpec, result: OptRun, out_dir: str) -> Dict[str, str]:
    if spec.dims.dim != 2 or not result.unsupported_count:
        return {}
    kernel = build_kernel(spec.overhang_angle, spec.detection.layers, spec.dims.dim)
    marked = unsupported_by_direction(binarize(result.field), kernel, result.directions, FINAL_TAU)
    indices = sorted(set().union(*(set(v.tolist()) for v in marked.values())))
    path = os.path.join(out_dir, "reference_unsupported.png")
    return {"reference_unsupported": export_density_image(result.field, path, highlight=indices)}


def run(spec: ProblemSpec, mode: str = "both", out_dir: str = "runs") -> RunReport:
    """
    Execute the requested runs for spec and write the run directory.

    Args:
        spec: Validated problem
        mode: reference, selfsupporting or both
        out_dir: Directory receiving the artifacts (created if missing)

    Returns:
        RunReport of the main run; for mode both C_ref comes from the reference run

    Raises:
        ProblemValidationError: Unknown mode
        OptimizationError: Optimizer failure, with history_path set
    """
    if mode not in RUN_MODES:
        raise ProblemValidationError("mode", f"'{mode}' is not one of {', '.join(RUN_MODES)}")
    os.makedirs(out_dir, exist_ok=True)

    handler = logging.FileHandler(os.path.join(out_dir, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(handler)
    previous_level = root.level
    if root.getEffectiveLevel() > logging.INFO:
        root.setLevel(logging.INFO)
    start = time.perf_counter()
    artifacts: Dict[str, str] = {}
    try:
        logger.info(f"Running {spec.name} ({spec.dims}) in mode {mode}, output in {out_dir}")
        history_path = os.path.join(out_dir, "history.csv")
        artifacts["history"] = history_path

        if mode == "reference":
            result = _tracked(run_reference, history_path, spec)
            reference = result
        else:
            result = _tracked(run_selfsupporting, history_path, spec)
            reference = None
            if mode == "both":
                reference_history = os.path.join(out_dir, "history_reference.csv")
                artifacts["history_reference"] = reference_history
                reference = _tracked(run_reference, reference_history, spec, result.directions)
                result.c_ref = reference.c_ref
                result.reference_unsupported = reference.reference_unsupported
                artifacts.update(export_field(reference.field, out_dir, "reference_"))

        artifacts.update(export_field(result.field, out_dir))
        if reference is not None:
            artifacts.update(_export_unsupported(spec, reference, out_dir))

        feasible = result.volume_fraction <= spec.volume_fraction + 1e-3
        if mode != "reference":
            feasible = feasible and result.feasible(spec.volume_fraction)
        report = RunReport(
            problem=spec.name,
            mode=mode,
            dims=str(spec.dims),
            directions=tuple(str(d) for d in result.directions),
            compliance=result.compliance,
            volume_fraction=result.volume_fraction,
            unsupported=result.unsupported_count,
            iterations=result.iterations + (reference.iterations if mode == "both" else 0),
            wall_seconds=time.perf_counter() - start,
            feasible=feasible,
            c_ref=result.c_ref,
            ratio=compliance_ratio(result) if result.c_ref is not None else None,
            reference_unsupported=result.reference_unsupported,
            artifacts=artifacts,
        )

        summary_path = os.path.join(out_dir, "summary.csv")
        artifacts["summary"] = summary_path
        report_path = os.path.join(out_dir, "report.txt")
        artifacts["report"] = report_path
        artifacts["log"] = handler.baseFilename
        write_summary([report], summary_path)
        write_report({"report": report, "problem": spec}, report_path)
        ratio_text = f", C/C_ref {report.ratio:.4f}" if report.ratio is not None else ""
        logger.info(f"Finished {spec.name}: C {report.compliance:.4f}{ratio_text}, "
                    f"{report.unsupported} unsupported, {report.wall_seconds:.1f} s")
        return report
    finally:
        root.removeHandler(handler)
        root.setLevel(previous_level)
        handler.close()
