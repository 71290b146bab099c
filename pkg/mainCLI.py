#!/usr/bin/env python3

# mainCLI.py
"""
Batch entry point.

    python mainCLI.py --preset beam --mode both --out runs/beam
    python mainCLI.py problems/bracket.json --angle 50 --direction -x
    python mainCLI.py --benchmark-detection 80x40 600x400 --csv detection.csv
    python mainCLI.py --shell

Exit codes: 0 feasible result, 1 infeasible result, 2 bad input, 3 numerical failure.
"""
import argparse
import csv
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from fem import FEError
from grid import GridError, parse_dims
from optimizer import OptimizationError
from problem import ProblemError, load_problem
from renderers.density_image import ExportError
from runner import LOG_FORMAT, benchmark_table, report_table, run
from support import DetectionBenchmark, DetectionMismatchError, SupportError, benchmark_detection
from validators import RUN_MODES

logger = logging.getLogger(__name__)

EXIT_FEASIBLE = 0
EXIT_INFEASIBLE = 1
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Compliance topology optimization with a self-supporting constraint")
    parser.add_argument('problem', nargs='?', help='Problem file (.json) or preset name')
    parser.add_argument('-p', '--preset', help='Preset name under presets/')
    parser.add_argument('-m', '--mode', choices=RUN_MODES, default='both', help='Runs to perform')
    parser.add_argument('-o', '--out', help='Run directory (default runs/<problem name>)')
    parser.add_argument('--seed', type=int, help='Seed of the initial design perturbation and of benchmark fields')
    parser.add_argument('--max-iters', type=int, help='Iteration cap of the optimization')
    parser.add_argument('--angle', type=float, help='Overhang angle in degrees')
    parser.add_argument('--vf', type=float, help='Target volume fraction')
    parser.add_argument('--rmin', type=float, help='Density filter radius in elements')
    parser.add_argument('--direction', action='append', help='Pin a build direction (repeatable), e.g. +y')
    parser.add_argument('--solver', help='Linear solver: auto, direct, cg or mgcg')
    parser.add_argument('--benchmark-detection', nargs='+', metavar='NXxNY[xNZ]',
                        help='Time batched against enumerated detection on random fields')
    parser.add_argument('--repeats', type=int, default=3, help='Benchmark repetitions per method')
    parser.add_argument('--csv', help='Append benchmark rows to this CSV file')
    parser.add_argument('--shell', action='store_true', help='Start the interactive problem editor')
    parser.add_argument('-v', '--verbose', action='store_true', help='Log every iteration')
    return parser


def overrides_from_args(options: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if options.seed is not None:
        overrides["seed"] = options.seed
    if options.angle is not None:
        overrides["overhang_angle"] = options.angle
    if options.vf is not None:
        overrides["volume_fraction"] = options.vf
    if options.rmin is not None:
        overrides["filter_radius"] = options.rmin
    if options.direction:
        overrides["directions"] = options.direction
    if options.solver is not None:
        overrides["solver"] = options.solver
    if options.max_iters is not None:
        overrides["schedule"] = {"max_iters": options.max_iters}
    return overrides


def run_benchmarks(grids: List[str], repeats: int, csv_path: Optional[str], seed: int) -> List[DetectionBenchmark]:
    results = [benchmark_detection(parse_dims(text), repeats=repeats, seed=seed) for text in grids]
    print(benchmark_table(results))
    if csv_path:
        new_file = not os.path.exists(csv_path)
        with open(csv_path, "a", newline="") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(DetectionBenchmark.CSV_HEADER)
            for result in results:
                writer.writerow(result.csv_row())
    return results


def main(argv: Optional[List[str]] = None) -> int:
    options = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if options.verbose else logging.INFO, format=LOG_FORMAT)

    if options.shell:
        import configCli
        configCli.main()
        return EXIT_FEASIBLE

    try:
        if options.benchmark_detection:
            run_benchmarks(options.benchmark_detection, options.repeats, options.csv, options.seed or 0)
            return EXIT_FEASIBLE

        source = options.preset or options.problem
        if not source:
            logger.error("Give a problem file or --preset")
            return EXIT_BAD_INPUT
        spec = load_problem(source, overrides_from_args(options))
        out_dir = options.out or os.path.join("runs", spec.name)
        report = run(spec, options.mode, out_dir)
    except OptimizationError as e:
        where = f" (history in {e.history_path})" if e.history_path else ""
        logger.error(f"Optimization failed: {e}{where}")
        return EXIT_NUMERICAL
    except (FEError, DetectionMismatchError, ExportError) as e:
        logger.error(f"Run failed: {e}")
        return EXIT_NUMERICAL
    except (ProblemError, GridError, SupportError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_BAD_INPUT

    print(report_table(report))
    return EXIT_FEASIBLE if report.feasible else EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
