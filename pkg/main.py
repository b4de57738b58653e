#!/usr/bin/env python3
"""
tdoaspace - TDOA outlier detection
Command Line Entry Point

    detect      flag and remove outlier TDOAs from a measurement file
    simulate    Monte-Carlo campaign on a preset or custom array
    localize    maximum-likelihood source localization, optionally after detection
    casestudy   localization study on four tetrahedral sub-arrays

Exit codes: 0 success, 2 invalid input, 3 numeric failure or non-convergence.
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from tdoaspace.errors import NumericError, ValidationError
from tdoaspace.fileio import (ArrayFile, MeasurementFile, write_campaign_csv, write_casestudy_csv,
                              write_localization_json, write_report)
from tdoaspace.localization import LocalizationConfig, localize, run_localization_study
from tdoaspace.removal import ExplorationMode, RemovalConfig, remove_outliers
from tdoaspace.settings import Defaults
from tdoaspace.simharness import ArrayPreset, preset_array, run_campaign

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

MODE_NAMES = [m.value for m in ExplorationMode]


def status(message: str):
    """User-facing status line"""
    print(message, file=sys.stderr)


def parse_modes(text: str) -> List[ExplorationMode]:
    try:
        return [ExplorationMode(name.strip()) for name in text.split(",") if name.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma list of {MODE_NAMES}, got {text!r}", field="modes")


def parse_z_range(text: str) -> List[int]:
    """A:B or A:B:STEP, both ends included"""
    parts = text.split(":")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ValidationError(f"expected A:B[:STEP], got {text!r}", field="z-range")
    if len(values) not in (2, 3):
        raise ValidationError(f"expected A:B[:STEP], got {text!r}", field="z-range")
    start, stop = values[0], values[1]
    step = values[2] if len(values) == 3 else 1
    if start < 0 or stop < start or step < 1:
        raise ValidationError(f"invalid range {text!r}", field="z-range")
    return list(range(start, stop + 1, step))


def parse_point(text: str) -> tuple:
    try:
        point = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"expected x,y,z, got {text!r}", field="init")
    if len(point) != 3:
        raise ValidationError(f"expected x,y,z, got {text!r}", field="init")
    return point


def parse_floats(text: str, name: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma list of numbers, got {text!r}", field=name)


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def resolve_seed(seed: Optional[int]) -> int:
    """Given seed, or a fresh one printed for replay"""
    if seed is None:
        seed = int(np.random.SeedSequence().entropy)
        status(f"Seed: {seed}")
    if seed < 0:
        raise ValidationError(f"must be >= 0, got {seed}", field="seed")
    return seed


# Commands

def cmd_detect(args) -> int:
    array = ArrayFile.load(args.array).array
    measurements = MeasurementFile.load(args.measurements)
    config = RemovalConfig(alpha=args.alpha, mode=args.mode,
                           covariance=measurements.covariance_model(args.sigma))
    report = remove_outliers(measurements.tdoas, array, config)
    write_report(report, config, measurements.tdoas, args.out, args.format)
    status(f"Removed {len(report.removed_pairs())} of {len(measurements.tdoas)} TDOAs")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.array:
        array = ArrayFile.load(args.array).array
        planar = None
    else:
        preset = ArrayPreset(args.preset)
        array = preset_array(preset)
        planar = preset.planar
    seed = resolve_seed(args.seed)
    rows = run_campaign(array, parse_z_range(args.z_range), args.runs, args.positions,
                        args.sigma, args.alpha, parse_modes(args.modes), seed,
                        planar=planar, threads=args.threads)
    write_campaign_csv(rows, args.out)
    status(f"Wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_localize(args) -> int:
    array = ArrayFile.load(args.array).array
    measurements = MeasurementFile.load(args.measurements)
    cov = measurements.covariance_model(args.sigma)
    tdoas = measurements.tdoas
    removed = None
    if args.detect_first:
        report = remove_outliers(tdoas, array, RemovalConfig(alpha=args.alpha, mode=args.mode, covariance=cov))
        tdoas = report.survivors
        removed = report.removals()
        if not len(tdoas):
            raise NumericError("no TDOA survived outlier removal")
    init = parse_point(args.init) if args.init else None
    result = localize(tdoas, array, cov, LocalizationConfig(initial_guess=init))
    write_localization_json(result, args.out, removed)
    if not result.converged:
        status("Localization did not converge; best iterate written")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_casestudy(args) -> int:
    seed = resolve_seed(args.seed)
    assumed = parse_floats(args.assumed_sigma, "assumed-sigma") if args.assumed_sigma else None
    rows = run_localization_study(args.trials, sigma=args.sigma, Z=args.z,
                                  modes=parse_modes(args.modes), seed=seed,
                                  assumed_sigmas=assumed, alpha=args.alpha, threads=args.threads)
    write_casestudy_csv(rows, args.out)
    status(f"Wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdoaspace", description="TDOA outlier detection")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="More logging (repeat for debug)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    detect = sub.add_parser("detect", help="Remove outlier TDOAs from a measurement file")
    detect.add_argument("--array", required=True, help="Array JSON file")
    detect.add_argument("--measurements", required=True, help="Measurement JSON file")
    detect.add_argument("--alpha", type=float, default=Defaults.ALPHA,
                        help=f"Significance level in (0, 0.5) (default: {Defaults.ALPHA})")
    detect.add_argument("--mode", choices=MODE_NAMES, default=ExplorationMode.G2_THEN_G3.value,
                        help="Group sizes explored (default: g2g3)")
    detect.add_argument("--sigma", type=float, default=None,
                        help="Noise sigma in meters, overriding the file")
    detect.add_argument("--out", required=True, help="Report file")
    detect.add_argument("--format", choices=["json", "csv"], default="json",
                        help="Report format (default: json)")
    detect.set_defaults(handler=cmd_detect)

    simulate = sub.add_parser("simulate", help="Monte-Carlo campaign")
    source = simulate.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", choices=[p.value for p in ArrayPreset], help="Built-in array")
    source.add_argument("--array", help="Array JSON file")
    simulate.add_argument("--z-range", default="0:5", help="Outlier counts A:B[:STEP] (default: 0:5)")
    simulate.add_argument("--runs", type=positive_int, default=Defaults.RUNS,
                          help=f"Runs per position (default: {Defaults.RUNS})")
    simulate.add_argument("--positions", type=positive_int, default=Defaults.POSITIONS,
                          help=f"Source positions (default: {Defaults.POSITIONS})")
    simulate.add_argument("--sigma", type=float, default=Defaults.SIGMA,
                          help=f"Noise sigma in meters (default: {Defaults.SIGMA})")
    simulate.add_argument("--alpha", type=float, default=Defaults.ALPHA,
                          help=f"Significance level (default: {Defaults.ALPHA})")
    simulate.add_argument("--modes", default=",".join(MODE_NAMES),
                          help="Comma list of modes (default: all)")
    simulate.add_argument("--seed", type=int, default=None, help="Master seed (default: random, printed)")
    simulate.add_argument("--threads", type=positive_int, default=None,
                          help=f"Worker processes (default: ${Defaults.THREADS_ENV} or 1)")
    simulate.add_argument("--out", required=True, help="CSV file")
    simulate.set_defaults(handler=cmd_simulate)

    loc = sub.add_parser("localize", help="Maximum-likelihood source localization")
    loc.add_argument("--array", required=True, help="Array JSON file")
    loc.add_argument("--measurements", required=True, help="Measurement JSON file")
    loc.add_argument("--detect-first", action="store_true", help="Remove outliers before localizing")
    loc.add_argument("--mode", choices=MODE_NAMES, default=ExplorationMode.G3.value,
                     help="Mode used with --detect-first (default: g3)")
    loc.add_argument("--alpha", type=float, default=Defaults.ALPHA,
                     help=f"Significance level (default: {Defaults.ALPHA})")
    loc.add_argument("--sigma", type=float, default=None,
                     help="Noise sigma in meters, overriding the file")
    loc.add_argument("--init", default=None, help="Initial guess x,y,z (default: sensor centroid)")
    loc.add_argument("--out", required=True, help="Result JSON file")
    loc.set_defaults(handler=cmd_localize)

    case = sub.add_parser("casestudy", help="Localization study on four tetrahedral arrays")
    case.add_argument("--trials", type=positive_int, default=500, help="Random sources (default: 500)")
    case.add_argument("--sigma", type=float, default=Defaults.SIGMA,
                      help=f"Simulated noise sigma in meters (default: {Defaults.SIGMA})")
    case.add_argument("--assumed-sigma", default=None,
                      help="Comma list of sigmas given to the detector (default: --sigma)")
    case.add_argument("--z", type=int, default=3, help="Gross outliers per trial (default: 3)")
    case.add_argument("--alpha", type=float, default=Defaults.ALPHA,
                      help=f"Significance level (default: {Defaults.ALPHA})")
    case.add_argument("--modes", default=ExplorationMode.G3.value, help="Comma list of modes (default: g3)")
    case.add_argument("--seed", type=int, default=None, help="Master seed (default: random, printed)")
    case.add_argument("--threads", type=positive_int, default=None,
                      help=f"Worker processes (default: ${Defaults.THREADS_ENV} or 1)")
    case.add_argument("--out", required=True, help="CSV file")
    case.set_defaults(handler=cmd_casestudy)
    return parser


def setup_logging(verbose: int, quiet: bool):
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    setup_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except ValidationError as exc:
        status(f"error: {exc}")
        return EXIT_INVALID
    except NumericError as exc:
        status(f"error: {exc}")
        return EXIT_NUMERIC
    except OSError as exc:
        status(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
