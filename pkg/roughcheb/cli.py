from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from roughcheb import __version__
from roughcheb.config import ENV_ROUGHCHEB_PROFILE, ENV_ROUGHCHEB_THREADS, PROFILES, ExperimentConfig, load_experiment_config
from roughcheb.errors import CompletionFailure, InvalidArgument, RoughChebError
from roughcheb.harness import (
    assess_accuracy,
    benchmark,
    build_direct,
    build_tt,
    calibrate_batch,
    generate_surfaces,
    info,
    load_surface_set,
    make_pricer,
    write_accuracy,
)
from roughcheb.storage import load_surrogate_tensor, save_full_tensor, save_tt, write_json
from roughcheb.surrogate import Surrogate


logger = logging.getLogger("roughcheb")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _print_json(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def _surface_dir(cfg: ExperimentConfig, explicit: Optional[str]) -> Path:
    return Path(explicit) if explicit else Path(cfg.out_dir) / "surfaces"


def _tensor_path(cfg: ExperimentConfig, explicit: Optional[str]) -> Path:
    if explicit:
        return Path(explicit)
    direct = Path(cfg.out_dir) / "direct" / "tensor.rcf"
    tt = Path(cfg.out_dir) / "tt" / "tensor.rct"
    if direct.exists():
        return direct
    if tt.exists():
        return tt
    raise InvalidArgument(f"no surrogate tensor under {cfg.out_dir}; run build-direct or build-tt, or pass --tensor")


def _load_surrogate(cfg: ExperimentConfig, explicit: Optional[str]) -> Surrogate:
    path = _tensor_path(cfg, explicit)
    s = Surrogate(load_surrogate_tensor(path), pillar_times=cfg.pillar_times)
    if s.theta_dim != cfg.theta_dim:
        raise InvalidArgument(f"{path}: tensor has {s.theta_dim} model parameters, config has {cfg.theta_dim}")
    logger.info("loaded %s surrogate from %s (%d bytes)", s.kind, path, s.memory_bytes)
    return s


def cmd_generate_surfaces(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir) / "surfaces"
    manifest = generate_surfaces(cfg, out)
    print(f"surfaces: {manifest['count']} written, {manifest['failed']} failed -> {out}")
    return EXIT_OK


def cmd_build_direct(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir) / "direct"
    tensor, report = build_direct(cfg)
    save_full_tensor(out / "tensor.rcf", tensor)
    write_json(out / "report.json", report.to_json())
    print(f"direct tensor: {report.stored_values} values from {report.pricer_calls} pricer calls -> {out}")
    return EXIT_OK


def cmd_build_tt(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir) / "tt"
    try:
        tt, report, extras = build_tt(cfg)
    except CompletionFailure as e:
        write_json(out / "report.json", {"error": e.message, "diagnostics": e.diagnostics})
        raise
    save_tt(out / "tensor.rct", tt)
    write_json(out / "report.json", {"completion": report.to_json(), **extras})
    write_json(out / "timing.json", {"wall_time_s": report.wall_time_s, "threads": cfg.threads})
    print(
        f"TT tensor: ranks {list(tt.ranks)}, test RMSE {report.test_rmse}, converged {report.converged}, "
        f"{extras['pricer_calls']} pricer calls -> {out}"
    )
    return EXIT_OK


def cmd_assess_accuracy(cfg: ExperimentConfig, *, tensor: Optional[str], surfaces: Optional[str]) -> int:
    s = _load_surrogate(cfg, tensor)
    report = assess_accuracy(s, load_surface_set(_surface_dir(cfg, surfaces)))
    out = Path(cfg.out_dir) / "accuracy"
    write_accuracy(out, report)
    summary = report.to_json()
    print(
        f"accuracy: {report.surfaces_used} surfaces ({report.surfaces_excluded} excluded), "
        f"mean {summary['overall_mean_abs_error']}, max {summary['overall_max_abs_error']} -> {out}"
    )
    return EXIT_OK


def cmd_calibrate_batch(cfg: ExperimentConfig, *, tensor: Optional[str], surfaces: Optional[str]) -> int:
    s = _load_surrogate(cfg, tensor)
    out = Path(cfg.out_dir) / "calibration"
    summary = calibrate_batch(s, load_surface_set(_surface_dir(cfg, surfaces)), cfg, out)
    print(f"calibration: {summary['calibrated']} calibrated, {summary['failed']} failed -> {out}")
    if "rmse_quantiles" in summary:
        _print_json(summary["rmse_quantiles"])
    return EXIT_OK


def cmd_benchmark(cfg: ExperimentConfig, *, tensor: Optional[str]) -> int:
    s = _load_surrogate(cfg, tensor)
    report = benchmark(s, make_pricer(cfg, cfg.spec), cfg)
    write_json(Path(cfg.out_dir) / "benchmark" / "benchmark.json", report)
    _print_json(report)
    return EXIT_OK


def cmd_info(cfg: ExperimentConfig) -> int:
    _print_json(info(cfg))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughcheb", description="Chebyshev tensor surrogates for rough Bergomi implied volatility"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", dest="config", default=None, help="Experiment config JSON.")
    parser.add_argument("--seed", dest="seed", type=int, default=None, help="Root seed (overrides the config).")
    parser.add_argument("--out-dir", dest="out_dir", default=None, help="Output directory (overrides the config).")
    parser.add_argument(
        "--profile",
        dest="profile",
        default=None,
        choices=sorted(PROFILES),
        help=f"Scale profile (or set ${ENV_ROUGHCHEB_PROFILE}). Worker threads: ${ENV_ROUGHCHEB_THREADS}.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only.")

    sub = parser.add_subparsers(dest="command")
    sub.add_parser("generate-surfaces", help="Price random parameter points into benchmark surfaces.")
    sub.add_parser("build-direct", help="Build the full Chebyshev tensor (constant forward variance).")
    sub.add_parser("build-tt", help="Build a TT-format Chebyshev tensor by completion.")
    for name, text in (
        ("assess-accuracy", "Compare the surrogate against the generated surfaces."),
        ("calibrate-batch", "Calibrate the surrogate to every generated surface."),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--tensor", default=None, help="Tensor file (default: the direct build under --out-dir, else the TT build).")
        p.add_argument("--surfaces", default=None, help="Surface directory (default: <out-dir>/surfaces).")
    p_bench = sub.add_parser("benchmark", help="Time surrogate evaluations against pricer calls.")
    p_bench.add_argument("--tensor", default=None, help="Tensor file (default: the direct build under --out-dir, else the TT build).")
    sub.add_parser("info", help="Print grid sizes and storage footprints.")

    args = parser.parse_args(argv)
    _configure_logging(bool(args.verbose), bool(args.quiet))

    cmd = args.command
    if cmd is None:
        parser.print_help()
        return EXIT_INVALID

    try:
        cfg = load_experiment_config(
            Path(args.config) if args.config else None, profile=args.profile, seed=args.seed, out_dir=args.out_dir
        )
        if cmd == "generate-surfaces":
            return cmd_generate_surfaces(cfg)
        if cmd == "build-direct":
            return cmd_build_direct(cfg)
        if cmd == "build-tt":
            return cmd_build_tt(cfg)
        if cmd == "assess-accuracy":
            return cmd_assess_accuracy(cfg, tensor=args.tensor, surfaces=args.surfaces)
        if cmd == "calibrate-batch":
            return cmd_calibrate_batch(cfg, tensor=args.tensor, surfaces=args.surfaces)
        if cmd == "benchmark":
            return cmd_benchmark(cfg, tensor=args.tensor)
        if cmd == "info":
            return cmd_info(cfg)
    except InvalidArgument as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RoughChebError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL

    parser.print_help()
    return EXIT_INVALID
