"""
Command line for the reproduction recipes

    python -m app linear-bench --config configs/linear_fully_observed.json
    python -m app sw-known --config configs/sw_known_ci.json --repeats 4 --out runs/known
    python -m app sw-unknown --config configs/sw_unknown_ci.json
    python -m app diagnose --config configs/sw_known_ci.json
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from app.config import settings
from app.models.request import BenchmarkConfig, RunConfig
from app.services.experiment import RUNTIME_ERRORS, diagnose, run_experiment
from app.services.linear_benchmark import benchmark_run
from app.services.output import write_csv
from app.utils.metrics import metrics

logger = logging.getLogger(__name__)

EXPERIMENTS = {"linear": ("linear", "linear-partial"), "sw-known": ("sw-known",), "sw-unknown": ("sw-unknown",)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcmc", description="Sequential MCMC data assimilation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("linear-bench", "SMCMC vs ensemble Kalman filters against the exact Kalman mean"),
        ("linear", "single linear-Gaussian SMCMC experiment (fully or partially observed)"),
        ("sw-known", "shallow-water twin experiment with known drifter locations"),
        ("sw-unknown", "shallow-water twin experiment with unknown drifter locations"),
        ("diagnose", "short single-repeat run printing chain diagnostics and metrics"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="seed base; repeat m uses seed + m")
        p.add_argument("--repeats", type=int, help="number of independent repeats M")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--n-jobs", type=int, dest="n_jobs", help="parallel workers (-1 for all cores)")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.from_file(args.config)
    else:
        experiment = "sw-known" if args.command == "diagnose" else args.command
        cfg = RunConfig(experiment=experiment)
    if args.command in EXPERIMENTS and cfg.experiment not in EXPERIMENTS[args.command]:
        raise ValueError(f"config describes a {cfg.experiment} experiment, not {args.command}")
    update = {}
    if args.seed is not None:
        update["seed_base"] = args.seed
    if args.repeats is not None:
        update["repeats"] = args.repeats
    if args.out is not None:
        update["output_dir"] = args.out
    if args.n_jobs is not None:
        update["n_jobs"] = args.n_jobs
    # re-validate so overrides go through the same checks as the file
    return RunConfig.model_validate({**cfg.model_dump(), **update})


def _bench(args: argparse.Namespace) -> int:
    cfg = BenchmarkConfig.from_file(args.config) if args.config is not None else BenchmarkConfig()
    update = {}
    if args.seed is not None:
        update["seed_base"] = args.seed
    if args.repeats is not None:
        update["smcmc_repeats"] = args.repeats
    if args.out is not None:
        update["output_dir"] = args.out
    cfg = BenchmarkConfig.model_validate({**cfg.model_dump(), **update})
    rows = benchmark_run(cfg, n_jobs=args.n_jobs)
    out = Path(cfg.output_dir or settings.output_dir / "linear-bench")
    path = write_csv(pd.DataFrame([r.model_dump() for r in rows]), out / "benchmark.csv")
    for r in rows:
        print(f"{r.method:>6}  d={r.d:<6} size={r.size:<8} fraction={r.fraction:.3f}  {r.wall_clock_s:.1f}s")
    logger.info(f"Benchmark table written to {path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "linear-bench":
            return _bench(args)
        cfg = _run_config(args)
        if args.command == "diagnose":
            print(json.dumps(diagnose(cfg), indent=2))
            return 0
        report = run_experiment(cfg)
    except RUNTIME_ERRORS as e:
        logger.error(f"{args.command} failed at run time: {e}")
        return 1
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return 1

    failed = [r for r in report.repeats if r.status != "ok"]
    for r in failed:
        logger.error(f"Repeat {r.repeat} (seed {r.seed}) failed: {r.message}")
    if report.accuracy is not None:
        print(f"accuracy (|error| <= sigma_y/2): {report.accuracy:.3f}")
    for name, value in report.rmse.items():
        free = report.free_run_rmse.get(name)
        print(f"rmse {name}: {value:.4g}" + (f" (free run {free:.4g})" if free is not None else ""))
    if report.track_rmse_cells is not None:
        print(f"predicted track rmse: {report.track_rmse_cells:.2f} cells")
    metrics.log_summary()
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
