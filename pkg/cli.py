"""
Experiment runner.

    python cli.py deblur-wavelet --size 64 --strategy G1 --solvers flsqr-g,hybrid-flsqr-g,irw-flsqr-g
    python cli.py dynamic-deblur --solvers hybrid-lsqr,hybrid-flsqr,hybrid-flsqr-g,hybrid-flsqr-c
    python cli.py anomaly --gamma 1.0

Each command builds one problem (or loads it with --problem), runs every requested solver on it and
writes errors_<solver>.csv, lambda_<solver>.csv, PGM images and manifest.json / manifest.txt into
--out. Settings come from built-in defaults, then --config (key = value file or a previous
manifest.json), then the command line. Exit codes: 0 success, 1 runtime or IO failure, 2 usage.
"""
import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any, Callable, Dict, List, Optional

import numpy as np

import csv_utils
import file_utils
import json_utils
import linops
import log_utils
import manifest_utils
import problems
import solvers
import string_utils
from progress_utils import ProgressTracker

logger = logging.getLogger(__name__)

SEED_ENV = "FLEXIKRY_SEED"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Option:
    dest: str
    type: Callable
    help: str
    choices: Optional[tuple] = None

    @property
    def flag(self) -> str:
        return "--" + self.dest.replace("_", "-")


COMMON_OPTIONS = [
    Option("solvers", str, "comma separated solver names"),
    Option("noise", float, "noise level ||e|| / ||A x_true|| (sigma ||e|| / ||A x_true|| for anomaly)"),
    Option("eta", float, "discrepancy principle safety factor"),
    Option("tau", float, "weight smoothing parameter"),
    Option("iters", int, "maximum number of iterations"),
    Option("snapshot_every", int, "store the iterate every N iterations"),
    Option("seed", int, f"random seed (falls back to ${SEED_ENV}, then 0)"),
    Option("out", str, "output directory"),
    Option("problem", str, "load a saved problem directory instead of generating one"),
    Option("parallel", _parse_bool, "run the solvers concurrently"),
]

COMMANDS = {
    "deblur-wavelet": {
        "help": "image deblurring with overlapping wavelet-tree groups",
        "options": [
            Option("size", int, "image size (pixels per side)"),
            Option("levels", int, "Haar levels"),
            Option("strategy", str, "wavelet grouping strategy", choices=("G1", "G2")),
            Option("image", str, "plain PGM image used as the true solution"),
        ],
        "defaults": {
            "solvers": "flsqr-g,hybrid-flsqr-g,irw-flsqr-g", "noise": 0.05, "iters": 50,
            "out": "out/deblur-wavelet", "size": 64, "levels": 2, "strategy": "G1", "image": None,
        },
    },
    "dynamic-deblur": {
        "help": "spatio-temporal deblurring with temporal groups",
        "options": [
            Option("tau_lambda", float, "combined regularizer ratio (family default 1.2 LSQR / 0.8 GMRES)"),
            Option("n_side", int, "frame size (pixels per side)"),
            Option("n_frames", int, "number of time frames"),
        ],
        "defaults": {
            "solvers": "hybrid-lsqr,hybrid-flsqr,hybrid-flsqr-g,hybrid-flsqr-c,"
                       "hybrid-gmres,hybrid-fgmres,hybrid-fgmres-g,hybrid-fgmres-c",
            "noise": 0.02, "iters": 50, "out": "out/dynamic-deblur",
            "tau_lambda": None, "n_side": 50, "n_frames": 9,
        },
    },
    "anomaly": {
        "help": "anomaly detection by solution decomposition",
        "options": [
            Option("gamma", float, "ratio alpha / lambda for the two-parameter discrepancy principle"),
            Option("n_space", int, "number of grid cells (perfect square)"),
            Option("n_time", int, "number of days"),
            Option("n_obs", int, "number of observations"),
            Option("n_anomalies", int, "number of persistent anomalies"),
        ],
        "defaults": {
            "solvers": "hybrid-sd,hybrid-sd-g", "noise": 1.0, "iters": 50, "out": "out/anomaly",
            "gamma": solvers.DEFAULT_GAMMA, "n_space": 100, "n_time": 8, "n_obs": 400, "n_anomalies": 3,
        },
    },
}

COMMON_DEFAULTS = {
    "eta": solvers.DEFAULT_ETA, "tau": solvers.DEFAULT_TAU, "snapshot_every": 10,
    "seed": None, "problem": None, "parallel": False,
}


def options_for(command: str) -> List[Option]:
    return COMMON_OPTIONS + COMMANDS[command]["options"]


def defaults_for(command: str) -> Dict[str, Any]:
    return {**COMMON_DEFAULTS, **COMMANDS[command]["defaults"]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexikry", description="Flexible Krylov solvers for group sparsity.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, entry in COMMANDS.items():
        sub = subparsers.add_parser(command, help=entry["help"])
        defaults = defaults_for(command)
        for opt in options_for(command):
            kwargs = {"dest": opt.dest, "default": None, "help": f"{opt.help} (default: {defaults[opt.dest]})"}
            if opt.type is _parse_bool:
                sub.add_argument(opt.flag, action="store_const", const=True, **kwargs)
            else:
                sub.add_argument(opt.flag, type=opt.type, choices=opt.choices, **kwargs)
        sub.add_argument("--config", help="key = value file or manifest.json with settings")
        sub.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
        sub.add_argument("--log-dir", default="logs", help="directory of the log files")
    return parser


##############################
### SETTINGS
##############################

def _load_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    if path.endswith(".json"):
        data = json_utils.load_json_data(path)
        if not isinstance(data, dict) or not data:
            raise UsageError(f"cannot read settings from {path}")
        values = data.get("config", data)
        return {str(k).replace("-", "_"): v for k, v in values.items()}
    try:
        return file_utils.load_key_value_file(path)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _convert(opt: Option, value):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
        return None
    try:
        converted = opt.type(value)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid value for {opt.dest}: {value!r} ({e})") from e
    if opt.choices and converted not in opt.choices:
        raise UsageError(f"invalid value for {opt.dest}: {converted!r} (choose from {', '.join(opt.choices)})")
    return converted


def resolve_settings(command: str, args: argparse.Namespace) -> Dict[str, Any]:
    """defaults < config file < command line; the seed falls back to $FLEXIKRY_SEED."""
    options = options_for(command)
    defaults = defaults_for(command)
    file_values = _load_config_file(args.config) if args.config else {}
    known = {opt.dest for opt in options}
    for key in file_values:
        if key not in known:
            suggestion = string_utils.closest_match(key, known)
            hint = f" (did you mean {suggestion!r}?)" if suggestion else ""
            raise UsageError(f"unknown setting {key!r} in {args.config}{hint}")

    settings = {}
    for opt in options:
        value = getattr(args, opt.dest)
        if value is None and opt.dest in file_values:
            value = _convert(opt, file_values[opt.dest])
        if value is None and opt.dest == "seed" and os.environ.get(SEED_ENV):
            value = _convert(opt, os.environ[SEED_ENV])
        if value is None:
            value = defaults[opt.dest]
        settings[opt.dest] = value
    if settings["seed"] is None:
        settings["seed"] = 0
    return settings


def parse_solver_list(text: str) -> List[str]:
    names = []
    for raw in text.split(","):
        if not raw.strip():
            continue
        try:
            name = solvers.parse_solver_name(raw)
        except solvers.SolverConfigError as e:
            raise UsageError(str(e)) from e
        if name not in names:
            names.append(name)
    if not names:
        raise UsageError("no solvers requested")
    return names


##############################
### RUN
##############################

def build_problem(command: str, settings: Dict[str, Any]) -> problems.TestProblem:
    if settings["problem"]:
        logger.info(f"Loading problem from {settings['problem']} (generator flags ignored)")
        return problems.load_problem(settings["problem"])
    seed, noise = settings["seed"], settings["noise"]
    image = None
    if command == "deblur-wavelet" and settings["image"]:
        image = file_utils.read_pgm(settings["image"])
    try:
        if command == "deblur-wavelet":
            return problems.gen_wavelet_deblur(settings["size"], settings["levels"], settings["strategy"],
                                               noise, seed, image=image)
        if command == "dynamic-deblur":
            return problems.gen_dynamic_deblur(noise, seed, settings["n_side"], settings["n_frames"])
        return problems.gen_anomaly(settings["n_space"], settings["n_time"], settings["n_obs"], noise, seed,
                                    settings["n_anomalies"])
    except linops.DegenerateCovarianceError:
        raise
    except ValueError as e:
        raise UsageError(f"invalid problem settings: {e}") from e


def build_configs(names: List[str], settings: Dict[str, Any], problem) -> List[solvers.SolverConfig]:
    configs = []
    for name in names:
        config = solvers.config_for(
            name,
            tau=settings["tau"],
            eta=settings["eta"],
            max_iters=settings["iters"],
            snapshot_every=settings["snapshot_every"],
            tau_lambda=settings.get("tau_lambda"),
            gamma=settings.get("gamma"),
        )
        config.validate(problem)
        if config.variant is solvers.Variant.HYBRID_FGMRES and problem.psi_inv is not None:
            logger.warning(f"{config.name} builds its basis in the transform domain of {problem.name}; "
                           f"the GMRES family is only reliable when the sparsifying transform is the identity")
        configs.append(config)
    return configs


def _run_all(problem, configs, parallel: bool) -> Dict[str, Any]:
    """Solver name -> SolverTrace, or the exception that stopped it."""
    total = sum(c.max_iters for c in configs)
    outcomes = {}
    with ProgressTracker(total=total, description="Krylov iterations") as progress:
        def solve(config):
            done = []

            def on_record(record):
                done.append(record.k)
                progress.increment()

            try:
                return solvers.run(problem, config, callback=on_record)
            except Exception as e:
                logger.exception(f"{config.name} failed: {e}")
                progress.update(failed=config.max_iters - len(done))
                return e

        if parallel and len(configs) > 1:
            with ThreadPoolExecutor(max_workers=len(configs)) as pool:
                results = list(pool.map(solve, configs))
        else:
            results = [solve(config) for config in configs]
    for config, result in zip(configs, results):
        outcomes[config.name] = result
    return outcomes


def _frames(vector, shape):
    return np.asarray(vector).reshape(shape)


def write_truth_images(problem, out: str) -> List[str]:
    shape = problem.image_shape
    paths = []
    if len(shape) == 2:
        paths.append(file_utils.write_pgm(_frames(problem.x_true, shape), "x_true.pgm", out))
        if problem.is_square:
            paths.append(file_utils.write_pgm(_frames(problem.b, shape), "b.pgm", out))
    elif problem.priors is not None:
        for name, vector in (("x_true_avg", problem.x_true), ("xi_true_avg", problem.xi_true),
                             ("s_true_avg", problem.s_true)):
            if vector is not None:
                paths.append(file_utils.write_pgm(_frames(vector, shape).mean(axis=0), f"{name}.pgm", out))
    elif len(shape) == 3:
        for t, frame in enumerate(_frames(problem.x_true, shape)):
            paths.append(file_utils.write_pgm(frame, f"x_true_t{t}.pgm", out, vmin=0.0, vmax=problem.x_true.max()))
    return paths


def write_solver_outputs(problem, trace: solvers.SolverTrace, out: str) -> List[str]:
    name = file_utils.sanitize_filename(trace.solver)
    paths = [
        csv_utils.write_rows(os.path.join(out, f"errors_{name}.csv"), solvers.CSV_FIELDS, solvers.trace_rows(trace)),
        csv_utils.write_rows(os.path.join(out, f"lambda_{name}.csv"), solvers.LAMBDA_FIELDS,
                             solvers.lambda_rows(trace)),
    ]
    image_dir = os.path.join(out, name)
    shape = problem.image_shape
    if len(shape) == 2:
        paths.append(file_utils.write_pgm(_frames(trace.x, shape), "recon.pgm", image_dir))
    elif problem.priors is not None:
        paths.append(file_utils.write_pgm(_frames(trace.x, shape).mean(axis=0), "avg.pgm", image_dir))
        if trace.xi is not None:
            paths.append(file_utils.write_pgm(_frames(trace.xi, shape).mean(axis=0), "xi.pgm", image_dir))
            paths.append(file_utils.write_pgm(_frames(trace.s, shape).mean(axis=0), "s.pgm", image_dir))
    elif len(shape) == 3:
        top = problem.x_true.max() if problem.has_truth else None
        for t, frame in enumerate(_frames(trace.x, shape)):
            paths.append(file_utils.write_pgm(frame, f"recon_t{t}.pgm", image_dir, vmin=0.0, vmax=top))
    return paths


def run_command(command: str, settings: Dict[str, Any]) -> int:
    names = parse_solver_list(settings["solvers"])
    problem = build_problem(command, settings)
    configs = build_configs(names, settings, problem)
    out = settings["out"]
    os.makedirs(out, exist_ok=True)

    logger.info(f"Problem {problem.name}: A is {problem.shape[0]}x{problem.shape[1]}, "
                f"noise norm {problem.noise_norm:.6e}, blur boundary condition: {problems.BOUNDARY}")
    metadata = {"problem": problem.metadata, "solvers": {c.name: c.to_dict() for c in configs}}
    context = manifest_utils.create_run_context(command, settings, settings["seed"], metadata)

    for path in problems.save_problem(problem, os.path.join(out, "problem")).values():
        manifest_utils.add_output_file(context, out, path)
    for path in write_truth_images(problem, out):
        manifest_utils.add_output_file(context, out, path)

    outcomes = _run_all(problem, configs, settings["parallel"])
    for config in configs:
        outcome = outcomes[config.name]
        if isinstance(outcome, Exception):
            manifest_utils.add_failed_item(context, config.name, str(outcome))
            continue
        for path in write_solver_outputs(problem, outcome, out):
            manifest_utils.add_output_file(context, out, path)
        if outcome.breakdown:
            manifest_utils.add_partial_item(context, config.name, f"breakdown at iteration {outcome.breakdown_at}")
        best = outcome.best_iteration
        if best is not None:
            logger.info(f"{config.name}: best iteration {best}, final rel. error {outcome.records[-1].rel_error:.4f}")

    manifest = manifest_utils.finalize_run(context, out, total_items=len(configs))
    return EXIT_RUNTIME if manifest.status is manifest_utils.RunStatus.FAILED else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    log_utils.setup_logging(f"flexikry_{args.command}", getattr(logging, args.log_level), args.log_dir)
    start_time = time.time()
    logger.info(f"🚀 Start time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    try:
        settings = resolve_settings(args.command, args)
        return run_command(args.command, settings)
    except (UsageError, solvers.SolverConfigError) as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.exception(f"I/O failure: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Run failed: {e}")
        return EXIT_RUNTIME
    finally:
        duration = timedelta(seconds=int(time.time() - start_time))
        hours = duration.seconds // 3600
        minutes = (duration.seconds % 3600) // 60
        seconds = duration.seconds % 60
        logger.info(f"✅ End time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        logger.info(f"⏱️ Duration: {hours} hours, {minutes} minutes, {seconds} seconds")


def cmd_deblur_wavelet(argv: Optional[List[str]] = None) -> int:
    return main(["deblur-wavelet", *(argv or [])])


def cmd_dynamic_deblur(argv: Optional[List[str]] = None) -> int:
    return main(["dynamic-deblur", *(argv or [])])


def cmd_anomaly(argv: Optional[List[str]] = None) -> int:
    return main(["anomaly", *(argv or [])])


if __name__ == "__main__":
    sys.exit(main())
