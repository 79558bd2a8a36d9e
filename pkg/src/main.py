"""
Main entry point for the discontinuous least-squares experiments
"""

import argparse
import logging
import multiprocessing as mp
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

base_path = os.path.dirname(os.path.abspath(__file__))
if base_path not in sys.path:
    sys.path.insert(0, base_path)

from benchmarks import WEIGHT_MODES, default_output_name, history_rates, run_experiment, side_condition_diagnostic
from config import SOLVER_PATHS, ConfigError, ExperimentConfig, config_from_mapping, load_config_file, thread_cap
from mesh import DOMAINS, DomainSpec, MeshError, build_initial_mesh, refine_uniformly, write_mesh

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# flag name -> ExperimentConfig field for the scalar options shared by run and sweep
SCALAR_FLAGS = {
    "domain": "domain", "alpha": "alpha", "theta": "theta", "max_ndof": "max_ndof",
    "max_levels": "max_levels", "solver": "solver", "seed": "seed", "workers": "workers",
}


def _add_experiment_flags(parser: argparse.ArgumentParser, lists: bool):
    parser.add_argument("--config", type=Path, help="configuration file (.json or key=value)")
    parser.add_argument("--domain", choices=DOMAINS)
    parser.add_argument("--alpha", type=int, choices=(-1, 1), help="+1 natural penalty, -1 over-penalization")
    parser.add_argument("--theta", type=float, help="Doerfler bulk parameter in (0, 1], 1 = uniform")
    parser.add_argument("--max-ndof", dest="max_ndof", type=int)
    parser.add_argument("--max-levels", dest="max_levels", type=int)
    parser.add_argument("--solver", choices=SOLVER_PATHS)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int, help="assembly threads (run) or worker processes (sweep)")
    parser.add_argument("--iterative", action="store_true", default=None,
                        help="conjugate gradients instead of the direct spd solver")
    if lists:
        parser.add_argument("--ell", help="comma-separated length scales, e.g. 1,10,100")
        parser.add_argument("--degree", "-k", dest="degree", help="comma-separated degrees, e.g. 0,1")
        parser.add_argument("--weight", help=f"comma-separated weight modes out of {','.join(WEIGHT_MODES)}")
    else:
        parser.add_argument("--ell", type=float)
        parser.add_argument("--degree", "-k", dest="degree", type=int)
        parser.add_argument("--weight", choices=WEIGHT_MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlsfem",
                                     description="Discontinuous least-squares FEM experiments for the Poisson model problem")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="logging level (default: INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one adaptive experiment and write its CSV")
    _add_experiment_flags(run, lists=False)
    run.add_argument("--output", "-o", help="CSV path (default: name derived from the parameters)")
    run.add_argument("--dump-mesh", action="store_true", help="write the final mesh next to the CSV")

    sweep = sub.add_parser("sweep", help="run the cartesian product over ell, degree and weight lists")
    _add_experiment_flags(sweep, lists=True)
    sweep.add_argument("--output-dir", type=Path, default=Path("results"))

    diag = sub.add_parser("diagnose-side-condition", help="growth of the mean-jump functional on uniform meshes")
    diag.add_argument("--domain", choices=DOMAINS, default="square")
    diag.add_argument("--ell", type=float, default=1.0)
    diag.add_argument("--levels", type=int, default=4, help="number of uniform refinements")

    verify = sub.add_parser("verify", help="run the invariant suites")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--suite", action="append", help="restrict to the named suite (repeatable)")
    return parser


def _split(text: Optional[str], cast) -> Optional[List]:
    if text is None:
        return None
    try:
        return [cast(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse list {text!r}: {e}") from e


def parse_config(argv: Optional[Sequence[str]] = None) -> Tuple[argparse.Namespace, Optional[ExperimentConfig]]:
    """
    Parse the command line; flags override values of --config files.

    Returns:
        (arguments, config) where config is None for commands without experiment

    Raises:
        ConfigError: for out-of-range values, naming the field
    """
    args = build_parser().parse_args(argv)
    if args.command not in ("run", "sweep"):
        return args, None

    base = load_config_file(args.config) if args.config else ExperimentConfig()
    overrides: Dict[str, object] = {field: getattr(args, flag) for flag, field in SCALAR_FLAGS.items()
                                    if getattr(args, flag) is not None}
    if args.iterative:
        overrides["iterative"] = True
    if args.command == "run":
        for flag, field in (("ell", "ell"), ("degree", "k"), ("weight", "weight"), ("output", "output")):
            if getattr(args, flag) is not None:
                overrides[field] = getattr(args, flag)
    else:
        # the first list entry seeds the base config so its validation covers the sweep
        for flag, field, cast in (("ell", "ell", float), ("degree", "k", int), ("weight", "weight", str)):
            values = _split(getattr(args, flag), cast)
            setattr(args, flag, values)
            if values:
                overrides[field] = values[0]
    return args, config_from_mapping(overrides, base)


def _print_rates(records):
    rates = history_rates(records)
    print("-" * 60)
    for column, slope in rates.items():
        print(f"  slope of {column:15s} vs ndof (last 3 reliable levels): {slope:+.3f}")


def _cmd_run(args, config: ExperimentConfig) -> int:
    config = config.with_updates(workers=thread_cap(config.workers))
    output = Path(config.output or default_output_name(config))
    history, path = run_experiment(config, output)
    _print_rates(history.records)
    print(f"✓ {len(history.records)} levels written to {path} ({history.stop_reason})")
    if args.dump_mesh:
        mesh_path = write_mesh(history.final_mesh, path.with_suffix(".mesh"))
        print(f"✓ final mesh written to {mesh_path}")
    return 0


def _cmd_sweep(args, config: ExperimentConfig) -> int:
    from pipeline import run_sweep, sweep_configs

    configs = sweep_configs(config, args.ell, args.degree, args.weight)
    messages = run_sweep(configs, args.output_dir, workers=thread_cap(config.workers))
    failed = [m for m in messages if m['type'] == 'error']
    if failed:
        print(f"✗ {len(failed)} of {len(messages)} experiments failed", file=sys.stderr)
        return 1
    print(f"✓ {len(messages)} CSV files written to {args.output_dir}")
    return 0


def _cmd_diagnose(args) -> int:
    mesh = build_initial_mesh(DomainSpec(args.domain, args.ell))
    print("=" * 60)
    print(f"SIDE CONDITION DIAGNOSTIC on {args.domain}(ell={args.ell:g})")
    print("=" * 60)
    print(f"{'level':>5} {'triangles':>10} {'lhs':>14} {'rhs':>14} {'lhs ratio':>10}")
    previous = None
    for level in range(args.levels + 1):
        lhs, rhs = side_condition_diagnostic(mesh)
        ratio = f"{lhs / previous:10.4f}" if previous else f"{'':>10}"
        print(f"{level:5d} {mesh.num_triangles:10d} {lhs:14.6e} {rhs:14.6e} {ratio}")
        previous = lhs
        if level < args.levels:
            mesh = refine_uniformly(mesh)
    return 0


def _cmd_verify(args) -> int:
    from verification import run_suites

    results = run_suites(seed=args.seed, names=args.suite)
    if not results:
        raise ConfigError(f"no suite named {', '.join(args.suite)}")
    failed = sum(total - passed for passed, total in results.values())
    if failed:
        print(f"✗ {failed} check(s) failed")
        return 1
    print("✓ all invariant suites passed")
    return 0


def main_dispatch(args: argparse.Namespace, config: Optional[ExperimentConfig]) -> int:
    """Run the selected command and return its exit code."""
    if args.command == "run":
        return _cmd_run(args, config)
    if args.command == "sweep":
        return _cmd_sweep(args, config)
    if args.command == "diagnose-side-condition":
        return _cmd_diagnose(args)
    return _cmd_verify(args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    # Required for multiprocessing on Windows
    mp.freeze_support()
    try:
        args, config = parse_config(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return main_dispatch(args, config)
    except (ConfigError, MeshError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("%s failed", args.command)
        print(f"error: {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
