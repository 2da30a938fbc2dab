#!/usr/bin/env python3
"""
Single entry point for the VI-DGP pipeline.

Subcommands, in pipeline order:
- gen-data          training corpus, truth field and observations
- train-dgp         generative prior (VAE)
- train-surrogate   physics-constrained surrogate(s)
- infer             vi-nn | vi-adjoint | mcmc-nn | mcmc-fem-analog
- gradcheck         surrogate vs adjoint gradient agreement
- render            field file -> PGM image
- report            median summary over all inference runs

Every config key can be overridden on the command line as --<key-with-dashes>.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

from src.main import (
    cmd_gen_data, cmd_gradcheck, cmd_infer, cmd_render, cmd_report, cmd_train_dgp, cmd_train_surrogate,
)
from src.utils.config import PRESETS, SCHEMA, RunConfig, load_config
from src.utils.errors import (
    AssemblyError, ConfigError, ConvergenceError, DomainError, FieldParseError,
    MetricError, NumericalError, TrainingAbortedError,
)
from src.utils.logger import set_log_dir

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_PARSE_IO = 3
EXIT_NUMERICAL = 4

CONFIG_COMMANDS = ["gen-data", "train-dgp", "train-surrogate", "infer", "gradcheck", "report"]


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the documented exit code."""
    if isinstance(error, (FieldParseError, OSError)):
        return EXIT_PARSE_IO
    if isinstance(error, (ConfigError, DomainError, AssemblyError)):
        return EXIT_CONFIG
    if isinstance(error, (NumericalError, ConvergenceError, TrainingAbortedError, MetricError)):
        return EXIT_NUMERICAL
    return EXIT_OTHER


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key=value config file")
    common.add_argument("--preset", type=str, default=None, choices=sorted(PRESETS), help="full, full-channel or desk scale defaults")
    for key in SCHEMA:
        common.add_argument(_flag(key), dest=key, type=str, default=None, help=f"override '{key}'")

    parser = argparse.ArgumentParser(
        description="Variational inference with deep generative priors for Darcy-flow inverse problems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Desk-scale GRF pipeline
  python run.py gen-data --preset desk --out runs/desk
  python run.py train-dgp --preset desk --out runs/desk
  python run.py train-surrogate --preset desk --out runs/desk --all-sizes
  python run.py infer --preset desk --out runs/desk --method vi-nn

  # Noise study row
  python run.py infer --preset desk --out runs/desk --method vi-adjoint --noise-level 0.1

  # Render the posterior mean
  python run.py render runs/desk/infer/vi-nn/noise_0.05/mean.txt mean.pgm
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in CONFIG_COMMANDS:
        cmd = sub.add_parser(name, parents=[common])
        if name == "train-surrogate":
            cmd.add_argument("--all-sizes", action="store_true", help="train one surrogate per surrogate_sizes entry")

    render = sub.add_parser("render")
    render.add_argument("field", type=str, help="FIELD v1 file")
    render.add_argument("image", type=str, help="output .pgm path")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Optional[str]] = {key: getattr(args, key, None) for key in SCHEMA}
    return load_config(args.config, overrides, args.preset)


def _banner(title: str, cfg: Optional[RunConfig] = None) -> None:
    print("=" * 80)
    print(f" {title}")
    print("=" * 80)
    if cfg is not None:
        print(f"Output directory: {cfg['out']}")
        print(f"Seed: {cfg['seed']}")
        print(f"Grid: {cfg['nx']}x{cfg['ny']}, prior: {cfg['prior']}")
        print("=" * 80)


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "render":
        path = cmd_render(args.field, args.image)
        print(f"✓ Image saved to: {path}")
        return EXIT_OK

    cfg = resolve_config(args)
    set_log_dir(os.path.join(cfg["out"], "logs"))
    _banner(args.command.upper(), cfg)

    if args.command == "gen-data":
        paths = cmd_gen_data(cfg)
        print(f"✓ Dataset: {paths['data']}")
        print(f"✓ Truth and observations: {paths['truth']}")
    elif args.command == "train-dgp":
        path, trace = cmd_train_dgp(cfg)
        print(f"✓ Final epoch ELBO: {trace[-1]:.6g}")
        print(f"✓ Model saved to: {path}")
    elif args.command == "train-surrogate":
        sizes: Optional[List[int]] = list(cfg["surrogate_sizes"]) if args.all_sizes else None
        traces = cmd_train_surrogate(cfg, sizes)
        for n, trace in traces.items():
            print(f"✓ N={n}: final epoch J = {trace[-1]:.6g}")
    elif args.command == "infer":
        row = cmd_infer(cfg)
        print(f"Method: {row['method']}  noise: {row['noise_level']}")
        print(f"Iterations: {row['iterations']}")
        print(f"Inference time (s): {row['inference_seconds']:.2f}")
        print(f"Forward evaluations: {row['forward_evals']}")
        print(f"Posterior-mean relative L2 error: {row['rel_l2_error']:.4f} (prior mean: {row['prior_mean_error']:.4f})")
    elif args.command == "gradcheck":
        rows, passed = cmd_gradcheck(cfg)
        print(f"{'block':<8}{'size':>8}{'cos_alpha':>12}{'pairs':>8}")
        print("-" * 36)
        for block, size, cos, n_pairs in rows:
            print(f"{block:<8}{size:>8}{cos:>12.4f}{n_pairs:>8}")
        print(f"\n{'✓ PASS' if passed else '❌ FAIL'} (threshold {cfg['cos_threshold']})")
        return EXIT_OK if passed else EXIT_OTHER
    elif args.command == "report":
        summary = cmd_report(cfg)
        print(f"{'method':<18}{'noise':>8}{'runs':>6}{'median err':>12}{'median s':>12}{'median evals':>14}")
        print("-" * 70)
        for method, noise, runs, err, seconds, evals in summary:
            print(f"{method:<18}{noise:>8.3g}{runs:>6}{err:>12.4f}{seconds:>12.2f}{evals:>14.0f}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except Exception as e:
        message = str(e) if str(e).startswith("[ERROR]") else f"[ERROR] {e}"
        print(f"{message.replace('[ERROR]', f'[ERROR] {type(e).__name__}:', 1)}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
