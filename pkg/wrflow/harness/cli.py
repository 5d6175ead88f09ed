"""
Command-line entry point.

Subcommands::

    wrflow train --config configs/toy.yaml --out runs/toy [--seed N] [--mode omninft]
    wrflow gradcheck [--config ...] [--max-coordinates N]
    wrflow diagnose-conflict (--config ... | --dump rollouts.jsonl) [--groups N] [--out DIR]
    wrflow ablate-kv [--config ...] --direction V2A --blocks shallow,deep
    wrflow profile-gradients [--config ...] [--checkpoint policy.ckpt]
    wrflow sweep-region [--config ...] --lambdas 1.25,1.5,1.75
    wrflow export --metrics runs/toy/metrics.jsonl --format csv --out metrics.csv

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import polars as pl

from wrflow import __version__
from wrflow.errors import NumericError, WrflowError
from wrflow.harness.config_file import apply_overrides, dump_run_config, load_run_config, parse_run_config
from wrflow.harness.diagnostics import (
    ablate_kv,
    conflict_report,
    entries_frame,
    gradcheck_report,
    parse_block_ranges,
    profile_gradients,
    read_rollout_dump,
    sample_cache,
    sample_entries,
    sweep_region_strength,
    write_rollout_dump,
)
from wrflow.metrics import EXPORT_FORMATS, MetricsWriter, export_metrics
from wrflow.model.checkpoint import load_checkpoint
from wrflow.model.policy import DualStreamPolicy, init_policy
from wrflow.training.config import TrainConfig, TrainMode
from wrflow.training.trainer import run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class UsageError(WrflowError):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# -------------------------------------------------------------------------
# Shared helpers
# -------------------------------------------------------------------------


def _config(args) -> TrainConfig:
    config = load_run_config(args.config) if args.config else parse_run_config({})
    return apply_overrides(config, seed=args.seed, mode=args.mode)


def _policy(args, config: TrainConfig) -> DualStreamPolicy:
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    return init_policy(config.model, seed=config.seed)


def _with_policy_model(config: TrainConfig, policy: DualStreamPolicy) -> TrainConfig:
    return replace(config, model=policy.config).validate()


def _emit(frame: pl.DataFrame, out: Optional[str], name: str) -> None:
    print(frame)
    if out:
        path = Path(out) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.write_csv(path)
        logger.info(f"Wrote {path}")


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# -------------------------------------------------------------------------
# Commands
# -------------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(config, out / "config.yaml")
    with MetricsWriter(out / "metrics.jsonl") as writer:
        records = run(config, out_dir=out, writer=writer)
    print(f"Trained {len(records)} iterations; outputs in {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _config(args)
    report = gradcheck_report(config, max_coordinates=args.max_coordinates)
    print(json.dumps(report.to_dict(), indent=2))
    if not report.passed:
        raise NumericError("gradient check failed", {"worst_parameter": report.worst_parameter})
    return EXIT_OK


def cmd_diagnose_conflict(args) -> int:
    if args.dump:
        frame = read_rollout_dump(args.dump)
    else:
        config = _config(args)
        policy = _policy(args, config)
        entries = sample_entries(_with_policy_model(config, policy), policy, n_groups=args.groups)
        if args.save_dump:
            write_rollout_dump(entries, args.save_dump)
        frame = entries_frame(entries)

    report = conflict_report(frame)
    print(
        f"conflict rate {report.rate:.4f} over {report.n_samples} rollouts "
        f"in {report.n_groups} groups"
    )
    _emit(report.scatter, args.out, "conflict_scatter.csv")
    return EXIT_OK


def cmd_ablate_kv(args) -> int:
    config = _config(args)
    policy = _policy(args, config)
    config = _with_policy_model(config, policy)
    ranges = parse_block_ranges(args.blocks, config.model, boundary=config.boundary)
    report = ablate_kv(policy, config, args.direction, ranges)
    print(f"baseline reward_sync {report.baseline_sync:.6f}")
    print(f"audio independent of video under full V2A blocking: {report.v2a_independent}")
    _emit(report.table, args.out, "kv_ablation.csv")
    return EXIT_OK


def cmd_profile_gradients(args) -> int:
    config = _config(args)
    policy = load_checkpoint(args.checkpoint) if args.checkpoint else None
    old_policy = load_checkpoint(args.old_checkpoint) if args.old_checkpoint else None
    if policy is not None:
        config = _with_policy_model(config, policy)
    _emit(profile_gradients(config, policy, old_policy), args.out, "grad_norms.csv")
    return EXIT_OK


def cmd_sweep_region(args) -> int:
    config = _config(args)
    policy = _policy(args, config)
    config = _with_policy_model(config, policy)
    cache = sample_cache(policy, config, prompt_id=args.prompt)
    _emit(sweep_region_strength(cache, _floats(args.lambdas)), args.out, "region_sweep.csv")
    return EXIT_OK


def cmd_export(args) -> int:
    frame = export_metrics(args.metrics, args.out, fmt=args.format)
    print(f"Exported {frame.height} records to {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------------
# Parser
# -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wrflow", description="Modality-aware diffusion RL laboratory")
    parser.add_argument("--version", action="version", version=f"wrflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, config_required: bool = False):
        p.add_argument("--config", required=config_required, help="Path to run config YAML")
        p.add_argument("--seed", type=int, help="Override train.seed")
        p.add_argument(
            "--mode", choices=[m.value for m in TrainMode], help="Override train.mode"
        )
        return p

    p = common(sub.add_parser("train", help="Run the training loop"), config_required=True)
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("gradcheck", help="Finite-difference and surgery checks"))
    p.add_argument("--max-coordinates", type=int, default=300)
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("diagnose-conflict", help="Advantage conflict statistics"))
    p.add_argument("--dump", help="Rollout dump to analyze instead of sampling")
    p.add_argument("--save-dump", help="Write sampled rollouts here")
    p.add_argument("--groups", type=int, help="Number of groups to sample")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="Directory for the scatter table")
    p.set_defaults(func=cmd_diagnose_conflict)

    p = common(sub.add_parser("ablate-kv", help="Sync reward under KV blocking"))
    p.add_argument("--direction", default="V2A", choices=["A2V", "V2A", "a2v", "v2a"])
    p.add_argument("--blocks", default="shallow,deep", help="e.g. shallow,deep,0-1,3")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate_kv)

    p = common(sub.add_parser("profile-gradients", help="Layer-wise gradient norms"))
    p.add_argument("--checkpoint")
    p.add_argument("--old-checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile_gradients)

    p = common(sub.add_parser("sweep-region", help="Region weight statistics per lambda"))
    p.add_argument("--lambdas", default="1.25,1.5,1.75")
    p.add_argument("--prompt", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_region)

    p = sub.add_parser("export", help="Convert a metrics file to a table")
    p.add_argument("--metrics", required=True)
    p.add_argument("--format", default="csv", choices=list(EXPORT_FORMATS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        return args.func(args)
    except NumericError as exc:
        logger.error(str(exc))
        return EXIT_NUMERIC
    except (WrflowError, FileNotFoundError, ValueError) as exc:
        logger.error(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
