"""
wrflow - Modality-aware reinforcement learning for joint audio-video flow models

A laboratory-scale dual-stream flow-matching policy trained online with a
negative-aware objective over per-modality rewards. Every component runs on
numpy with a small reverse-mode autodiff, so gradients through gradient
surgery can be verified exactly.

Quick Start:
    >>> import wrflow as wrf
    >>>
    >>> config = wrf.load_run_config("configs/toy.yaml")
    >>> with wrf.MetricsWriter("runs/toy/metrics.jsonl") as writer:
    ...     records = wrf.run(config, out_dir="runs/toy", writer=writer)
    >>>
    >>> # Compare training modes on the same seed
    >>> from dataclasses import replace
    >>> wrf.run(replace(config, mode=wrf.TrainMode.SHARED_ADVANTAGE))
"""

from wrflow.errors import ConfigError, NumericError, ShapeError, WrflowError

from wrflow.model import (
    BlockMask,
    CrossDirection,
    DualStreamPolicy,
    ModelConfig,
    SurgeryConfig,
    SurgeryPlacement,
    init_policy,
    load_checkpoint,
    save_checkpoint,
)

from wrflow.sampling import LatentPair, SamplerConfig, rollout_group, sample_ode

from wrflow.rewards import (
    PromptSpec,
    RewardConfig,
    RewardVector,
    build_corpus,
    evaluate_rewards,
    inject_conflict,
)

from wrflow.objective import (
    NftConfig,
    compute_advantage_set,
    group_advantages,
    nft_branch_loss,
    region_weights,
    total_loss,
)

from wrflow.training import Adam, TrainConfig, TrainMode, run

from wrflow.metrics import MetricsRecord, MetricsWriter, export_metrics, metrics_frame, read_metrics

from wrflow.harness.config_file import load_run_config, parse_run_config

__version__ = "0.1.0"

__all__ = [
    # Errors
    "WrflowError",
    "ConfigError",
    "NumericError",
    "ShapeError",
    # Model
    "ModelConfig",
    "SurgeryConfig",
    "SurgeryPlacement",
    "CrossDirection",
    "BlockMask",
    "DualStreamPolicy",
    "init_policy",
    "save_checkpoint",
    "load_checkpoint",
    # Sampling
    "LatentPair",
    "SamplerConfig",
    "sample_ode",
    "rollout_group",
    # Rewards
    "PromptSpec",
    "RewardConfig",
    "RewardVector",
    "build_corpus",
    "evaluate_rewards",
    "inject_conflict",
    # Objective
    "NftConfig",
    "group_advantages",
    "compute_advantage_set",
    "region_weights",
    "nft_branch_loss",
    "total_loss",
    # Training
    "Adam",
    "TrainConfig",
    "TrainMode",
    "run",
    # Metrics
    "MetricsRecord",
    "MetricsWriter",
    "read_metrics",
    "metrics_frame",
    "export_metrics",
    # Config files
    "load_run_config",
    "parse_run_config",
]
