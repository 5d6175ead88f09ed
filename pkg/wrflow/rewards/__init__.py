"""Synthetic rewards and prompt corpora."""

from wrflow.rewards.synthetic import (
    PromptSpec,
    RewardVector,
    energy_correlation,
    evaluate_rewards,
    inject_conflict,
    reward_audio,
    reward_sync,
    reward_video,
)
from wrflow.rewards.corpus import (
    RewardConfig,
    build_corpus,
    default_corpus,
    load_prompt_corpus,
    make_prompt_spec,
    save_prompt_corpus,
)

__all__ = [
    "PromptSpec",
    "RewardVector",
    "energy_correlation",
    "evaluate_rewards",
    "inject_conflict",
    "reward_audio",
    "reward_sync",
    "reward_video",
    "RewardConfig",
    "build_corpus",
    "default_corpus",
    "load_prompt_corpus",
    "make_prompt_spec",
    "save_prompt_corpus",
]
