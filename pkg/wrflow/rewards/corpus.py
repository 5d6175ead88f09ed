"""
Prompt corpora: generation, JSON persistence and reward settings.

A corpus file stores only prompt ids, seeds and sync pairings; targets are
regenerated from the seeds, so a file is small and fully reproducible.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from wrflow.errors import ConfigError
from wrflow.model.config import ModelConfig
from wrflow.rewards.synthetic import PromptSpec

logger = logging.getLogger(__name__)

CORPUS_VERSION = 1

# Per-token energy of audio targets, in units of sqrt(d).
TARGET_ENERGY_RANGE = (0.5, 2.0)


@dataclass
class RewardConfig:
    """Reward-side settings of a run."""

    n_prompts: int = 4
    corpus: Optional[str] = None
    conflict_epsilon: float = 0.0
    target_scale: float = 1.0
    n_pairs: int = 4
    seed: int = 0

    def validate(self) -> "RewardConfig":
        if self.n_prompts < 1:
            raise ConfigError("rewards", "n_prompts", f"must be >= 1, got {self.n_prompts}")
        if self.conflict_epsilon < 0:
            raise ConfigError(
                "rewards", "conflict_epsilon", f"must be >= 0, got {self.conflict_epsilon}"
            )
        if self.target_scale <= 0:
            raise ConfigError("rewards", "target_scale", f"must be > 0, got {self.target_scale}")
        if self.n_pairs < 2:
            raise ConfigError("rewards", "n_pairs", f"must be >= 2, got {self.n_pairs}")
        return self


def make_prompt_spec(
    prompt_id: int,
    seed: int,
    config: ModelConfig,
    n_pairs: int = 4,
    target_scale: float = 1.0,
    sync_pairing: Optional[List[List[int]]] = None,
) -> PromptSpec:
    """
    Generate the targets (and, unless given, the sync pairing) of a prompt.

    Video tokens in the pairing are distinct, and so are audio tokens
    whenever there are at least as many audio tokens as pairs. Each audio
    target row gets its own energy from ``TARGET_ENERGY_RANGE``; a paired
    video row copies its partner's energy and unpaired rows have energy 1
    (all times ``sqrt(d) * target_scale``). The targets are therefore
    perfectly synchronized, and a sample approaching them raises the sync
    reward along with both quality rewards.

    The pairing and the targets use separate streams seeded from
    ``(seed, prompt_id)``, so a stored pairing regenerates the same targets.
    """
    n_a, n_v, d = config.n_audio_tokens, config.n_video_tokens, config.d_model
    pairing_rng = np.random.default_rng([int(seed), int(prompt_id), 0])
    target_rng = np.random.default_rng([int(seed), int(prompt_id), 1])

    if sync_pairing is None:
        count = min(n_pairs, n_v)
        video_idx = np.sort(pairing_rng.choice(n_v, size=count, replace=False))
        if count <= n_a:
            audio_idx = pairing_rng.choice(n_a, size=count, replace=False)
        else:
            audio_idx = pairing_rng.integers(0, n_a, size=count)
        pairs = [(int(i), int(j)) for i, j in zip(video_idx, audio_idx)]
    else:
        pairs = [(int(i), int(j)) for i, j in sync_pairing]

    audio_energy = target_rng.permutation(np.geomspace(*TARGET_ENERGY_RANGE, n_a))
    video_energy = np.ones(n_v)
    for i, j in pairs:
        if 0 <= i < n_v and 0 <= j < n_a:
            video_energy[i] = audio_energy[j]

    video_target = target_scale * _rows_with_energy(target_rng, video_energy, d)
    audio_target = target_scale * _rows_with_energy(target_rng, audio_energy, d)

    spec = PromptSpec(
        id=int(prompt_id),
        video_target=video_target,
        audio_target=audio_target,
        sync_pairing=pairs,
        seed=int(seed),
        target_scale=float(target_scale),
    )
    return spec.validate(config)


def _rows_with_energy(rng: np.random.Generator, energy: np.ndarray, d: int) -> np.ndarray:
    """Random directions whose row norms are ``energy * sqrt(d)``."""
    rows = rng.standard_normal((energy.size, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows * (energy * np.sqrt(d))[:, None]


def default_corpus(
    n_prompts: int, seed: int, config: ModelConfig, n_pairs: int = 4, target_scale: float = 1.0
) -> List[PromptSpec]:
    """Prompts 0..n_prompts-1, all generated from one master seed."""
    if n_prompts > config.prompt_vocab:
        raise ConfigError(
            "rewards",
            "n_prompts",
            f"{n_prompts} prompts exceed the model's prompt_vocab {config.prompt_vocab}",
        )
    return [make_prompt_spec(c, seed, config, n_pairs, target_scale) for c in range(n_prompts)]


def save_prompt_corpus(specs: List[PromptSpec], path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = {
        "version": CORPUS_VERSION,
        "prompts": [
            {
                "id": s.id,
                "seed": s.seed,
                "target_scale": s.target_scale,
                "sync_pairing": [list(p) for p in s.sync_pairing],
            }
            for s in specs
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def load_prompt_corpus(path: Union[str, Path], config: ModelConfig) -> List[PromptSpec]:
    """Read a corpus file and regenerate every prompt's targets."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("rewards", "corpus", f"{path} is not valid JSON: {exc}") from None

    if payload.get("version") != CORPUS_VERSION:
        raise ConfigError("rewards", "corpus", f"unsupported corpus version {payload.get('version')}")
    prompts = payload.get("prompts") or []
    if not prompts:
        raise ConfigError("rewards", "corpus", f"{path} lists no prompts")

    specs = [
        make_prompt_spec(
            entry["id"],
            entry["seed"],
            config,
            target_scale=entry.get("target_scale", 1.0),
            sync_pairing=entry["sync_pairing"],
        )
        for entry in prompts
    ]
    logger.info(f"Loaded {len(specs)} prompts from {path}")
    return specs


def build_corpus(rewards: RewardConfig, config: ModelConfig) -> List[PromptSpec]:
    if rewards.corpus:
        return load_prompt_corpus(rewards.corpus, config)
    return default_corpus(rewards.n_prompts, rewards.seed, config, rewards.n_pairs, rewards.target_scale)
