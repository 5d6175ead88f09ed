"""Shared test fixtures for wrflow tests."""

import numpy as np
import pytest

from wrflow.model.config import ModelConfig
from wrflow.model.policy import init_policy
from wrflow.rewards.corpus import RewardConfig, build_corpus
from wrflow.sampling.flow import SamplerConfig
from wrflow.training.config import TrainConfig


@pytest.fixture
def tiny_model():
    """Two blocks per stream, d=8, two heads, 3 audio and 4 video tokens."""
    return ModelConfig(
        blocks_audio=2,
        blocks_video=2,
        d_model=8,
        heads=2,
        n_audio_tokens=3,
        n_video_tokens=4,
        shallow_boundary=1,
        detach_ratio=0.1,
        prompt_vocab=4,
        ff_mult=2,
    ).validate()


@pytest.fixture
def tiny_config(tiny_model):
    """Two-iteration training config on the tiny model."""
    return TrainConfig(
        iterations=2,
        group_size=4,
        minibatch_size=2,
        model=tiny_model,
        sampler=SamplerConfig(num_steps=4, late_steps=(2, 3)),
        rewards=RewardConfig(n_prompts=2, n_pairs=2),
    ).validate()


@pytest.fixture
def policy(tiny_model):
    """Freshly initialized policy with zero output projections."""
    return init_policy(tiny_model, seed=0)


@pytest.fixture
def live_policy(tiny_model):
    """Policy with random output projections, so gradients reach every block."""
    return init_policy(tiny_model, seed=0, zero_output=False)


@pytest.fixture
def old_live_policy(tiny_model):
    """A second non-zero-output policy to act as the old policy."""
    return init_policy(tiny_model, seed=1, zero_output=False)


@pytest.fixture
def prompts(tiny_config):
    """Prompt corpus matching ``tiny_config``."""
    return build_corpus(tiny_config.rewards, tiny_config.model)


@pytest.fixture
def rng():
    """Seeded generator for test data."""
    return np.random.default_rng(42)


@pytest.fixture
def latents(tiny_model, rng):
    """Random (audio, video) latent pair on the tiny model's shapes."""
    d = tiny_model.d_model
    return (
        rng.standard_normal((tiny_model.n_audio_tokens, d)),
        rng.standard_normal((tiny_model.n_video_tokens, d)),
    )
