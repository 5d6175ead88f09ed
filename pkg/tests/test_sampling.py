"""Tests for the flow path and the Euler sampler."""

import numpy as np
import pytest

from wrflow.errors import ConfigError, ShapeError
from wrflow.model.attention import AttentionCache
from wrflow.model.config import BlockMask, CrossDirection
from wrflow.sampling import (
    LatentPair,
    SamplerConfig,
    interpolate,
    prior_latents,
    rollout_group,
    sample_ode,
    velocity_target,
)


class ConstantVelocity:
    """Velocity model returning a fixed field and recording the times it saw."""

    def __init__(self, config, v_a, v_v):
        self.config = config
        self.v_a = v_a
        self.v_v = v_v
        self.times = []

    def predict_velocity(
        self, x_a, x_v, t, c, mask=None, cache_attn=False, step=0, surgery=None, cache_from=None
    ):
        self.times.append(t)
        return self.v_a, self.v_v, AttentionCache()


@pytest.fixture
def pair(latents):
    return LatentPair(*latents)


class TestFlowPath:
    """Interpolation and velocity targets."""

    def test_endpoints(self, pair, tiny_model):
        """t=0 gives data, t=1 gives noise."""
        noise = prior_latents(tiny_model, 0, 0, 0)
        np.testing.assert_array_equal(interpolate(pair, noise, 0.0).video, pair.video)
        np.testing.assert_array_equal(interpolate(pair, noise, 1.0).audio, noise.audio)

    def test_midpoint(self, pair, tiny_model):
        """t=0.5 is the average."""
        noise = prior_latents(tiny_model, 0, 0, 0)
        mid = interpolate(pair, noise, 0.5)
        np.testing.assert_allclose(mid.audio, 0.5 * (pair.audio + noise.audio))

    def test_velocity_target(self, pair, tiny_model):
        """Target velocity is x1 - x0."""
        noise = prior_latents(tiny_model, 0, 0, 0)
        target = velocity_target(pair, noise)
        np.testing.assert_array_equal(target.video, noise.video - pair.video)

    @pytest.mark.parametrize("t", [-0.01, 1.01])
    def test_time_range(self, pair, t):
        """t outside [0, 1] is rejected."""
        with pytest.raises(ValueError):
            interpolate(pair, pair, t)

    def test_shape_mismatch(self, pair):
        """Endpoints must share shapes."""
        other = LatentPair(pair.audio[:-1], pair.video)
        with pytest.raises(ShapeError):
            interpolate(pair, other, 0.5)


class TestPrior:
    """Seeded prior latents."""

    def test_reproducible(self, tiny_model):
        """Same (seed, prompt, rollout) gives the same noise."""
        a = prior_latents(tiny_model, 5, 1, 2)
        b = prior_latents(tiny_model, 5, 1, 2)
        np.testing.assert_array_equal(a.audio, b.audio)
        np.testing.assert_array_equal(a.video, b.video)

    def test_rollouts_differ(self, tiny_model):
        """Different rollout indices give different noise."""
        a = prior_latents(tiny_model, 5, 1, 0)
        b = prior_latents(tiny_model, 5, 1, 1)
        assert not np.array_equal(a.video, b.video)

    def test_shapes(self, tiny_model):
        """Prior matches the model's latent shapes."""
        prior = prior_latents(tiny_model, 0, 0, 0).check(tiny_model)
        assert prior.audio.shape == (tiny_model.n_audio_tokens, tiny_model.d_model)


class TestSamplerConfig:
    """Step count and late-step validation."""

    def test_default_late_steps(self):
        """The last four steps are late by default."""
        assert SamplerConfig(num_steps=10).late_step_set == (6, 7, 8, 9)

    def test_few_steps(self):
        """Fewer than four steps are all late."""
        assert SamplerConfig(num_steps=2).late_step_set == (0, 1)

    def test_late_steps_out_of_range(self):
        """Late steps must index existing steps."""
        with pytest.raises(ConfigError, match="sampler.late_steps"):
            SamplerConfig(num_steps=4, late_steps=(4,)).validate()

    def test_num_steps_positive(self):
        """At least one step is required."""
        with pytest.raises(ConfigError, match="num_steps"):
            SamplerConfig(num_steps=0).validate()


class TestEulerSampler:
    """Deterministic integration from t=1 to t=0."""

    def test_time_grid(self, tiny_model):
        """Step k evaluates at t = 1 - k/n."""
        d = tiny_model.d_model
        model = ConstantVelocity(
            tiny_model, np.zeros((tiny_model.n_audio_tokens, d)), np.zeros((tiny_model.n_video_tokens, d))
        )
        sample_ode(model, 0, SamplerConfig(num_steps=4))
        assert model.times == [1.0, 0.75, 0.5, 0.25]

    def test_constant_field_moves_by_velocity(self, tiny_model):
        """n steps of size 1/n move the prior by exactly one velocity."""
        d = tiny_model.d_model
        v_a = np.full((tiny_model.n_audio_tokens, d), 0.5)
        v_v = np.full((tiny_model.n_video_tokens, d), -1.0)
        sampler = SamplerConfig(num_steps=4)
        rollout = sample_ode(ConstantVelocity(tiny_model, v_a, v_v), 2, sampler, rollout_index=1)
        prior = prior_latents(tiny_model, sampler.seed, 2, 1)
        np.testing.assert_allclose(rollout.x0.audio, prior.audio - v_a, atol=1e-12)
        np.testing.assert_allclose(rollout.x0.video, prior.video - v_v, atol=1e-12)

    def test_zero_policy_returns_prior(self, policy, tiny_model):
        """A zero velocity field leaves the prior untouched."""
        sampler = SamplerConfig(num_steps=3, seed=9)
        rollout = sample_ode(policy, 1, sampler)
        np.testing.assert_array_equal(rollout.x0.video, prior_latents(tiny_model, 9, 1, 0).video)

    def test_explicit_prior(self, policy, pair):
        """An explicit starting point replaces the seeded prior."""
        rollout = sample_ode(policy, 0, SamplerConfig(num_steps=2), prior=pair)
        np.testing.assert_array_equal(rollout.x0.audio, pair.audio)

    def test_late_step_cache(self, live_policy):
        """Only late steps populate the cache."""
        sampler = SamplerConfig(num_steps=4, late_steps=(2, 3))
        rollout = sample_ode(live_policy, 0, sampler)
        assert rollout.cache.steps() == [2, 3]
        assert rollout.cache.blocks() == [1]

    def test_masked_cache_is_empty(self, live_policy, tiny_model):
        """Blocking every V2A block leaves nothing to cache."""
        mask = BlockMask.all_blocks(CrossDirection.V2A, tiny_model)
        rollout = sample_ode(live_policy, 0, SamplerConfig(num_steps=4), mask=mask)
        assert len(rollout.cache) == 0

    def test_deterministic(self, live_policy):
        """Same inputs, bit-identical rollouts."""
        sampler = SamplerConfig(num_steps=4, seed=3)
        a = sample_ode(live_policy, 1, sampler, rollout_index=2)
        b = sample_ode(live_policy, 1, sampler, rollout_index=2)
        assert np.array_equal(a.x0.audio, b.x0.audio)
        assert np.array_equal(a.x0.video, b.x0.video)


class TestRolloutGroup:
    """Groups of rollouts for one prompt."""

    def test_group_size(self, live_policy):
        """One rollout per index."""
        group = rollout_group(live_policy, 0, 3, SamplerConfig(num_steps=2))
        assert len(group) == 3
        assert not np.array_equal(group[0].x0.video, group[1].x0.video)

    def test_threads_match_serial(self, live_policy):
        """Worker threads return the same rollouts in index order."""
        sampler = SamplerConfig(num_steps=3, seed=1)
        serial = rollout_group(live_policy, 1, 4, sampler, workers=1)
        threaded = rollout_group(live_policy, 1, 4, sampler, workers=3)
        for a, b in zip(serial, threaded):
            assert np.array_equal(a.x0.audio, b.x0.audio)
            assert np.array_equal(a.x0.video, b.x0.video)

    def test_empty_group(self, live_policy):
        """A group needs at least one rollout."""
        with pytest.raises(ValueError):
            rollout_group(live_policy, 0, 0, SamplerConfig())
