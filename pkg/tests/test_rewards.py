"""Tests for the synthetic reward suite and prompt corpora."""

import json
from dataclasses import replace

import numpy as np
import pytest

from wrflow.errors import ConfigError, NumericError
from wrflow.objective import conflict_mask, group_advantages
from wrflow.rewards import (
    PromptSpec,
    RewardConfig,
    RewardVector,
    build_corpus,
    default_corpus,
    energy_correlation,
    evaluate_rewards,
    inject_conflict,
    load_prompt_corpus,
    make_prompt_spec,
    reward_audio,
    reward_sync,
    reward_video,
    save_prompt_corpus,
)
from wrflow.sampling import LatentPair


@pytest.fixture
def spec(tiny_model):
    return make_prompt_spec(0, seed=3, config=tiny_model, n_pairs=3)


class TestQualityRewards:
    """Video and audio quality scores."""

    def test_perfect_at_target(self, spec):
        """The target itself scores exactly 1."""
        assert reward_video(spec.video_target, spec) == 1.0
        assert reward_audio(spec.audio_target, spec) == 1.0

    def test_known_value(self, spec):
        """A unit offset everywhere scores exp(-1)."""
        assert reward_video(spec.video_target + 1.0, spec) == pytest.approx(np.exp(-1.0))

    def test_decreases_with_distance(self, spec):
        """Further from the target scores lower."""
        near = reward_audio(spec.audio_target + 0.1, spec)
        far = reward_audio(spec.audio_target + 0.5, spec)
        assert 0.0 < far < near < 1.0


class TestSyncReward:
    """Energy correlation between paired tokens."""

    def test_perfect_correlation(self):
        """Proportional energies correlate perfectly."""
        assert energy_correlation(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 6.0])) == pytest.approx(1.0)

    def test_anti_correlation(self):
        """Reversed energies give -1."""
        assert energy_correlation(np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0])) == pytest.approx(-1.0)

    def test_constant_sequence(self):
        """A constant energy sequence scores 0."""
        assert energy_correlation(np.array([1.0, 1.0, 1.0]), np.array([1.0, 2.0, 3.0])) == 0.0

    def test_paired_tokens(self, tiny_model):
        """Scaling paired audio tokens with paired video tokens gives sync 1."""
        d = tiny_model.d_model
        spec = make_prompt_spec(1, 0, tiny_model, sync_pairing=[[0, 0], [1, 1], [2, 2]])
        x_v = np.zeros((tiny_model.n_video_tokens, d))
        x_a = np.zeros((tiny_model.n_audio_tokens, d))
        for k, scale in enumerate([1.0, 2.0, 4.0]):
            x_v[k] = scale
            x_a[k] = 3.0 * scale
        assert reward_sync(x_a, x_v, spec) == pytest.approx(1.0)

    def test_four_pair_oracle(self, tiny_model):
        """Energies (1, 2, 3, 4) against (2, 4, 6, 8.5) correlate at 0.99838."""
        cfg = replace(tiny_model, n_audio_tokens=4)
        spec = make_prompt_spec(0, 0, cfg, sync_pairing=[[0, 0], [1, 1], [2, 2], [3, 3]])
        v, a = np.array([1.0, 2.0, 3.0, 4.0]), np.array([2.0, 4.0, 6.0, 8.5])
        direction = np.zeros(cfg.d_model)
        direction[3] = 1.0
        x_v = v[:, None] * direction
        x_a = a[:, None] * direction
        score = reward_sync(x_a, x_v, spec)
        assert score == pytest.approx(0.998381, abs=1e-6)
        assert score == pytest.approx(np.corrcoef(v, a)[0, 1], rel=1e-12)

    def test_needs_two_pairs(self, tiny_model):
        """A single pair cannot define a correlation."""
        spec = make_prompt_spec(1, 0, tiny_model, sync_pairing=[[0, 0]])
        with pytest.raises(ValueError, match="at least 2"):
            reward_sync(np.ones((3, 8)), np.ones((4, 8)), spec)

    def test_range(self, spec, rng, tiny_model):
        """Random latents score within [-1, 1]."""
        for _ in range(5):
            x_a = rng.standard_normal((tiny_model.n_audio_tokens, tiny_model.d_model))
            x_v = rng.standard_normal((tiny_model.n_video_tokens, tiny_model.d_model))
            assert -1.0 <= reward_sync(x_a, x_v, spec) <= 1.0


class TestRewardVector:
    """Reward bundles and conflict injection."""

    def test_evaluate(self, spec):
        """evaluate_rewards scores all three modalities."""
        rewards = evaluate_rewards(LatentPair(spec.audio_target, spec.video_target), spec)
        assert rewards.video == 1.0
        assert rewards.audio == 1.0

    def test_non_finite_rejected(self):
        """NaN rewards raise NumericError."""
        with pytest.raises(NumericError):
            RewardVector(video=float("nan"), audio=0.0, sync=0.0)

    def test_conflict_preserves_total_and_sync(self):
        """Injection moves video and audio in opposite directions."""
        base = RewardVector(video=0.5, audio=0.4, sync=0.2)
        shifted = inject_conflict(base, 0.3, seed=[0, 1, 2])
        assert shifted.sync == base.sync
        assert shifted.video + shifted.audio == pytest.approx(base.video + base.audio)
        assert abs(shifted.video - base.video) == pytest.approx(0.3)

    def test_conflict_is_seeded(self):
        """Same seed, same sign."""
        base = RewardVector(video=0.5, audio=0.4, sync=0.2)
        assert inject_conflict(base, 0.1, 7) == inject_conflict(base, 0.1, 7)

    def test_conflict_signs_vary(self):
        """Different seeds produce both signs."""
        base = RewardVector(video=0.0, audio=0.0, sync=0.0)
        signs = {np.sign(inject_conflict(base, 1.0, s).video) for s in range(32)}
        assert signs == {-1.0, 1.0}

    def test_zero_epsilon_is_identity(self):
        """epsilon = 0 returns the input."""
        base = RewardVector(video=0.5, audio=0.4, sync=0.2)
        assert inject_conflict(base, 0.0, 1) is base

    def test_negative_epsilon(self):
        """Negative epsilon is rejected."""
        with pytest.raises(ValueError):
            inject_conflict(RewardVector(0.0, 0.0, 0.0), -0.1, 0)

    def test_large_epsilon_makes_conflict_universal(self):
        """Over 1000 groups of 8, a large epsilon drives the conflict rate towards 1."""
        rng = np.random.default_rng(11)

        def rate(epsilon):
            masks = []
            for g in range(1000):
                base = rng.normal(0.5, 0.1, 8)
                clean = [RewardVector(b + rng.normal(0, 0.02), b + rng.normal(0, 0.02), 0.0) for b in base]
                shifted = [inject_conflict(r, epsilon, seed=[3, g, j]) for j, r in enumerate(clean)]
                a_v = group_advantages([r.video for r in shifted])
                a_a = group_advantages([r.audio for r in shifted])
                masks.append(conflict_mask(a_v, a_a))
            return float(np.concatenate(masks).mean())

        clean_rate = rate(0.0)
        large_rate = rate(5.0)
        assert clean_rate < 0.3
        assert large_rate > 0.97


class TestCorpus:
    """Prompt generation and persistence."""

    def test_deterministic(self, tiny_model):
        """Same seed and id, same targets and pairing."""
        a = make_prompt_spec(2, 5, tiny_model)
        b = make_prompt_spec(2, 5, tiny_model)
        np.testing.assert_array_equal(a.video_target, b.video_target)
        assert a.sync_pairing == b.sync_pairing

    def test_distinct_video_tokens(self, tiny_model):
        """Paired video tokens never repeat."""
        spec = make_prompt_spec(0, 1, tiny_model, n_pairs=4)
        video = [i for i, _ in spec.sync_pairing]
        assert len(set(video)) == len(video) == 4

    def test_distinct_audio_tokens(self, tiny_model):
        """With enough audio tokens the paired audio tokens never repeat."""
        spec = make_prompt_spec(0, 1, tiny_model, n_pairs=3)
        audio = [j for _, j in spec.sync_pairing]
        assert len(set(audio)) == len(audio) == 3

    def test_targets_are_synchronized(self, tiny_model):
        """The targets themselves score a perfect sync reward."""
        for prompt_id in range(3):
            spec = make_prompt_spec(prompt_id, 2, tiny_model, n_pairs=3)
            assert reward_sync(spec.audio_target, spec.video_target, spec) == pytest.approx(1.0)

    def test_target_energies(self, tiny_model):
        """Audio rows span the energy range; unpaired video rows have unit energy."""
        spec = make_prompt_spec(0, 6, tiny_model, n_pairs=2, target_scale=1.5)
        unit = 1.5 * np.sqrt(tiny_model.d_model)
        audio = np.linalg.norm(spec.audio_target, axis=1) / unit
        np.testing.assert_allclose(np.sort(audio), np.geomspace(0.5, 2.0, tiny_model.n_audio_tokens))
        paired = {i for i, _ in spec.sync_pairing}
        video = np.linalg.norm(spec.video_target, axis=1) / unit
        for i in range(tiny_model.n_video_tokens):
            if i not in paired:
                assert video[i] == pytest.approx(1.0)

    def test_stored_pairing_regenerates_targets(self, tiny_model):
        """Passing back a generated pairing reproduces the same targets."""
        spec = make_prompt_spec(1, 9, tiny_model)
        again = make_prompt_spec(1, 9, tiny_model, sync_pairing=[list(p) for p in spec.sync_pairing])
        np.testing.assert_array_equal(again.video_target, spec.video_target)
        np.testing.assert_array_equal(again.audio_target, spec.audio_target)

    def test_target_scale(self, tiny_model):
        """target_scale multiplies the generated targets."""
        a = make_prompt_spec(0, 1, tiny_model, target_scale=1.0)
        b = make_prompt_spec(0, 1, tiny_model, target_scale=2.0)
        np.testing.assert_allclose(b.audio_target, 2.0 * a.audio_target)

    def test_default_corpus_ids(self, tiny_model):
        """Prompts are numbered 0..n-1."""
        assert [s.id for s in default_corpus(3, 0, tiny_model)] == [0, 1, 2]

    def test_too_many_prompts(self, tiny_model):
        """The corpus cannot outgrow the prompt vocabulary."""
        with pytest.raises(ConfigError, match="rewards.n_prompts"):
            default_corpus(tiny_model.prompt_vocab + 1, 0, tiny_model)

    def test_pair_out_of_range(self, tiny_model):
        """Pairs must index existing tokens."""
        with pytest.raises(ValueError, match="out of range"):
            make_prompt_spec(0, 0, tiny_model, sync_pairing=[[0, 0], [9, 0]])

    def test_save_and_load(self, tiny_model, tmp_path):
        """A saved corpus regenerates identical prompts."""
        specs = default_corpus(2, 4, tiny_model, n_pairs=3)
        path = save_prompt_corpus(specs, tmp_path / "corpus.json")
        loaded = load_prompt_corpus(path, tiny_model)
        assert [s.sync_pairing for s in loaded] == [s.sync_pairing for s in specs]
        np.testing.assert_array_equal(loaded[1].video_target, specs[1].video_target)

    def test_bad_version(self, tiny_model, tmp_path):
        """Unknown corpus versions are rejected."""
        path = tmp_path / "corpus.json"
        path.write_text(json.dumps({"version": 99, "prompts": []}))
        with pytest.raises(ConfigError, match="version"):
            load_prompt_corpus(path, tiny_model)

    def test_build_from_file(self, tiny_model, tmp_path):
        """A corpus path overrides n_prompts."""
        path = save_prompt_corpus(default_corpus(1, 0, tiny_model), tmp_path / "c.json")
        specs = build_corpus(RewardConfig(n_prompts=3, corpus=str(path)), tiny_model)
        assert len(specs) == 1

    def test_reward_config_validation(self):
        """n_pairs below 2 is rejected."""
        with pytest.raises(ConfigError, match="rewards.n_pairs"):
            RewardConfig(n_pairs=1).validate()

    def test_spec_id_range(self, tiny_model):
        """Prompt ids must fit the vocabulary."""
        spec = make_prompt_spec(0, 0, tiny_model)
        bad = PromptSpec(
            id=tiny_model.prompt_vocab,
            video_target=spec.video_target,
            audio_target=spec.audio_target,
            sync_pairing=spec.sync_pairing,
        )
        with pytest.raises(ValueError):
            bad.validate(tiny_model)
