"""
Online training loop.

Each iteration samples groups with the old policy, scores them and turns
the scores into per-branch optimality probabilities (sampling stage),
takes one pass of minibatch updates on the training policy (training
stage), then blends the training policy into the old policy and clears
the buffer.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from wrflow.autodiff import Tensor
from wrflow.errors import NumericError, WrflowError
from wrflow.metrics import MetricsRecord, MetricsWriter
from wrflow.model.checkpoint import save_checkpoint
from wrflow.model.diagnostics import layer_grad_norms, named_gradients
from wrflow.model.policy import DualStreamPolicy, init_policy
from wrflow.objective.advantages import compute_advantage_set, conflict_mask
from wrflow.objective.loss import nft_branch_loss, total_loss
from wrflow.objective.region import region_weights
from wrflow.rewards.corpus import build_corpus
from wrflow.rewards.synthetic import PromptSpec, RewardVector, evaluate_rewards, inject_conflict
from wrflow.sampling.flow import LatentPair, rollout_group
from wrflow.training.config import TrainConfig
from wrflow.training.optim import Adam

logger = logging.getLogger(__name__)

PROBE_T = 0.5


@dataclass
class BufferEntry:
    """
    One scored rollout waiting for the training stage.

    ``rewards`` are the rollout's own scores; ``scored_rewards`` are the
    values the advantages were computed from, which differ only under
    conflict injection.
    """

    prompt_id: int
    x0: LatentPair
    r_v: float
    r_a: float
    weights: np.ndarray
    iteration: int
    rollout_index: int
    rewards: RewardVector
    scored_rewards: Optional[RewardVector] = None
    a_v: float = 0.0
    a_a: float = 0.0
    a_av: float = 0.0

    def provenance(self) -> Dict[str, int]:
        return {
            "iteration": self.iteration,
            "prompt_id": self.prompt_id,
            "rollout_index": self.rollout_index,
        }


@dataclass
class TrainingStats:
    loss_video: float
    loss_audio: float
    loss_total: float
    updates: int


# -------------------------------------------------------------------------
# Sampling stage
# -------------------------------------------------------------------------


def _group_entries(
    old_policy: DualStreamPolicy, spec: PromptSpec, config: TrainConfig, iteration: int
) -> List[BufferEntry]:
    sampler = config.iteration_sampler(iteration)
    rollouts = rollout_group(
        old_policy,
        spec.id,
        config.group_size,
        sampler,
        workers=config.workers,
        cache_from=config.boundary,
    )

    rewards = [evaluate_rewards(r.x0, spec) for r in rollouts]
    scored = rewards
    eps = config.rewards.conflict_epsilon
    if eps > 0:
        scored = [
            inject_conflict(rw, eps, [config.rewards.seed, iteration, spec.id, j])
            for j, rw in enumerate(rewards)
        ]

    nft = config.nft()
    adv = compute_advantage_set(
        [rw.video for rw in scored],
        [rw.audio for rw in scored],
        [rw.sync for rw in scored],
        routing=config.mode.routing,
        z_floor=nft.z_floor,
        clip=nft.clip,
    )
    if adv.degenerate:
        logger.warning(f"Iteration {iteration}, prompt {spec.id}: no reward spread in group")

    n_video = config.model.n_video_tokens
    entries = []
    for j, (rollout, rw, sw) in enumerate(zip(rollouts, rewards, scored)):
        if config.mode.region_weighting and len(rollout.cache):
            weights = region_weights(rollout.cache, nft.region_strength).w
        else:
            weights = np.ones(n_video)
        entries.append(
            BufferEntry(
                prompt_id=spec.id,
                x0=rollout.x0,
                r_v=float(adv.r_v[j]),
                r_a=float(adv.r_a[j]),
                weights=weights,
                iteration=iteration,
                rollout_index=j,
                rewards=rw,
                scored_rewards=sw,
                a_v=float(adv.a_v[j]),
                a_a=float(adv.a_a[j]),
                a_av=float(adv.a_av[j]),
            )
        )
    return entries


def sampling_stage(
    old_policy: DualStreamPolicy,
    prompts: Sequence[PromptSpec],
    config: TrainConfig,
    iteration: int = 0,
) -> List[BufferEntry]:
    """
    Roll out, score and convert to optimality probabilities.

    Returns ``len(prompts) * group_size`` entries in (prompt, rollout)
    order. The old policy is only read.

    Raises:
        ValueError: no prompts, or a group size below 2
        NumericError: non-finite rewards, with the prompt and iteration
        WrflowError: any other failure while handling a prompt
    """
    if not prompts:
        raise ValueError("sampling_stage: no prompts given")
    if config.group_size < 2:
        raise ValueError(f"sampling_stage: group size must be >= 2, got {config.group_size}")

    buffer: List[BufferEntry] = []
    for spec in prompts:
        context = {"iteration": iteration, "prompt_id": spec.id}
        try:
            buffer.extend(_group_entries(old_policy, spec, config, iteration))
        except NumericError as exc:
            raise NumericError(f"sampling stage failed: {exc}", context) from exc
        except (ValueError, ArithmeticError) as exc:
            raise WrflowError(
                f"sampling stage failed at iteration {iteration}, prompt {spec.id}: {exc}"
            ) from exc
    return buffer


# -------------------------------------------------------------------------
# Training stage
# -------------------------------------------------------------------------


def _training_point(config: TrainConfig, entry: BufferEntry, position: int):
    """Seeded time and fresh prior for one buffer element."""
    rng = np.random.default_rng(
        [config.seed, entry.iteration, entry.prompt_id, entry.rollout_index, position]
    )
    t = float(rng.uniform(config.t_min, config.t_max))
    m = config.model
    x1 = LatentPair(
        rng.standard_normal((m.n_audio_tokens, m.d_model)),
        rng.standard_normal((m.n_video_tokens, m.d_model)),
    )
    return t, x1


def entry_loss(
    policy: DualStreamPolicy,
    old_policy: DualStreamPolicy,
    entry: BufferEntry,
    config: TrainConfig,
    t: float,
    x1: LatentPair,
):
    """Branch losses of one buffer entry at a given time and prior."""
    return nft_branch_loss(
        policy,
        old_policy,
        entry.x0,
        x1,
        t,
        entry.prompt_id,
        entry.r_v,
        entry.r_a,
        weights=entry.weights,
        config=config.nft(),
        surgery=config.surgery_config(),
    )


def training_stage(
    policy: DualStreamPolicy,
    old_policy: DualStreamPolicy,
    buffer: Sequence[BufferEntry],
    config: TrainConfig,
    optimizer: Optional[Adam] = None,
) -> TrainingStats:
    """
    One pass of minibatch updates over the buffer.

    Gradients are averaged over each minibatch (accumulated in buffer
    order) before a single optimizer step. Only ``policy`` changes.

    Raises:
        ValueError: empty buffer
        NumericError: non-finite loss, with the entry's provenance
    """
    if not buffer:
        raise ValueError("training_stage: buffer is empty")
    optimizer = optimizer or Adam(
        policy.parameters, config.learning_rate, config.adam_betas, config.adam_eps
    )

    sums = np.zeros(3)
    for start in range(0, len(buffer), config.minibatch_size):
        batch = buffer[start : start + config.minibatch_size]
        grads = {name: np.zeros_like(p.data) for name, p in policy.parameters.items()}
        for offset, entry in enumerate(batch):
            t, x1 = _training_point(config, entry, start + offset)
            branches = entry_loss(policy, old_policy, entry, config, t, x1)
            loss = total_loss(branches)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value}", {**entry.provenance(), "t": round(t, 6)}
                )
            for name, g in named_gradients(policy, loss).items():
                grads[name] += g
            sums += (branches.video.item(), branches.audio.item(), value)

        for g in grads.values():
            g /= len(batch)
        optimizer.step(grads)
        logger.debug(f"Minibatch at {start}: mean loss {sums[2] / (start + len(batch)):.6f}")

    mean = sums / len(buffer)
    return TrainingStats(
        loss_video=float(mean[0]),
        loss_audio=float(mean[1]),
        loss_total=float(mean[2]),
        updates=optimizer.step_count,
    )


# -------------------------------------------------------------------------
# Old policy and the full loop
# -------------------------------------------------------------------------


def ema_update(old_policy: DualStreamPolicy, policy: DualStreamPolicy, eta: float) -> DualStreamPolicy:
    """``theta_old <- eta * theta_old + (1 - eta) * theta``, in place."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"ema_update: eta must lie in [0, 1], got {eta}")
    if set(old_policy.parameters) != set(policy.parameters):
        raise ValueError("ema_update: policies have different parameter sets")
    for name, old in old_policy.parameters.items():
        new = policy.parameters[name]
        if old.shape != new.shape:
            raise ValueError(f"ema_update: {name} shapes {old.shape} and {new.shape} differ")
        old.data[...] = eta * old.data + (1.0 - eta) * new.data
    return old_policy


def select_prompts(prompts: Sequence[PromptSpec], count: int, iteration: int) -> List[PromptSpec]:
    """Deterministic rotation through the corpus."""
    n = len(prompts)
    return [prompts[(iteration * count + k) % n] for k in range(count)]


def probe_grad_norms(
    policy: DualStreamPolicy,
    old_policy: DualStreamPolicy,
    entry: BufferEntry,
    config: TrainConfig,
) -> List[Dict]:
    """Per-layer gradient norms of one entry's loss at a fixed probe time."""
    _, x1 = _training_point(config, entry, 0)

    def loss_fn(p: DualStreamPolicy, e: BufferEntry) -> Tensor:
        return total_loss(entry_loss(p, old_policy, e, config, PROBE_T, x1))

    return layer_grad_norms(policy, entry, loss_fn).to_dicts()


def _summary(values: Sequence[float]):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run(
    config: TrainConfig,
    out_dir: Union[str, Path, None] = None,
    writer: Optional[MetricsWriter] = None,
    prompts: Optional[Sequence[PromptSpec]] = None,
) -> List[MetricsRecord]:
    """
    Train from a reference initialization.

    Both policies start from ``init_policy(model, seed)``. With ``out_dir``
    the final policies are saved as ``policy.ckpt`` and
    ``old_policy.ckpt``. Records are written to ``writer`` as they are
    produced, so an error leaves a valid prefix behind.

    Returns:
        One MetricsRecord per iteration
    """
    config.validate()
    policy = init_policy(config.model, seed=config.seed)
    old_policy = policy.copy()
    prompts = list(prompts) if prompts is not None else build_corpus(config.rewards, config.model)
    if config.prompts_per_iteration > len(prompts):
        raise ValueError(
            f"prompts_per_iteration {config.prompts_per_iteration} exceeds corpus size {len(prompts)}"
        )
    optimizer = Adam(policy.parameters, config.learning_rate, config.adam_betas, config.adam_eps)

    logger.info(
        f"Training {config.iterations} iterations in mode {config.mode.value} "
        f"({policy.num_parameters()} parameters, {len(prompts)} prompts)"
    )
    records: List[MetricsRecord] = []
    buffer: List[BufferEntry] = []

    for i in range(config.iterations):
        started = time.perf_counter()
        try:
            buffer = sampling_stage(
                old_policy, select_prompts(prompts, config.prompts_per_iteration, i), config, i
            )
            sampled = time.perf_counter()
            stats = training_stage(policy, old_policy, buffer, config, optimizer)
            trained = time.perf_counter()

            grad_norms = None
            if config.profile_every and i % config.profile_every == 0:
                grad_norms = probe_grad_norms(policy, old_policy, buffer[0], config)

            eta = config.ema_decay(i)
            ema_update(old_policy, policy, eta)
        except WrflowError:
            logger.error(f"Iteration {i} failed after {len(records)} complete iterations")
            raise

        video, audio, sync = (
            _summary([getattr(e.rewards, k) for e in buffer]) for k in ("video", "audio", "sync")
        )
        record = MetricsRecord(
            iteration=i,
            mode=config.mode.value,
            reward_video_mean=video[0],
            reward_video_std=video[1],
            reward_audio_mean=audio[0],
            reward_audio_std=audio[1],
            reward_sync_mean=sync[0],
            reward_sync_std=sync[1],
            loss_video=stats.loss_video,
            loss_audio=stats.loss_audio,
            loss_total=stats.loss_total,
            conflict_rate=float(
                conflict_mask([e.a_v for e in buffer], [e.a_a for e in buffer]).mean()
            ),
            ema_decay=eta,
            wall_time=time.time(),
            sampling_seconds=sampled - started,
            training_seconds=trained - sampled,
            grad_norms=grad_norms,
        )
        buffer.clear()
        records.append(record)
        if writer is not None:
            writer.write(record)
        logger.info(
            f"Iteration {i}: R_v={video[0]:.4f} R_a={audio[0]:.4f} R_av={sync[0]:.4f} "
            f"loss={stats.loss_total:.6f}"
        )

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(policy, out_dir / "policy.ckpt")
        save_checkpoint(old_policy, out_dir / "old_policy.ckpt")
    return records
