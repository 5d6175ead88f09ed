"""
Diagnostic suite: advantage conflicts, KV blocking, layer-wise gradient
profiles, gradient checks, region-strength sweeps and rollout dumps.

Every function returns plain dataclasses or polars tables; the CLI only
formats them.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import polars as pl

from wrflow.autodiff import Tensor, check_gradients, detach_surrogate
from wrflow.model.attention import AttentionCache
from wrflow.model.config import BlockMask, CrossDirection, ModelConfig, SurgeryConfig
from wrflow.model.diagnostics import grad_norm_table, named_gradients, surgery_probe_gradients
from wrflow.model.policy import DualStreamPolicy, init_policy
from wrflow.objective.advantages import conflict_mask
from wrflow.objective.loss import nft_branch_loss, total_loss
from wrflow.objective.region import token_scores, weights_from_scores
from wrflow.rewards.corpus import build_corpus
from wrflow.rewards.synthetic import PromptSpec, reward_sync
from wrflow.sampling.flow import LatentPair, prior_latents, rollout_group
from wrflow.training.config import TrainConfig
from wrflow.training.trainer import BufferEntry, sampling_stage

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
SCALING_TOLERANCE = 1e-10
SCALING_FLOOR = 1e-6

MINIATURE_MODEL = ModelConfig(
    blocks_audio=2,
    blocks_video=2,
    d_model=8,
    heads=2,
    n_audio_tokens=3,
    n_video_tokens=4,
    shallow_boundary=1,
    prompt_vocab=4,
)


# -------------------------------------------------------------------------
# Rollout dumps and advantage conflicts
# -------------------------------------------------------------------------


_DUMP_SCHEMA = {
    "iteration": pl.Int64,
    "prompt_id": pl.Int64,
    "rollout_index": pl.Int64,
    "reward_video": pl.Float64,
    "reward_audio": pl.Float64,
    "reward_sync": pl.Float64,
    "scored_video": pl.Float64,
    "scored_audio": pl.Float64,
    "a_v": pl.Float64,
    "a_a": pl.Float64,
    "a_av": pl.Float64,
    "r_v": pl.Float64,
    "r_a": pl.Float64,
    "weights": pl.List(pl.Float64),
}


def entries_frame(entries: Sequence[BufferEntry]) -> pl.DataFrame:
    """One row per buffer entry (latents omitted); ``scored_*`` include any injected conflict."""
    rows = [
        {
            "iteration": e.iteration,
            "prompt_id": e.prompt_id,
            "rollout_index": e.rollout_index,
            "reward_video": e.rewards.video,
            "reward_audio": e.rewards.audio,
            "reward_sync": e.rewards.sync,
            "scored_video": (e.scored_rewards or e.rewards).video,
            "scored_audio": (e.scored_rewards or e.rewards).audio,
            "a_v": e.a_v,
            "a_a": e.a_a,
            "a_av": e.a_av,
            "r_v": e.r_v,
            "r_a": e.r_a,
            "weights": [float(w) for w in e.weights],
        }
        for e in entries
    ]
    return pl.DataFrame(rows, schema=_DUMP_SCHEMA) if rows else pl.DataFrame(schema=_DUMP_SCHEMA)


def write_rollout_dump(entries: Sequence[BufferEntry], path: Union[str, Path]) -> Path:
    """Write buffer entries as JSON lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries_frame(entries).write_ndjson(path)
    return path


def read_rollout_dump(path: Union[str, Path]) -> pl.DataFrame:
    path = Path(path)
    if path.stat().st_size == 0:
        return pl.DataFrame(schema=_DUMP_SCHEMA)
    return pl.read_ndjson(path, schema=_DUMP_SCHEMA)


@dataclass
class ConflictReport:
    """Fraction of rollouts whose video and audio advantages disagree in sign."""

    rate: float
    n_samples: int
    n_groups: int
    scatter: pl.DataFrame


def conflict_report(frame: pl.DataFrame) -> ConflictReport:
    """
    Conflict statistics over a rollout table (dump or ``entries_frame``).

    Raises:
        ValueError: empty table
    """
    if frame.height == 0:
        raise ValueError("conflict_report: no rollouts to analyze")
    mask = conflict_mask(frame["a_v"].to_numpy(), frame["a_a"].to_numpy())
    scatter = frame.select(["iteration", "prompt_id", "rollout_index", "a_v", "a_a"]).with_columns(
        pl.Series("conflict", mask)
    )
    n_groups = frame.select(["iteration", "prompt_id"]).unique().height
    return ConflictReport(
        rate=float(mask.mean()), n_samples=frame.height, n_groups=n_groups, scatter=scatter
    )


def sample_entries(
    config: TrainConfig,
    policy: Optional[DualStreamPolicy] = None,
    n_groups: Optional[int] = None,
    prompts: Optional[Sequence[PromptSpec]] = None,
) -> List[BufferEntry]:
    """
    Run the sampling stage over ``n_groups`` groups without training.

    Groups cycle through the corpus; each pass over it uses a fresh
    sampler seed, so ``n_groups`` may exceed the number of prompts.
    """
    policy = policy or init_policy(config.model, seed=config.seed)
    prompts = list(prompts) if prompts is not None else build_corpus(config.rewards, config.model)
    n_groups = n_groups or len(prompts)

    entries: List[BufferEntry] = []
    for g in range(n_groups):
        spec = prompts[g % len(prompts)]
        entries.extend(sampling_stage(policy, [spec], config, iteration=g // len(prompts)))
    return entries


def diagnose_conflict(
    config: TrainConfig,
    policy: Optional[DualStreamPolicy] = None,
    n_groups: Optional[int] = None,
    prompts: Optional[Sequence[PromptSpec]] = None,
) -> ConflictReport:
    """Sample groups live and report advantage conflicts."""
    entries = sample_entries(config, policy, n_groups, prompts)
    report = conflict_report(entries_frame(entries))
    logger.info(f"Conflict rate {report.rate:.3f} over {report.n_samples} rollouts")
    return report


# -------------------------------------------------------------------------
# KV blocking
# -------------------------------------------------------------------------


def parse_block_ranges(
    spec: str, config: ModelConfig, boundary: Optional[int] = None
) -> List[Tuple[str, List[int]]]:
    """
    Parse ``"shallow,deep,0-1,3"`` into labelled block lists.

    ``shallow`` is [0, L), ``deep`` is [L, n_blocks), ``a-b`` is inclusive.
    L is ``boundary`` when given, else the model's shallow boundary.
    """
    split = config.shallow_boundary if boundary is None else int(boundary)
    out = []
    for part in (p.strip() for p in spec.split(",")):
        if not part:
            continue
        if part == "shallow":
            blocks = list(range(split))
        elif part == "deep":
            blocks = list(range(split, config.n_blocks))
        elif part == "all":
            blocks = list(range(config.n_blocks))
        elif part == "none":
            blocks = []
        else:
            try:
                lo, _, hi = part.partition("-")
                blocks = list(range(int(lo), int(hi or lo) + 1))
            except ValueError:
                raise ValueError(f"Bad block range {part!r}; use e.g. 0-2, 4, shallow, deep") from None
        BlockMask.of(CrossDirection.V2A, blocks).validate(config)
        out.append((part, blocks))
    if not out:
        raise ValueError("No block ranges given")
    return out


def blocking_independence(
    policy: DualStreamPolicy, direction: CrossDirection = CrossDirection.V2A, seed: int = 0
) -> bool:
    """
    Perturbation probe of a fully blocked direction.

    With every V2A sublayer masked, perturbing the video input must leave
    the audio output bit-identical (and symmetrically for A2V).
    """
    cfg = policy.config
    rng = np.random.default_rng(seed)
    x_a = rng.standard_normal((cfg.n_audio_tokens, cfg.d_model))
    x_v = rng.standard_normal((cfg.n_video_tokens, cfg.d_model))
    mask = BlockMask.all_blocks(direction, cfg)

    v_a, v_v, _ = policy.predict_velocity(x_a, x_v, 0.5, 0, mask=mask)
    if direction is CrossDirection.V2A:
        w_a, _, _ = policy.predict_velocity(x_a, x_v + rng.standard_normal(x_v.shape), 0.5, 0, mask=mask)
        return bool(np.array_equal(v_a, w_a))
    _, w_v, _ = policy.predict_velocity(x_a + rng.standard_normal(x_a.shape), x_v, 0.5, 0, mask=mask)
    return bool(np.array_equal(v_v, w_v))


@dataclass
class KvAblationReport:
    table: pl.DataFrame
    baseline_sync: float
    v2a_independent: bool


def _mean_sync(
    policy: DualStreamPolicy,
    prompts: Sequence[PromptSpec],
    config: TrainConfig,
    mask: Optional[BlockMask],
) -> float:
    scores = []
    sampler = config.iteration_sampler(0)
    for spec in prompts:
        for rollout in rollout_group(policy, spec.id, config.group_size, sampler, mask=mask):
            scores.append(reward_sync(rollout.x0.audio, rollout.x0.video, spec))
    return float(np.mean(scores))


def ablate_kv(
    policy: DualStreamPolicy,
    config: TrainConfig,
    direction: Union[str, CrossDirection],
    ranges: Sequence[Tuple[str, Iterable[int]]],
    prompts: Optional[Sequence[PromptSpec]] = None,
) -> KvAblationReport:
    """
    Sync reward with cross-attention blocked per block range.

    Every range is sampled with the same seeds as the unmasked baseline,
    so an empty range reports a delta of exactly zero.
    """
    prompts = list(prompts) if prompts is not None else build_corpus(config.rewards, config.model)
    baseline = _mean_sync(policy, prompts, config, None)

    rows = []
    for label, blocks in ranges:
        blocks = sorted(blocks)
        mask = BlockMask.of(direction, blocks)
        score = _mean_sync(policy, prompts, config, mask)
        rows.append(
            {
                "range": label,
                "direction": mask.direction.value,
                "blocks": ",".join(str(b) for b in blocks),
                "reward_sync": score,
                "delta": score - baseline,
            }
        )
    table = pl.DataFrame(
        rows,
        schema={
            "range": pl.Utf8,
            "direction": pl.Utf8,
            "blocks": pl.Utf8,
            "reward_sync": pl.Float64,
            "delta": pl.Float64,
        },
    )
    return KvAblationReport(
        table=table,
        baseline_sync=baseline,
        v2a_independent=blocking_independence(policy, CrossDirection.V2A, config.seed),
    )


# -------------------------------------------------------------------------
# Gradient profiles
# -------------------------------------------------------------------------


def probe_point(config: ModelConfig, seed: int, c: int = 0) -> Tuple[LatentPair, LatentPair]:
    """Seeded (x0, x1) pair for gradient probes."""
    x0 = prior_latents(config, seed, c, 0)
    x1 = prior_latents(config, seed + 1, c, 0)
    return x0, x1


def probe_loss(
    policy: DualStreamPolicy,
    old_policy: DualStreamPolicy,
    config: TrainConfig,
    surgery: Optional[SurgeryConfig],
    r: float = 1.0,
    t: float = 0.5,
    beta: Optional[float] = None,
) -> Tensor:
    """Composite loss on a fixed seeded point with uniform region weights."""
    x0, x1 = probe_point(policy.config, config.seed)
    nft = config.nft()
    if beta is not None:
        nft = replace(nft, beta=beta)
    branches = nft_branch_loss(
        policy, old_policy, x0, x1, t, 0, r, r, config=nft, surgery=surgery
    )
    return total_loss(branches)


def profile_gradients(
    config: TrainConfig,
    policy: Optional[DualStreamPolicy] = None,
    old_policy: Optional[DualStreamPolicy] = None,
) -> pl.DataFrame:
    """
    Layer-wise gradient norms with surgery off and on, on one probe batch.

    Columns: stream, block, path, grad_norm, grad_norm_surgery, ratio.
    Without a policy, a freshly initialized one with nonzero output
    projections is used so gradients reach every layer.
    """
    policy = policy or init_policy(config.model, seed=config.seed, zero_output=False)
    old_policy = old_policy or init_policy(config.model, seed=config.seed + 1, zero_output=False)

    on = replace(config.surgery_config(), enabled=True)
    plain = grad_norm_table(named_gradients(policy, probe_loss(policy, old_policy, config, None)))
    cut = grad_norm_table(named_gradients(policy, probe_loss(policy, old_policy, config, on)))

    table = plain.join(
        cut.rename({"grad_norm": "grad_norm_surgery"}), on=["stream", "block", "path"], how="left"
    )
    return table.with_columns(
        pl.when(pl.col("grad_norm") > 0)
        .then(pl.col("grad_norm_surgery") / pl.col("grad_norm"))
        .otherwise(None)
        .alias("ratio")
    )


# -------------------------------------------------------------------------
# Gradient checks
# -------------------------------------------------------------------------


@dataclass
class GradcheckReport:
    """Finite-difference and surgery-contract measurements on a miniature model."""

    max_rel_error_plain: float
    max_rel_error_surgery: float
    worst_parameter: str
    n_coordinates: int
    beta_zero_max_grad: float
    detach_ratio: float
    scaling_max_deviation: float
    full_detach_max_grad: float
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return (
            self.max_rel_error_plain <= self.tolerance
            and self.max_rel_error_surgery <= self.tolerance
            and self.beta_zero_max_grad == 0.0
            and self.scaling_max_deviation <= SCALING_TOLERANCE
            and self.full_detach_max_grad == 0.0
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_rel_error_plain": self.max_rel_error_plain,
            "max_rel_error_surgery": self.max_rel_error_surgery,
            "worst_parameter": self.worst_parameter,
            "n_coordinates": self.n_coordinates,
            "beta_zero_max_grad": self.beta_zero_max_grad,
            "detach_ratio": self.detach_ratio,
            "scaling_max_deviation": self.scaling_max_deviation,
            "full_detach_max_grad": self.full_detach_max_grad,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _max_abs(grads: Dict[str, np.ndarray]) -> float:
    return max((float(np.max(np.abs(g))) for g in grads.values() if g.size), default=0.0)


def scaling_deviation(alpha: float, policy: DualStreamPolicy, seed: int = 0) -> float:
    """
    Worst elementwise relative deviation of probe gradients from ``(1 - alpha)`` scaling.

    Denominators are floored at ``SCALING_FLOOR`` times the tensor's largest
    reference gradient, so coordinates where paths cancel are measured on
    the tensor's own scale. A zero reference tensor must stay exactly zero.
    """
    reference = surgery_probe_gradients(policy, 0.0, seed=seed)
    scaled = surgery_probe_gradients(policy, alpha, seed=seed)
    worst = 0.0
    for name, ref in reference.items():
        if not ref.size:
            continue
        expected = (1.0 - alpha) * ref
        top = float(np.max(np.abs(expected)))
        if top == 0.0:
            if np.any(scaled[name]):
                return float("inf")
            continue
        denom = np.maximum(np.abs(expected), SCALING_FLOOR * top)
        worst = max(worst, float(np.max(np.abs(scaled[name] - expected) / denom)))
    return worst


def gradcheck_report(
    config: TrainConfig,
    max_coordinates: Optional[int] = 300,
    model: Optional[ModelConfig] = None,
) -> GradcheckReport:
    """
    Verify the composite loss and the surgery contract on a miniature model.

    The finite-difference check runs with surgery off and on (detach ratio
    from ``config``, boundary from the miniature model). With surgery on the
    differences are taken of ``detach_surrogate``, which holds the detached
    audio key/value share at its reference value. The scaling check
    compares isolated-probe gradients at the detach ratio against the
    undetached ones, and the full-detach check requires exactly zero
    audio gradients at ratio 1.
    """
    model = model or replace(MINIATURE_MODEL, detach_ratio=config.surgery_config().detach_ratio)
    cfg = replace(config, model=model, shallow_boundary=None, detach_ratio=None)
    policy = init_policy(model, seed=config.seed, zero_output=False)
    old_policy = init_policy(model, seed=config.seed + 1, zero_output=False)
    surgery = SurgeryConfig.from_model(model, enabled=True, placement=config.surgery_placement)

    r = 0.7
    plain = check_gradients(
        lambda: probe_loss(policy, old_policy, cfg, None, r=r),
        policy.parameters,
        tolerance=GRADCHECK_TOLERANCE,
        max_coordinates=max_coordinates,
        seed=config.seed,
    )
    cut = check_gradients(
        detach_surrogate(lambda: probe_loss(policy, old_policy, cfg, surgery, r=r)),
        policy.parameters,
        tolerance=GRADCHECK_TOLERANCE,
        max_coordinates=max_coordinates,
        seed=config.seed,
    )
    worst = plain.worst_parameter if plain.max_rel_error >= cut.max_rel_error else cut.worst_parameter

    zero_beta = named_gradients(policy, probe_loss(policy, old_policy, cfg, surgery, r=r, beta=0.0))

    report = GradcheckReport(
        max_rel_error_plain=plain.max_rel_error,
        max_rel_error_surgery=cut.max_rel_error,
        worst_parameter=worst,
        n_coordinates=plain.n_coordinates + cut.n_coordinates,
        beta_zero_max_grad=_max_abs(zero_beta),
        detach_ratio=model.detach_ratio,
        scaling_max_deviation=scaling_deviation(model.detach_ratio, policy, config.seed),
        full_detach_max_grad=_max_abs(surgery_probe_gradients(policy, 1.0, seed=config.seed)),
    )
    logger.info(f"Gradcheck {'passed' if report.passed else 'FAILED'}: {report.to_dict()}")
    return report


# -------------------------------------------------------------------------
# Region strength sweep
# -------------------------------------------------------------------------


def sweep_region_strength(cache: AttentionCache, lambdas: Sequence[float]) -> pl.DataFrame:
    """Weight statistics per lambda for one cached rollout."""
    scores = token_scores(cache)
    rows = []
    for lam in lambdas:
        w = weights_from_scores(scores, lam).w
        rows.append(
            {
                "lambda": float(lam),
                "w_min": float(w.min()),
                "w_max": float(w.max()),
                "w_mean": float(w.mean()),
                "spread": float(w.max() - w.min()),
            }
        )
    return pl.DataFrame(rows)


def sample_cache(
    policy: DualStreamPolicy, config: TrainConfig, prompt_id: int = 0
) -> AttentionCache:
    """Late-step attention cache of the first rollout of one prompt."""
    rollouts = rollout_group(
        policy, prompt_id, 1, config.iteration_sampler(0), cache_from=config.boundary
    )
    return rollouts[0].cache


__all__ = [
    "ConflictReport",
    "GradcheckReport",
    "KvAblationReport",
    "MINIATURE_MODEL",
    "ablate_kv",
    "blocking_independence",
    "conflict_report",
    "diagnose_conflict",
    "entries_frame",
    "gradcheck_report",
    "parse_block_ranges",
    "probe_loss",
    "profile_gradients",
    "read_rollout_dump",
    "sample_cache",
    "sample_entries",
    "scaling_deviation",
    "sweep_region_strength",
    "write_rollout_dump",
]
