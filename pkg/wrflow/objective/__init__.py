"""Advantages, region weights and the composite fine-tuning loss."""

from wrflow.objective.advantages import (
    AdvantageSet,
    compare_strategies,
    compute_advantage_set,
    conflict_mask,
    conflict_rate,
    group_advantages,
    optimality_probability,
    route_advantages,
    shared_advantage,
)
from wrflow.objective.region import (
    RegionWeights,
    region_weights,
    token_scores,
    weights_from_scores,
)
from wrflow.objective.loss import (
    BranchLosses,
    NftConfig,
    branch_objective,
    implicit_policies,
    nft_branch_loss,
    total_loss,
)

__all__ = [
    "AdvantageSet",
    "compare_strategies",
    "compute_advantage_set",
    "conflict_mask",
    "conflict_rate",
    "group_advantages",
    "optimality_probability",
    "route_advantages",
    "shared_advantage",
    "RegionWeights",
    "region_weights",
    "token_scores",
    "weights_from_scores",
    "BranchLosses",
    "NftConfig",
    "branch_objective",
    "implicit_policies",
    "nft_branch_loss",
    "total_loss",
]
