"""Flow-matching path and deterministic ODE sampling."""

from wrflow.sampling.flow import (
    LatentPair,
    Rollout,
    SamplerConfig,
    VelocityModel,
    interpolate,
    prior_latents,
    rollout_group,
    sample_ode,
    velocity_target,
)

__all__ = [
    "LatentPair",
    "Rollout",
    "SamplerConfig",
    "VelocityModel",
    "interpolate",
    "prior_latents",
    "rollout_group",
    "sample_ode",
    "velocity_target",
]
