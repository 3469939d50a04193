"""Guided reverse transitions and the sampler driver."""

from .schemas import (
    ChainState,
    CountingDenoiser,
    DelayedVariant,
    MethodKind,
    MethodSpec,
    SamplerResult,
    StepContext,
    StepRecord,
)
from .sampler import STEPS, get_step, run_sampler

__all__ = [
    "ChainState",
    "CountingDenoiser",
    "DelayedVariant",
    "MethodKind",
    "MethodSpec",
    "SamplerResult",
    "StepContext",
    "StepRecord",
    "STEPS",
    "get_step",
    "run_sampler",
]
