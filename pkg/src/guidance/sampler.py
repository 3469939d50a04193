"""Sampler driver: initialize, iterate a method's step down to t_1, finalize."""

import logging
from typing import Callable, Dict, List

import numpy as np

from ..errors import InvalidArgumentError, UnsupportedMethodError
from ..priors import GaussianPrior, Prior
from ..schedule import EtaSchedule, NoiseSchedule, TimeGrid
from ..task import InpaintingTask
from .schemas import ChainState, MethodKind, MethodSpec, SamplerResult, StepContext
from .steps import (
    ddim_step,
    ddnm_step,
    diffpir_step,
    ding_delayed_step,
    ding_step,
    dps_analytic_step,
    flowdps_step,
    mcgdiff_step,
    pnpflow_step,
    replacement_step,
)
from .steps.pnpflow import DIVERGENT_RATIO, step_size

Step = Callable[[ChainState, float, float, StepContext, np.random.Generator], ChainState]

STEPS: Dict[MethodKind, Step] = {
    MethodKind.DDIM: ddim_step,
    MethodKind.DING: ding_step,
    MethodKind.DING_DELAYED: ding_delayed_step,
    MethodKind.REPLACEMENT: replacement_step,
    MethodKind.MCGDIFF: mcgdiff_step,
    MethodKind.PNPFLOW: pnpflow_step,
    MethodKind.FLOWDPS: flowdps_step,
    MethodKind.DIFFPIR: diffpir_step,
    MethodKind.DDNM: ddnm_step,
    MethodKind.DPS_ANALYTIC: dps_analytic_step,
}


def get_step(kind: MethodKind) -> Step:
    """Return the transition function of a method."""
    return STEPS[MethodKind(kind)]


def run_sampler(
    method: MethodSpec,
    prior: Prior,
    task: InpaintingTask,
    grid: TimeGrid,
    ns: NoiseSchedule,
    es: EtaSchedule,
    rng: np.random.Generator,
    n: int = 1,
) -> SamplerResult:
    """Run ``n`` chains of a guided sampler.

    Starts from x ~ N(0, I), applies the method's step for every transition
    t_{k+1} -> t_k with k = K-1 .. 1, then returns the denoiser at (x, t_1).

    Args:
        method: Method and parameters.
        prior: Analytic prior providing the denoiser.
        task: Inpainting task.
        grid: Decreasing time grid.
        ns: Interpolation schedule.
        es: DDIM standard-deviation schedule.
        rng: Generator owned by this batch of chains.
        n: Number of chains, simulated together as an (n, d) batch.

    Returns:
        SamplerResult with samples of shape (n, d) and per-step records.

    Raises:
        UnsupportedMethodError: If dps-analytic is paired with a mixture prior.
        InvalidArgumentError: On dimension mismatch or n < 1.
    """
    if n < 1:
        raise InvalidArgumentError(f"need at least one chain, got {n}")
    if prior.d != task.d:
        raise InvalidArgumentError(f"prior has dimension {prior.d}, task has {task.d}")
    if method.kind == MethodKind.DPS_ANALYTIC and not isinstance(prior, GaussianPrior):
        raise UnsupportedMethodError("dps-analytic needs a Gaussian prior")

    ctx = StepContext.create(method, prior, task, ns, es)
    if method.kind == MethodKind.PNPFLOW:
        ratio = step_size(ctx) / task.sigma_y ** 2
        if ratio > DIVERGENT_RATIO:
            logging.warning(f"PnP-Flow step size gamma/sigma_y^2 = {ratio:.3g} > {DIVERGENT_RATIO}; fidelity step may diverge")
    step = get_step(method.kind)
    state = ChainState(x=rng.standard_normal((n, task.d)), k=grid.K)
    trajectory = []
    for _, s, t in grid.steps():
        state = step(state, s, t, ctx, rng)
        trajectory.append(state.record)

    samples = ctx.denoiser(state.x, grid.t1).x0_hat
    flags: List[str] = []
    for record in trajectory:
        flags.extend(f for f in record.flags if f not in flags)
    return SamplerResult(
        method=method,
        samples=samples,
        nfe=state.nfe_count + 1,
        nfe_calls=ctx.denoiser.calls,
        trajectory=trajectory,
        flags=flags,
    )
