"""Unconditional DDIM transition."""

import numpy as np

from ...priors import DenoiserOutput
from ...schedule import NoiseSchedule, eval_eta
from ..schemas import ChainState, StepContext, StepRecord


def ddim_mean(out: DenoiserOutput, s: float, eta: float, ns: NoiseSchedule) -> np.ndarray:
    """DDIM mean alpha_s x0_hat + sqrt(sigma_s^2 - eta_s^2) x1_hat."""
    sigma_s = float(ns.sigma(s))
    return float(ns.alpha(s)) * out.x0_hat + np.sqrt(max(sigma_s ** 2 - eta ** 2, 0.0)) * out.x1_hat


def ddim_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """Sample x_s ~ N(mu_{s|t}(x_t), eta_s^2 I) with the denoiser evaluated at (x_t, t).

    Args:
        state: Chains at time t.
        s: Target time, s < t.
        t: Current time.
        ctx: Step context.
        rng: Random generator owned by the chains.

    Returns:
        Chains at time s.
    """
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    out = ctx.denoiser(state.x, t)
    mu = ddim_mean(out, s, eta, ctx.ns)
    w = rng.standard_normal(mu.shape)
    record = StepRecord(step=state.k - 1, time=s, eta=eta, gamma=0.0, residual=ctx.residual(out.x0_hat))
    return state.advance(mu + eta * w, ctx.spec.nfe_per_step, record)
