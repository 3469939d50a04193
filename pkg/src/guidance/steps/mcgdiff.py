"""Single-chain MCGDiff transition.

Above the time tau where sigma_tau / alpha_tau = sigma_y the observed block
is drawn from the DDIM Gaussian conditioned on the bridged observation
alpha_s y. At or below tau the step falls back to replacement.
"""

import logging

import numpy as np

from ...schedule import eval_eta
from ..schemas import ChainState, StepContext, StepRecord
from .ddim import ddim_mean
from .replacement import replace_observed

FALLBACK_FLAG = "mcgdiff-fallback"


def bridge_variance(t: float, tau: float, ctx: StepContext) -> float:
    """sigma_{t|tau}^2 = sigma_t^2 - (alpha_t / alpha_tau)^2 sigma_tau^2."""
    ns = ctx.ns
    ratio = float(ns.alpha(t)) / float(ns.alpha(tau))
    return max(float(ns.sigma(t)) ** 2 - ratio ** 2 * float(ns.sigma(tau)) ** 2, 0.0)


def mcgdiff_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """MCGDiff transition for s > tau, replacement otherwise."""
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    tau = ctx.ns.time_at_ratio(ctx.task.sigma_y)
    out = ctx.denoiser(state.x, t)
    mu = ddim_mean(out, s, eta, ctx.ns)
    w = rng.standard_normal(mu.shape)
    residual = ctx.residual(out.x0_hat)

    if s <= tau:
        logging.warning(f"MCGDiff step at s={s:.6g} <= tau={tau:.6g}; using replacement")
        x_s = replace_observed(mu + eta * w, s, ctx, rng)
        record = StepRecord(step=state.k - 1, time=s, eta=eta, gamma=1.0, residual=residual, flags=[FALLBACK_FLAG])
        return state.advance(x_s, ctx.spec.nfe_per_step, record)

    var_bridge = bridge_variance(t, tau, ctx)
    denom = eta ** 2 + var_bridge
    gamma = eta ** 2 / denom if denom > 0 else 0.0

    mean = np.array(mu, copy=True)
    std = np.full_like(mean, eta)
    o = ctx.task.observed
    if len(o):
        mean[..., o] = (1.0 - gamma) * mu[..., o] + gamma * float(ctx.ns.alpha(s)) * ctx.task.y
        std[..., o] = np.sqrt(var_bridge * gamma)
    record = StepRecord(step=state.k - 1, time=s, eta=eta, gamma=gamma, residual=residual)
    return state.advance(mean + std * w, ctx.spec.nfe_per_step, record)
