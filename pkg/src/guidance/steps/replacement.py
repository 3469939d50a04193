"""Replacement: overwrite observed coordinates with a noised observation."""

import numpy as np

from ...schedule import eval_eta
from ..schemas import ChainState, StepContext, StepRecord
from .ddim import ddim_mean


def replace_observed(x_s: np.ndarray, s: float, ctx: StepContext, rng: np.random.Generator) -> np.ndarray:
    """Set x_s[observed] = alpha_s y + sigma_s w in place and return x_s."""
    o = ctx.task.observed
    noise = rng.standard_normal(x_s[..., o].shape)
    x_s[..., o] = float(ctx.ns.alpha(s)) * ctx.task.y + float(ctx.ns.sigma(s)) * noise
    return x_s


def replacement_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """Masked coordinates follow DDIM; observed ones are alpha_s y + sigma_s w."""
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    out = ctx.denoiser(state.x, t)
    mu = ddim_mean(out, s, eta, ctx.ns)
    w = rng.standard_normal(mu.shape)
    x_s = replace_observed(mu + eta * w, s, ctx, rng)
    record = StepRecord(step=state.k - 1, time=s, eta=eta, gamma=1.0, residual=ctx.residual(out.x0_hat))
    return state.advance(x_s, ctx.spec.nfe_per_step, record)
