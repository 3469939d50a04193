"""FlowDPS as a reverse transition."""

import numpy as np

from ...priors import DenoiserOutput
from ...schedule import eval_eta
from ..schemas import ChainState, StepContext, StepRecord
from .ddim import ddim_mean


def flowdps_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """Overwrite x0_hat[o] with alpha_s x0_hat[o] + sigma_s y, then take the DDIM move.

    The noise prediction entering the DDIM mean is the unmodified one from (x_t, t).
    """
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    alpha_s, sigma_s = float(ctx.ns.alpha(s)), float(ctx.ns.sigma(s))
    out = ctx.denoiser(state.x, t)
    x0_hat = np.array(out.x0_hat, copy=True)
    o = ctx.task.observed
    if len(o):
        x0_hat[..., o] = alpha_s * x0_hat[..., o] + sigma_s * ctx.task.y

    mu = ddim_mean(DenoiserOutput(x0_hat=x0_hat, x1_hat=out.x1_hat), s, eta, ctx.ns)
    w = rng.standard_normal(mu.shape)
    record = StepRecord(step=state.k - 1, time=s, eta=eta, gamma=sigma_s, residual=ctx.residual(out.x0_hat))
    return state.advance(mu + eta * w, ctx.spec.nfe_per_step, record)
