"""DiffPIR and its noiseless special case DDNM."""

import numpy as np

from ...priors import DenoiserOutput
from ...schedule import eval_eta
from ..schemas import ChainState, StepContext, StepRecord
from .ddim import ddim_mean

DEFAULT_LAMBDA = 1.0


def _proximal_step(
    state: ChainState,
    s: float,
    t: float,
    ctx: StepContext,
    rng: np.random.Generator,
    lam: float,
    sigma_y: float,
) -> ChainState:
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    alpha_t, sigma_t = float(ctx.ns.alpha(t)), float(ctx.ns.sigma(t))
    out = ctx.denoiser(state.x, t)
    x0_hat = np.array(out.x0_hat, copy=True)

    a = sigma_t ** 2
    b = lam * sigma_y ** 2 * alpha_t ** 2
    o = ctx.task.observed
    if len(o):
        if b == 0.0:
            x0_hat[..., o] = ctx.task.y
        else:
            x0_hat[..., o] = (a * ctx.task.y + b * x0_hat[..., o]) / (a + b)

    x1_hat = (state.x - alpha_t * x0_hat) / sigma_t
    mu = ddim_mean(DenoiserOutput(x0_hat=x0_hat, x1_hat=x1_hat), s, eta, ctx.ns)
    w = rng.standard_normal(mu.shape)
    record = StepRecord(
        step=state.k - 1,
        time=s,
        eta=eta,
        gamma=a / (a + b) if a + b > 0 else 1.0,
        residual=ctx.residual(out.x0_hat),
    )
    return state.advance(mu + eta * w, ctx.spec.nfe_per_step, record)


def diffpir_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """x0_hat[o] <- (sigma_t^2 y + lam sigma_y^2 alpha_t^2 x0_hat[o]) / (sigma_t^2 + lam sigma_y^2 alpha_t^2),
    then recompute x1_hat and take the DDIM move."""
    lam = float(ctx.spec.params.get("lambda", DEFAULT_LAMBDA))
    return _proximal_step(state, s, t, ctx, rng, lam, ctx.task.sigma_y)


def ddnm_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """DiffPIR with sigma_y = 0: observed coordinates of x0_hat are set to y."""
    return _proximal_step(state, s, t, ctx, rng, DEFAULT_LAMBDA, 0.0)
