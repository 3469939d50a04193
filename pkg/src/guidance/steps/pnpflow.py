"""PnP-Flow as a reverse transition.

The loop is rotated so one step costs one denoiser call: denoise at (x_t, t),
take the data-fidelity step on x0_hat, then renoise to time s. The trailing
denoise of the original loop is the next step's (or the finalize) call.
"""

from typing import Optional

import numpy as np

from ..schemas import ChainState, StepContext, StepRecord

DEFAULT_GAMMA_RATIO = 0.8
DIVERGENT_RATIO = 2.0
DIVERGENT_FLAG = "pnpflow-divergent-step"


def step_size(ctx: StepContext) -> float:
    """Configured gamma_n, defaulting to 0.8 sigma_y^2."""
    gamma = ctx.spec.params.get("gamma_n")
    return DEFAULT_GAMMA_RATIO * ctx.task.sigma_y ** 2 if gamma is None else float(gamma)


def pnpflow_step(
    state: ChainState,
    s: float,
    t: float,
    ctx: StepContext,
    rng: np.random.Generator,
    gamma: Optional[float] = None,
) -> ChainState:
    """Fidelity step x0_hat[o] <- (1 - c) x0_hat[o] + c y with c = gamma / sigma_y^2, then renoise.

    Args:
        gamma: Overrides the configured step size (0 gives a plain renoise-denoise iteration).
    """
    gamma = step_size(ctx) if gamma is None else float(gamma)
    c = gamma / ctx.task.sigma_y ** 2
    out = ctx.denoiser(state.x, t)
    x0_hat = np.array(out.x0_hat, copy=True)
    o = ctx.task.observed
    if len(o):
        x0_hat[..., o] = (1.0 - c) * x0_hat[..., o] + c * ctx.task.y

    sigma_s = float(ctx.ns.sigma(s))
    w = rng.standard_normal(x0_hat.shape)
    x_s = float(ctx.ns.alpha(s)) * x0_hat + sigma_s * w
    record = StepRecord(
        step=state.k - 1,
        time=s,
        eta=sigma_s,
        gamma=c,
        residual=ctx.residual(x0_hat),
        flags=[DIVERGENT_FLAG] if c > DIVERGENT_RATIO else [],
    )
    return state.advance(x_s, ctx.spec.nfe_per_step, record, x0_hat=x0_hat)
