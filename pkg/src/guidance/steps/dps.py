"""Exact DPS-twisted transition for Gaussian priors.

With a Gaussian prior the DPS potential exp(-|y - P x0_hat(x_s, s)|^2 / (2 sigma_y^2))
is Gaussian in x_s, so the twisted DDIM transition can be sampled exactly:

    Sigma = (eta^-2 I + sigma_y^-2 D_s^T M D_s)^-1
    mean  = Sigma (eta^-2 mu_{s|t} + sigma_y^-2 D_s^T P^T y_eff)

where y_eff = y - P (I - alpha_s D_s) m accounts for a nonzero prior mean.
"""

from typing import Tuple

import numpy as np
from scipy import linalg

from ...errors import UnsupportedMethodError
from ...priors import GaussianPrior, denoiser_matrix
from ...schedule import eval_eta
from ..schemas import ChainState, StepContext, StepRecord
from .ddim import ddim_mean


def dps_conditional(mu: np.ndarray, eta: float, s: float, ctx: StepContext) -> Tuple[np.ndarray, np.ndarray]:
    """Mean (shaped like ``mu``) and covariance (d x d) of the DPS-twisted transition."""
    prior = ctx.prior
    if not isinstance(prior, GaussianPrior):
        raise UnsupportedMethodError("dps-analytic needs a Gaussian prior")
    d = prior.d
    if eta == 0.0:
        return np.array(mu, copy=True), np.zeros((d, d))

    task = ctx.task
    D = denoiser_matrix(prior, s, ctx.ns)
    P = task.projection()
    PD = P @ D
    precision = np.eye(d) / eta ** 2 + PD.T @ PD / task.sigma_y ** 2
    factor = linalg.cho_factor(precision)
    cov = linalg.cho_solve(factor, np.eye(d))
    cov = 0.5 * (cov + cov.T)

    y_eff = task.y - P @ (prior.mean - float(ctx.ns.alpha(s)) * D @ prior.mean)
    rhs = mu / eta ** 2 + PD.T @ y_eff / task.sigma_y ** 2
    mean = linalg.cho_solve(factor, np.atleast_2d(rhs).T).T.reshape(np.shape(mu))
    return mean, cov


def dps_analytic_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """Draw x_s ~ N(mean, Sigma) of the DPS-twisted transition.

    Raises:
        UnsupportedMethodError: If the prior is not Gaussian.
    """
    if not isinstance(ctx.prior, GaussianPrior):
        raise UnsupportedMethodError("dps-analytic needs a Gaussian prior")
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    out = ctx.denoiser(state.x, t)
    mu = ddim_mean(out, s, eta, ctx.ns)
    mean, cov = dps_conditional(mu, eta, s, ctx)
    w = rng.standard_normal(mean.shape)
    if eta > 0.0:
        L = linalg.cholesky(cov, lower=True)
        x_s = mean + w @ L.T
    else:
        x_s = mean
    record = StepRecord(step=state.k - 1, time=s, eta=eta, gamma=float("nan"), residual=ctx.residual(out.x0_hat))
    return state.advance(x_s, ctx.spec.nfe_per_step, record)
