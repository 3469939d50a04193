"""Decoupled inpainting guidance (DInG) and its delayed variant.

One DInG step:

    x0_hat, x1_hat = denoiser(x_t, t)
    mu   = alpha_s x0_hat + sqrt(sigma_s^2 - eta_s^2) x1_hat
    z    = mu + eta_s w                                  (proxy)
    x1_z = (z - alpha_s denoiser(z, s).x0_hat) / sigma_s
    x_s  = conditional Gaussian of the DDIM transition twisted by the
           decoupled potential exp(-|alpha_s y + sigma_s x1_z[o] - x_s[o]|^2 / (2 alpha_s^2 sigma_y^2))

The state noise w' is drawn before the proxy noise w, so with nothing
observed the step reproduces ``ddim_step`` bit for bit under the same seed.
"""

import logging
from typing import Tuple

import numpy as np

from ...errors import InvalidArgumentError
from ...schedule import NoiseSchedule, eval_eta
from ...task import InpaintingTask
from ..schemas import ChainState, DelayedVariant, StepContext, StepRecord
from .ddim import ddim_mean

DETERMINISTIC_FLAG = "deterministic-ding-step"


def guidance_weight(eta: float, alpha_s: float, sigma_y: float) -> float:
    """gamma = eta^2 / (eta^2 + alpha_s^2 sigma_y^2); zero when eta is zero."""
    if eta == 0.0:
        return 0.0
    return eta ** 2 / (eta ** 2 + alpha_s ** 2 * sigma_y ** 2)


def ding_conditional(
    mu: np.ndarray,
    x1_proxy: np.ndarray,
    eta: float,
    s: float,
    task: InpaintingTask,
    ns: NoiseSchedule,
) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian parameters of the DInG transition for a fixed proxy.

    Args:
        mu: DDIM mean, shape (..., d).
        x1_proxy: Noise prediction evaluated at the proxy, same shape.
        eta: DDIM standard deviation eta_s.
        s: Target time.
        task: Inpainting task.
        ns: Interpolation schedule.

    Returns:
        (mean, std) with the shape of ``mu``; the covariance is diagonal.
    """
    alpha_s, sigma_s = float(ns.alpha(s)), float(ns.sigma(s))
    gamma = guidance_weight(eta, alpha_s, task.sigma_y)
    mean = np.array(mu, dtype=float, copy=True)
    std = np.full_like(mean, eta)
    o = task.observed
    if len(o):
        target = alpha_s * task.y + sigma_s * x1_proxy[..., o]
        mean[..., o] = (1.0 - gamma) * mu[..., o] + gamma * target
        std[..., o] = alpha_s * task.sigma_y * np.sqrt(gamma)
    return mean, std


def decoupled_log_potential(
    x_s: np.ndarray, x1_proxy: np.ndarray, s: float, task: InpaintingTask, ns: NoiseSchedule
) -> np.ndarray:
    """log of the decoupled potential, up to an additive constant, along the last axis."""
    alpha_s, sigma_s = float(ns.alpha(s)), float(ns.sigma(s))
    o = task.observed
    gap = alpha_s * task.y + sigma_s * x1_proxy[..., o] - x_s[..., o]
    return -np.sum(gap ** 2, axis=-1) / (2.0 * alpha_s ** 2 * task.sigma_y ** 2)


def _check_target(s: float, ns: NoiseSchedule) -> None:
    if s == 0.0:
        raise InvalidArgumentError("guided steps stop at t_1; s = 0 is reached by the final denoiser call")
    if float(ns.sigma(s)) == 0.0:
        raise RuntimeError(f"sigma_s vanished at s={s} > 0")


def _flags(eta: float, task: InpaintingTask, s: float) -> list:
    if eta == 0.0 and not task.unconditional:
        logging.warning(f"DInG step at s={s:.6g} has eta_s = 0; guidance vanishes and the step is plain DDIM")
        return [DETERMINISTIC_FLAG]
    return []


def ding_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """One DInG transition (two denoiser evaluations)."""
    _check_target(s, ctx.ns)
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    alpha_s, sigma_s = float(ctx.ns.alpha(s)), float(ctx.ns.sigma(s))

    out = ctx.denoiser(state.x, t)
    mu = ddim_mean(out, s, eta, ctx.ns)
    w_state = rng.standard_normal(mu.shape)
    w_proxy = rng.standard_normal(mu.shape)

    z = mu + eta * w_proxy
    x1_proxy = (z - alpha_s * ctx.denoiser(z, s).x0_hat) / sigma_s

    mean, std = ding_conditional(mu, x1_proxy, eta, s, ctx.task, ctx.ns)
    record = StepRecord(
        step=state.k - 1,
        time=s,
        eta=eta,
        gamma=guidance_weight(eta, alpha_s, ctx.task.sigma_y),
        residual=ctx.residual(out.x0_hat),
        flags=_flags(eta, ctx.task, s),
    )
    return state.advance(mean + std * w_state, ctx.spec.nfe_per_step, record)


def ding_delayed_step(state: ChainState, s: float, t: float, ctx: StepContext, rng: np.random.Generator) -> ChainState:
    """DInG with the proxy noise prediction replaced by the time-t evaluation (one NFE).

    The ``printed`` variant uses (x_t - sigma_s x1_hat(x_t, t)) / alpha_s and the
    ``corrected`` variant uses (x_t - alpha_s x0_hat(x_t, t)) / sigma_s.
    """
    _check_target(s, ctx.ns)
    eta = eval_eta(ctx.es, s, t, ctx.ns)
    alpha_s, sigma_s = float(ctx.ns.alpha(s)), float(ctx.ns.sigma(s))

    out = ctx.denoiser(state.x, t)
    mu = ddim_mean(out, s, eta, ctx.ns)
    w_state = rng.standard_normal(mu.shape)

    if ctx.spec.params.get("variant", DelayedVariant.PRINTED) == DelayedVariant.CORRECTED:
        x1_proxy = (state.x - alpha_s * out.x0_hat) / sigma_s
    else:
        x1_proxy = (state.x - sigma_s * out.x1_hat) / alpha_s

    mean, std = ding_conditional(mu, x1_proxy, eta, s, ctx.task, ctx.ns)
    record = StepRecord(
        step=state.k - 1,
        time=s,
        eta=eta,
        gamma=guidance_weight(eta, alpha_s, ctx.task.sigma_y),
        residual=ctx.residual(out.x0_hat),
        flags=_flags(eta, ctx.task, s),
    )
    return state.advance(mean + std * w_state, ctx.spec.nfe_per_step, record, cached_noise_pred=out.x1_hat)
