"""Closed-form transition moments and bias analysis for zero-mean Gaussian priors.

Both the DPS-twisted and the DInG transitions are Gaussian when the prior is
N(0, Sigma). This module computes their moments exactly, the gaps between
them as functions of eta, and the constant eps_s = ||(D_s - alpha_s^-1 I) M||
that controls the mean gap, with its upper bound.
"""

import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import DomainError, InvalidArgumentError
from .priors import GaussianPrior, denoiser_matrix, gaussian_denoise, random_spd, sample_prior
from .schedule import EtaSchedule, NoiseSchedule, eval_eta
from .task import InpaintingTask

MIN_FIT_POINTS = 5


class MomentsLabel(StrEnum):
    DPS = "dps"
    DING = "ding"


@dataclass
class TransitionMoments:
    """Mean and covariance of a Gaussian reverse transition."""
    mean: np.ndarray
    cov: np.ndarray
    label: MomentsLabel

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        return {"label": self.label, "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass
class BiasReport:
    """Gap between the DPS and DInG transitions at one eta.

    Attributes:
        mean_gap: ||mu_dps - mu_ding||.
        cov_gap: Operator norm of Sigma_dps - Sigma_ding.
        eta: DDIM standard deviation.
        epsilon_s: ||(D_s - alpha_s^-1 I) M||.
        epsilon_bound: (sigma_s^2 / alpha_s) / (alpha_s^2 lambda_min + sigma_s^2).
    """
    mean_gap: float
    cov_gap: float
    eta: float
    epsilon_s: float
    epsilon_bound: float

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        return {
            "eta": self.eta,
            "mean_gap": self.mean_gap,
            "cov_gap": self.cov_gap,
            "epsilon_s": self.epsilon_s,
            "epsilon_bound": self.epsilon_bound,
        }


# ==============================
# HELPERS
# ==============================

def _zero_mean(cov: np.ndarray) -> GaussianPrior:
    cov = np.asarray(cov, dtype=float)
    return GaussianPrior(mean=np.zeros(cov.shape[0]), cov=cov)


def _resolve_eta(es: Optional[EtaSchedule], s: float, t: float, ns: NoiseSchedule, eta: Optional[float]) -> float:
    if eta is None:
        if es is None:
            raise InvalidArgumentError("either an eta schedule or an explicit eta is required")
        return eval_eta(es, s, t, ns)
    sigma_s = float(ns.sigma(s))
    if eta < 0 or eta > sigma_s + 1e-12:
        raise InvalidArgumentError(f"eta must lie in [0, sigma_s = {sigma_s}], got {eta}")
    return float(eta)


def ddim_transition_mean(prior: GaussianPrior, x_t: np.ndarray, s: float, t: float, ns: NoiseSchedule, eta: float) -> np.ndarray:
    """mu_{s|t}(x_t) = alpha_s x0_hat + sqrt(sigma_s^2 - eta^2) x1_hat."""
    out = gaussian_denoise(prior, np.asarray(x_t, dtype=float), t, ns)
    sigma_s = float(ns.sigma(s))
    return float(ns.alpha(s)) * out.x0_hat + math.sqrt(max(sigma_s ** 2 - eta ** 2, 0.0)) * out.x1_hat


def _spd_inverse(matrix: np.ndarray) -> np.ndarray:
    inverse = linalg.cho_solve(linalg.cho_factor(matrix), np.eye(matrix.shape[0]))
    return 0.5 * (inverse + inverse.T)


def operator_norm(matrix: np.ndarray) -> float:
    """Spectral norm, via the symmetric eigenproblem of A^T A (or of A itself when symmetric)."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] == matrix.shape[1] and np.allclose(matrix, matrix.T, rtol=0.0, atol=0.0):
        return float(np.max(np.abs(linalg.eigvalsh(matrix))))
    return float(math.sqrt(max(linalg.eigvalsh(matrix.T @ matrix)[-1], 0.0)))


# ==============================
# TRANSITION MOMENTS
# ==============================

def dps_transition_moments(
    cov: np.ndarray,
    x_t: np.ndarray,
    task: InpaintingTask,
    s: float,
    t: float,
    ns: NoiseSchedule,
    es: Optional[EtaSchedule] = None,
    eta: Optional[float] = None,
) -> TransitionMoments:
    """Moments of the DPS-twisted DDIM transition under the prior N(0, cov).

    Sigma = (eta^-2 I + sigma_y^-2 D_s^T M D_s)^-1 and
    mu = Sigma (eta^-2 mu_{s|t} + sigma_y^-2 D_s^T P^T y).

    Args:
        cov: Prior covariance.
        x_t: Current state, shape (d,).
        task: Supplies the observed set, y and sigma_y.
        s: Target time.
        t: Current time.
        ns: Interpolation schedule.
        es: Eta schedule, used when ``eta`` is not given.
        eta: Explicit DDIM standard deviation.

    Returns:
        TransitionMoments; with eta = 0 the transition is a point mass at mu_{s|t}.
    """
    prior = _zero_mean(cov)
    eta = _resolve_eta(es, s, t, ns, eta)
    mu = ddim_transition_mean(prior, x_t, s, t, ns, eta)
    d = prior.d
    if eta == 0.0:
        return TransitionMoments(mean=mu, cov=np.zeros((d, d)), label=MomentsLabel.DPS)

    D = denoiser_matrix(prior, s, ns)
    M = np.diag(task.observed_mask.astype(float))
    P = task.projection()
    sigma_y2 = task.sigma_y ** 2
    Sigma = _spd_inverse(np.eye(d) / eta ** 2 + D.T @ M @ D / sigma_y2)
    mean = Sigma @ (mu / eta ** 2 + D.T @ P.T @ task.y / sigma_y2)
    return TransitionMoments(mean=mean, cov=Sigma, label=MomentsLabel.DPS)


def ding_transition_moments(
    cov: np.ndarray,
    x_t: np.ndarray,
    task: InpaintingTask,
    s: float,
    t: float,
    ns: NoiseSchedule,
    es: Optional[EtaSchedule] = None,
    eta: Optional[float] = None,
) -> TransitionMoments:
    """Moments of the DInG transition (proxy marginalized) under the prior N(0, cov).

    With R = I - alpha_s D_s and S = (eta^-2 I + alpha_s^-2 sigma_y^-2 M)^-1:

        mu    = S (eta^-2 mu_{s|t} + sigma_y^-2 alpha_s^-1 P^T y + sigma_y^-2 alpha_s^-2 M R mu_{s|t})
        Sigma = S + eta^2 / (sigma_y^4 alpha_s^4) S M R R^T M S
    """
    prior = _zero_mean(cov)
    eta = _resolve_eta(es, s, t, ns, eta)
    mu = ddim_transition_mean(prior, x_t, s, t, ns, eta)
    d = prior.d
    if eta == 0.0:
        return TransitionMoments(mean=mu, cov=np.zeros((d, d)), label=MomentsLabel.DING)

    alpha = float(ns.alpha(s))
    if alpha == 0.0:
        raise DomainError("DInG moments need alpha_s > 0")
    D = denoiser_matrix(prior, s, ns)
    R = np.eye(d) - alpha * D
    M = np.diag(task.observed_mask.astype(float))
    P = task.projection()
    sigma_y2 = task.sigma_y ** 2

    S = _spd_inverse(np.eye(d) / eta ** 2 + M / (alpha ** 2 * sigma_y2))
    mean = S @ (mu / eta ** 2 + P.T @ task.y / (sigma_y2 * alpha) + M @ R @ mu / (sigma_y2 * alpha ** 2))
    SMR = S @ M @ R
    Sigma = S + eta ** 2 / (sigma_y2 ** 2 * alpha ** 4) * SMR @ SMR.T
    return TransitionMoments(mean=mean, cov=0.5 * (Sigma + Sigma.T), label=MomentsLabel.DING)


# ==============================
# BIAS
# ==============================

def epsilon_and_bound(cov: np.ndarray, task: InpaintingTask, s: float, ns: NoiseSchedule) -> Tuple[float, float]:
    """Return (eps_s, bound) with eps_s = ||(D_s - alpha_s^-1 I) M||_op.

    Raises:
        DomainError: If alpha_s = 0.
    """
    prior = _zero_mean(cov)
    alpha, sigma = float(ns.alpha(s)), float(ns.sigma(s))
    if alpha == 0.0:
        raise DomainError(f"eps_s is undefined at alpha_s = 0 (s={s})")
    D = denoiser_matrix(prior, s, ns)
    M = np.diag(task.observed_mask.astype(float))
    epsilon = operator_norm((D - np.eye(prior.d) / alpha) @ M)
    lam_min = float(linalg.eigvalsh(prior.cov)[0])
    bound = (sigma ** 2 / alpha) / (alpha ** 2 * lam_min + sigma ** 2)
    return epsilon, bound


def bias_scan(
    cov: np.ndarray,
    x_t: np.ndarray,
    task: InpaintingTask,
    s: float,
    t: float,
    ns: NoiseSchedule,
    eta_values: Sequence[float],
) -> List[BiasReport]:
    """DPS versus DInG gaps for each eta, with (x_t, s, t) held fixed.

    Raises:
        InvalidArgumentError: If an eta is not in (0, sigma_s].
    """
    sigma_s = float(ns.sigma(s))
    if not len(eta_values):
        raise InvalidArgumentError("bias scan needs at least one eta")
    for eta in eta_values:
        if not 0.0 < eta <= sigma_s:
            raise InvalidArgumentError(f"eta values must lie in (0, sigma_s = {sigma_s}], got {eta}")

    epsilon, bound = epsilon_and_bound(cov, task, s, ns)
    reports = []
    for eta in eta_values:
        dps = dps_transition_moments(cov, x_t, task, s, t, ns, eta=eta)
        ding = ding_transition_moments(cov, x_t, task, s, t, ns, eta=eta)
        reports.append(BiasReport(
            mean_gap=float(np.linalg.norm(dps.mean - ding.mean)),
            cov_gap=operator_norm(dps.cov - ding.cov),
            eta=float(eta),
            epsilon_s=epsilon,
            epsilon_bound=bound,
        ))
    return reports


def fit_order(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x.

    Raises:
        InvalidArgumentError: With fewer than 5 points or non-positive values.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError(f"x and y must be matching vectors, got {x.shape} and {y.shape}")
    if len(x) < MIN_FIT_POINTS:
        raise InvalidArgumentError(f"order fit needs at least {MIN_FIT_POINTS} points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidArgumentError("order fit needs positive values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def eta_grid(eta_min: float = 1e-3, eta_max: float = 1e-1, points: int = 9) -> np.ndarray:
    """Log-spaced eta values."""
    if not 0 < eta_min <= eta_max or points < 1:
        raise InvalidArgumentError(f"invalid eta range [{eta_min}, {eta_max}] with {points} points")
    return np.geomspace(eta_min, eta_max, points)


def random_instance(
    d: int,
    rng: np.random.Generator,
    ns: NoiseSchedule,
    t: float = 0.6,
    sigma_y: float = 1.0,
    eig_min: float = 0.1,
    eig_max: float = 2.0,
    cov: Optional[np.ndarray] = None,
    masked: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray, InpaintingTask]:
    """Random (cov, x_t, task) for bias checks.

    The reference x_0 is drawn from the prior, x_t from the forward marginal at
    t, and unless ``masked`` is given a random nonempty proper subset of
    coordinates is observed.

    Args:
        cov: Fixed prior covariance; a random SPD matrix is drawn when omitted.
        masked: Fixed masked index set.
    """
    cov = random_spd(d, rng, eig_min, eig_max) if cov is None else np.asarray(cov, dtype=float)
    prior = _zero_mean(cov)
    x0 = sample_prior(prior, 1, rng)[0]
    x_t = float(ns.alpha(t)) * x0 + float(ns.sigma(t)) * rng.standard_normal(d)
    if masked is None:
        n_observed = int(rng.integers(1, d)) if d > 1 else 1
        observed = np.sort(rng.choice(d, size=n_observed, replace=False))
        masked = np.setdiff1d(np.arange(d), observed)
    masked = np.asarray(masked, dtype=np.intp)
    observed = np.setdiff1d(np.arange(d), masked)
    task = InpaintingTask.from_masked(d, masked, x0[observed], sigma_y=sigma_y, x_star=x0)
    return cov, x_t, task
