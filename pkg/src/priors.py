"""Analytic priors with closed-form denoisers and exact inpainting posteriors.

Both priors act on batches: ``x`` is either a single vector of shape (d,) or
an array of shape (n, d), and outputs keep the input's shape.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax
from scipy.stats import ortho_group

from .errors import DomainError, InvalidArgumentError
from .schedule import NoiseSchedule

LOG_2PI = float(np.log(2.0 * np.pi))

# Dense linear algebra only
MAX_DIM = 4096


def _check_spd(cov: np.ndarray, name: str) -> np.ndarray:
    """Return the symmetrized matrix, raising if it is not symmetric positive-definite."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {cov.shape}")
    if cov.shape[0] > MAX_DIM:
        raise InvalidArgumentError(f"{name} has dimension {cov.shape[0]} > {MAX_DIM}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10):
        raise InvalidArgumentError(f"{name} is not symmetric")
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)) or linalg.eigvalsh(cov)[0] <= 0.0:
        raise InvalidArgumentError(f"{name} is not positive-definite")
    return cov


# ==============================
# PRIORS
# ==============================

@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Gaussian prior N(mean, cov)."""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        cov = _check_spd(self.cov, "cov")
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        if mean.shape[0] != cov.shape[0]:
            raise InvalidArgumentError(f"mean has length {mean.shape[0]}, cov is {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        """Convert to dictionary."""
        return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Gaussian mixture prior sum_k w_k N(m_k, C_k).

    Attributes:
        weights: Shape (k,), nonnegative, summing to 1.
        means: Shape (k, d).
        covs: Shape (k, d, d), each symmetric positive-definite.
    """
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"mixture weights must be a probability vector, got {weights}")
        if not (len(weights) == means.shape[0] == covs.shape[0]):
            raise InvalidArgumentError(
                f"component count mismatch: {len(weights)} weights, {means.shape[0]} means, {covs.shape[0]} covs"
            )
        covs = np.stack([_check_spd(c, f"covs[{k}]") for k, c in enumerate(covs)])
        if covs.shape[1] != means.shape[1]:
            raise InvalidArgumentError(f"means have dimension {means.shape[1]}, covs {covs.shape[1:]}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        """Number of components."""
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        """Convert to dictionary."""
        return {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


Prior = Union[GaussianPrior, GmmPrior]


@dataclass(frozen=True, eq=False)
class DenoiserOutput:
    """Denoiser x0_hat = E[X_0 | X_t] and noise predictor x1_hat = E[X_1 | X_t]."""
    x0_hat: np.ndarray
    x1_hat: np.ndarray


# ==============================
# DENOISERS
# ==============================

def _coefficients(t: float, ns: NoiseSchedule) -> Tuple[float, float]:
    alpha, sigma = float(ns.alpha(t)), float(ns.sigma(t))
    if sigma == 0.0 and t != 0.0:
        raise DomainError(f"denoiser needs sigma_t > 0 or t = 0, got t={t}")
    return alpha, sigma


def _identity_output(x_t: np.ndarray) -> DenoiserOutput:
    return DenoiserOutput(x0_hat=np.array(x_t, dtype=float), x1_hat=np.zeros_like(x_t, dtype=float))


def _noise_prediction(x_t: np.ndarray, x0_hat: np.ndarray, alpha: float, sigma: float) -> np.ndarray:
    return (x_t - alpha * x0_hat) / sigma


def denoiser_matrix(p: GaussianPrior, t: float, ns: NoiseSchedule) -> np.ndarray:
    """D_t = alpha_t Sigma (alpha_t^2 Sigma + sigma_t^2 I)^-1, a symmetric matrix."""
    alpha, sigma = _coefficients(t, ns)
    if sigma == 0.0:
        return np.eye(p.d)
    A = alpha ** 2 * p.cov + sigma ** 2 * np.eye(p.d)
    D = alpha * linalg.cho_solve(linalg.cho_factor(A), p.cov)
    return 0.5 * (D + D.T)


def gaussian_denoise(p: GaussianPrior, x_t: np.ndarray, t: float, ns: NoiseSchedule) -> DenoiserOutput:
    """Closed-form posterior mean x0_hat = m + D_t (x_t - alpha_t m).

    Args:
        p: Gaussian prior.
        x_t: State of shape (d,) or (n, d).
        t: Time in [0, 1].
        ns: Interpolation schedule.

    Returns:
        DenoiserOutput with arrays shaped like ``x_t``. At t = 0 the state is returned as is.
    """
    x_t = np.asarray(x_t, dtype=float)
    alpha, sigma = _coefficients(t, ns)
    if sigma == 0.0:
        return _identity_output(x_t)
    D = denoiser_matrix(p, t, ns)
    x0_hat = p.mean + (x_t - alpha * p.mean) @ D
    return DenoiserOutput(x0_hat=x0_hat, x1_hat=_noise_prediction(x_t, x0_hat, alpha, sigma))


def gmm_denoise(p: GmmPrior, x_t: np.ndarray, t: float, ns: NoiseSchedule) -> DenoiserOutput:
    """Posterior-mean denoiser of a Gaussian mixture.

    Responsibilities are computed in log-space, so they never underflow to an
    all-zero vector even for tiny sigma_t.
    """
    x_t = np.asarray(x_t, dtype=float)
    alpha, sigma = _coefficients(t, ns)
    if sigma == 0.0:
        return _identity_output(x_t)

    X = np.atleast_2d(x_t)
    eye = np.eye(p.d)
    log_r = np.empty((X.shape[0], p.k))
    post_means = np.empty((p.k, X.shape[0], p.d))
    with np.errstate(divide="ignore"):
        log_w = np.log(p.weights)
    for k in range(p.k):
        C = p.covs[k]
        factor = linalg.cho_factor(alpha ** 2 * C + sigma ** 2 * eye)
        diff = X - alpha * p.means[k]
        sol = linalg.cho_solve(factor, diff.T).T
        logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
        log_r[:, k] = log_w[k] - 0.5 * (np.sum(diff * sol, axis=1) + logdet + p.d * LOG_2PI)
        post_means[k] = p.means[k] + alpha * sol @ C

    r = softmax(log_r, axis=1)
    x0_hat = np.einsum("nk,knd->nd", r, post_means)
    x0_hat = x0_hat.reshape(x_t.shape)
    return DenoiserOutput(x0_hat=x0_hat, x1_hat=_noise_prediction(x_t, x0_hat, alpha, sigma))


def denoise(p: Prior, x_t: np.ndarray, t: float, ns: NoiseSchedule) -> DenoiserOutput:
    """Dispatch to the closed-form denoiser of ``p``."""
    if isinstance(p, GaussianPrior):
        return gaussian_denoise(p, x_t, t, ns)
    return gmm_denoise(p, x_t, t, ns)


# ==============================
# POSTERIOR
# ==============================

def _condition_gaussian(
    mean: np.ndarray, cov: np.ndarray, observed: np.ndarray, y: np.ndarray, sigma_y: float
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Kalman update on the observed coordinates; also returns log N(y; mean_o, S)."""
    S = cov[np.ix_(observed, observed)] + sigma_y ** 2 * np.eye(len(observed))
    factor = linalg.cho_factor(S)
    innovation = y - mean[observed]
    gain_t = linalg.cho_solve(factor, cov[observed, :])  # (S^-1 Sigma_o:), i.e. K^T
    post_mean = mean + innovation @ gain_t
    post_cov = cov - cov[:, observed] @ gain_t
    post_cov = 0.5 * (post_cov + post_cov.T)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    loglik = -0.5 * (innovation @ linalg.cho_solve(factor, innovation) + logdet + len(observed) * LOG_2PI)
    return post_mean, post_cov, float(loglik)


def exact_inpaint_posterior(p: Prior, task) -> Prior:
    """Exact posterior of the prior under y = x[observed] + sigma_y * noise.

    Args:
        p: Gaussian or Gaussian mixture prior.
        task: The inpainting task carrying ``observed``, ``y`` and ``sigma_y``.

    Returns:
        A prior of the same family. An empty observed set returns ``p`` itself.
    """
    if task.sigma_y <= 0:
        raise InvalidArgumentError(f"sigma_y must be positive, got {task.sigma_y}")
    if len(task.observed) == 0:
        return p
    if isinstance(p, GaussianPrior):
        mean, cov, _ = _condition_gaussian(p.mean, p.cov, task.observed, task.y, task.sigma_y)
        return GaussianPrior(mean=mean, cov=cov)

    means, covs, log_w = [], [], []
    with np.errstate(divide="ignore"):
        base = np.log(p.weights)
    for k in range(p.k):
        mean, cov, loglik = _condition_gaussian(p.means[k], p.covs[k], task.observed, task.y, task.sigma_y)
        means.append(mean)
        covs.append(cov)
        log_w.append(base[k] + loglik)
    log_w = np.asarray(log_w)
    weights = np.exp(log_w - logsumexp(log_w))
    weights /= weights.sum()
    return GmmPrior(weights=weights, means=np.stack(means), covs=np.stack(covs))


# ==============================
# SAMPLING AND MOMENTS
# ==============================

def sample_prior(p: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` exact samples, returned with shape (n, d)."""
    if n < 1:
        raise InvalidArgumentError(f"need n >= 1 samples, got {n}")
    if isinstance(p, GaussianPrior):
        L = linalg.cholesky(p.cov, lower=True)
        return p.mean + rng.standard_normal((n, p.d)) @ L.T

    labels = rng.choice(p.k, size=n, p=p.weights)
    z = rng.standard_normal((n, p.d))
    out = np.empty((n, p.d))
    for k in range(p.k):
        rows = labels == k
        L = linalg.cholesky(p.covs[k], lower=True)
        out[rows] = p.means[k] + z[rows] @ L.T
    return out


def moments(p: Prior) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the prior (mixture moments in closed form)."""
    if isinstance(p, GaussianPrior):
        return p.mean.copy(), p.cov.copy()
    mean = p.weights @ p.means
    second = np.einsum("k,kij->ij", p.weights, p.covs + np.einsum("ki,kj->kij", p.means, p.means))
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


# ==============================
# GENERATORS
# ==============================

def random_spd(d: int, rng: np.random.Generator, eig_min: float = 0.1, eig_max: float = 2.0) -> np.ndarray:
    """Random SPD matrix Q diag(lambda) Q^T with lambda uniform in [eig_min, eig_max]."""
    if d < 1 or not 0 < eig_min <= eig_max:
        raise InvalidArgumentError(f"random_spd needs d >= 1 and 0 < eig_min <= eig_max, got {d}, {eig_min}, {eig_max}")
    eigs = rng.uniform(eig_min, eig_max, size=d)
    if d == 1:
        return eigs.reshape(1, 1)
    Q = ortho_group.rvs(d, random_state=rng)
    cov = (Q * eigs) @ Q.T
    return 0.5 * (cov + cov.T)


def random_gaussian(d: int, rng: np.random.Generator, eig_min: float = 0.1, eig_max: float = 2.0) -> GaussianPrior:
    """Zero-mean Gaussian prior with a random SPD covariance."""
    return GaussianPrior(mean=np.zeros(d), cov=random_spd(d, rng, eig_min, eig_max))


def random_gmm(
    d: int,
    k: int,
    rng: np.random.Generator,
    spread: float = 2.0,
    eig_min: float = 0.1,
    eig_max: float = 0.5,
) -> GmmPrior:
    """Mixture with Dirichlet(1) weights, N(0, spread^2 I) means and random SPD covariances."""
    if k < 1:
        raise InvalidArgumentError(f"need at least one component, got {k}")
    weights = rng.dirichlet(np.ones(k))
    weights /= weights.sum()
    means = spread * rng.standard_normal((k, d))
    covs = np.stack([random_spd(d, rng, eig_min, eig_max) for _ in range(k)])
    return GmmPrior(weights=weights, means=means, covs=covs)


def benchmark_gaussian_2d(rho: float = 0.9) -> GaussianPrior:
    """Zero-mean 2D Gaussian with unit variances and correlation ``rho``."""
    return GaussianPrior(mean=np.zeros(2), cov=np.array([[1.0, rho], [rho, 1.0]]))


def benchmark_gmm_2d(spread: float = 2.0) -> GmmPrior:
    """Four-component 2D mixture with unequal weights and tilted components."""
    tilt_up = np.array([[0.5, 0.3], [0.3, 0.5]])
    tilt_down = np.array([[0.5, -0.3], [-0.3, 0.5]])
    return GmmPrior(
        weights=np.array([0.35, 0.25, 0.25, 0.15]),
        means=spread * np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]]),
        covs=np.stack([tilt_up, tilt_down, tilt_down, tilt_up]),
    )
