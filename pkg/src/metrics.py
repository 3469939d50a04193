"""Distributional and reconstruction metrics."""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError
from .task import InpaintingTask, cpsnr

DEFAULT_PROJECTIONS = 128


@dataclass
class MetricReport:
    """Metrics of one batch of posterior samples.

    Attributes:
        sliced_wasserstein: Mean 1D W2 over random projections.
        mean_error: L2 norm of the empirical-minus-reference mean.
        cov_error: Frobenius norm of the empirical-minus-reference covariance.
        cpsnr: Mean cPSNR of the samples (``nan`` when nothing is observed).
        n_samples: Number of samples.
        n_projections: Number of projections.
    """
    sliced_wasserstein: float
    mean_error: float
    cov_error: float
    cpsnr: float
    n_samples: int
    n_projections: int

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        return {
            "sw": self.sliced_wasserstein,
            "mean_err": self.mean_error,
            "cov_err": self.cov_error,
            "cpsnr": self.cpsnr,
            "n_samples": self.n_samples,
            "n_projections": self.n_projections,
        }


def random_directions(n_projections: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform unit vectors on the sphere, shape (n_projections, d)."""
    if n_projections < 1:
        raise InvalidArgumentError(f"need at least one projection, got {n_projections}")
    directions = rng.standard_normal((n_projections, d))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact W2 between empirical measures, column by column.

    The quantile functions are step functions with jumps at i/n_a and j/n_b;
    the squared distance is integrated exactly over the union of those levels.

    Args:
        a: Shape (n_a, p).
        b: Shape (n_b, p).

    Returns:
        Shape (p,) distances.
    """
    qa = np.sort(a, axis=0)
    qb = np.sort(b, axis=0)
    n_a, n_b = qa.shape[0], qb.shape[0]
    levels = np.union1d(np.arange(n_a + 1) / n_a, np.arange(n_b + 1) / n_b)
    widths = np.diff(levels)
    mids = 0.5 * (levels[:-1] + levels[1:])
    idx_a = np.minimum((mids * n_a).astype(np.intp), n_a - 1)
    idx_b = np.minimum((mids * n_b).astype(np.intp), n_b - 1)
    gaps = qa[idx_a] - qb[idx_b]
    return np.sqrt(widths @ gaps ** 2)


def sliced_wasserstein(
    a: np.ndarray,
    b: np.ndarray,
    n_projections: int = DEFAULT_PROJECTIONS,
    rng: Optional[np.random.Generator] = None,
    directions: Optional[np.ndarray] = None,
) -> float:
    """Average over random unit directions of the 1D 2-Wasserstein distance.

    Args:
        a: Samples of shape (n_a, d).
        b: Samples of shape (n_b, d).
        n_projections: Number of directions drawn from ``rng``.
        rng: Generator for the directions.
        directions: Fixed directions (p, d); overrides ``n_projections`` and ``rng``.

    Raises:
        InvalidArgumentError: On empty sets or a dimension mismatch.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidArgumentError("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if directions is None:
        if rng is None:
            raise InvalidArgumentError("either rng or directions is required")
        directions = random_directions(n_projections, a.shape[1], rng)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    return float(np.mean(wasserstein_1d(a @ directions.T, b @ directions.T)))


def moment_errors(samples: np.ndarray, reference_mean: np.ndarray, reference_cov: np.ndarray) -> Tuple[float, float]:
    """(L2 mean error, Frobenius covariance error) of samples against reference moments."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 2:
        raise InvalidArgumentError(f"moment errors need at least 2 samples, got {samples.shape[0]}")
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    return (
        float(np.linalg.norm(mean - np.asarray(reference_mean, dtype=float))),
        float(np.linalg.norm(cov - np.asarray(reference_cov, dtype=float), ord="fro")),
    )


def mean_cpsnr(samples: np.ndarray, task: InpaintingTask, peak: Optional[float] = None) -> float:
    """Average cPSNR over samples, ``nan`` when undefined for the task."""
    try:
        return float(np.mean([cpsnr(x, task, peak) for x in np.atleast_2d(samples)]))
    except UndefinedMetricError:
        return float("nan")


def evaluate_samples(
    samples: np.ndarray,
    reference: np.ndarray,
    reference_mean: np.ndarray,
    reference_cov: np.ndarray,
    task: InpaintingTask,
    rng: np.random.Generator,
    n_projections: int = DEFAULT_PROJECTIONS,
    peak: Optional[float] = None,
) -> MetricReport:
    """Compute every metric of ``samples`` against exact-posterior references."""
    mean_error, cov_error = moment_errors(samples, reference_mean, reference_cov)
    return MetricReport(
        sliced_wasserstein=sliced_wasserstein(samples, reference, n_projections, rng),
        mean_error=mean_error,
        cov_error=cov_error,
        cpsnr=mean_cpsnr(samples, task, peak),
        n_samples=int(np.atleast_2d(samples).shape[0]),
        n_projections=n_projections,
    )
