"""Shared fixtures: schedules, priors and Monte-Carlo moment checks."""

from typing import Callable

import numpy as np
import pytest
from scipy.stats import norm

from src.guidance import ChainState, MethodKind, MethodSpec, StepContext
from src.priors import GaussianPrior, benchmark_gaussian_2d, benchmark_gmm_2d
from src.schedule import EtaSchedule, NoiseSchedule, ScheduleKind
from src.task import InpaintingTask

# Two-sided tail of a 3-sigma band
THREE_SIGMA_TAIL = 0.0027


def mc_z(comparisons: int) -> float:
    """z-threshold of a 3-standard-error test split across ``comparisons`` simultaneous checks."""
    return float(norm.isf(THREE_SIGMA_TAIL / 2.0 / comparisons))


@pytest.fixture
def linear() -> NoiseSchedule:
    return NoiseSchedule(ScheduleKind.LINEAR)


@pytest.fixture
def vp() -> NoiseSchedule:
    return NoiseSchedule(ScheduleKind.VP)


@pytest.fixture
def gaussian_2d() -> GaussianPrior:
    return benchmark_gaussian_2d(0.9)


@pytest.fixture
def gmm_2d():
    return benchmark_gmm_2d()


@pytest.fixture
def observe_first():
    """Task on a 2D prior observing coordinate 0 at y = 1 with sigma_y = 0.01."""
    return InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=0.01)


@pytest.fixture
def make_ctx() -> Callable[..., StepContext]:
    def make(prior, task, ns, es=None, kind=MethodKind.DDIM, params=None) -> StepContext:
        return StepContext.create(MethodSpec(kind, dict(params or {})), prior, task, ns, es or EtaSchedule())
    return make


@pytest.fixture
def make_state() -> Callable[..., ChainState]:
    def make(x: np.ndarray, n: int = 1, k: int = 2) -> ChainState:
        return ChainState(x=np.tile(np.asarray(x, dtype=float), (n, 1)), k=k)
    return make


@pytest.fixture
def moment_check() -> Callable[..., None]:
    """Assert empirical mean/covariance match Gaussian moments within z standard errors.

    Standard errors: sqrt(S_ii / n) for means and sqrt((S_ii S_jj + S_ij^2) / n)
    for covariance entries. When ``z`` is omitted it is set from the number of
    comparisons made in this call.
    """
    def check(samples: np.ndarray, mean: np.ndarray, cov: np.ndarray, z: float = None) -> None:
        n, d = samples.shape
        cov = np.asarray(cov, dtype=float)
        z = mc_z(d + d * (d + 1) // 2) if z is None else z
        diag = np.diag(cov)

        se_mean = np.sqrt(diag / n)
        gap_mean = np.abs(samples.mean(axis=0) - mean)
        assert np.all(gap_mean <= z * se_mean + 1e-12), (gap_mean, se_mean)

        se_cov = np.sqrt((np.outer(diag, diag) + cov ** 2) / n)
        gap_cov = np.abs(np.cov(samples, rowvar=False) - cov)
        iu = np.triu_indices(d)
        assert np.all(gap_cov[iu] <= z * se_cov[iu] + 1e-12), (gap_cov, se_cov)
    return check
