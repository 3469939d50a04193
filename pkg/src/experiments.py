"""Experiment orchestration: build priors and tasks from a config, run chains, scan bias."""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, InvalidArgumentError, UnsupportedMethodError
from .guidance import MethodKind, MethodSpec, SamplerResult, run_sampler
from .guidance.schemas import DelayedVariant
from .metrics import MetricReport, evaluate_samples
from .models import ExperimentConfig, MetricRow, PriorSpec
from .oracle import BiasReport, MIN_FIT_POINTS, bias_scan, eta_grid, fit_order, random_instance
from .parser import read_pgm
from .priors import (
    GaussianPrior,
    GmmPrior,
    Prior,
    benchmark_gaussian_2d,
    benchmark_gmm_2d,
    exact_inpaint_posterior,
    moments,
    random_gaussian,
    random_gmm,
    sample_prior,
)
from .rng import Purpose, derive_rng
from .schedule import EtaSchedule, NoiseSchedule, make_grid
from .task import InpaintingTask, build_task, downsample_mask

DEFAULT_GMM_COMPONENTS = 4


# ==============================
# BUILDERS
# ==============================

def build_prior(spec: PriorSpec) -> Prior:
    """Prior described by a config section.

    Explicit parameters win; otherwise ``prior.d`` generates a random prior from
    ``prior.seed``; otherwise the 2D benchmark prior of the requested kind is used.
    """
    try:
        rng = derive_rng(spec.seed, 0, Purpose.PRIOR)
        if spec.kind == "gaussian":
            if spec.cov is not None:
                cov = np.asarray(spec.cov, dtype=float)
                mean = np.zeros(cov.shape[0]) if spec.mean is None else spec.mean
                return GaussianPrior(mean=mean, cov=cov)
            if spec.d is not None:
                prior = random_gaussian(spec.d, rng, spec.eig_min, spec.eig_max)
                return prior if spec.mean is None else GaussianPrior(mean=spec.mean, cov=prior.cov)
            return benchmark_gaussian_2d(spec.rho)

        if spec.means is not None:
            k = len(spec.means)
            missing = [i for i in range(k) if i not in spec.covs]
            if missing:
                raise ConfigError(f"prior.cov.<k> missing for components {missing}")
            weights = np.full(k, 1.0 / k) if spec.weights is None else np.asarray(spec.weights)
            return GmmPrior(weights=weights, means=spec.means, covs=np.stack([spec.covs[i] for i in range(k)]))
        if spec.d is not None:
            k = spec.components or DEFAULT_GMM_COMPONENTS
            return random_gmm(spec.d, k, rng, spec.spread, spec.eig_min, spec.eig_max)
        return benchmark_gmm_2d(spec.spread)
    except InvalidArgumentError as e:
        raise ConfigError(f"invalid prior: {e}") from None


def build_config_task(config: ExperimentConfig, prior: Prior) -> Tuple[InpaintingTask, Optional[Tuple[int, int]]]:
    """Task described by a config, and the 2D shape used for image dumps (if any)."""
    spec = config.task
    shape = spec.shape
    try:
        if spec.mask_file is not None:
            latent = downsample_mask(read_pgm(spec.mask_file), spec.factor, spec.mode, spec.threshold)
            if latent.size != prior.d:
                raise ConfigError(f"latent mask has {latent.size} cells, prior dimension is {prior.d}")
            mask = latent.reshape(-1)
            shape = shape or latent.shape
        elif spec.masked is not None:
            mask = spec.masked
        else:
            mask = list(range(1, prior.d))

        if spec.x_star is not None:
            x_star = np.asarray(spec.x_star, dtype=float)
            if len(x_star) != prior.d:
                raise ConfigError(f"task.x_star has length {len(x_star)}, prior dimension is {prior.d}")
        else:
            x_star = sample_prior(prior, 1, derive_rng(config.seed, spec.seed, Purpose.TASK))[0]
        task = build_task(x_star, mask, spec.sigma_y)
    except InvalidArgumentError as e:
        raise ConfigError(f"invalid task: {e}") from None
    if shape is not None and shape[0] * shape[1] != prior.d:
        raise ConfigError(f"task.shape {shape} does not match dimension {prior.d}")
    if task.unconditional:
        logging.warning("task observes no coordinates; sampling is unconditional")
    return task, shape


def method_label(spec: MethodSpec) -> str:
    """Name used in CSV rows; the corrected delayed variant is told apart."""
    if spec.kind == MethodKind.DING_DELAYED and spec.params.get("variant") == DelayedVariant.CORRECTED:
        return f"{spec.kind}-corrected"
    return str(spec.kind)


@dataclass
class ChainOutcome:
    """One (method, seed) run with its metrics."""
    row: MetricRow
    result: SamplerResult
    metrics: MetricReport
    runtime_ms: float


@dataclass
class BiasOutcome:
    """Per-seed bias reports and fitted (mean-gap, cov-gap) slopes."""
    d: int
    reports: Dict[int, List[BiasReport]] = field(default_factory=dict)
    slopes: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)


# ==============================
# EXPERIMENT
# ==============================

class Experiment:
    """Lazily built prior, task and exact posterior of one config."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.ns = NoiseSchedule(config.schedule)
        self._prior: Optional[Prior] = None
        self._task: Optional[InpaintingTask] = None
        self._shape: Optional[Tuple[int, int]] = None
        self._posterior: Optional[Prior] = None
        self._references: Dict[int, np.ndarray] = {}

    @property
    def prior(self) -> Prior:
        """Get or build the prior."""
        if self._prior is None:
            self._prior = build_prior(self.config.prior)
        return self._prior

    @property
    def task(self) -> InpaintingTask:
        """Get or build the task."""
        if self._task is None:
            self._task, self._shape = build_config_task(self.config, self.prior)
        return self._task

    @property
    def shape(self) -> Optional[Tuple[int, int]]:
        _ = self.task
        return self._shape

    @property
    def posterior(self) -> Prior:
        """Get or compute the exact inpainting posterior."""
        if self._posterior is None:
            self._posterior = exact_inpaint_posterior(self.prior, self.task)
        return self._posterior

    def reference(self, seed: int) -> np.ndarray:
        """Exact posterior samples for a replicate seed."""
        if seed not in self._references:
            rng = derive_rng(self.config.seed, seed, Purpose.REFERENCE)
            self._references[seed] = sample_prior(self.posterior, self.config.n_reference, rng)
        return self._references[seed]

    def prepare(self, seeds: List[int]) -> None:
        """Build every shared object up front so chains only read them."""
        for seed in seeds:
            self.reference(seed)

    def check_method(self, spec: MethodSpec) -> None:
        if spec.kind == MethodKind.DPS_ANALYTIC and not isinstance(self.prior, GaussianPrior):
            raise UnsupportedMethodError("dps-analytic needs a Gaussian prior")

    def run_chain(self, spec: MethodSpec, seed: int, es: Optional[EtaSchedule] = None, K: Optional[int] = None) -> ChainOutcome:
        """Run ``samples.n`` chains of a method for one replicate seed and score them.

        The chain stream depends only on (master seed, replicate seed), so all
        methods of a replicate share their random numbers.
        """
        config = self.config
        es = es or config.eta
        K = K or config.K
        rng = derive_rng(config.seed, seed, Purpose.CHAIN)

        start = time.perf_counter()
        result = run_sampler(spec, self.prior, self.task, make_grid(K), self.ns, es, rng, n=config.samples)
        runtime_ms = (time.perf_counter() - start) * 1000.0

        post_mean, post_cov = moments(self.posterior)
        metrics = evaluate_samples(
            result.samples,
            self.reference(seed),
            post_mean,
            post_cov,
            self.task,
            derive_rng(config.seed, seed, Purpose.PROJECTIONS),
            config.projections,
            config.task.peak,
        )
        row = MetricRow(
            method=method_label(spec),
            seed=seed,
            K=K,
            nfe=result.nfe,
            sigma_y=self.task.sigma_y,
            eta_kind=str(es),
            sw=metrics.sliced_wasserstein,
            mean_err=metrics.mean_error,
            cov_err=metrics.cov_error,
            cpsnr=metrics.cpsnr,
            runtime_ms=runtime_ms if config.output.runtime else 0.0,
        )
        return ChainOutcome(row=row, result=result, metrics=metrics, runtime_ms=runtime_ms)

    def bias(self) -> BiasOutcome:
        """Bias scan per replicate seed over the configured eta range.

        Raises:
            UnsupportedMethodError: If the prior is not Gaussian.
        """
        prior = self.prior
        if not isinstance(prior, GaussianPrior):
            raise UnsupportedMethodError("bias scan needs a Gaussian prior")
        if np.any(prior.mean != 0):
            logging.warning("bias scan uses the prior covariance only; the prior mean is treated as zero")
        bias = self.config.bias
        sigma_s = float(self.ns.sigma(bias.s))
        if bias.eta_max > sigma_s:
            raise ConfigError(f"bias.eta_max = {bias.eta_max} exceeds sigma_s = {sigma_s:.6g} at s = {bias.s}")
        etas = eta_grid(bias.eta_min, bias.eta_max, bias.points)

        outcome = BiasOutcome(d=prior.d)
        for seed in self.config.seeds:
            rng = derive_rng(self.config.seed, seed, Purpose.BIAS)
            cov, x_t, task = random_instance(
                prior.d, rng, self.ns, t=bias.t, sigma_y=bias.sigma_y, cov=prior.cov, masked=self.task.masked
            )
            reports = bias_scan(cov, x_t, task, bias.s, bias.t, self.ns, etas)
            outcome.reports[seed] = reports
            if len(etas) < MIN_FIT_POINTS:
                continue
            try:
                outcome.slopes[seed] = (
                    fit_order(etas, [r.mean_gap for r in reports]),
                    fit_order(etas, [r.cov_gap for r in reports]),
                )
            except InvalidArgumentError as e:
                logging.warning(f"slope fit skipped for seed {seed}: {e}")
                outcome.flags.append(f"slope-fit-failed:{seed}")
        if len(etas) < MIN_FIT_POINTS:
            logging.warning(f"bias scan has {len(etas)} eta values; slope rows need at least {MIN_FIT_POINTS}")
            outcome.flags.append("slope-fit-omitted")
        return outcome
