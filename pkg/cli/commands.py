"""CLI subcommands: run, bias-scan, ablation, validate, nfe-sweep.

Every command returns a process exit status: 0 on success, 1 when a chain
failed or a check did not pass. Config errors propagate as ``ConfigError``.
"""

import argparse
import asyncio
import logging
import re
import sys
from datetime import datetime, timezone
from typing import Callable, List, Optional, Tuple, Union

from tqdm import tqdm

from cli.config import settings
from cli.dependencies import get_storage, load_config, resolve_output_dir, resolve_workers
from src import __version__
from src.errors import ConfigError, UnsupportedMethodError
from src.experiments import ChainOutcome, Experiment, method_label
from src.guidance import MethodKind, MethodSpec
from src.models import ExperimentConfig, RunManifest
from src.rng import RNG_ALGORITHM, Purpose
from src.schedule import EtaSchedule, NoiseSchedule, make_grid, validate_schedule
from src.storage import ResultStorage

# (method, replicate seed, eta schedule, K)
Job = Tuple[MethodSpec, int, EtaSchedule, int]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _job_label(job: Job) -> str:
    spec, seed, es, K = job
    return f"{method_label(spec)}:{seed}:{es}:K={K}"


# ==============================
# CHAINS
# ==============================

async def run_jobs(experiment: Experiment, jobs: List[Job], workers: int) -> Tuple[List[ChainOutcome], List[str]]:
    """Run jobs concurrently on up to ``workers`` threads.

    Returns:
        Outcomes of the successful jobs and labels of the failed ones.
    """
    experiment.prepare(sorted({job[1] for job in jobs}))
    semaphore = asyncio.Semaphore(workers)
    progress = tqdm(total=len(jobs), desc="chains", file=sys.stderr, disable=not settings.PROGRESS)

    async def run_async(spec: MethodSpec, seed: int, es: EtaSchedule, K: int) -> ChainOutcome:
        """Run a single job in a worker thread."""
        async with semaphore:
            try:
                return await asyncio.to_thread(experiment.run_chain, spec, seed, es, K)
            finally:
                progress.update(1)

    results: List[Union[ChainOutcome, BaseException]] = await asyncio.gather(
        *[run_async(*job) for job in jobs], return_exceptions=True
    )
    progress.close()

    outcomes: List[ChainOutcome] = []
    failures: List[str] = []
    for job, result in zip(jobs, results):
        if isinstance(result, BaseException):
            logging.error(f"Chain {_job_label(job)} failed: {type(result).__name__}: {result}", exc_info=result)
            failures.append(f"{_job_label(job)}: {type(result).__name__}: {result}")
        else:
            outcomes.append(result)
    return outcomes, failures


def _manifest(command: str, config: ExperimentConfig, started: str) -> RunManifest:
    return RunManifest(
        command=command,
        config_hash=config.config_hash,
        tool_version=__version__,
        master_seed=config.seed,
        rng_algorithm=RNG_ALGORITHM,
        started_at=started,
    )


def chain_keys(jobs: List[Job]) -> Callable[[str, int, str, int], Tuple[str, str]]:
    """Key per-chain outputs by method and seed, plus eta kind and K when the jobs vary them.

    Returns a function mapping (method, seed, eta_kind, K) to the manifest key and the
    artifact file stem.
    """
    vary_eta = len({str(es) for _, _, es, _ in jobs}) > 1
    vary_K = len({K for _, _, _, K in jobs}) > 1

    def keys(method: str, seed: int, eta_kind: str, K: int) -> Tuple[str, str]:
        parts = [(method, method), (str(seed), str(seed))]
        if vary_eta:
            parts.append((eta_kind, re.sub(r"[^\w.-]+", "-", eta_kind).strip("-")))
        if vary_K:
            parts.append((f"K={K}", f"K{K}"))
        return ":".join(p[0] for p in parts), "_".join(p[1] for p in parts)

    return keys


def finish_chains(
    command: str,
    experiment: Experiment,
    jobs: List[Job],
    outcomes: List[ChainOutcome],
    failures: List[str],
    storage: ResultStorage,
    started: str,
) -> int:
    """Write CSV, manifest, trajectories, image dumps and report; return the exit status."""
    config = experiment.config
    manifest = _manifest(command, config, started)
    keys = chain_keys(jobs)
    for spec, seed, es, K in jobs:
        manifest.chain_seeds[keys(method_label(spec), seed, str(es), K)[0]] = [config.seed, seed, int(Purpose.CHAIN)]

    status = 0 if not failures else 1
    for outcome in sorted(outcomes, key=lambda o: o.row.sort_key):
        row, result = outcome.row, outcome.result
        label = f"{row.method}:{row.seed}:{row.eta_kind}:K={row.K}"
        manifest.nfe_totals[row.method] = manifest.nfe_totals.get(row.method, 0) + result.nfe
        manifest.runtimes_ms[label] = round(outcome.runtime_ms, 3)
        if result.flags:
            manifest.flags[label] = result.flags
        if result.nfe_calls != result.nfe:
            logging.error(f"NFE mismatch for {label}: declared {result.nfe}, counted {result.nfe_calls}")
            status = 1
        stem = keys(row.method, row.seed, row.eta_kind, row.K)[1]
        if config.output.trajectories:
            storage.save_trajectory(stem, result.trajectory)
        if config.output.pgm and experiment.shape is not None:
            storage.save_pgm(result.samples.mean(axis=0).reshape(experiment.shape), f"mean_{stem}.pgm")
    manifest.failures = failures

    rows = [o.row for o in outcomes]
    path = storage.save_metrics(rows)
    if config.output.pgm and experiment.shape is not None and experiment.task.x_star is not None:
        storage.save_pgm(experiment.task.x_star.reshape(experiment.shape), "x_star.pgm")
    storage.save_task(experiment.task)
    manifest.finished_at = _now()
    storage.save_manifest(manifest)
    if config.output.report:
        storage.save_report(rows, {
            "command": command,
            "config_path": config.source,
            "config_hash": config.config_hash,
            "master_seed": config.seed,
            "seeds": config.seeds,
            "schedule": config.schedule,
            "eta": config.eta,
            "sigma_y": experiment.task.sigma_y,
            "n_samples": config.samples,
            "n_projections": config.projections,
            "flags": manifest.flags,
            "failures": failures,
        })
    logging.info(f"{command}: wrote {len(rows)} rows to {path}")
    return status


def _execute(command: str, args: argparse.Namespace, config: ExperimentConfig, jobs: List[Job]) -> int:
    started = _now()
    experiment = Experiment(config)
    for spec in {job[0].kind: job[0] for job in jobs}.values():
        experiment.check_method(spec)
    storage = get_storage(resolve_output_dir(config, args.out))
    outcomes, failures = asyncio.run(run_jobs(experiment, jobs, resolve_workers(args.workers)))
    return finish_chains(command, experiment, jobs, outcomes, failures, storage, started)


# ==============================
# COMMANDS
# ==============================

def cmd_run(args: argparse.Namespace) -> int:
    """Run every configured method for every replicate seed and score against the exact posterior."""
    config = load_config(args.config, args.seed)
    jobs = [(spec, seed, config.eta, config.K) for spec in config.methods for seed in config.seeds]
    return _execute("run", args, config, jobs)


def cmd_ablation(args: argparse.Namespace) -> int:
    """Compare eta schedules for one method (``ablation.method``) across seeds."""
    config = load_config(args.config, args.seed)
    if len(config.ablation_eta) < 2:
        raise ConfigError(f"ablation needs at least 2 eta kinds in ablation.eta_kinds, got {len(config.ablation_eta)}")
    spec = next((m for m in config.methods if m.kind == config.ablation_method), MethodSpec(config.ablation_method))
    jobs = [(spec, seed, es, config.K) for es in config.ablation_eta for seed in config.seeds]
    return _execute("ablation", args, config, jobs)


def cmd_nfe_sweep(args: argparse.Namespace) -> int:
    """Run every configured method over the step counts in ``sweep.K``."""
    config = load_config(args.config, args.seed)
    jobs = [(spec, seed, config.eta, K) for K in config.sweep_K for spec in config.methods for seed in config.seeds]
    return _execute("nfe-sweep", args, config, jobs)


def cmd_bias_scan(args: argparse.Namespace) -> int:
    """Scan the DPS/DInG transition gaps over eta and fit their orders."""
    started = _now()
    config = load_config(args.config, args.seed)
    experiment = Experiment(config)
    outcome = experiment.bias()
    storage = get_storage(resolve_output_dir(config, args.out))
    path = storage.save_bias(outcome.reports, outcome.d, outcome.slopes)

    status = 0
    for seed, reports in outcome.reports.items():
        for r in reports:
            if r.epsilon_s > r.epsilon_bound + 1e-10:
                logging.error(f"seed {seed}: epsilon_s = {r.epsilon_s:.6g} exceeds bound {r.epsilon_bound:.6g}")
                status = 1
    for seed, (mean_slope, cov_slope) in sorted(outcome.slopes.items()):
        logging.info(f"seed {seed}: mean-gap order {mean_slope:.3f}, cov-gap order {cov_slope:.3f}")

    manifest = _manifest("bias-scan", config, started)
    manifest.chain_seeds = {f"bias:{seed}": [config.seed, seed, int(Purpose.BIAS)] for seed in config.seeds}
    if outcome.flags:
        manifest.flags["bias-scan"] = outcome.flags
    manifest.finished_at = _now()
    storage.save_manifest(manifest)
    logging.info(f"bias-scan: wrote {path}")
    return status


def cmd_validate(args: argparse.Namespace) -> int:
    """Lint a config: parse it, build its prior and task, and check every schedule it uses."""
    config = load_config(args.config, args.seed)
    experiment = Experiment(config)
    _ = experiment.task

    problems: List[str] = []
    ns = NoiseSchedule(config.schedule)
    etas = [config.eta] + [es for es in config.ablation_eta if es != config.eta]
    for K in sorted({config.K, *config.sweep_K}):
        grid = make_grid(K)
        for es in etas:
            for violation in validate_schedule(ns, es, grid).violations:
                problems.append(f"K={K}, eta={es}: {violation}")
    for spec in config.methods:
        try:
            experiment.check_method(spec)
        except UnsupportedMethodError as e:
            problems.append(f"method {spec.kind}: {e}")
    if any(m.kind == MethodKind.DING for m in config.methods) and config.eta.kind == "zero":
        problems.append("ding with eta kind 'zero' never applies guidance")

    for problem in problems:
        logging.warning(problem)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return 0 if not problems else 1
