"""Data models for experiment configs, metric rows and run manifests."""

import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .guidance.schemas import MethodKind, MethodSpec
from .schedule import EtaSchedule, ScheduleKind

DEFAULT_SWEEP_K = [2, 5, 25, 50]


def format_value(value: Any) -> str:
    """CSV text of a value; floats use 17 significant digits."""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


# ==============================
# CONFIG
# ==============================

@dataclass
class PriorSpec:
    """Prior section of a config (``prior.*`` keys)."""
    kind: str = "gaussian"
    d: Optional[int] = None
    seed: int = 0
    eig_min: float = 0.1
    eig_max: float = 2.0
    rho: float = 0.9
    mean: Optional[List[float]] = None
    cov: Optional[List[List[float]]] = None
    components: Optional[int] = None
    weights: Optional[List[float]] = None
    means: Optional[List[List[float]]] = None
    covs: Dict[int, List[List[float]]] = field(default_factory=dict)
    spread: float = 2.0


@dataclass
class TaskSpec:
    """Task section of a config (``task.*`` keys).

    Without ``masked`` or ``mask_file`` only coordinate 0 is observed.
    """
    masked: Optional[List[int]] = None
    mask_file: Optional[str] = None
    factor: int = 8
    mode: str = "avgpool"
    threshold: float = 0.5
    sigma_y: float = 0.01
    x_star: Optional[List[float]] = None
    seed: int = 0
    shape: Optional[Tuple[int, int]] = None
    peak: Optional[float] = None


@dataclass
class OutputSpec:
    """Output section of a config (``output.*`` keys)."""
    dir: Optional[str] = None
    trajectories: bool = False
    pgm: bool = False
    runtime: bool = False
    report: bool = True


@dataclass
class BiasSpec:
    """Bias-scan section of a config (``bias.*`` keys)."""
    s: float = 0.4
    t: float = 0.6
    sigma_y: float = 1.0
    eta_min: float = 1e-3
    eta_max: float = 1e-1
    points: int = 9


@dataclass
class ExperimentConfig:
    """A parsed experiment config.

    Attributes:
        entries: Canonical ``key -> value`` text of every entry, used for hashing.
        source: Path of the config file, if read from disk.
    """
    prior: PriorSpec = field(default_factory=PriorSpec)
    task: TaskSpec = field(default_factory=TaskSpec)
    schedule: ScheduleKind = ScheduleKind.LINEAR
    eta: EtaSchedule = field(default_factory=EtaSchedule)
    K: int = 25
    methods: List[MethodSpec] = field(default_factory=lambda: [MethodSpec(MethodKind.DING)])
    seed: int = 0
    seeds: List[int] = field(default_factory=lambda: [0])
    samples: int = 2000
    reference_samples: Optional[int] = None
    projections: int = 128
    output: OutputSpec = field(default_factory=OutputSpec)
    ablation_eta: List[EtaSchedule] = field(default_factory=list)
    ablation_method: MethodKind = MethodKind.DING
    bias: BiasSpec = field(default_factory=BiasSpec)
    sweep_K: List[int] = field(default_factory=lambda: list(DEFAULT_SWEEP_K))
    entries: Dict[str, str] = field(default_factory=dict)
    source: str = ""

    @property
    def n_reference(self) -> int:
        return self.reference_samples or self.samples

    @property
    def config_hash(self) -> str:
        """sha256 of the sorted ``key=value`` lines; stable under key reordering."""
        canonical = "\n".join(f"{k}={v}" for k, v in sorted(self.entries.items()))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ==============================
# RESULTS
# ==============================

METRIC_HEADER = ["method", "seed", "K", "nfe", "sigma_y", "eta_kind", "sw", "mean_err", "cov_err", "cpsnr", "runtime_ms"]
BIAS_HEADER = ["eta", "mean_gap", "cov_gap", "epsilon_s", "epsilon_bound", "d", "seed"]
TRAJECTORY_HEADER = ["step", "time", "eta", "gamma", "residual"]


@dataclass
class MetricRow:
    """One row of the metric CSV."""
    method: str
    seed: int
    K: int
    nfe: int
    sigma_y: float
    eta_kind: str
    sw: float
    mean_err: float
    cov_err: float
    cpsnr: float
    runtime_ms: float = 0.0

    @property
    def sort_key(self) -> Tuple[str, int, int, str]:
        return (self.method, self.seed, self.K, self.eta_kind)

    def to_fields(self) -> List[str]:
        """CSV fields in header order."""
        runtime = self.runtime_ms if self.runtime_ms else 0
        return [format_value(v) for v in (
            self.method, self.seed, self.K, self.nfe, self.sigma_y, self.eta_kind,
            self.sw, self.mean_err, self.cov_err, self.cpsnr, runtime,
        )]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return dict(zip(METRIC_HEADER, (
            self.method, self.seed, self.K, self.nfe, self.sigma_y, self.eta_kind,
            self.sw, self.mean_err, self.cov_err, self.cpsnr, self.runtime_ms,
        )))


@dataclass
class RunManifest:
    """Provenance of one command run.

    Attributes:
        chain_seeds: Per (method, seed) label, the (master, index, purpose) triple of its stream.
        nfe_totals: Per method, the sum of per-chain NFE over every run.
        runtimes_ms: Measured wall time per (method, seed) label.
    """
    command: str
    config_hash: str
    tool_version: str
    master_seed: int
    rng_algorithm: str
    started_at: str = ""
    finished_at: str = ""
    chain_seeds: Dict[str, List[int]] = field(default_factory=dict)
    nfe_totals: Dict[str, int] = field(default_factory=dict)
    runtimes_ms: Dict[str, float] = field(default_factory=dict)
    flags: Dict[str, List[str]] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "master_seed": self.master_seed,
            "rng_algorithm": self.rng_algorithm,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "chain_seeds": self.chain_seeds,
            "nfe_totals": self.nfe_totals,
            "runtimes_ms": self.runtimes_ms,
            "flags": self.flags,
            "failures": self.failures,
        }
