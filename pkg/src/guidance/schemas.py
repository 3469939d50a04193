"""Data schemas for guided sampling.

Defines the method identities, chain state and per-step summaries shared by
the transition steps and the sampler driver.
"""

from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, Dict, List, Optional

import numpy as np

from ..errors import InvalidArgumentError
from ..priors import DenoiserOutput, Prior, denoise
from ..schedule import EtaSchedule, NoiseSchedule
from ..task import InpaintingTask


# ==============================
# METHOD
# ==============================

class MethodKind(StrEnum):
    """Reverse-transition families."""
    DDIM = "ddim"
    DING = "ding"
    DING_DELAYED = "ding-delayed"
    REPLACEMENT = "replacement"
    MCGDIFF = "mcgdiff"
    PNPFLOW = "pnpflow"
    FLOWDPS = "flowdps"
    DIFFPIR = "diffpir"
    DDNM = "ddnm"
    DPS_ANALYTIC = "dps-analytic"

    @classmethod
    def _missing_(cls, value: object) -> "MethodKind":
        raise InvalidArgumentError(f"Unknown method kind: {value!r}")


class DelayedVariant(StrEnum):
    """Proxy noise prediction used by delayed DInG."""
    PRINTED = "printed"      # (x_t - sigma_s * x1_hat(x_t, t)) / alpha_s
    CORRECTED = "corrected"  # (x_t - alpha_s * x0_hat(x_t, t)) / sigma_s

    @classmethod
    def _missing_(cls, value: object) -> "DelayedVariant":
        raise InvalidArgumentError(f"Unknown delayed variant: {value!r}")


# Denoiser calls per guided step
NFE_PER_STEP: Dict[MethodKind, int] = {kind: 1 for kind in MethodKind}
NFE_PER_STEP[MethodKind.DING] = 2


@dataclass
class MethodSpec:
    """A method and its scalar parameters.

    Attributes:
        kind: Method family.
        params: ``lambda`` (diffpir, default 1), ``gamma_n`` (pnpflow, default
            0.8 sigma_y^2), ``variant`` (ding-delayed, default ``printed``).
    """
    kind: MethodKind
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = MethodKind(self.kind)
        if self.kind == MethodKind.DIFFPIR and not self.params.get("lambda", 1.0) > 0:
            raise InvalidArgumentError(f"diffpir needs lambda > 0, got {self.params['lambda']}")
        if self.kind == MethodKind.PNPFLOW and self.params.get("gamma_n") is not None:
            if not self.params["gamma_n"] > 0:
                raise InvalidArgumentError(f"pnpflow needs gamma_n > 0, got {self.params['gamma_n']}")
        if self.kind == MethodKind.DING_DELAYED:
            self.params["variant"] = DelayedVariant(self.params.get("variant", DelayedVariant.PRINTED))

    @property
    def nfe_per_step(self) -> int:
        return NFE_PER_STEP[self.kind]

    def nfe_total(self, K: int) -> int:
        """Declared cost of a K-interval run: K - 1 guided steps plus one finalize call."""
        return self.nfe_per_step * (K - 1) + 1

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MethodSpec":
        """Create from dictionary."""
        return cls(kind=MethodKind(data.get("kind", "ding")), params=dict(data.get("params", {})))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {"kind": self.kind, "params": dict(self.params)}


# ==============================
# CHAIN
# ==============================

@dataclass
class StepRecord:
    """Summary of one guided transition.

    Attributes:
        step: Grid index k of the target time.
        time: Target time s.
        eta: DDIM standard deviation used.
        gamma: Weight given to the observation in the observed-coordinate update
            (``nan`` where the method has none).
        residual: Mean over chains of ||x0_hat[observed] - y||.
        flags: Notable events, e.g. ``deterministic-ding-step``.
    """
    step: int
    time: float
    eta: float
    gamma: float
    residual: float
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "step": self.step,
            "time": self.time,
            "eta": self.eta,
            "gamma": self.gamma,
            "residual": self.residual,
        }


@dataclass
class ChainState:
    """A batch of chains at grid index ``k``.

    Attributes:
        x: States, shape (n, d).
        k: Current grid index.
        nfe_count: Declared denoiser evaluations so far.
        cached_noise_pred: Noise prediction reused by delayed DInG.
        x0_hat: Denoiser estimate carried by PnP-Flow.
        record: Summary of the step that produced this state.
    """
    x: np.ndarray
    k: int
    nfe_count: int = 0
    cached_noise_pred: Optional[np.ndarray] = None
    x0_hat: Optional[np.ndarray] = None
    record: Optional[StepRecord] = None

    def advance(self, x: np.ndarray, cost: int, record: StepRecord, **changes: Any) -> "ChainState":
        """Return the state one grid index lower."""
        return replace(self, x=x, k=self.k - 1, nfe_count=self.nfe_count + cost, record=record, **changes)


class CountingDenoiser:
    """Closed-form denoiser of a prior that counts its calls."""

    def __init__(self, prior: Prior, ns: NoiseSchedule) -> None:
        self.prior = prior
        self.ns = ns
        self.calls = 0

    def __call__(self, x: np.ndarray, t: float) -> DenoiserOutput:
        self.calls += 1
        return denoise(self.prior, x, t, self.ns)


@dataclass
class StepContext:
    """Everything a transition step reads besides the chain state."""
    prior: Prior
    task: InpaintingTask
    ns: NoiseSchedule
    es: EtaSchedule
    spec: MethodSpec
    denoiser: CountingDenoiser

    @classmethod
    def create(
        cls, spec: MethodSpec, prior: Prior, task: InpaintingTask, ns: NoiseSchedule, es: EtaSchedule
    ) -> "StepContext":
        return cls(prior=prior, task=task, ns=ns, es=es, spec=spec, denoiser=CountingDenoiser(prior, ns))

    def residual(self, x0_hat: np.ndarray) -> float:
        """Mean observed-coordinate residual norm of a batch of estimates."""
        if self.task.unconditional:
            return 0.0
        return float(np.mean(np.linalg.norm(np.atleast_2d(self.task.residual(x0_hat)), axis=-1)))


# ==============================
# RESULT
# ==============================

@dataclass
class SamplerResult:
    """Output of ``run_sampler``.

    Attributes:
        samples: Final denoised states, shape (n, d).
        nfe: Declared per-chain NFE total.
        nfe_calls: Instrumented denoiser call count.
        trajectory: One record per guided step.
        flags: Distinct step flags in order of first occurrence.
    """
    method: MethodSpec
    samples: np.ndarray
    nfe: int
    nfe_calls: int
    trajectory: List[StepRecord] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary (samples excluded)."""
        return {
            "method": self.method.to_dict(),
            "nfe": self.nfe,
            "nfe_calls": self.nfe_calls,
            "trajectory": [r.to_dict() for r in self.trajectory],
            "flags": self.flags,
        }
