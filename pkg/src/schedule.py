"""Interpolation schedules, time grids and DDIM standard-deviation schedules.

Convention: t = 0 is clean data, t = 1 is the Gaussian reference, and the
marginal at time t is N(alpha_t x_0, sigma_t^2 I).
"""

import math
import re
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Iterator, List, Tuple, Union

import numpy as np

from .errors import DomainError, InvalidArgumentError, ScheduleViolationError

ArrayLike = Union[float, np.ndarray]

# Absolute tolerance for schedule identities on 64-bit floats
SCHEDULE_TOL = 1e-12

# Multiplier of the scaled DDPM eta family
DEFAULT_DDPM_SCALE = 0.01


# ==============================
# NOISE SCHEDULE
# ==============================

class ScheduleKind(StrEnum):
    """Interpolation family."""
    LINEAR = "linear"
    VP = "vp"

    @classmethod
    def _missing_(cls, value: object) -> "ScheduleKind":
        """Accept the long spelling of the variance-preserving kind."""
        if isinstance(value, str) and value.strip().lower() in ("variance-preserving", "variance_preserving"):
            return cls.VP
        raise InvalidArgumentError(f"Unknown schedule kind: {value!r}")


@dataclass(frozen=True)
class NoiseSchedule:
    """The pair (alpha_t, sigma_t).

    linear: alpha = 1 - t, sigma = t.
    vp:     alpha = cos(pi t / 2), sigma = sin(pi t / 2), endpoints pinned exactly.
    """
    kind: ScheduleKind = ScheduleKind.LINEAR

    def alpha(self, t: ArrayLike) -> ArrayLike:
        """Signal coefficient alpha_t."""
        if self.kind == ScheduleKind.LINEAR:
            return 1.0 - t
        value = np.cos(0.5 * np.pi * np.asarray(t, dtype=float))
        value = np.where(np.asarray(t) == 1.0, 0.0, value)
        return float(value) if np.ndim(value) == 0 else value

    def sigma(self, t: ArrayLike) -> ArrayLike:
        """Noise coefficient sigma_t."""
        if self.kind == ScheduleKind.LINEAR:
            return t if isinstance(t, np.ndarray) else float(t)
        value = np.sin(0.5 * np.pi * np.asarray(t, dtype=float))
        value = np.where(np.asarray(t) == 1.0, 1.0, value)
        return float(value) if np.ndim(value) == 0 else value

    def time_at_ratio(self, ratio: float) -> float:
        """Return tau in [0, 1) such that sigma_tau / alpha_tau = ratio."""
        if ratio < 0:
            raise DomainError(f"sigma/alpha ratio must be nonnegative, got {ratio}")
        if self.kind == ScheduleKind.LINEAR:
            return ratio / (1.0 + ratio)
        return 2.0 / math.pi * math.atan(ratio)


# ==============================
# TIME GRID
# ==============================

@dataclass(frozen=True)
class TimeGrid:
    """Decreasing time points t_K = 1 > ... > t_1 > t_0 = 0.

    Attributes:
        points: Array of K + 1 times, ``points[0] == 1`` and ``points[-1] == 0``.
    """
    points: np.ndarray

    @property
    def K(self) -> int:
        """Number of intervals."""
        return len(self.points) - 1

    @property
    def t1(self) -> float:
        """The last positive time, where samplers finalize."""
        return float(self.points[-2])

    def steps(self) -> Iterator[Tuple[int, float, float]]:
        """Yield (k, s, t) for the guided transitions t_{k+1} -> t_k, k = K-1 .. 1."""
        for i in range(self.K - 1):
            yield self.K - 1 - i, float(self.points[i + 1]), float(self.points[i])

    def pairs(self) -> Iterator[Tuple[float, float]]:
        """Yield every consecutive (s, t) pair, including the last one ending at 0."""
        for i in range(self.K):
            yield float(self.points[i + 1]), float(self.points[i])


def make_grid(K: int, spacing: str = "uniform") -> TimeGrid:
    """Build the uniform grid t_k = k / K, returned in decreasing order.

    Args:
        K: Number of intervals, at least 2.
        spacing: Only ``"uniform"`` is supported.

    Raises:
        InvalidArgumentError: If K < 2 or the spacing is unknown.
    """
    if isinstance(K, bool) or int(K) != K or K < 2:
        raise InvalidArgumentError(f"grid needs K >= 2 intervals, got {K}")
    if spacing != "uniform":
        raise InvalidArgumentError(f"Unknown grid spacing: {spacing!r}")
    K = int(K)
    points = np.arange(K, -1, -1, dtype=float) / K
    points[0], points[-1] = 1.0, 0.0
    return TimeGrid(points=points)


# ==============================
# ETA SCHEDULE
# ==============================

class EtaKind(StrEnum):
    """DDIM standard-deviation families."""
    DEFAULT = "default"            # sigma_s (1 - alpha_s)
    DDPM = "ddpm"                  # sigma_s sqrt(sigma_t^2 - (alpha_t/alpha_s)^2 sigma_s^2) / sigma_t
    DDPM_SCALED = "ddpm-scaled"    # c * ddpm
    MAX = "max"                    # sigma_s
    SQRT = "sqrt"                  # sigma_s sqrt(1 - alpha_s)
    ZERO = "zero"                  # deterministic DDIM

    @classmethod
    def _missing_(cls, value: object) -> "EtaKind":
        raise InvalidArgumentError(f"Unknown eta kind: {value!r}")


_ETA_PATTERN = re.compile(r'^\s*([a-z\-]+)\s*(?:\(\s*([^)]+?)\s*\))?\s*$', re.IGNORECASE)


@dataclass(frozen=True)
class EtaSchedule:
    """A DDIM standard-deviation schedule.

    Attributes:
        kind: Schedule family.
        scale: Multiplier applied to the family's value. Defaults to 0.01 for
            ``ddpm-scaled`` and 1 otherwise.
    """
    kind: EtaKind = EtaKind.DEFAULT
    scale: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EtaKind(self.kind))
        if self.scale is None:
            default = DEFAULT_DDPM_SCALE if self.kind == EtaKind.DDPM_SCALED else 1.0
            object.__setattr__(self, "scale", default)
        if not self.scale > 0:
            raise InvalidArgumentError(f"eta scale must be positive, got {self.scale}")

    @classmethod
    def parse(cls, text: str) -> "EtaSchedule":
        """Parse ``"default"``, ``"ddpm-scaled(0.01)"``, ``"max(2)"`` and the like."""
        match = _ETA_PATTERN.match(text)
        if not match:
            raise InvalidArgumentError(f"Cannot parse eta schedule: {text!r}")
        kind = EtaKind(match.group(1).lower())
        try:
            scale = float(match.group(2)) if match.group(2) else None
        except ValueError:
            raise InvalidArgumentError(f"Invalid eta scale in {text!r}") from None
        return cls(kind=kind, scale=scale)

    def __str__(self) -> str:
        implicit = DEFAULT_DDPM_SCALE if self.kind == EtaKind.DDPM_SCALED else 1.0
        if self.scale == implicit and self.kind != EtaKind.DDPM_SCALED:
            return str(self.kind)
        return f"{self.kind}({self.scale!r})"

    def raw(self, s: float, t: float, ns: NoiseSchedule) -> float:
        """Evaluate eta_s without the admissibility check."""
        sigma_s = float(ns.sigma(s))
        alpha_s = float(ns.alpha(s))
        if self.kind == EtaKind.ZERO:
            value = 0.0
        elif self.kind == EtaKind.DEFAULT:
            value = sigma_s * (1.0 - alpha_s)
        elif self.kind == EtaKind.MAX:
            value = sigma_s
        elif self.kind == EtaKind.SQRT:
            value = sigma_s * math.sqrt(max(1.0 - alpha_s, 0.0))
        else:
            sigma_t = float(ns.sigma(t))
            if sigma_t == 0.0:
                raise DomainError(f"ddpm eta undefined for sigma_t = 0 (t={t})")
            if alpha_s == 0.0:
                raise DomainError(f"ddpm eta undefined for alpha_s = 0 (s={s})")
            ratio = float(ns.alpha(t)) / alpha_s
            value = sigma_s * math.sqrt(max(sigma_t ** 2 - ratio ** 2 * sigma_s ** 2, 0.0)) / sigma_t
        return self.scale * value


def eval_eta(es: EtaSchedule, s: float, t: float, ns: NoiseSchedule) -> float:
    """Evaluate eta_s for the transition t -> s.

    Raises:
        InvalidArgumentError: If not 0 <= s < t <= 1.
        DomainError: For the ddpm kinds when sigma_t = 0.
        ScheduleViolationError: If the value exceeds sigma_s.
    """
    if not 0.0 <= s < t <= 1.0:
        raise InvalidArgumentError(f"eta needs 0 <= s < t <= 1, got s={s}, t={t}")
    value = es.raw(s, t, ns)
    sigma_s = float(ns.sigma(s))
    if value > sigma_s + SCHEDULE_TOL:
        raise ScheduleViolationError(f"eta_s = {value!r} exceeds sigma_s = {sigma_s!r} at s={s} ({es})")
    return value


# ==============================
# VALIDATION
# ==============================

@dataclass
class ValidationReport:
    """Result of ``validate_schedule``."""
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when no invariant is violated."""
        return not self.violations

    def to_dict(self) -> dict:
        """Convert to dictionary."""
        return {"ok": self.ok, "violations": list(self.violations)}


def validate_schedule(ns: NoiseSchedule, es: EtaSchedule, g: TimeGrid, n_dense: int = 1000) -> ValidationReport:
    """Check schedule, grid and eta invariants; every violation is listed.

    Args:
        ns: Interpolation schedule.
        es: DDIM standard-deviation schedule.
        g: Time grid.
        n_dense: Extra uniform points on which the (alpha, sigma) identities are checked.
    """
    report = ValidationReport()
    add = report.violations.append

    # Endpoints
    if ns.alpha(0.0) != 1.0 or ns.sigma(0.0) != 0.0:
        add(f"schedule endpoint at t=0 is ({ns.alpha(0.0)!r}, {ns.sigma(0.0)!r}), expected (1, 0)")
    if ns.alpha(1.0) != 0.0 or ns.sigma(1.0) != 1.0:
        add(f"schedule endpoint at t=1 is ({ns.alpha(1.0)!r}, {ns.sigma(1.0)!r}), expected (0, 1)")

    # Grid
    points = np.asarray(g.points, dtype=float)
    if len(points) < 3:
        add(f"grid has K = {len(points) - 1} intervals, expected K >= 2")
    if len(points) and (points[0] != 1.0 or points[-1] != 0.0):
        add(f"grid endpoints are ({points[0]!r}, {points[-1]!r}), expected (1, 0)")
    for i in np.flatnonzero(np.diff(points) >= 0):
        add(f"grid not strictly decreasing at index {i}: {points[i]!r} -> {points[i + 1]!r}")

    # Monotonicity and identities on grid plus dense points
    ts = np.unique(np.concatenate([points, np.linspace(0.0, 1.0, n_dense + 1)]))
    alphas = np.asarray(ns.alpha(ts), dtype=float)
    sigmas = np.asarray(ns.sigma(ts), dtype=float)
    if np.any(np.diff(alphas) > SCHEDULE_TOL):
        add("alpha is not non-increasing")
    if np.any(np.diff(sigmas) < -SCHEDULE_TOL):
        add("sigma is not non-decreasing")
    if ns.kind == ScheduleKind.LINEAR:
        if np.any(alphas != 1.0 - ts) or np.any(sigmas != ts):
            add("linear schedule deviates from (1 - t, t)")
    elif np.max(np.abs(alphas ** 2 + sigmas ** 2 - 1.0)) > SCHEDULE_TOL:
        add("vp schedule violates alpha^2 + sigma^2 = 1")

    # Eta admissibility per consecutive pair
    for s, t in g.pairs():
        if not s < t:
            continue
        try:
            value = es.raw(s, t, ns)
        except DomainError as e:
            add(f"eta undefined at s={s!r}, t={t!r}: {e}")
            continue
        sigma_s = float(ns.sigma(s))
        if value < 0.0 or value > sigma_s + SCHEDULE_TOL:
            add(f"eta_s = {value!r} outside [0, sigma_s = {sigma_s!r}] at s={s!r}, t={t!r}")

    return report
