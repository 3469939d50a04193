"""Inpainting tasks: index sets, observations and latent mask construction."""

import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Iterable, Optional, Union

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError

DEFAULT_SIGMA_Y = 0.01
CPSNR_CAP_DB = 200.0


@dataclass(frozen=True, eq=False)
class InpaintingTask:
    """Observation model y = x[observed] + sigma_y * noise.

    Attributes:
        d: Ambient dimension.
        masked: Sorted indices of the coordinates to fill in.
        observed: Sorted complement of ``masked``.
        y: Observed values, one per observed index.
        sigma_y: Observation noise standard deviation.
        x_star: Optional reference vector; when set, ``y == x_star[observed]``.
    """
    d: int
    masked: np.ndarray
    observed: np.ndarray
    y: np.ndarray
    sigma_y: float = DEFAULT_SIGMA_Y
    x_star: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        masked = np.asarray(self.masked, dtype=np.intp).reshape(-1)
        observed = np.asarray(self.observed, dtype=np.intp).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.d < 1:
            raise InvalidArgumentError(f"dimension must be positive, got {self.d}")
        if np.any(np.diff(masked) <= 0) or np.any(np.diff(observed) <= 0):
            raise InvalidArgumentError("index sets must be sorted without duplicates")
        union = np.concatenate([masked, observed])
        if len(union) != self.d or not np.array_equal(np.sort(union), np.arange(self.d)):
            raise InvalidArgumentError(f"masked and observed must partition 0..{self.d - 1}")
        if len(y) != len(observed):
            raise InvalidArgumentError(f"y has length {len(y)}, expected {len(observed)}")
        if not self.sigma_y > 0:
            raise InvalidArgumentError(f"sigma_y must be positive, got {self.sigma_y}")
        object.__setattr__(self, "masked", masked)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma_y", float(self.sigma_y))
        if self.x_star is not None:
            x_star = np.asarray(self.x_star, dtype=float).reshape(-1)
            if len(x_star) != self.d or not np.array_equal(x_star[observed], y):
                raise InvalidArgumentError("x_star is inconsistent with d or y")
            object.__setattr__(self, "x_star", x_star)

    @classmethod
    def from_masked(
        cls,
        d: int,
        masked: Iterable[int],
        y: np.ndarray,
        sigma_y: float = DEFAULT_SIGMA_Y,
        x_star: Optional[np.ndarray] = None,
    ) -> "InpaintingTask":
        """Build a task from the masked index set; the observed set is its complement."""
        masked = np.unique(np.asarray(list(masked), dtype=np.intp))
        if len(masked) and (masked[0] < 0 or masked[-1] >= d):
            raise InvalidArgumentError(f"masked indices must lie in 0..{d - 1}")
        observed = np.setdiff1d(np.arange(d), masked)
        return cls(d=d, masked=masked, observed=observed, y=y, sigma_y=sigma_y, x_star=x_star)

    @property
    def unconditional(self) -> bool:
        """True when nothing is observed (pure unconditional generation)."""
        return len(self.observed) == 0

    @property
    def observed_mask(self) -> np.ndarray:
        """Boolean vector, True on observed coordinates (the diagonal of M)."""
        mask = np.zeros(self.d, dtype=bool)
        mask[self.observed] = True
        return mask

    def projection(self) -> np.ndarray:
        """Selection matrix P of shape (|observed|, d), so that P x = x[observed]."""
        return np.eye(self.d)[self.observed]

    def residual(self, x: np.ndarray) -> np.ndarray:
        """Observed-coordinate residual |x[observed] - y| along the last axis."""
        x = np.asarray(x, dtype=float)
        return np.abs(x[..., self.observed] - self.y)

    def to_dict(self) -> dict:
        """Convert to dictionary."""
        return {
            "d": self.d,
            "masked": self.masked.tolist(),
            "y": self.y.tolist(),
            "sigma_y": self.sigma_y,
        }


# ==============================
# PIXEL MASKS
# ==============================

class DownsampleMode(StrEnum):
    AVGPOOL = "avgpool"
    BILINEAR = "bilinear"

    @classmethod
    def _missing_(cls, value: object) -> "DownsampleMode":
        raise InvalidArgumentError(f"Unknown downsampling mode: {value!r}")


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Binary pixel-space mask; ``bits[row, col] == 1`` means observed."""
    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"mask size must be positive, got {self.width}x{self.height}")
        if bits.shape != (self.height, self.width):
            raise InvalidArgumentError(f"bits have shape {bits.shape}, expected {(self.height, self.width)}")
        if not np.all((bits == 0) | (bits == 1)):
            raise InvalidArgumentError("mask bits must be 0 or 1")
        object.__setattr__(self, "bits", bits.astype(np.uint8))

    @classmethod
    def from_array(cls, bits: np.ndarray) -> "PixelMask":
        bits = np.asarray(bits)
        return cls(width=bits.shape[1], height=bits.shape[0], bits=bits)


def _antialias_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of an antialiased bilinear (triangle) resize."""
    scale = n_in / n_out
    support = max(scale, 1.0)
    W = np.zeros((n_out, n_in))
    src = np.arange(n_in) + 0.5
    for i in range(n_out):
        center = (i + 0.5) * scale
        W[i] = np.clip(1.0 - np.abs(src - center) / support, 0.0, None)
    return W / W.sum(axis=1, keepdims=True)


def downsample_mask(
    pm: PixelMask,
    factor: int,
    mode: Union[str, DownsampleMode] = DownsampleMode.AVGPOOL,
    threshold: float = 0.5,
) -> np.ndarray:
    """Downsample a pixel mask to the latent grid.

    Each latent cell receives the fraction of observed pixels in its receptive
    field and is marked observed iff that fraction is >= ``threshold``.

    Args:
        pm: Pixel-space mask.
        factor: Downsampling factor per axis.
        mode: ``avgpool`` (exact block averages) or ``bilinear`` (antialiased triangle filter).
        threshold: Observation threshold in (0, 1].

    Returns:
        Boolean grid of shape (height // factor, width // factor), True where observed.

    Raises:
        InvalidArgumentError: On non-divisible sizes in avgpool mode or bad arguments.
    """
    mode = DownsampleMode(mode)
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"factor must be a positive integer, got {factor}")
    if not 0.0 < threshold <= 1.0:
        raise InvalidArgumentError(f"threshold must be in (0, 1], got {threshold}")
    factor = int(factor)
    bits = pm.bits.astype(float)

    if mode == DownsampleMode.AVGPOOL:
        if pm.height % factor or pm.width % factor:
            raise InvalidArgumentError(f"{pm.width}x{pm.height} mask is not divisible by factor {factor}")
        fractions = bits.reshape(pm.height // factor, factor, pm.width // factor, factor).mean(axis=(1, 3))
    else:
        rows = _antialias_weights(pm.height, max(pm.height // factor, 1))
        cols = _antialias_weights(pm.width, max(pm.width // factor, 1))
        fractions = rows @ bits @ cols.T
    return fractions >= threshold


# ==============================
# TASK CONSTRUCTION
# ==============================

def build_task(
    x_star: np.ndarray,
    latent_mask: Union[np.ndarray, Iterable[int]],
    sigma_y: float = DEFAULT_SIGMA_Y,
) -> InpaintingTask:
    """Build a task observing ``x_star`` outside the mask.

    Args:
        x_star: Reference vector of length d.
        latent_mask: Either a boolean grid (True = observed, flattened row-major)
            or an index set of masked coordinates.
        sigma_y: Observation noise level.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    d = len(x_star)
    if isinstance(latent_mask, np.ndarray) and latent_mask.dtype == bool:
        if latent_mask.size != d:
            raise InvalidArgumentError(f"mask has {latent_mask.size} cells, x_star has {d} entries")
        masked = np.flatnonzero(~latent_mask.reshape(-1))
    else:
        masked = latent_mask
    masked = np.unique(np.asarray(list(masked), dtype=np.intp))
    observed = np.setdiff1d(np.arange(d), masked)
    return InpaintingTask.from_masked(d, masked, x_star[observed], sigma_y=sigma_y, x_star=x_star)


def default_peak(task: InpaintingTask) -> float:
    """Data range of x_star on the observed coordinates, or 1.0 if that range is zero."""
    values = task.x_star[task.observed]
    peak = float(values.max() - values.min()) if len(values) else 0.0
    return peak if peak > 0 else 1.0


def cpsnr(x_hat: np.ndarray, task: InpaintingTask, peak: Optional[float] = None) -> float:
    """PSNR over the observed coordinates only, capped at 200 dB.

    Raises:
        UndefinedMetricError: If nothing is observed or the task has no reference.
    """
    if task.unconditional:
        raise UndefinedMetricError("cPSNR is undefined without observed coordinates")
    if task.x_star is None:
        raise UndefinedMetricError("cPSNR needs a reference x_star")
    peak = default_peak(task) if peak is None else float(peak)
    if not peak > 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    x_hat = np.asarray(x_hat, dtype=float)
    mse = float(np.mean((x_hat[task.observed] - task.x_star[task.observed]) ** 2))
    if mse == 0.0:
        return CPSNR_CAP_DB
    return min(10.0 * math.log10(peak ** 2 / mse), CPSNR_CAP_DB)
