"""Parsers for experiment configs, task files and PGM masks."""

import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, TypeVar

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .guidance.schemas import DelayedVariant, MethodKind, MethodSpec
from .models import ExperimentConfig, PriorSpec, TaskSpec
from .schedule import EtaSchedule, ScheduleKind
from .task import DownsampleMode, InpaintingTask, PixelMask

T = TypeVar("T")

# Entries are (value text, 1-based line)
Entries = Dict[str, Tuple[str, int]]

KNOWN_KEYS = {
    "seed", "seeds",
    "prior.kind", "prior.d", "prior.seed", "prior.eig_min", "prior.eig_max", "prior.rho",
    "prior.mean", "prior.cov", "prior.components", "prior.weights", "prior.means", "prior.spread",
    "task.masked", "task.mask_file", "task.factor", "task.mode", "task.threshold", "task.sigma_y",
    "task.x_star", "task.seed", "task.shape", "task.peak",
    "schedule.kind", "eta.kind", "eta.scale", "grid.K",
    "method.kind", "method.lambda", "method.gamma_n", "method.delayed_variant",
    "samples.n", "samples.reference", "metrics.projections",
    "output.dir", "output.trajectories", "output.pgm", "output.runtime", "output.report",
    "ablation.eta_kinds", "ablation.method",
    "bias.s", "bias.t", "bias.sigma_y", "bias.eta_min", "bias.eta_max", "bias.points",
    "sweep.K",
}
COMPONENT_COV_KEY = re.compile(r'^prior\.cov\.(\d+)$')
ENTRY_PATTERN = re.compile(r'^([A-Za-z_][\w.]*)\s*=\s*(.*?)\s*$')


class ExperimentParser:
    """Parse experiment configs written as ``key = value`` lines."""

    # ============================================
    # Helper Functions
    # ============================================

    @staticmethod
    def _entries(content: str, allowed: Optional[Callable[[str], bool]] = None) -> Entries:
        """Split content into entries, rejecting malformed lines and duplicate keys.

        Args:
            content: Text with one ``key = value`` per line; ``#`` starts a comment.
            allowed: Predicate on keys; unknown keys raise ConfigError.
        """
        entries: Entries = {}
        for lineno, raw in enumerate(content.splitlines(), 1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if not (match := ENTRY_PATTERN.match(line)):
                raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
            key, value = match.group(1), match.group(2)
            if allowed and not allowed(key):
                raise ConfigError(f"unknown key {key!r}", lineno)
            if key in entries:
                raise ConfigError(f"duplicate key {key!r} (first set on line {entries[key][1]})", lineno)
            if not value:
                raise ConfigError(f"empty value for {key!r}", lineno)
            entries[key] = (value, lineno)
        return entries

    @staticmethod
    def _known(key: str) -> bool:
        return key in KNOWN_KEYS or bool(COMPONENT_COV_KEY.match(key))

    @staticmethod
    def _get(entries: Entries, key: str, convert: Callable[[str], T], default: T) -> T:
        """Convert an entry, or return the default; conversion errors carry the line."""
        if key not in entries:
            return default
        value, line = entries[key]
        try:
            return convert(value)
        except (ValueError, InvalidArgumentError) as e:
            raise ConfigError(f"{key}: {e}", line) from None

    @staticmethod
    def _line(entries: Entries, key: str) -> Optional[int]:
        return entries[key][1] if key in entries else None

    # Value converters

    @staticmethod
    def to_int(value: str) -> int:
        return int(value)

    @staticmethod
    def to_bool(value: str) -> bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")

    @staticmethod
    def to_list(value: str) -> List[str]:
        return [item.strip() for item in value.split(',') if item.strip()]

    @staticmethod
    def to_vector(value: str) -> List[float]:
        return [float(item) for item in ExperimentParser.to_list(value)]

    @staticmethod
    def to_ints(value: str) -> List[int]:
        return [int(item) for item in ExperimentParser.to_list(value)]

    @staticmethod
    def to_matrix(value: str) -> List[List[float]]:
        rows = [ExperimentParser.to_vector(row) for row in value.split(';') if row.strip()]
        if len({len(row) for row in rows}) != 1:
            raise ValueError("matrix rows have different lengths")
        return rows

    # ============================================
    # Sections
    # ============================================

    @staticmethod
    def _prior(entries: Entries) -> PriorSpec:
        get = ExperimentParser._get
        P = ExperimentParser
        if "prior.kind" not in entries:
            raise ConfigError("missing required key 'prior.kind'")
        kind = get(entries, "prior.kind", str.lower, "gaussian")
        if kind not in ("gaussian", "gmm"):
            raise ConfigError(f"prior.kind must be gaussian or gmm, got {kind!r}", P._line(entries, "prior.kind"))
        covs = {}
        for key, (value, line) in entries.items():
            if match := COMPONENT_COV_KEY.match(key):
                covs[int(match.group(1))] = get(entries, key, P.to_matrix, None)
        return PriorSpec(
            kind=kind,
            d=get(entries, "prior.d", P.to_int, None),
            seed=get(entries, "prior.seed", P.to_int, 0),
            eig_min=get(entries, "prior.eig_min", float, 0.1),
            eig_max=get(entries, "prior.eig_max", float, 2.0),
            rho=get(entries, "prior.rho", float, 0.9),
            mean=get(entries, "prior.mean", P.to_vector, None),
            cov=get(entries, "prior.cov", P.to_matrix, None),
            components=get(entries, "prior.components", P.to_int, None),
            weights=get(entries, "prior.weights", P.to_vector, None),
            means=get(entries, "prior.means", P.to_matrix, None),
            covs=covs,
            spread=get(entries, "prior.spread", float, 2.0),
        )

    @staticmethod
    def _task(entries: Entries, base_dir: Path) -> TaskSpec:
        get = ExperimentParser._get
        P = ExperimentParser

        def shape(value: str) -> Tuple[int, int]:
            dims = P.to_ints(value)
            if len(dims) != 2 or min(dims) < 1:
                raise ValueError(f"expected 'H, W', got {value!r}")
            return dims[0], dims[1]

        mask_file = get(entries, "task.mask_file", str, None)
        if mask_file is not None:
            path = Path(mask_file)
            path = path if path.is_absolute() else base_dir / path
            if not path.exists():
                raise ConfigError(f"mask file not found: {path}", P._line(entries, "task.mask_file"))
            mask_file = str(path)
        sigma_y = get(entries, "task.sigma_y", float, 0.01)
        if not sigma_y > 0:
            raise ConfigError(f"task.sigma_y must be positive, got {sigma_y}", P._line(entries, "task.sigma_y"))
        return TaskSpec(
            masked=get(entries, "task.masked", lambda v: [] if v.strip() == "-" else P.to_ints(v), None),
            mask_file=mask_file,
            factor=get(entries, "task.factor", P.to_int, 8),
            mode=str(get(entries, "task.mode", DownsampleMode, DownsampleMode.AVGPOOL)),
            threshold=get(entries, "task.threshold", float, 0.5),
            sigma_y=sigma_y,
            x_star=get(entries, "task.x_star", P.to_vector, None),
            seed=get(entries, "task.seed", P.to_int, 0),
            shape=get(entries, "task.shape", shape, None),
            peak=get(entries, "task.peak", float, None),
        )

    @staticmethod
    def _methods(entries: Entries) -> List[MethodSpec]:
        get = ExperimentParser._get
        P = ExperimentParser
        kinds = get(entries, "method.kind", lambda v: [MethodKind(k) for k in P.to_list(v)], [MethodKind.DING])
        params = {
            "lambda": get(entries, "method.lambda", float, None),
            "gamma_n": get(entries, "method.gamma_n", float, None),
            "variant": get(entries, "method.delayed_variant", DelayedVariant, None),
        }
        methods = []
        for kind in kinds:
            spec_params = {}
            if kind == MethodKind.DIFFPIR and params["lambda"] is not None:
                spec_params["lambda"] = params["lambda"]
            if kind == MethodKind.PNPFLOW and params["gamma_n"] is not None:
                spec_params["gamma_n"] = params["gamma_n"]
            if kind == MethodKind.DING_DELAYED and params["variant"] is not None:
                spec_params["variant"] = params["variant"]
            try:
                methods.append(MethodSpec(kind=kind, params=spec_params))
            except InvalidArgumentError as e:
                raise ConfigError(str(e), P._line(entries, "method.kind")) from None
        return methods

    # ============================================
    # Parser Functions
    # ============================================

    @staticmethod
    def from_file(file_path: str) -> ExperimentConfig:
        """Parse a config file; relative paths inside it resolve against its directory."""
        path = Path(file_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = ExperimentParser.from_string(path.read_text(encoding='utf-8'), base_dir=path.parent)
        config.source = str(path)
        return config

    @staticmethod
    def from_string(content: str, base_dir: Path = Path(".")) -> ExperimentConfig:
        """Parse config text.

        Raises:
            ConfigError: With the 1-based line of the offending entry.
        """
        entries = ExperimentParser._entries(content, allowed=ExperimentParser._known)
        get = ExperimentParser._get
        P = ExperimentParser
        line = lambda key: P._line(entries, key)

        eta = get(entries, "eta.kind", EtaSchedule.parse, EtaSchedule())
        if "eta.scale" in entries:
            eta = EtaSchedule(kind=eta.kind, scale=get(entries, "eta.scale", float, eta.scale))

        config = ExperimentConfig(
            prior=P._prior(entries),
            task=P._task(entries, base_dir),
            schedule=get(entries, "schedule.kind", ScheduleKind, ScheduleKind.LINEAR),
            eta=eta,
            K=get(entries, "grid.K", P.to_int, 25),
            methods=P._methods(entries),
            seed=get(entries, "seed", P.to_int, 0),
            seeds=get(entries, "seeds", P.to_ints, [0]),
            samples=get(entries, "samples.n", P.to_int, 2000),
            reference_samples=get(entries, "samples.reference", P.to_int, None),
            projections=get(entries, "metrics.projections", P.to_int, 128),
            ablation_eta=get(entries, "ablation.eta_kinds", lambda v: [EtaSchedule.parse(k) for k in P.to_list(v)], []),
            ablation_method=get(entries, "ablation.method", MethodKind, MethodKind.DING),
            sweep_K=get(entries, "sweep.K", P.to_ints, [2, 5, 25, 50]),
            entries={key: " ".join(value.split()) for key, (value, _) in entries.items()},
        )
        config.output.dir = get(entries, "output.dir", str, None)
        config.output.trajectories = get(entries, "output.trajectories", P.to_bool, False)
        config.output.pgm = get(entries, "output.pgm", P.to_bool, False)
        config.output.runtime = get(entries, "output.runtime", P.to_bool, False)
        config.output.report = get(entries, "output.report", P.to_bool, True)
        for name in ("s", "t", "sigma_y", "eta_min", "eta_max"):
            setattr(config.bias, name, get(entries, f"bias.{name}", float, getattr(config.bias, name)))
        config.bias.points = get(entries, "bias.points", P.to_int, config.bias.points)

        # Invariants
        if config.K < 2:
            raise ConfigError(f"grid.K must be >= 2, got {config.K}", line("grid.K"))
        if any(k < 2 for k in config.sweep_K):
            raise ConfigError("sweep.K values must be >= 2", line("sweep.K"))
        if len(set(config.seeds)) != len(config.seeds) or not config.seeds:
            raise ConfigError(f"seeds must be a non-empty list of distinct values, got {config.seeds}", line("seeds"))
        if config.seed < 0 or min(config.seeds) < 0:
            raise ConfigError("seeds must be nonnegative", line("seeds") or line("seed"))
        if config.samples < 2:
            raise ConfigError(f"samples.n must be >= 2, got {config.samples}", line("samples.n"))
        if not 0.0 < config.bias.s < config.bias.t <= 1.0:
            raise ConfigError("bias needs 0 < s < t <= 1", line("bias.s") or line("bias.t"))
        return config


# ==============================
# TASK FILES
# ==============================

TASK_KEYS = {"d", "masked_indices", "y", "sigma_y"}


def read_task(file_path: str) -> InpaintingTask:
    """Read a task written as ``d``, ``masked_indices``, ``y`` and ``sigma_y`` lines.

    An empty index list is written as ``-``.
    """
    entries = ExperimentParser._entries(Path(file_path).read_text(encoding='utf-8'), allowed=TASK_KEYS.__contains__)
    missing = TASK_KEYS - entries.keys()
    if missing:
        raise ConfigError(f"task file misses {sorted(missing)}")
    get = ExperimentParser._get

    def items(converter: Callable[[str], List]) -> Callable[[str], List]:
        return lambda v: [] if v.strip() == "-" else converter(v)

    d = get(entries, "d", ExperimentParser.to_int, 0)
    masked = get(entries, "masked_indices", items(ExperimentParser.to_ints), [])
    y = get(entries, "y", items(ExperimentParser.to_vector), [])
    sigma_y = get(entries, "sigma_y", float, 0.01)
    try:
        return InpaintingTask.from_masked(d, masked, np.asarray(y), sigma_y=sigma_y)
    except InvalidArgumentError as e:
        raise ConfigError(str(e)) from None


# ==============================
# PGM
# ==============================

OBSERVED_LEVEL = 128


def _pgm_header(data: bytes) -> Tuple[List[bytes], int]:
    """Return the four header tokens and the offset of the raster."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidArgumentError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm_values(file_path: str) -> np.ndarray:
    """Raw pixel values of a P2 or P5 file, shape (height, width)."""
    data = Path(file_path).read_bytes()
    (magic, width, height, maxval), offset = _pgm_header(data)
    width, height, maxval = int(width), int(height), int(maxval)
    if magic == b'P5':
        dtype = np.dtype('>u2') if maxval > 255 else np.uint8
        raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    elif magic == b'P2':
        raster = np.array([int(token) for token in data[offset - 1:].split()[:width * height]], dtype=np.int64)
    else:
        raise InvalidArgumentError(f"not a PGM file: magic {magic!r}")
    if raster.size != width * height:
        raise InvalidArgumentError(f"PGM raster has {raster.size} values, expected {width * height}")
    return raster.reshape(height, width)


def read_pgm(file_path: str) -> PixelMask:
    """Read a binary mask; pixels >= 128 are observed."""
    values = read_pgm_values(file_path)
    return PixelMask.from_array((values >= OBSERVED_LEVEL).astype(np.uint8))
