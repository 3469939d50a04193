"""Result artifacts: metric CSVs, manifests, trajectories, PGM dumps and reports."""

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from .guidance.schemas import StepRecord
from .models import BIAS_HEADER, METRIC_HEADER, TRAJECTORY_HEADER, MetricRow, RunManifest, format_value
from .oracle import BiasReport
from .task import InpaintingTask

REPORT_TEMPLATE = "report.md.j2"


def _format_list(values: Sequence) -> str:
    return ", ".join(format_value(v) for v in values) if len(values) else "-"


def write_task(task: InpaintingTask, file_path: str) -> str:
    """Write a task in the ``key = value`` format read by ``read_task``."""
    lines = [
        f"d = {task.d}",
        f"masked_indices = {_format_list(task.masked.tolist())}",
        f"y = {_format_list([float(v) for v in task.y])}",
        f"sigma_y = {format_value(task.sigma_y)}",
    ]
    path = Path(file_path)
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return str(path)


def write_pgm(values: np.ndarray, file_path: str) -> Tuple[str, str]:
    """Write a 2D array as binary PGM (P5), mapped affinely from [min, max] to [0, 255].

    The (min, max) pair goes to a ``.range`` sidecar next to the image.

    Returns:
        Paths of the image and the sidecar.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"PGM dump needs a 2D array, got shape {values.shape}")
    lo, hi = float(values.min()), float(values.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.rint((values - lo) * scale).astype(np.uint8)
    path = Path(file_path)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    sidecar = path.with_suffix(".range")
    sidecar.write_text(f"min = {format_value(lo)}\nmax = {format_value(hi)}\n", encoding='utf-8')
    return str(path), str(sidecar)


class ResultStorage:
    """Write the artifacts of one command run into an output directory."""

    def __init__(self, output_dir: str = "results", templates_dir: Optional[str] = None):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.templates_dir = Path(templates_dir) if templates_dir else None

    def _csv(self, name: str, header: List[str], rows: Iterable[List[str]]) -> str:
        path = self.output_dir / name
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)
        return str(path)

    # Write operations
    def save_metrics(self, rows: List[MetricRow], name: str = "metrics.csv") -> str:
        """Write metric rows in (method, seed) order regardless of input order."""
        return self._csv(name, METRIC_HEADER, (row.to_fields() for row in sorted(rows, key=lambda r: r.sort_key)))

    def save_bias(
        self,
        reports: Dict[int, List[BiasReport]],
        d: int,
        slopes: Dict[int, Tuple[float, float]],
        name: str = "bias_scan.csv",
    ) -> str:
        """Write bias rows per seed, then one ``slope`` summary row per fitted seed.

        Summary rows put the mean-gap slope in ``mean_gap`` and the cov-gap slope in ``cov_gap``.
        """
        rows = []
        for seed in sorted(reports):
            for r in reports[seed]:
                rows.append([format_value(v) for v in (r.eta, r.mean_gap, r.cov_gap, r.epsilon_s, r.epsilon_bound, d, seed)])
        for seed in sorted(slopes):
            mean_slope, cov_slope = slopes[seed]
            rows.append(["slope", format_value(mean_slope), format_value(cov_slope), "", "", str(d), str(seed)])
        return self._csv(name, BIAS_HEADER, rows)

    def save_trajectory(self, stem: str, records: List[StepRecord]) -> str:
        """Write ``trajectory_<stem>.csv``; the stem identifies one chain."""
        rows = ([format_value(v) for v in (r.step, r.time, r.eta, r.gamma, r.residual)] for r in records)
        return self._csv(f"trajectory_{stem}.csv", TRAJECTORY_HEADER, rows)

    def save_manifest(self, manifest: RunManifest, name: str = "manifest.json") -> str:
        path = self.output_dir / name
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding='utf-8')
        return str(path)

    def save_pgm(self, values: np.ndarray, name: str) -> Tuple[str, str]:
        return write_pgm(values, str(self.output_dir / name))

    def save_task(self, task: InpaintingTask, name: str = "task.txt") -> str:
        return write_task(task, str(self.output_dir / name))

    def save_report(self, rows: List[MetricRow], context: Dict, name: str = "report.md") -> Optional[str]:
        """Render the Markdown summary with per-method mean and std of every metric."""
        if self.templates_dir is None:
            return None
        env = Environment(loader=FileSystemLoader(str(self.templates_dir)), autoescape=select_autoescape(["html"]))
        template = env.get_template(REPORT_TEMPLATE)
        path = self.output_dir / name
        path.write_text(template.render(summary=summarize(rows), **context), encoding='utf-8')
        return str(path)


def summarize(rows: List[MetricRow]) -> List[Dict]:
    """Per (method, eta kind, K): mean and std over seeds of each metric."""
    groups: Dict[Tuple[str, str, int], List[MetricRow]] = {}
    for row in sorted(rows, key=lambda r: r.sort_key):
        groups.setdefault((row.method, row.eta_kind, row.K), []).append(row)
    summary = []
    for (method, eta_kind, K), group in groups.items():
        entry = {"method": method, "eta_kind": eta_kind, "K": K, "nfe": group[0].nfe, "seeds": len(group)}
        for metric in ("sw", "mean_err", "cov_err", "cpsnr"):
            values = np.array([getattr(r, metric) for r in group], dtype=float)
            entry[metric] = float(np.mean(values))
            entry[f"{metric}_std"] = float(np.std(values))
        summary.append(entry)
    return summary
