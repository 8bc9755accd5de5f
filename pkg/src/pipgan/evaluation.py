"""Quantitative image metrics (PSNR / MSE / RMSE) and report formatting.

All metrics use peak value 1.0, score color channels jointly, and aggregate
per-image-then-mean, which keeps mean RMSE <= sqrt(mean MSE).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import load_image
from .errors import MissingPairsError

PSNR_CAP_DB = 99.0


def image_metrics(generated: np.ndarray, target: np.ndarray) -> tuple[float, float, float]:
    """(psnr_db, mse, rmse) for one image pair of [0, 1] floats."""
    generated = np.asarray(generated, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch: {generated.shape} vs {target.shape}")
    mse = float(np.mean((generated - target) ** 2))
    rmse = math.sqrt(mse)
    psnr = PSNR_CAP_DB if mse == 0.0 else min(-10.0 * math.log10(mse), PSNR_CAP_DB)
    return psnr, mse, rmse


@dataclass
class MetricsReport:
    """Per-image metric rows plus their column means."""

    per_image: list = field(default_factory=list)  # (pair_id, psnr, mse, rmse)

    def add(self, pair_id: str, psnr: float, mse: float, rmse: float) -> None:
        self.per_image.append((pair_id, psnr, mse, rmse))

    @property
    def n_pairs(self) -> int:
        return len(self.per_image)

    @property
    def aggregate(self) -> dict:
        if not self.per_image:
            raise ValueError("empty report has no aggregate")
        cols = list(zip(*self.per_image))
        return {
            "psnr_db": float(np.mean(cols[1])),
            "mse": float(np.mean(cols[2])),
            "rmse": float(np.mean(cols[3])),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pair_id", "psnr_db", "mse", "rmse"])
        for pair_id, psnr, mse, rmse in self.per_image:
            writer.writerow([pair_id, repr(psnr), repr(mse), repr(rmse)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        report = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                report.add(row["pair_id"], float(row["psnr_db"]),
                           float(row["mse"]), float(row["rmse"]))
        return report


def evaluate_pairs(generated_dir, target_dir, manifest=None) -> MetricsReport:
    """Score every manifest pair found in both directories.

    ``manifest`` is an iterable of relative file names (pair ids); when None,
    all files in ``generated_dir`` are scored. Missing files on either side
    raise with the full list of absent ids.
    """
    generated_dir = Path(generated_dir)
    target_dir = Path(target_dir)
    if manifest is None:
        ids = sorted(p.name for p in generated_dir.iterdir() if p.is_file())
    else:
        ids = list(manifest)
    missing = [i for i in ids
               if not (generated_dir / i).is_file() or not (target_dir / i).is_file()]
    if missing:
        raise MissingPairsError(missing)
    report = MetricsReport()
    for pair_id in ids:
        psnr, mse, rmse = image_metrics(load_image(generated_dir / pair_id),
                                        load_image(target_dir / pair_id))
        report.add(pair_id, psnr, mse, rmse)
    return report


def format_metric_row(psnr: float, mse: float, rmse: float) -> tuple[str, str, str]:
    """Column formatting used by every rendered table: 4 / 5 / 4 decimals."""
    return (f"{psnr:.4f}", f"{mse:.5f}", f"{rmse:.4f}")


@dataclass
class AblationTable:
    """Rendered method-comparison table in CSV, aligned-text, and Markdown forms."""

    rows: list  # (method, psnr_str, mse_str, rmse_str)

    @property
    def csv_text(self) -> str:
        lines = ["Method,P-SNR,MSE,R-MSE"]
        lines += [",".join(row) for row in self.rows]
        return "\n".join(lines) + "\n"

    @property
    def text(self) -> str:
        header = ("Method", "P-SNR", "MSE", "R-MSE")
        widths = [max(len(header[i]), *(len(r[i]) for r in self.rows)) for i in range(4)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in self.rows]
        return "\n".join(lines) + "\n"

    @property
    def markdown(self) -> str:
        lines = ["| Method | P-SNR | MSE | R-MSE |", "| --- | --- | --- | --- |"]
        lines += ["| " + " | ".join(row) + " |" for row in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "ablation") -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.csv").write_text(self.csv_text, encoding="utf-8")
        (out_dir / f"{stem}.txt").write_text(self.text, encoding="utf-8")
        (out_dir / f"{stem}.md").write_text(self.markdown, encoding="utf-8")


def ablation_report(entries) -> AblationTable:
    """Render (method name, MetricsReport) pairs as a comparison table."""
    entries = list(entries)
    if not entries:
        raise ValueError("ablation report needs at least one entry")
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate method names: {dupes}")
    rows = []
    for name, report in entries:
        agg = report.aggregate
        rows.append((name,) + format_metric_row(agg["psnr_db"], agg["mse"], agg["rmse"]))
    return AblationTable(rows=rows)
