"""Accuracy evaluation of a DEM against a reference.

Statistical metrics over the signed residual dem - reference (jointly
valid pixels only):

* mean, RMSE, MAE
* STD in population form, so that rmse^2 == mean^2 + std^2 exactly
* NMAD = 1.4826 * median(|residual - median(residual)|), a robust spread
  estimator insensitive to gross blunders

plus a census of phase-unwrapping-sized blunders (residuals whose
magnitude exceeds 0.75 * min(|HoA|) - 4 meters), the share of pixels with
|residual| below 2 m / 4 m, and 8-bit grayscale residual-map export.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import DemGrid, require_compatible

NMAD_FACTOR = 1.4826

CSV_HEADER = (
    "mean,rmse,mae,nmad,std,n_valid,pu_threshold,n_pu_errors,"
    "max_discrepancy,min_discrepancy,band_lt2,band_lt4,band_ge4"
)


@dataclass(frozen=True)
class QualityReport:
    """Metric bundle for one DEM/reference pair; PU fields need HoA input."""

    mean: float
    rmse: float
    mae: float
    nmad: float
    std: float
    n_valid: int
    band_lt2: float
    band_lt4: float
    band_ge4: float
    pu_threshold: float | None = None
    n_pu_errors: int | None = None
    max_discrepancy: float | None = None
    min_discrepancy: float | None = None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "rmse": self.rmse,
            "mae": self.mae,
            "nmad": self.nmad,
            "std": self.std,
            "n_valid": self.n_valid,
            "pu_threshold": self.pu_threshold,
            "n_pu_errors": self.n_pu_errors,
            "max_discrepancy": self.max_discrepancy,
            "min_discrepancy": self.min_discrepancy,
            "band_lt2": self.band_lt2,
            "band_lt4": self.band_lt4,
            "band_ge4": self.band_ge4,
        }

    def to_csv_row(self) -> str:
        def cell(v):
            return "" if v is None else repr(v) if isinstance(v, float) else str(v)

        d = self.to_dict()
        return ",".join(cell(d[k]) for k in CSV_HEADER.split(","))


def residual_grid(dem: DemGrid, reference: DemGrid) -> DemGrid:
    """Signed residual dem - reference; nodata wherever either input is."""
    require_compatible([dem, reference])
    both = dem.valid_mask & reference.valid_mask
    if not both.any():
        raise ValueError("no jointly valid pixel between DEM and reference")
    delta = np.where(both, dem.heights - reference.heights, np.nan)
    return dem.with_heights(delta)


def compute_metrics(residuals: DemGrid) -> QualityReport:
    """Statistical metrics (and accuracy bands) of a residual grid."""
    d = residuals.valid_values()
    if d.size < 2:
        raise ValueError(f"need at least 2 valid residuals, got {d.size}")
    mean = float(np.mean(d))
    rmse = float(np.sqrt(np.mean(d * d)))
    mae = float(np.mean(np.abs(d)))
    std = float(np.sqrt(np.mean((d - mean) ** 2)))
    med = float(np.median(d))
    nmad = NMAD_FACTOR * float(np.median(np.abs(d - med)))
    lt2, lt4, ge4 = accuracy_bands(residuals)
    return QualityReport(
        mean=mean,
        rmse=rmse,
        mae=mae,
        nmad=nmad,
        std=std,
        n_valid=int(d.size),
        band_lt2=lt2,
        band_lt4=lt4,
        band_ge4=ge4,
    )


def pu_threshold(hoas: Sequence[float]) -> float:
    """Blunder threshold 0.75 * min(|HoA|) - 4 from the heights of ambiguity."""
    if not hoas:
        raise ValueError("need at least one height of ambiguity")
    if any(h == 0 for h in hoas):
        raise ValueError("heights of ambiguity must be nonzero")
    th = 0.75 * min(abs(float(h)) for h in hoas) - 4.0
    if th <= 0:
        raise ValueError(
            f"threshold {th:.3f} m is not positive; the smallest |HoA| is too small"
        )
    return th


def pu_census(
    residuals: DemGrid, threshold: float
) -> tuple[int, float, float]:
    """(count of |residual| > threshold, max signed residual, min signed residual)."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    d = residuals.valid_values()
    if d.size == 0:
        raise ValueError("no valid residuals")
    count = int((np.abs(d) > threshold).sum())
    return count, float(d.max()), float(d.min())


def accuracy_bands(residuals: DemGrid) -> tuple[float, float, float]:
    """Percentages of valid pixels with |residual| < 2 m, < 4 m, >= 4 m."""
    d = residuals.valid_values()
    if d.size == 0:
        raise ValueError("no valid residuals")
    a = np.abs(d)
    lt2 = 100.0 * float((a < 2.0).sum()) / d.size
    lt4 = 100.0 * float((a < 4.0).sum()) / d.size
    return lt2, lt4, 100.0 - lt4


def evaluate(
    dem: DemGrid, reference: DemGrid, hoas: Sequence[float] | None = None
) -> tuple[QualityReport, DemGrid]:
    """Full report for a DEM against a reference; PU census when HoAs given."""
    residuals = residual_grid(dem, reference)
    report = compute_metrics(residuals)
    if hoas:
        th = pu_threshold(hoas)
        count, dmax, dmin = pu_census(residuals, th)
        report = QualityReport(
            **{
                **report.to_dict(),
                "pu_threshold": th,
                "n_pu_errors": count,
                "max_discrepancy": dmax,
                "min_discrepancy": dmin,
            }
        )
    return report, residuals


def write_report_json(report: QualityReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def write_report_csv(report: QualityReport, path) -> None:
    Path(path).write_text(CSV_HEADER + "\n" + report.to_csv_row() + "\n")


def write_residual_pgm(residuals: DemGrid, path, vmax: float | None = None) -> None:
    """Export |residual| as an 8-bit binary PGM (P5) image.

    Magnitudes are scaled linearly so that ``vmax`` (default: the 99th
    percentile of the valid magnitudes) maps to 255; nodata renders black.
    Rows are written north to south like the raster formats.
    """
    a = np.abs(residuals.masked)
    if vmax is None:
        vals = a[np.isfinite(a)]
        if vals.size == 0:
            raise ValueError("no valid residuals to export")
        vmax = float(np.percentile(vals, 99.0))
    if vmax <= 0:
        vmax = 1.0
    scaled = np.clip(np.round(a * (255.0 / vmax)), 0, 255)
    img = np.where(np.isfinite(scaled), scaled, 0).astype(np.uint8)[::-1]
    header = f"P5\n{residuals.cols} {residuals.rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
