"""Reconstruction quality metric and experiment record serialization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

PSNR_CAP_DB = 60.0
PIXEL_MAX = 255.0


def psnr(reference: np.ndarray, reconstructed: np.ndarray) -> float:
    """10 log10(MAX^2 / MSE) on the 8-bit pixel convention, capped at 60 dB.

    Inputs live in [0, 1] and are rescaled by 255 here, the single conversion
    point in the package.
    """
    ref = np.asarray(reference, dtype=np.float64).ravel()
    rec = np.asarray(reconstructed, dtype=np.float64).ravel()
    if ref.shape != rec.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {rec.shape}")
    mse = float(np.mean(((ref - rec) * PIXEL_MAX) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(PIXEL_MAX ** 2 / mse), PSNR_CAP_DB)


# CSV schema for sweep outputs; wall_clock_s is run metadata, not row identity,
# so it stays out of the file.
CSV_COLUMNS = (
    "policy",
    "option_bits",
    "threshold_db",
    "snr_db",
    "success_ratio",
    "avg_bits",
    "total_bits",
    "mean_psnr_db",
    "seed",
    "config_hash",
)


@dataclass
class MetricsRecord:
    policy: str
    option_bits: tuple
    threshold_db: float
    snr_db: float
    success_ratio: float
    avg_bits: float
    total_bits: float
    mean_psnr_db: float
    seed: int
    config_hash: str
    wall_clock_s: float = 0.0

    def __post_init__(self):
        self.option_bits = tuple(int(b) for b in self.option_bits)
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not np.isfinite(value):
                raise ValueError(f"MetricsRecord.{f.name} must be finite, got {value}")

    def csv_row(self) -> list[str]:
        return [
            self.policy,
            ";".join(str(b) for b in self.option_bits),
            _fmt(self.threshold_db),
            _fmt(self.snr_db),
            _fmt(self.success_ratio),
            _fmt(self.avg_bits),
            _fmt(self.total_bits),
            _fmt(self.mean_psnr_db),
            str(self.seed),
            self.config_hash,
        ]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV columns {header}")
        records = []
        for row in reader:
            records.append(MetricsRecord(
                policy=row[0],
                option_bits=tuple(int(b) for b in row[1].split(";") if b),
                threshold_db=float(row[2]),
                snr_db=float(row[3]),
                success_ratio=float(row[4]),
                avg_bits=float(row[5]),
                total_bits=float(row[6]),
                mean_psnr_db=float(row[7]),
                seed=int(row[8]),
                config_hash=row[9],
            ))
    return records
