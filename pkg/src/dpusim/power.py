"""Linear power model over clock, accelerator size and accelerator busy time.

The modeled quantity is dynamic power: board peak minus the idle baseline.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .engine import MetricsReport
from .model import DPU, AcceleratorSpec
from .scenarios import IDLE_BOARD_W, MeasurementTable, parse_scenario_id

FEATURES = ("c0", "c_freq", "c_size", "c_busy")
POWER_REPORT_HEADER = ("row_id", "observed_w", "predicted_w", "residual_w")


class PowerFitError(ValueError):
    pass


@dataclass(frozen=True)
class PowerParams:
    c0_w: float = 0.0
    c_freq_w: float = 0.0  # per unit of f/400
    c_size_w: float = 0.0  # per doubling of the accelerator beyond B512
    c_busy_w: float = 0.0  # per unit of accelerator busy fraction
    idle_board_w: float = IDLE_BOARD_W

    def errors(self) -> list[str]:
        errs = []
        for name in ("c0_w", "c_freq_w", "c_size_w", "c_busy_w", "idle_board_w"):
            if not math.isfinite(getattr(self, name)):
                errs.append(f"power.{name} must be finite")
        if not self.idle_board_w > 0:
            errs.append(f"power.idle_board_w must be > 0 (got {self.idle_board_w})")
        return errs

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.c0_w, self.c_freq_w, self.c_size_w, self.c_busy_w)


def feature_vector(ops_per_cycle: int, freq_mhz: float, busy_dpu_total: float) -> np.ndarray:
    return np.array([1.0, freq_mhz / 400.0, math.log2(ops_per_cycle / 512.0), busy_dpu_total])


def estimate_power(accel: AcceleratorSpec, busy_dpu_total: float, pp: PowerParams) -> float:
    """Dynamic watts at ``accel`` with the accelerator busy the given fraction."""
    if not 0.0 <= busy_dpu_total <= 1.0:
        raise ValueError(f"busy_dpu_total must lie in [0, 1] (got {busy_dpu_total})")
    x = feature_vector(accel.ops_per_cycle, accel.freq_mhz, busy_dpu_total)
    return float(np.dot(x, pp.coefficients))


def fps_per_watt(throughput_fps: float, dynamic_watts: float) -> float:
    if not dynamic_watts > 0:
        raise ValueError(f"power must be > 0 W (got {dynamic_watts})")
    return throughput_fps / dynamic_watts


def with_power(report: MetricsReport, accel: AcceleratorSpec, pp: PowerParams) -> MetricsReport:
    """Copy of ``report`` with the power and FPS/W fields filled in."""
    watts = estimate_power(accel, min(report.busy_total(DPU), 1.0), pp)
    fpw = fps_per_watt(report.throughput_fps, watts) if watts > 0 else None
    return replace(report, power_w=watts, fps_per_watt=fpw)


@dataclass
class PowerFit:
    params: PowerParams
    features: tuple[str, ...]
    rows: list[tuple[str, float, float, float]]  # (row_id, observed, predicted, residual)
    offsets: dict[str, float] = field(default_factory=dict)
    design: np.ndarray | None = None

    @property
    def residuals(self) -> dict[str, float]:
        return {rid: res for rid, _, _, res in self.rows}

    @property
    def max_abs_residual(self) -> float:
        return max(abs(r[3]) for r in self.rows)


def fit_power(
    table: MeasurementTable,
    features: Sequence[str] = ("c0", "c_freq"),
    busy: Mapping[str, float] | None = None,
    offset_sources: Sequence[str] = (),
) -> PowerFit:
    """Ordinary least squares of dynamic power on the enabled features.

    ``busy`` maps scenario id to simulated accelerator busy fraction and is
    required when ``c_busy`` is enabled.  Each name in ``offset_sources``
    adds an indicator column for rows from that source table, absorbing a
    constant disagreement between tables.
    """
    unknown = [f for f in features if f not in FEATURES]
    if unknown:
        raise PowerFitError(f"unknown power features {unknown}; choose from {FEATURES}")
    features = tuple(f for f in FEATURES if f in features)
    rows = [r for r in table if r.get("power_w") is not None]
    columns = list(features) + [f"offset[{s}]" for s in offset_sources]
    if len(rows) < len(columns) + 1:
        raise PowerFitError(
            f"need at least {len(columns) + 1} rows with power for {len(columns)} features, got {len(rows)}"
        )

    idx = [FEATURES.index(f) for f in features]
    A, y, ids = [], [], []
    for r in rows:
        b, f, _ = parse_scenario_id(r.scenario_id)
        bz = 0.0
        if "c_busy" in features:
            if busy is None or r.scenario_id not in busy:
                raise PowerFitError(f"row {r.scenario_id}: no busy fraction given for the c_busy feature")
            bz = busy[r.scenario_id]
        x = list(feature_vector(b, f, bz)[idx])
        x += [1.0 if r.source == s else 0.0 for s in offset_sources]
        A.append(x)
        y.append(r.observed["power_w"])
        ids.append(f"{r.source}:{r.scenario_id}" if r.source else r.scenario_id)
    A = np.array(A)
    y = np.array(y)

    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1]:
        raise PowerFitError(f"rank-deficient power design: {', '.join(_collinear(A, columns))} are collinear")

    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    full = dict.fromkeys(FEATURES, 0.0)
    full.update(zip(features, coef[: len(features)]))
    pp = PowerParams(full["c0"], full["c_freq"], full["c_size"], full["c_busy"])
    offsets = {s: float(c) for s, c in zip(offset_sources, coef[len(features):])}
    out = [(rid, float(o), float(p), float(o - p)) for rid, o, p in zip(ids, y, pred)]
    return PowerFit(pp, tuple(columns), out, offsets, A)


def _collinear(A: np.ndarray, columns: list[str]) -> list[str]:
    # columns carrying weight in the null-space directions of the design
    _, s, vt = np.linalg.svd(A)
    tol = s.max() * max(A.shape) * np.finfo(float).eps
    null = vt[np.sum(s > tol):]
    involved = np.any(np.abs(null) > 1e-8, axis=0)
    return [c for c, hit in zip(columns, involved) if hit]


def write_power_report(fit: PowerFit, dest: str | Path | io.TextIOBase) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            write_power_report(fit, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(POWER_REPORT_HEADER)
    for rid, obs, pred, res in fit.rows:
        w.writerow([rid, repr(obs), repr(pred), repr(res)])


def read_power_report(src: str | Path | io.TextIOBase) -> list[tuple[str, float, float, float]]:
    if isinstance(src, (str, Path)):
        with open(src, newline="") as fh:
            return read_power_report(fh)
    reader = csv.reader(src)
    if tuple(next(reader)) != POWER_REPORT_HEADER:
        raise ValueError("unexpected power report header")
    return [(r[0], float(r[1]), float(r[2]), float(r[3])) for r in reader]
