"""Closed-form throughput bounds and utilization identities.

These ignore queueing delay entirely, so they bound the simulator from
above; they also seed calibration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .latency import FrameDemands, ParamSet, apply_params, scenario_demands
from .model import CPU, DPU, ScenarioConfig, ValidatedScenario

CPU_BOUND = "cpu"
DPU_BOUND = "dpu"
WORKER_BOUND = "worker"
CAMERA_BOUND = "camera"

TIE_RTOL = 1e-9


def _resolve(scenario, params) -> tuple[ScenarioConfig, FrameDemands]:
    cfg = scenario.config if isinstance(scenario, ValidatedScenario) else scenario
    if params is not None:
        cfg = apply_params(cfg, params)
    return cfg, scenario_demands(cfg)


def single_thread_period(scenario: ScenarioConfig | ValidatedScenario, params: ParamSet | None = None) -> float:
    """Period in ms of one worker running the pipeline strictly in sequence.

    A frame is ready on completion unless the camera is slower than the
    pipeline, in which case the worker idles until the next capture.
    """
    cfg, demands = _resolve(scenario, params)
    return max(demands.total_ms, cfg.threading.camera_interval_ms)


@dataclass(frozen=True)
class Bound:
    fps: float
    binding: tuple[str, ...]
    components: dict[str, float]

    def __str__(self):
        return f"{self.fps:.2f} FPS ({'+'.join(self.binding)})"


def _rate(servers: float, demand_ms: float) -> float:
    return math.inf if demand_ms <= 0 else servers * 1000.0 / demand_ms


def throughput_upper_bound(scenario: ScenarioConfig | ValidatedScenario, params: ParamSet | None = None) -> Bound:
    """Smallest of the cpu, accelerator, worker-count and camera rates."""
    cfg, demands = _resolve(scenario, params)
    totals = demands.totals
    interval = cfg.threading.camera_interval_ms
    comps = {
        CPU_BOUND: _rate(cfg.host.cpu_servers, totals[CPU]),
        DPU_BOUND: _rate(1, totals[DPU]),
        WORKER_BOUND: _rate(cfg.threading.workers, demands.total_ms),
        CAMERA_BOUND: math.inf if interval <= 0 else 1000.0 / interval,
    }
    fps = min(comps.values())
    if math.isinf(fps):
        return Bound(fps, tuple(comps), comps)
    binding = tuple(k for k, v in comps.items() if abs(v - fps) <= TIE_RTOL * fps)
    return Bound(fps, binding, comps)


def predicted_busy(
    scenario: ScenarioConfig | ValidatedScenario, params: ParamSet | None, achieved_fps: float
) -> dict[tuple[str, str], float]:
    """Server utilization implied by a throughput: rate x demand / servers."""
    if not achieved_fps > 0:
        raise ValueError(f"achieved_fps must be > 0 (got {achieved_fps})")
    cfg, demands = _resolve(scenario, params)
    bound = throughput_upper_bound(cfg)
    if achieved_fps > bound.fps + 1e-6:
        raise ValueError(
            f"achieved {achieved_fps:.6f} FPS exceeds the {'/'.join(bound.binding)} "
            f"bound of {bound.fps:.6f} FPS"
        )
    servers = {CPU: cfg.host.cpu_servers, DPU: 1}
    return {
        key: achieved_fps * ms / 1000.0 / servers[key[0]]
        for key, ms in demands.by_label.items()
    }


@dataclass(frozen=True)
class SaturationRow:
    ops_per_cycle: int
    freq_mhz: float
    workers: int
    bound_fps: float
    binding: tuple[str, ...]
    knee: bool = False


SATURATION_HEADER = ("ops_per_cycle", "freq_mhz", "workers", "bound_fps", "binding")


def saturation_report(
    base: ScenarioConfig | ValidatedScenario,
    params: ParamSet | None,
    sweep: Sequence[tuple[int, float, int]],
) -> list[SaturationRow]:
    """Bound and binding constraint at each (size, clock, workers) point.

    The knee is the first point, after one where the accelerator binds, at
    which it no longer does.
    """
    if not sweep:
        raise ValueError("empty sweep")
    cfg = base.config if isinstance(base, ValidatedScenario) else base
    rows = []
    seen_dpu = knee_found = False
    for b, f, w in sweep:
        bound = throughput_upper_bound(cfg.with_knobs(b, f, w), params)
        knee = False
        if DPU_BOUND in bound.binding:
            seen_dpu = True
        elif seen_dpu and not knee_found:
            knee = knee_found = True
        rows.append(SaturationRow(int(b), float(f), int(w), bound.fps, bound.binding, knee))
    return rows


def grid(sizes: Iterable[int], freqs: Iterable[float], workers: Iterable[int]) -> list[tuple[int, float, int]]:
    """Cartesian product in (size, clock, workers) nesting order."""
    return [(int(b), float(f), int(w)) for b in sizes for f in freqs for w in workers]


def write_saturation_csv(rows: list[SaturationRow], dest: str | Path | io.TextIOBase) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            write_saturation_csv(rows, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(SATURATION_HEADER)
    for r in rows:
        w.writerow([r.ops_per_cycle, f"{r.freq_mhz:g}", r.workers, f"{r.bound_fps:.2f}", "+".join(r.binding)])


def read_saturation_csv(src: str | Path | io.TextIOBase) -> list[SaturationRow]:
    if isinstance(src, (str, Path)):
        with open(src, newline="") as fh:
            return read_saturation_csv(fh)
    reader = csv.reader(src)
    if tuple(next(reader)) != SATURATION_HEADER:
        raise ValueError("unexpected saturation report header")
    return [
        SaturationRow(int(b), float(f), int(w), float(fps), tuple(binding.split("+")))
        for b, f, w, fps, binding in reader
    ]
