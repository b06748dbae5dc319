"""Bundled scenarios and measurement tables."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .model import (
    AcceleratorSpec,
    DpuTaskParams,
    HostSpec,
    PipelineSpec,
    ScenarioConfig,
    SimOptions,
    StageSpec,
    ThreadingSpec,
)

MEASUREMENT_COLUMNS = (
    "scenario_id",
    "throughput_fps",
    "busy_total_pct",
    "occupancy_fd_pct",
    "occupancy_fer_pct",
    "power_w",
    "peak_power_w",
    "freq_mhz",
    "ops_per_cycle",
    "workers",
)
PCT_COLUMNS = ("busy_total_pct", "occupancy_fd_pct", "occupancy_fer_pct")

# Board power with the system idle; dynamic power is peak minus this.
IDLE_BOARD_W = 7.8

# FPGA resource counts per accelerator size, carried as inert metadata.
RESOURCE_COUNTS = {
    512: {"luts": 27023, "dsps": 118, "brams": 12.0},
    1024: {"luts": 34593, "dsps": 230, "brams": 44.0},
    2034: {"luts": 41861, "dsps": 438, "brams": 60.5},
    4096: {"luts": 51561, "dsps": 710, "brams": 82.5},
}

# Comparison system with a CPU-side face detector, one thread.  Kept out of
# the measurement tables: it is not a configuration of this pipeline.
PREVIOUS_WORK = {"throughput_fps": 11.67, "power_w": 2.3, "peak_power_w": 10.1, "luts": 34593, "dsps": 230, "brams": 44.0}

SIZES = (512, 1024, 2034, 4096)
FREQS = (300, 400, 500, 600)

BUILTIN_IDS = (
    "b512-1t",
    "b512-2t",
    "b1024-1t",
    "b1024-2t",
    "b2034-1t",
    "b2034-2t",
    "b4096-1t",
    "b4096-2t",
    "b512-2t-f300",
    "b512-2t-f500",
    "b512-2t-f600",
)

_ID_RE = re.compile(r"^b(\d+)-(\d+)t(?:-f(\d+))?$")

# Canonical per-frame flow: resize, detect, crop/grayscale, classify, draw.
CPU_STAGES = ("pre", "mid", "post")
TASKS = ("FD", "FER")


def reference_pipeline() -> PipelineSpec:
    return PipelineSpec(
        (
            StageSpec.cpu("pre", 0.0),
            StageSpec.dpu("FD"),
            StageSpec.cpu("mid", 0.0),
            StageSpec.dpu("FER"),
            StageSpec.cpu("post", 0.0),
        )
    )


def reference_host() -> HostSpec:
    # Quad-core host whose worker threads share one interpreter lock.
    return HostSpec(cores=4, serialize_compute=True)


def scenario_id(ops_per_cycle: int, freq_mhz: float, workers: int) -> str:
    sid = f"b{ops_per_cycle}-{workers}t"
    if float(freq_mhz) != 400.0:
        sid += f"-f{freq_mhz:g}"
    return sid


def parse_scenario_id(sid: str) -> tuple[int, float, int]:
    m = _ID_RE.match(sid)
    if not m:
        raise KeyError(sid)
    return int(m.group(1)), float(m.group(3) or 400), int(m.group(2))


def make_scenario(ops_per_cycle: int, freq_mhz: float, workers: int, sim: SimOptions | None = None) -> ScenarioConfig:
    """Reference pipeline at an arbitrary (size, clock, workers) point.

    Costs are zero placeholders until a ParamSet is applied.
    """
    meta: dict = dict(RESOURCE_COUNTS.get(ops_per_cycle, {}))
    if ops_per_cycle == 2034:
        meta["note"] = "size label kept as printed; the standard product line has B2304, not B2034"
    return ScenarioConfig(
        accelerator=AcceleratorSpec("DPU", int(ops_per_cycle), float(freq_mhz)),
        host=reference_host(),
        tasks=tuple(DpuTaskParams(name) for name in TASKS),
        pipeline=reference_pipeline(),
        threading=ThreadingSpec(workers=int(workers), camera_interval_ms=0.0, frame_queue_depth=1),
        sim=sim or SimOptions(),
        metadata=meta,
        id=scenario_id(ops_per_cycle, freq_mhz, workers),
    )


def builtin_scenario(sid: str) -> ScenarioConfig:
    if sid not in BUILTIN_IDS:
        raise KeyError(f"unknown scenario {sid!r}; valid ids: {', '.join(BUILTIN_IDS)}")
    return make_scenario(*parse_scenario_id(sid))


@dataclass(frozen=True)
class MeasurementRow:
    """One observed configuration.  Percent columns are held as fractions."""

    scenario_id: str
    observed: dict[str, float] = field(default_factory=dict)
    source: str = ""

    def get(self, metric: str) -> float | None:
        return self.observed.get(metric)


@dataclass(frozen=True)
class MeasurementTable:
    rows: tuple[MeasurementRow, ...]

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def select(self, source: str | None = None, ids=None) -> "MeasurementTable":
        rows = self.rows
        if source is not None:
            rows = tuple(r for r in rows if r.source == source)
        if ids is not None:
            ids = set(ids)
            rows = tuple(r for r in rows if r.scenario_id in ids)
        return MeasurementTable(rows)

    def __add__(self, other: "MeasurementTable") -> "MeasurementTable":
        return MeasurementTable(self.rows + other.rows)

    @property
    def scenario_ids(self) -> list[str]:
        """Distinct ids in first-seen order."""
        return list(dict.fromkeys(r.scenario_id for r in self.rows))

    def row(self, sid: str, source: str | None = None) -> MeasurementRow:
        for r in self.rows:
            if r.scenario_id == sid and (source is None or r.source == source):
                return r
        raise KeyError(sid)

    def to_csv(self, dest: str | Path | io.TextIOBase) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as fh:
                self.to_csv(fh)
            return
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(MEASUREMENT_COLUMNS)
        for r in self.rows:
            out = [r.scenario_id]
            for col in MEASUREMENT_COLUMNS[1:]:
                key = _metric_key(col)
                v = r.observed.get(key)
                if v is None:
                    out.append("")
                elif col in PCT_COLUMNS:
                    out.append(_pct_str(v))
                elif col in ("ops_per_cycle", "workers"):
                    out.append(str(int(v)))
                else:
                    out.append(repr(float(v)))
            w.writerow(out)

    @classmethod
    def from_csv(cls, src: str | Path | io.TextIOBase, source: str = "") -> "MeasurementTable":
        if isinstance(src, (str, Path)):
            with open(src, newline="") as fh:
                return cls.from_csv(fh, source or Path(src).stem)
        reader = csv.reader(src)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MEASUREMENT_COLUMNS:
            raise MeasurementError(f"row 1: expected header {','.join(MEASUREMENT_COLUMNS)}")
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(MEASUREMENT_COLUMNS):
                raise MeasurementError(
                    f"row {lineno}: expected {len(MEASUREMENT_COLUMNS)} cells, got {len(cells)}"
                )
            observed = {}
            for col, cell in zip(MEASUREMENT_COLUMNS[1:], cells[1:]):
                cell = cell.strip()
                if not cell:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise MeasurementError(
                        f"row {lineno} ({cells[0].strip()}): column {col}: not a number: {cell!r}"
                    ) from None
                if col in PCT_COLUMNS:
                    # occupancy sums waiting time over workers and may pass 100
                    if v < 0:
                        raise MeasurementError(
                            f"row {lineno} ({cells[0].strip()}): column {col}: negative percentage {v}"
                        )
                    v = v / 100.0
                observed[_metric_key(col)] = v
            sid = cells[0].strip()
            if not sid:
                raise MeasurementError(f"row {lineno}: empty scenario_id")
            rows.append(MeasurementRow(sid, observed, source))
        return cls(tuple(rows))


class MeasurementError(ValueError):
    pass


def _metric_key(col: str) -> str:
    return col[: -len("_pct")] if col.endswith("_pct") else col


def _pct_str(frac: float) -> str:
    # shortest decimal percentage that reads back to the same fraction
    for digits in range(1, 18):
        s = f"{frac * 100:.{digits}g}"
        if float(s) / 100.0 == frac:
            return s
    return repr(frac * 100)


TABLE_LABELS = {"table3": "Table III", "table4": "Table IV", "table5": "Table V"}


def builtin_measurements() -> MeasurementTable:
    """Rows of the three bundled tables, each tagged with its table of origin."""
    out = MeasurementTable(())
    pkg = resources.files(__package__) / "data"
    for name in TABLE_LABELS:
        with (pkg / f"{name}.csv").open(newline="") as fh:
            out = out + MeasurementTable.from_csv(fh, name)
    return out


def scenario_for_row(row: MeasurementRow, sim: SimOptions | None = None) -> ScenarioConfig:
    """Build the scenario a measurement row describes."""
    try:
        b, f, w = parse_scenario_id(row.scenario_id)
    except KeyError:
        obs = row.observed
        if not {"ops_per_cycle", "freq_mhz", "workers"} <= obs.keys():
            raise
        b, f, w = int(obs["ops_per_cycle"]), obs["freq_mhz"], int(obs["workers"])
    return make_scenario(b, f, w, sim)
