"""Discrete-event simulation of a camera source, worker threads, a cpu pool
and one accelerator shared under FIFO arbitration.

Time is in milliseconds.  Events with equal timestamps are processed as one
batch, after which waiting requests are granted in (request time, worker id)
order, so runs are fully deterministic for a given seed.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .latency import ParamSet, apply_params, scenario_demands
from .model import CPU, DPU, ScenarioConfig, ValidatedScenario, validate_scenario

PRODUCE = "produce"
DROP = "drop"
DEQUEUE = "dequeue"
ENQUEUE = "enqueue_resource"
START = "start_service"
END = "end_service"
COMPLETE = "complete"
KINDS = (PRODUCE, DROP, DEQUEUE, ENQUEUE, START, END, COMPLETE)

SOURCE = -1
TRACE_HEADER = ("t_ms", "worker_id", "frame_id", "stage", "resource", "kind")


class SimulationError(RuntimeError):
    """The run exceeded its event budget or could not make progress."""

    def __init__(self, message: str, tail: list["TraceEvent"]):
        self.tail = tail
        lines = [message, f"last {len(tail)} trace events:"]
        lines += [",".join(_fmt_row(ev)) for ev in tail]
        super().__init__("\n".join(lines))


class TraceEvent(NamedTuple):
    t_ms: float
    worker_id: int
    frame_id: int
    stage: str
    resource: str
    kind: str


@dataclass
class Trace:
    events: list[TraceEvent]
    # (stage name, resource, metric label) in pipeline order
    stages: tuple[tuple[str, str, str], ...] = ()
    window: tuple[float, float] | None = None
    # servers per resource; busy/occupancy are normalized by these
    capacity: dict[str, int] = field(default_factory=lambda: {CPU: 1, DPU: 1})

    def __len__(self):
        return len(self.events)

    @property
    def labels(self) -> dict[str, str]:
        return {name: label for name, _, label in self.stages}

    def to_csv(self, dest: str | Path | io.TextIOBase) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as fh:
                self.to_csv(fh)
            return
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for ev in self.events:
            w.writerow(_fmt_row(ev))

    @classmethod
    def from_csv(cls, src: str | Path | io.TextIOBase, cpu_servers: int = 1) -> "Trace":
        if isinstance(src, (str, Path)):
            with open(src, newline="") as fh:
                return cls.from_csv(fh, cpu_servers)
        reader = csv.reader(src)
        header = next(reader, None)
        if tuple(header or ()) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header!r}")
        events = []
        stages: dict[str, tuple[str, str, str]] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                t, w, f, stage, res, kind = row
                ev = TraceEvent(float(t), int(w), int(f), stage, res, kind)
            except ValueError as exc:
                raise ValueError(f"trace line {lineno}: {exc}") from None
            if kind not in KINDS:
                raise ValueError(f"trace line {lineno}: unknown event kind {kind!r}")
            if stage and stage not in stages:
                stages[stage] = (stage, res, stage)
            events.append(ev)
        return cls(events, tuple(stages.values()), capacity={CPU: cpu_servers, DPU: 1})


def _fmt_row(ev: TraceEvent) -> list[str]:
    return [f"{ev.t_ms:.3f}", str(ev.worker_id), str(ev.frame_id), ev.stage, ev.resource, ev.kind]


@dataclass
class MetricsReport:
    throughput_fps: float
    window_ms: float
    completed: int
    dropped: int
    busy_fraction: dict[tuple[str, str], float]
    occupancy_fraction: dict[tuple[str, str], float]
    mean_latency_ms: float
    p95_latency_ms: float
    mean_in_system: float = 0.0
    out_of_order: int = 0
    window: tuple[float, float] = (0.0, 0.0)
    power_w: float | None = None
    fps_per_watt: float | None = None

    def busy_total(self, resource: str = DPU) -> float:
        return sum(v for (r, _), v in self.busy_fraction.items() if r == resource)

    def occupancy_total(self, resource: str = DPU) -> float:
        return sum(v for (r, _), v in self.occupancy_fraction.items() if r == resource)

    def busy(self, resource: str, label: str) -> float:
        return self.busy_fraction.get((resource, label), 0.0)

    def occupancy(self, resource: str, label: str) -> float:
        return self.occupancy_fraction.get((resource, label), 0.0)


def _overlap(a: float, b: float, t0: float, t1: float) -> float:
    lo = a if a > t0 else t0
    hi = b if b < t1 else t1
    return hi - lo if hi > lo else 0.0


def metrics_from_trace(trace: Trace, window: tuple[float, float] | None = None) -> MetricsReport:
    """Derive throughput, busy and occupancy fractions over ``window``.

    Busy counts service time only; occupancy counts from the resource
    request to the end of service, so it includes queueing.  Services still
    open at the end of the trace are clipped to the window.
    """
    if window is None:
        window = trace.window
    if window is None:
        raise ValueError("no measurement window given")
    t0, t1 = window
    span = t1 - t0
    if not span > 0:
        raise ValueError(f"empty measurement window [{t0}, {t1}]")

    busy: dict[tuple[str, str], float] = {}
    occ: dict[tuple[str, str], float] = {}
    labels = trace.labels
    for _, res, label in trace.stages:
        busy.setdefault((res, label), 0.0)
        occ.setdefault((res, label), 0.0)

    enq: dict[tuple[int, str], float] = {}
    start: dict[tuple[int, str], float] = {}
    deq: dict[int, float] = {}
    latencies = []
    in_system = 0.0
    completed = dropped = out_of_order = 0
    last_done = -1
    for ev in trace.events:
        kind = ev.kind
        if kind == ENQUEUE:
            enq[(ev.frame_id, ev.stage)] = ev.t_ms
        elif kind == START:
            start[(ev.frame_id, ev.stage)] = ev.t_ms
        elif kind == END:
            key = (ev.frame_id, ev.stage)
            mkey = (ev.resource, labels.get(ev.stage, ev.stage))
            s = start.pop(key)
            e = enq.pop(key, s)
            busy[mkey] = busy.get(mkey, 0.0) + _overlap(s, ev.t_ms, t0, t1)
            occ[mkey] = occ.get(mkey, 0.0) + _overlap(e, ev.t_ms, t0, t1)
        elif kind == DEQUEUE:
            deq[ev.frame_id] = ev.t_ms
        elif kind == COMPLETE:
            d = deq.pop(ev.frame_id)
            in_system += _overlap(d, ev.t_ms, t0, t1)
            if t0 < ev.t_ms <= t1:
                completed += 1
                latencies.append(ev.t_ms - d)
                if ev.frame_id < last_done:
                    out_of_order += 1
                last_done = max(last_done, ev.frame_id)
        elif kind == DROP:
            if t0 < ev.t_ms <= t1:
                dropped += 1

    # work still open at the end of the trace
    for key, s in start.items():
        mkey = _open_key(trace, key[1])
        e = enq.pop(key, s)
        busy[mkey] = busy.get(mkey, 0.0) + _overlap(s, math.inf, t0, t1)
        occ[mkey] = occ.get(mkey, 0.0) + _overlap(e, math.inf, t0, t1)
    for key, e in enq.items():
        if key in start:
            continue
        mkey = _open_key(trace, key[1])
        occ[mkey] = occ.get(mkey, 0.0) + _overlap(e, math.inf, t0, t1)
    for d in deq.values():
        in_system += _overlap(d, math.inf, t0, t1)

    lat = np.asarray(latencies, dtype=float)
    cap = trace.capacity
    return MetricsReport(
        throughput_fps=completed / (span / 1000.0),
        window_ms=span,
        completed=completed,
        dropped=dropped,
        busy_fraction={k: v / (span * cap.get(k[0], 1)) for k, v in busy.items()},
        occupancy_fraction={k: v / (span * cap.get(k[0], 1)) for k, v in occ.items()},
        mean_latency_ms=float(lat.mean()) if lat.size else math.nan,
        p95_latency_ms=float(np.percentile(lat, 95)) if lat.size else math.nan,
        mean_in_system=in_system / span,
        out_of_order=out_of_order,
        window=(t0, t1),
    )


def _open_key(trace: Trace, stage: str) -> tuple[str, str]:
    for name, res, label in trace.stages:
        if name == stage:
            return (res, label)
    # trace without stage table: find the resource from any event of the stage
    for ev in trace.events:
        if ev.stage == stage and ev.resource:
            return (ev.resource, stage)
    return ("", stage)


class _Jitter:
    """Mean-one lognormal multipliers drawn in blocks from a seeded generator."""

    def __init__(self, cv: float, seed: int, block: int = 4096):
        self.enabled = cv > 0
        if self.enabled:
            sigma2 = math.log1p(cv * cv)
            self.mu, self.sigma = -sigma2 / 2.0, math.sqrt(sigma2)
            self.rng = np.random.default_rng(seed)
            self.block = block
            self.buf: list[float] = []
            self.pos = 0

    def __call__(self) -> float:
        if not self.enabled:
            return 1.0
        if self.pos >= len(self.buf):
            self.buf = self.rng.lognormal(self.mu, self.sigma, self.block).tolist()
            self.pos = 0
        x = self.buf[self.pos]
        self.pos += 1
        return x


def simulate(
    scenario: ScenarioConfig | ValidatedScenario,
    params: ParamSet | None = None,
) -> tuple[MetricsReport, Trace]:
    """Run one simulation and return its metrics and full event trace.

    Costs come from ``params`` when given, otherwise from the scenario.
    The measurement window runs from the completion of the warmup-th frame
    to the completion of the last measured frame.
    """
    cfg = scenario.config if isinstance(scenario, ValidatedScenario) else scenario
    if params is not None:
        cfg = apply_params(cfg, params)
    cfg = validate_scenario(cfg).config

    demands = scenario_demands(cfg)
    stage_names = [s.name for s in cfg.pipeline.stages]
    stage_res = [r for r, _, _ in demands.stages]
    stage_ms = [ms for _, _, ms in demands.stages]
    n_stages = len(stage_names)
    stage_table = tuple((s.name, s.resource, s.label) for s in cfg.pipeline.stages)

    th, sim = cfg.threading, cfg.sim
    n_workers = th.workers
    interval = th.camera_interval_ms
    depth = th.frame_queue_depth
    target = sim.warmup_frames + sim.frames
    budget = sim.max_events or 200 * (target + n_workers + 10) * (n_stages + 3)
    # the camera keeps producing while frames are in service; allow for as
    # many captures per service event as fit in one frame's worth of work
    camera_budget = budget * (1 + math.ceil(demands.total_ms / interval)) if interval > 0 else 0
    captured = 0
    jitter = _Jitter(sim.jitter_cv, sim.seed)

    free = {CPU: cfg.host.cpu_servers, DPU: 1}
    waiting: dict[str, list[tuple[float, int]]] = {CPU: [], DPU: []}
    frame_waiters: list[tuple[float, int]] = [(0.0, w) for w in range(n_workers)]
    camera: deque[int] = deque()

    cur_stage = [0] * n_workers
    cur_frame = [-1] * n_workers

    events: list[TraceEvent] = []
    emit = events.append
    # heap entries: (time, order, worker, seq); order 0 = camera, 1 = end of service
    heap: list[tuple[float, int, int, int]] = []
    seq = 0
    next_frame = 0
    produced_k = 0
    completions: list[float] = []

    if interval > 0:
        heapq.heappush(heap, (0.0, 0, SOURCE, seq))
        seq += 1

    def request(t: float, w: int) -> None:
        i = cur_stage[w]
        res = stage_res[i]
        emit(TraceEvent(t, w, cur_frame[w], stage_names[i], res, ENQUEUE))
        heapq.heappush(waiting[res], (t, w))

    def dispatch(t: float) -> None:
        nonlocal next_frame, seq
        while frame_waiters and (interval == 0 or camera):
            _, w = heapq.heappop(frame_waiters)
            if interval == 0:
                fid = next_frame
                next_frame += 1
                emit(TraceEvent(t, SOURCE, fid, "", "", PRODUCE))
            else:
                fid = camera.popleft()
            emit(TraceEvent(t, w, fid, "", "", DEQUEUE))
            cur_frame[w] = fid
            cur_stage[w] = 0
            request(t, w)
        for res in (CPU, DPU):
            q = waiting[res]
            while q and free[res]:
                _, w = heapq.heappop(q)
                free[res] -= 1
                i = cur_stage[w]
                emit(TraceEvent(t, w, cur_frame[w], stage_names[i], res, START))
                heapq.heappush(heap, (t + stage_ms[i] * jitter(), 1, w, seq))
                seq += 1

    dispatch(0.0)
    processed = 0
    t = 0.0
    while True:
        if len(completions) >= target and (not heap or heap[0][0] > t):
            break
        if not heap:
            raise SimulationError("simulation stalled with no pending events", events[-100:])
        t = heap[0][0]
        while heap and heap[0][0] == t:
            _, order, w, _ = heapq.heappop(heap)
            if order == 0:
                captured += 1
                fid = next_frame
                next_frame += 1
                emit(TraceEvent(t, SOURCE, fid, "", "", PRODUCE))
                if len(camera) >= depth:
                    emit(TraceEvent(t, SOURCE, camera.popleft(), "", "", DROP))
                camera.append(fid)
                produced_k += 1
                heapq.heappush(heap, (produced_k * interval, 0, SOURCE, seq))
                seq += 1
                continue
            processed += 1
            i = cur_stage[w]
            res = stage_res[i]
            free[res] += 1
            emit(TraceEvent(t, w, cur_frame[w], stage_names[i], res, END))
            if i + 1 < n_stages:
                cur_stage[w] = i + 1
                request(t, w)
            else:
                emit(TraceEvent(t, w, cur_frame[w], "", "", COMPLETE))
                completions.append(t)
                cur_frame[w] = -1
                heapq.heappush(frame_waiters, (t, w))
        dispatch(t)
        if processed > budget or captured > camera_budget + budget:
            raise SimulationError(
                f"event budget of {budget} exceeded at t={t:.3f} ms "
                f"after {len(completions)} of {target} completions",
                events[-100:],
            )

    t0 = completions[sim.warmup_frames - 1] if sim.warmup_frames > 0 else 0.0
    t1 = completions[target - 1]
    trace = Trace(events, stage_table, (t0, t1), {CPU: cfg.host.cpu_servers, DPU: 1})
    return metrics_from_trace(trace), trace


def validate_trace(trace: Trace, scenario: ScenarioConfig | ValidatedScenario) -> list[str]:
    """Check a trace against the engine's invariants; returns violations."""
    cfg = scenario.config if isinstance(scenario, ValidatedScenario) else scenario
    violations: list[str] = []
    events = trace.events
    stage_order = [s.name for s in cfg.pipeline.stages]
    capacity = {CPU: cfg.host.cpu_servers, DPU: 1}

    # (d) timestamps
    for i in range(1, len(events)):
        if events[i].t_ms < events[i - 1].t_ms:
            violations.append(
                f"timestamp decreases at event {i}: {events[i - 1].t_ms} -> {events[i].t_ms}"
            )

    # (a) resource capacity
    active: dict[str, dict[tuple[int, str], float]] = {CPU: {}, DPU: {}}
    for ev in events:
        if ev.kind == END:
            active.setdefault(ev.resource, {}).pop((ev.frame_id, ev.stage), None)
        elif ev.kind == START:
            # ends at the same instant precede starts in event order
            busy = active.setdefault(ev.resource, {})
            cap = capacity.get(ev.resource, 1)
            if len(busy) >= cap:
                others = ", ".join(f"frame {f} ({s})" for f, s in busy)
                violations.append(
                    f"{ev.resource} over capacity {cap} at t={ev.t_ms:.3f}: "
                    f"frame {ev.frame_id} ({ev.stage}) overlaps {others}"
                )
            busy[(ev.frame_id, ev.stage)] = ev.t_ms

    # (b) frame conservation and (c) stage order
    produced, dropped, dequeued, completed = set(), set(), set(), set()
    worker_frame: dict[int, int] = {}
    progress: dict[int, list[str]] = {}
    phase: dict[tuple[int, str], str] = {}
    for ev in events:
        f = ev.frame_id
        if ev.kind == PRODUCE:
            if f in produced:
                violations.append(f"frame {f} produced twice")
            produced.add(f)
        elif ev.kind == DROP:
            if f not in produced or f in dequeued or f in dropped:
                violations.append(f"frame {f} dropped without being queued")
            dropped.add(f)
        elif ev.kind == DEQUEUE:
            if f not in produced or f in dropped or f in dequeued:
                violations.append(f"frame {f} dequeued without being queued")
            prev = worker_frame.get(ev.worker_id)
            if prev is not None:
                violations.append(
                    f"frame conservation: worker {ev.worker_id} dequeued frame {f} "
                    f"before completing frame {prev}"
                )
            worker_frame[ev.worker_id] = f
            dequeued.add(f)
            progress[f] = []
        elif ev.kind in (ENQUEUE, START, END):
            key = (f, ev.stage)
            expect = {ENQUEUE: None, START: ENQUEUE, END: START}[ev.kind]
            if phase.get(key) != expect:
                violations.append(f"frame {f} stage {ev.stage!r}: {ev.kind} out of order")
            phase[key] = ev.kind
            if ev.kind == ENQUEUE:
                done = progress.setdefault(f, [])
                if len(done) >= len(stage_order) or stage_order[len(done)] != ev.stage:
                    violations.append(
                        f"frame {f}: stage {ev.stage!r} out of pipeline order after {done}"
                    )
                done.append(ev.stage)
        elif ev.kind == COMPLETE:
            if f not in dequeued or f in completed:
                violations.append(f"frame {f} completed without being in flight")
            if progress.get(f) != stage_order or phase.get((f, stage_order[-1])) != END:
                violations.append(f"frame {f} completed before finishing all stages")
            completed.add(f)
            if worker_frame.get(ev.worker_id) == f:
                del worker_frame[ev.worker_id]

    in_flight = dequeued - completed
    queued = produced - dropped - dequeued
    for f in sorted(in_flight):
        if progress.get(f) == stage_order and phase.get((f, stage_order[-1])) == END:
            violations.append(f"frame conservation: frame {f} finished all stages but never completed")
    if len(in_flight) > cfg.threading.workers:
        violations.append(
            f"frame conservation: {len(in_flight)} frames in flight with {cfg.threading.workers} workers"
        )
    limit = cfg.threading.frame_queue_depth if cfg.threading.camera_interval_ms > 0 else 0
    if len(queued) > limit:
        violations.append(f"frame conservation: {len(queued)} frames left queued (limit {limit})")
    if len(produced) != len(completed) + len(dropped) + len(in_flight) + len(queued):
        violations.append("frame conservation: produced != completed + dropped + in flight")
    return violations


def conservation_counts(trace: Trace) -> dict[str, int]:
    """Produced/completed/dropped/in-flight counts over the whole trace."""
    produced = dropped = completed = dequeued = 0
    for ev in trace.events:
        if ev.kind == PRODUCE:
            produced += 1
        elif ev.kind == DROP:
            dropped += 1
        elif ev.kind == COMPLETE:
            completed += 1
        elif ev.kind == DEQUEUE:
            dequeued += 1
    return {
        "produced": produced,
        "completed": completed,
        "dropped": dropped,
        "in_flight": dequeued - completed,
        "queued": produced - dropped - dequeued,
    }


def trace_to_string(trace: Trace) -> str:
    buf = io.StringIO()
    trace.to_csv(buf)
    return buf.getvalue()


def iter_services(trace: Trace, resource: str) -> Iterable[tuple[int, str, float, float]]:
    """Yield (frame, stage, start, end) for completed services on ``resource``."""
    start: dict[tuple[int, str], float] = {}
    for ev in trace.events:
        if ev.resource != resource:
            continue
        if ev.kind == START:
            start[(ev.frame_id, ev.stage)] = ev.t_ms
        elif ev.kind == END:
            yield ev.frame_id, ev.stage, start.pop((ev.frame_id, ev.stage)), ev.t_ms
