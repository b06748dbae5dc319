"""Domain types for the host/accelerator pipeline and scenario validation.

All types are frozen dataclasses; a validated scenario can be shared freely
between concurrent runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

CPU = "cpu"
DPU = "dpu"
RESOURCES = (CPU, DPU)


class ScenarioError(ValueError):
    """Raised when a scenario violates one or more constraints.

    ``errors`` holds every violated constraint, not just the first.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class AcceleratorSpec:
    name: str = "DPU"
    ops_per_cycle: int = 512
    freq_mhz: float = 400.0


@dataclass(frozen=True)
class HostSpec:
    cores: int = 4
    # One global compute lock (e.g. an interpreter lock) across all workers.
    serialize_compute: bool = False

    @property
    def cpu_servers(self) -> int:
        return 1 if self.serialize_compute else self.cores


@dataclass(frozen=True)
class DpuTaskParams:
    """Accelerator cost of one inference task.

    ``alpha_ms`` scales with 1/(ops_per_cycle * freq), ``beta_ms`` with
    1/freq only, and ``gamma_ms`` is a fixed per-call overhead.  All three
    are expressed at the reference point B=512, f=400 MHz.
    """

    name: str
    alpha_ms: float = 0.0
    beta_ms: float = 0.0
    gamma_ms: float = 0.0

    @property
    def reference_ms(self) -> float:
        return self.alpha_ms + self.beta_ms + self.gamma_ms


@dataclass(frozen=True)
class StageSpec:
    name: str
    resource: str
    fixed_ms: float | None = None  # cpu stages
    task: str | None = None  # dpu stages

    @classmethod
    def cpu(cls, name: str, ms: float) -> "StageSpec":
        return cls(name, CPU, fixed_ms=float(ms))

    @classmethod
    def dpu(cls, name: str, task: str | None = None) -> "StageSpec":
        return cls(name, DPU, task=task or name)

    @property
    def label(self) -> str:
        """Metric key for this stage: the task name on the accelerator."""
        return self.task if self.resource == DPU and self.task else self.name


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple[StageSpec, ...]


@dataclass(frozen=True)
class ThreadingSpec:
    workers: int = 1
    camera_interval_ms: float = 0.0
    frame_queue_depth: int = 1


@dataclass(frozen=True)
class SimOptions:
    frames: int = 1000
    warmup_frames: int = 50
    seed: int = 0
    jitter_cv: float = 0.0
    # Deadlock guard; None picks a budget proportional to the run length.
    max_events: int | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    accelerator: AcceleratorSpec
    host: HostSpec
    tasks: tuple[DpuTaskParams, ...]
    pipeline: PipelineSpec
    threading: ThreadingSpec = ThreadingSpec()
    sim: SimOptions = SimOptions()
    metadata: Mapping[str, Any] = field(default_factory=dict)
    id: str = ""

    def task(self, name: str) -> DpuTaskParams:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def with_knobs(
        self,
        ops_per_cycle: int | None = None,
        freq_mhz: float | None = None,
        workers: int | None = None,
    ) -> "ScenarioConfig":
        """Copy with the accelerator size, clock or worker count replaced."""
        accel = self.accelerator
        if ops_per_cycle is not None:
            accel = replace(accel, ops_per_cycle=int(ops_per_cycle))
        if freq_mhz is not None:
            accel = replace(accel, freq_mhz=float(freq_mhz))
        threading = self.threading
        if workers is not None:
            threading = replace(threading, workers=int(workers))
        return replace(self, accelerator=accel, threading=threading)


@dataclass(frozen=True)
class ValidatedScenario:
    """A scenario that passed :func:`validate_scenario`."""

    config: ScenarioConfig

    def __getattr__(self, item):
        # Read-through to the wrapped config (accelerator, host, pipeline, ...).
        if item == "config":
            raise AttributeError(item)
        return getattr(self.config, item)

    @property
    def task_map(self) -> dict[str, DpuTaskParams]:
        return {t.name: t for t in self.config.tasks}


def scenario_errors(config: ScenarioConfig) -> list[str]:
    """Return every violated constraint of ``config`` (empty when valid)."""
    errors: list[str] = []
    acc = config.accelerator
    if not isinstance(acc.ops_per_cycle, int) or acc.ops_per_cycle < 1:
        errors.append(f"accelerator.ops_per_cycle must be an integer ≥ 1 (got {acc.ops_per_cycle})")
    if not acc.freq_mhz > 0:
        errors.append(f"accelerator.freq_mhz must be > 0 (got {acc.freq_mhz})")
    if config.host.cores < 1:
        errors.append(f"host.cores must be ≥ 1 (got {config.host.cores})")

    names = [t.name for t in config.tasks]
    for dup in sorted({n for n in names if names.count(n) > 1}):
        errors.append(f"task {dup!r} defined more than once")
    for t in config.tasks:
        for comp in ("alpha_ms", "beta_ms", "gamma_ms"):
            if getattr(t, comp) < 0:
                errors.append(f"task {t.name!r}: {comp} must be ≥ 0 (got {getattr(t, comp)})")

    if not config.pipeline.stages:
        errors.append("pipeline must have at least one stage")
    for s in config.pipeline.stages:
        if s.resource == CPU:
            if s.fixed_ms is None:
                errors.append(f"cpu stage {s.name!r} has no fixed_ms")
            elif s.fixed_ms < 0:
                errors.append(f"cpu stage {s.name!r}: fixed_ms must be ≥ 0 (got {s.fixed_ms})")
        elif s.resource == DPU:
            if not s.task:
                errors.append(f"dpu stage {s.name!r} has no task reference")
            elif s.task not in names:
                errors.append(f"dpu stage {s.name!r} references undefined task {s.task!r}")
        else:
            errors.append(f"stage {s.name!r}: resource must be one of {RESOURCES} (got {s.resource!r})")

    th = config.threading
    if th.workers < 1:
        errors.append(f"workers must be ≥ 1 (got {th.workers})")
    if th.frame_queue_depth < 1:
        errors.append(f"frame_queue_depth must be ≥ 1 (got {th.frame_queue_depth})")
    if th.camera_interval_ms < 0:
        errors.append(f"camera_interval_ms must be ≥ 0 (got {th.camera_interval_ms})")

    sim = config.sim
    if sim.frames < 1:
        errors.append(f"sim.frames must be ≥ 1 (got {sim.frames})")
    if sim.warmup_frames < 0:
        errors.append(f"sim.warmup_frames must be ≥ 0 (got {sim.warmup_frames})")
    if sim.seed < 0:
        errors.append(f"sim.seed must be unsigned (got {sim.seed})")
    if sim.jitter_cv < 0:
        errors.append(f"sim.jitter_cv must be ≥ 0 (got {sim.jitter_cv})")
    return errors


def validate_scenario(config: ScenarioConfig | ValidatedScenario) -> ValidatedScenario:
    """Validate ``config``; raise :class:`ScenarioError` listing all problems."""
    if isinstance(config, ValidatedScenario):
        return config
    errors = scenario_errors(config)
    if errors:
        raise ScenarioError(errors)
    return ValidatedScenario(config)
