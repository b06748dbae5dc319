"""Service-time model: (task, accelerator size, clock) -> milliseconds."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from .model import (
    CPU,
    DPU,
    AcceleratorSpec,
    DpuTaskParams,
    PipelineSpec,
    ScenarioConfig,
    ScenarioError,
    StageSpec,
    ValidatedScenario,
)

REF_OPS_PER_CYCLE = 512
REF_FREQ_MHZ = 400.0


@dataclass(frozen=True)
class ParamSet:
    """Calibratable costs: accelerator tasks, cpu stages and camera interval."""

    dpu_tasks: Mapping[str, DpuTaskParams] = field(default_factory=dict)
    cpu_stage_ms: Mapping[str, float] = field(default_factory=dict)
    camera_interval_ms: float = 0.0

    def errors(self) -> list[str]:
        errs = []
        for name, t in self.dpu_tasks.items():
            if name != t.name:
                errs.append(f"dpu task key {name!r} does not match task name {t.name!r}")
            for comp in ("alpha_ms", "beta_ms", "gamma_ms"):
                if getattr(t, comp) < 0:
                    errs.append(f"task {name!r}: {comp} must be ≥ 0")
        for name, ms in self.cpu_stage_ms.items():
            if ms < 0:
                errs.append(f"cpu stage {name!r}: duration must be ≥ 0")
        if not 0 <= self.camera_interval_ms <= 100:
            errs.append(f"camera_interval_ms must lie in [0, 100] (got {self.camera_interval_ms})")
        return errs

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig | ValidatedScenario) -> "ParamSet":
        """Collect the costs a scenario already carries."""
        cfg = scenario.config if isinstance(scenario, ValidatedScenario) else scenario
        return cls(
            dpu_tasks={t.name: t for t in cfg.tasks},
            cpu_stage_ms={s.name: s.fixed_ms for s in cfg.pipeline.stages if s.resource == CPU},
            camera_interval_ms=cfg.threading.camera_interval_ms,
        )


def dpu_service_time(task: DpuTaskParams, accel: AcceleratorSpec) -> float:
    # both ratios are exactly 1.0 at the reference point
    clock = REF_FREQ_MHZ / accel.freq_mhz
    compute = task.alpha_ms * (REF_OPS_PER_CYCLE / accel.ops_per_cycle) * clock
    return compute + task.beta_ms * clock + task.gamma_ms


@dataclass(frozen=True)
class FrameDemands:
    """Per-frame work, one entry per stage in pipeline order."""

    stages: tuple[tuple[str, str, float], ...]  # (resource, label, ms)

    @property
    def totals(self) -> dict[str, float]:
        out = {CPU: 0.0, DPU: 0.0}
        for resource, _, ms in self.stages:
            out[resource] += ms
        return out

    @property
    def by_label(self) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for resource, label, ms in self.stages:
            out[(resource, label)] = out.get((resource, label), 0.0) + ms
        return out

    @property
    def total_ms(self) -> float:
        return sum(ms for _, _, ms in self.stages)

    def pairs(self) -> list[tuple[str, float]]:
        return [(r, ms) for r, _, ms in self.stages]


def frame_demands(pipeline: PipelineSpec, params: ParamSet, accel: AcceleratorSpec) -> FrameDemands:
    """Resolve every stage of ``pipeline`` to a duration under ``params``."""
    missing = []
    out = []
    for s in pipeline.stages:
        if s.resource == CPU:
            if s.name not in params.cpu_stage_ms:
                missing.append(f"no cpu duration for stage {s.name!r}")
                continue
            out.append((CPU, s.label, float(params.cpu_stage_ms[s.name])))
        else:
            task = params.dpu_tasks.get(s.task)
            if task is None:
                missing.append(f"no parameters for task {s.task!r} (stage {s.name!r})")
                continue
            out.append((DPU, s.label, dpu_service_time(task, accel)))
    if missing:
        raise ScenarioError(missing)
    return FrameDemands(tuple(out))


def apply_params(scenario: ScenarioConfig | ValidatedScenario, params: ParamSet) -> ScenarioConfig:
    """Return a copy of ``scenario`` whose costs come from ``params``.

    Tasks not mentioned in ``params`` keep their scenario values; a cpu stage
    without an entry raises.
    """
    cfg = scenario.config if isinstance(scenario, ValidatedScenario) else scenario
    errs = params.errors()
    tasks = {t.name: t for t in cfg.tasks}
    tasks.update(params.dpu_tasks)
    stages = []
    for s in cfg.pipeline.stages:
        if s.resource == CPU:
            if s.name not in params.cpu_stage_ms:
                errs.append(f"no cpu duration for stage {s.name!r}")
                stages.append(s)
                continue
            stages.append(StageSpec.cpu(s.name, params.cpu_stage_ms[s.name]))
        else:
            if s.task not in tasks:
                errs.append(f"no parameters for task {s.task!r} (stage {s.name!r})")
            stages.append(s)
    if errs:
        raise ScenarioError(errs)
    return replace(
        cfg,
        tasks=tuple(tasks.values()),
        pipeline=PipelineSpec(tuple(stages)),
        threading=replace(cfg.threading, camera_interval_ms=float(params.camera_interval_ms)),
    )


def scenario_demands(scenario: ScenarioConfig | ValidatedScenario) -> FrameDemands:
    cfg = scenario.config if isinstance(scenario, ValidatedScenario) else scenario
    return frame_demands(cfg.pipeline, ParamSet.from_scenario(cfg), cfg.accelerator)
