import os

from hypothesis import HealthCheck, settings

from dpusim.model import (
    AcceleratorSpec,
    DpuTaskParams,
    HostSpec,
    PipelineSpec,
    ScenarioConfig,
    SimOptions,
    StageSpec,
    ThreadingSpec,
)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def toy(
    stages,
    workers=1,
    cores=1,
    serialize=False,
    interval=0.0,
    depth=1,
    frames=200,
    warmup=20,
    seed=0,
    jitter=0.0,
    ops=512,
    freq=400.0,
):
    """Scenario from a list of (resource, ms); dpu stages get a pure-alpha task."""
    specs, tasks = [], []
    for i, (res, ms) in enumerate(stages):
        if res == "cpu":
            specs.append(StageSpec.cpu(f"c{i}", ms))
        else:
            name = f"T{i}"
            tasks.append(DpuTaskParams(name, alpha_ms=ms))
            specs.append(StageSpec.dpu(name))
    return ScenarioConfig(
        accelerator=AcceleratorSpec("DPU", ops, freq),
        host=HostSpec(cores, serialize),
        tasks=tuple(tasks),
        pipeline=PipelineSpec(tuple(specs)),
        threading=ThreadingSpec(workers, interval, depth),
        sim=SimOptions(frames=frames, warmup_frames=warmup, seed=seed, jitter_cv=jitter),
    )


# -- acceptance verdicts --------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
