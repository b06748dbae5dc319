"""TOML config dialect for scenarios and parameter files.

A scenario file holds the tables ``accelerator``, ``host``, ``threading``,
``sim`` and ``metadata`` plus the arrays of tables ``tasks`` and
``stages``.  A params file holds ``camera_interval_ms`` and the tables
``cpu_stage_ms``, ``dpu_tasks.<name>``, and optionally ``power``,
``power_offsets`` and ``meta``.  Annotated examples live in
``configs/example_scenario.toml`` and ``configs/example_params.toml``.

Every loading error names the file, the line and the dotted key.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .latency import ParamSet
from .model import (
    CPU,
    DPU,
    AcceleratorSpec,
    DpuTaskParams,
    HostSpec,
    PipelineSpec,
    ScenarioConfig,
    SimOptions,
    StageSpec,
    ThreadingSpec,
)
from .power import PowerParams

PARAMS_ENV = "DPUSIM_PARAMS"


class ConfigError(ValueError):
    def __init__(self, source: str, line: int | None, key: str, message: str):
        self.source, self.line, self.key = source, line, key
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {key}: {message}" if key else f"{where}: {message}")


# -- locating keys in the source text -----------------------------------------

_ARRAY_HDR = re.compile(r"^\s*\[\[\s*([^\]]+?)\s*\]\]")
_TABLE_HDR = re.compile(r"^\s*\[\s*([^\]]+?)\s*\]")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-\"'. ]+?)\s*=")


def _split_key(k: str) -> list[str]:
    return [p.strip().strip("\"'") for p in k.split(".")]


def _line_index(text: str) -> dict[str, int]:
    """Map dotted paths (arrays as name[i]) to the line that defines them."""
    index: dict[str, int] = {}
    counts: dict[str, int] = {}
    prefix = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _ARRAY_HDR.match(line)
        if m:
            name = ".".join(_split_key(m.group(1)))
            i = counts.get(name, 0)
            counts[name] = i + 1
            prefix = f"{name}[{i}]"
            index.setdefault(prefix, lineno)
            continue
        m = _TABLE_HDR.match(line)
        if m:
            prefix = ".".join(_split_key(m.group(1)))
            index.setdefault(prefix, lineno)
            continue
        m = _KEY.match(line)
        if m:
            key = ".".join(_split_key(m.group(1)))
            index.setdefault(f"{prefix}.{key}" if prefix else key, lineno)
    return index


class _Reader:
    """Typed access to a parsed document with located error messages."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(source, int(m.group(1)) if m else None, "", f"syntax error: {exc}") from None
        self.index = _line_index(text)

    def fail(self, path: str, message: str):
        line = self.index.get(path)
        probe = path
        while line is None and probe:
            probe = probe.rpartition(".")[0]
            line = self.index.get(probe)
        raise ConfigError(self.source, line, path, message)

    def table(self, d: dict, path: str, key: str, required: bool = True) -> dict:
        full = f"{path}.{key}" if path else key
        if key not in d:
            if required:
                self.fail(path or full, f"missing table {key!r}")
            return {}
        v = d[key]
        if not isinstance(v, dict):
            self.fail(full, "expected a table")
        return v

    def value(self, d: dict, path: str, key: str, kind: type, default: Any = ...):
        full = f"{path}.{key}" if path else key
        if key not in d:
            if default is ...:
                self.fail(path or full, f"missing key {key!r}")
            return default
        v = d[key]
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.fail(full, f"expected a number, got {type(v).__name__}")
            return float(v)
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(full, f"expected an integer, got {type(v).__name__}")
            return v
        if not isinstance(v, kind):
            self.fail(full, f"expected {kind.__name__}, got {type(v).__name__}")
        return v

    def check_keys(self, d: dict, path: str, allowed: set[str]) -> None:
        for k in d:
            if k not in allowed:
                full = f"{path}.{k}" if path else k
                self.fail(full, f"unknown key (expected one of {', '.join(sorted(allowed))})")


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), None, "", f"cannot read file: {exc.strerror or exc}") from None


# -- scenarios ------------------------------------------------------------------


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    stages = []
    for s in cfg.pipeline.stages:
        d = {"name": s.name, "resource": s.resource}
        if s.fixed_ms is not None:
            d["fixed_ms"] = s.fixed_ms
        if s.task is not None:
            d["task"] = s.task
        stages.append(d)
    sim = {
        "frames": cfg.sim.frames,
        "warmup_frames": cfg.sim.warmup_frames,
        "seed": cfg.sim.seed,
        "jitter_cv": cfg.sim.jitter_cv,
    }
    if cfg.sim.max_events is not None:
        sim["max_events"] = cfg.sim.max_events
    out = {
        "id": cfg.id,
        "accelerator": {
            "name": cfg.accelerator.name,
            "ops_per_cycle": cfg.accelerator.ops_per_cycle,
            "freq_mhz": cfg.accelerator.freq_mhz,
        },
        "host": {"cores": cfg.host.cores, "serialize_compute": cfg.host.serialize_compute},
        "threading": {
            "workers": cfg.threading.workers,
            "camera_interval_ms": cfg.threading.camera_interval_ms,
            "frame_queue_depth": cfg.threading.frame_queue_depth,
        },
        "sim": sim,
        "tasks": [
            {"name": t.name, "alpha_ms": t.alpha_ms, "beta_ms": t.beta_ms, "gamma_ms": t.gamma_ms}
            for t in cfg.tasks
        ],
        "stages": stages,
    }
    if cfg.metadata:
        out["metadata"] = dict(cfg.metadata)
    return out


def dumps_scenario(cfg: ScenarioConfig) -> str:
    d = scenario_to_dict(cfg)
    arrays = {k: d.pop(k) for k in ("tasks", "stages")}
    meta = d.pop("metadata", None)
    parts = [tomli_w.dumps(d)]
    # block form keeps one key per line, so errors point at the exact line
    for key, items in arrays.items():
        for item in items:
            parts.append(f"[[{key}]]\n" + tomli_w.dumps(item))
    if meta is not None:
        parts.append(tomli_w.dumps({"metadata": meta}))
    return "\n".join(p.rstrip("\n") + "\n" for p in parts)


def loads_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    r = _Reader(text, source)
    doc = r.doc
    r.check_keys(doc, "", {"id", "accelerator", "host", "threading", "sim", "tasks", "stages", "metadata"})

    acc = r.table(doc, "", "accelerator")
    r.check_keys(acc, "accelerator", {"name", "ops_per_cycle", "freq_mhz"})
    accel = AcceleratorSpec(
        r.value(acc, "accelerator", "name", str, "DPU"),
        r.value(acc, "accelerator", "ops_per_cycle", int),
        r.value(acc, "accelerator", "freq_mhz", float),
    )

    host_t = r.table(doc, "", "host", required=False)
    r.check_keys(host_t, "host", {"cores", "serialize_compute"})
    host = HostSpec(
        r.value(host_t, "host", "cores", int, 4),
        r.value(host_t, "host", "serialize_compute", bool, False),
    )

    th = r.table(doc, "", "threading", required=False)
    r.check_keys(th, "threading", {"workers", "camera_interval_ms", "frame_queue_depth"})
    threading = ThreadingSpec(
        r.value(th, "threading", "workers", int, 1),
        r.value(th, "threading", "camera_interval_ms", float, 0.0),
        r.value(th, "threading", "frame_queue_depth", int, 1),
    )

    sim_t = r.table(doc, "", "sim", required=False)
    r.check_keys(sim_t, "sim", {"frames", "warmup_frames", "seed", "jitter_cv", "max_events"})
    sim = SimOptions(
        r.value(sim_t, "sim", "frames", int, 1000),
        r.value(sim_t, "sim", "warmup_frames", int, 50),
        r.value(sim_t, "sim", "seed", int, 0),
        r.value(sim_t, "sim", "jitter_cv", float, 0.0),
        r.value(sim_t, "sim", "max_events", int, None),
    )

    tasks = []
    for i, t in enumerate(_array(r, doc, "tasks", required=False)):
        p = f"tasks[{i}]"
        r.check_keys(t, p, {"name", "alpha_ms", "beta_ms", "gamma_ms"})
        tasks.append(
            DpuTaskParams(
                r.value(t, p, "name", str),
                r.value(t, p, "alpha_ms", float, 0.0),
                r.value(t, p, "beta_ms", float, 0.0),
                r.value(t, p, "gamma_ms", float, 0.0),
            )
        )

    stages = []
    for i, s in enumerate(_array(r, doc, "stages", required=True)):
        p = f"stages[{i}]"
        r.check_keys(s, p, {"name", "resource", "fixed_ms", "task"})
        name = r.value(s, p, "name", str)
        res = r.value(s, p, "resource", str)
        if res not in (CPU, DPU):
            r.fail(f"{p}.resource", f"must be {CPU!r} or {DPU!r}, got {res!r}")
        stages.append(
            StageSpec(
                name,
                res,
                fixed_ms=r.value(s, p, "fixed_ms", float, None),
                task=r.value(s, p, "task", str, None),
            )
        )

    meta = r.table(doc, "", "metadata", required=False)
    return ScenarioConfig(
        accelerator=accel,
        host=host,
        tasks=tuple(tasks),
        pipeline=PipelineSpec(tuple(stages)),
        threading=threading,
        sim=sim,
        metadata=dict(meta),
        id=r.value(doc, "", "id", str, ""),
    )


def _array(r: _Reader, doc: dict, key: str, required: bool) -> list[dict]:
    if key not in doc:
        if required:
            r.fail(key, f"missing array {key!r}")
        return []
    v = doc[key]
    if not isinstance(v, list) or not all(isinstance(x, dict) for x in v):
        r.fail(key, "expected an array of tables")
    return v


def load_scenario(path: str | Path) -> ScenarioConfig:
    return loads_scenario(_read_text(path), str(path))


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(cfg))


# -- parameter files --------------------------------------------------------------


@dataclass(frozen=True)
class ParamFile:
    """A ParamSet plus the optional power model and fit provenance."""

    params: ParamSet
    power: PowerParams | None = None
    power_offsets: dict[str, float] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)


def params_to_dict(pf: ParamFile | ParamSet) -> dict:
    if isinstance(pf, ParamSet):
        pf = ParamFile(pf)
    ps = pf.params
    out: dict[str, Any] = {
        "camera_interval_ms": ps.camera_interval_ms,
        "cpu_stage_ms": dict(ps.cpu_stage_ms),
        "dpu_tasks": {
            name: {"alpha_ms": t.alpha_ms, "beta_ms": t.beta_ms, "gamma_ms": t.gamma_ms}
            for name, t in ps.dpu_tasks.items()
        },
    }
    if pf.power is not None:
        p = pf.power
        out["power"] = {
            "c0_w": p.c0_w,
            "c_freq_w": p.c_freq_w,
            "c_size_w": p.c_size_w,
            "c_busy_w": p.c_busy_w,
            "idle_board_w": p.idle_board_w,
        }
    if pf.power_offsets:
        out["power_offsets"] = dict(pf.power_offsets)
    if pf.meta:
        out["meta"] = dict(pf.meta)
    return out


def dumps_params(pf: ParamFile | ParamSet) -> str:
    return tomli_w.dumps(params_to_dict(pf))


def loads_params(text: str, source: str = "<string>") -> ParamFile:
    r = _Reader(text, source)
    doc = r.doc
    r.check_keys(doc, "", {"camera_interval_ms", "cpu_stage_ms", "dpu_tasks", "power", "power_offsets", "meta"})
    cpu_t = r.table(doc, "", "cpu_stage_ms")
    cpu = {k: r.value(cpu_t, "cpu_stage_ms", k, float) for k in cpu_t}
    tasks_t = r.table(doc, "", "dpu_tasks")
    tasks = {}
    for name in tasks_t:
        p = f"dpu_tasks.{name}"
        t = r.table(tasks_t, "dpu_tasks", name)
        r.check_keys(t, p, {"alpha_ms", "beta_ms", "gamma_ms"})
        tasks[name] = DpuTaskParams(
            name,
            r.value(t, p, "alpha_ms", float, 0.0),
            r.value(t, p, "beta_ms", float, 0.0),
            r.value(t, p, "gamma_ms", float, 0.0),
        )
    params = ParamSet(tasks, cpu, r.value(doc, "", "camera_interval_ms", float, 0.0))
    errs = params.errors()
    if errs:
        r.fail("", "; ".join(errs))

    power = None
    if "power" in doc:
        pt = r.table(doc, "", "power")
        r.check_keys(pt, "power", {"c0_w", "c_freq_w", "c_size_w", "c_busy_w", "idle_board_w"})
        power = PowerParams(
            r.value(pt, "power", "c0_w", float, 0.0),
            r.value(pt, "power", "c_freq_w", float, 0.0),
            r.value(pt, "power", "c_size_w", float, 0.0),
            r.value(pt, "power", "c_busy_w", float, 0.0),
            r.value(pt, "power", "idle_board_w", float, PowerParams().idle_board_w),
        )
        if power.errors():
            r.fail("power", "; ".join(power.errors()))
    off_t = r.table(doc, "", "power_offsets", required=False)
    offsets = {k: r.value(off_t, "power_offsets", k, float) for k in off_t}
    meta = r.table(doc, "", "meta", required=False)
    return ParamFile(params, power, offsets, dict(meta))


def load_params(path: str | Path) -> ParamFile:
    return loads_params(_read_text(path), str(path))


def save_params(pf: ParamFile | ParamSet, path: str | Path) -> None:
    Path(path).write_text(dumps_params(pf))


def default_params_path() -> Path | None:
    """Params file named by the environment, if any."""
    v = os.environ.get(PARAMS_ENV)
    return Path(v) if v else None


def shipped_params() -> ParamFile:
    """Parameters fitted to the bundled measurement tables."""
    from importlib import resources

    res = resources.files(__package__) / "data" / "fitted.toml"
    return loads_params(res.read_text(), "fitted.toml")
