"""Simulator and analytic model of a multi-threaded host pipeline sharing one
DNN accelerator between face detection and expression recognition."""

from .analytic import predicted_busy, saturation_report, single_thread_period, throughput_upper_bound
from .calibration import FitOptions, FitResult, fit_params, objective, synth_table, warm_start
from .config import ParamFile, load_params, load_scenario, save_params, save_scenario, shipped_params
from .engine import MetricsReport, SimulationError, Trace, TraceEvent, metrics_from_trace, simulate, validate_trace
from .latency import ParamSet, dpu_service_time, frame_demands
from .model import (
    AcceleratorSpec,
    DpuTaskParams,
    HostSpec,
    PipelineSpec,
    ScenarioConfig,
    ScenarioError,
    SimOptions,
    StageSpec,
    ThreadingSpec,
    ValidatedScenario,
    validate_scenario,
)
from .power import PowerParams, estimate_power, fit_power, fps_per_watt
from .scenarios import MeasurementRow, MeasurementTable, builtin_measurements, builtin_scenario

__all__ = [
    "AcceleratorSpec",
    "DpuTaskParams",
    "FitOptions",
    "FitResult",
    "HostSpec",
    "MeasurementRow",
    "MeasurementTable",
    "MetricsReport",
    "ParamFile",
    "ParamSet",
    "PipelineSpec",
    "PowerParams",
    "ScenarioConfig",
    "ScenarioError",
    "SimOptions",
    "SimulationError",
    "StageSpec",
    "ThreadingSpec",
    "Trace",
    "TraceEvent",
    "ValidatedScenario",
    "builtin_measurements",
    "builtin_scenario",
    "dpu_service_time",
    "estimate_power",
    "fit_params",
    "fit_power",
    "fps_per_watt",
    "frame_demands",
    "load_params",
    "load_scenario",
    "metrics_from_trace",
    "objective",
    "predicted_busy",
    "save_params",
    "save_scenario",
    "saturation_report",
    "shipped_params",
    "simulate",
    "single_thread_period",
    "synth_table",
    "throughput_upper_bound",
    "validate_scenario",
    "validate_trace",
    "warm_start",
]
