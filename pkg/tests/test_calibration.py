import io
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpusim.analytic import throughput_upper_bound
from dpusim.calibration import (
    CalibrationError,
    FitOptions,
    bounds,
    fit_params,
    objective,
    pack,
    read_fit_report,
    run_table,
    synth_table,
    unpack,
    warm_start,
    write_fit_report,
)
from dpusim.engine import simulate
from dpusim.latency import ParamSet, apply_params
from dpusim.model import DpuTaskParams, SimOptions
from dpusim.scenarios import MeasurementTable, builtin_scenario, scenario_id

TRUE = ParamSet(
    {"FD": DpuTaskParams("FD", 15.0, 3.0, 2.0), "FER": DpuTaskParams("FER", 8.0, 2.0, 1.5)},
    {"pre": 16.0, "mid": 12.0, "post": 9.0},
    30.0,
)
FACTORIAL_1T = [scenario_id(b, f, 1) for b in (512, 4096) for f in (300, 600)]
SMALL = FACTORIAL_1T + [scenario_id(512, 400, 2), scenario_id(4096, 400, 2)]


@pytest.fixture(scope="module")
def small_table():
    return synth_table(TRUE, SMALL)


def test_objective_is_zero_at_the_generating_params(small_table):
    assert objective(TRUE, small_table) == 0.0


def test_objective_grows_when_alpha_is_perturbed(small_table):
    tasks = dict(TRUE.dpu_tasks)
    tasks["FD"] = replace(tasks["FD"], alpha_ms=tasks["FD"].alpha_ms * 1.1)
    assert objective(replace(TRUE, dpu_tasks=tasks), small_table) > 0.0


def test_empty_table_rejected():
    with pytest.raises(CalibrationError, match="empty"):
        fit_params(MeasurementTable(()))


def test_engine_failure_names_the_row(small_table):
    with pytest.raises(CalibrationError, match=FACTORIAL_1T[0]):
        objective(ParamSet({}, {}), small_table)


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1), min_size=10, max_size=10))
def test_pack_unpack_round_trip(u):
    lo, hi = np.array(bounds()).T
    x = lo + np.array(u) * (hi - lo)
    ps = unpack(x)
    assert ps.errors() == []
    back = unpack(pack(ps))
    for name, t in ps.dpu_tasks.items():
        b = back.dpu_tasks[name]
        assert (b.alpha_ms, b.beta_ms, b.gamma_ms) == pytest.approx((t.alpha_ms, t.beta_ms, t.gamma_ms), abs=1e-9)
    for name, v in ps.cpu_stage_ms.items():
        assert back.cpu_stage_ms[name] == pytest.approx(v, abs=1e-9)
    assert back.camera_interval_ms == ps.camera_interval_ms


def test_warm_start_recovers_tasks_on_a_factorial_design():
    table = synth_table(TRUE, FACTORIAL_1T)
    warm = warm_start(table)
    for name, t in TRUE.dpu_tasks.items():
        w = warm.dpu_tasks[name]
        assert (w.alpha_ms, w.beta_ms, w.gamma_ms) == pytest.approx((t.alpha_ms, t.beta_ms, t.gamma_ms), rel=1e-6)
    assert sum(warm.cpu_stage_ms.values()) == pytest.approx(sum(TRUE.cpu_stage_ms.values()), rel=1e-6)


def test_warm_start_needs_a_single_worker_row():
    with pytest.raises(CalibrationError):
        warm_start(synth_table(TRUE, [scenario_id(512, 400, 2)]))


@pytest.fixture(scope="module")
def small_fit(small_table):
    return fit_params(small_table, FitOptions(max_iters=150, seed=3))


def test_fit_is_deterministic(small_table, small_fit):
    again = fit_params(small_table, FitOptions(max_iters=150, seed=3))
    assert again.params == small_fit.params
    assert again.objective == small_fit.objective
    assert again.iterations == small_fit.iterations <= 150


def test_fit_never_worse_than_warm_start(small_fit):
    assert small_fit.objective <= small_fit.warm_objective


def test_reported_objective_matches_recomputation(small_table, small_fit):
    assert small_fit.recomputed_objective() == pytest.approx(small_fit.objective, rel=1e-12)
    assert objective(small_fit.params, small_table) == pytest.approx(small_fit.objective, rel=1e-12)


def test_synthetic_table_csv_round_trip(small_table):
    buf = io.StringIO()
    small_table.to_csv(buf)
    back = MeasurementTable.from_csv(io.StringIO(buf.getvalue()))
    assert objective(TRUE, back) == pytest.approx(0.0, abs=1e-12)


def test_fit_report_round_trip(small_table, small_fit):
    buf = io.StringIO()
    write_fit_report(small_fit, small_table, buf)
    rows = read_fit_report(io.StringIO(buf.getvalue()))
    assert len(rows) == sum(len(e) for e in small_fit.per_row_error.values())
    sid, metric, obs, sim, err = rows[0]
    assert sid.startswith("synthetic:") and metric == "throughput_fps"
    assert err == pytest.approx((sim - obs) / obs)


def test_zero_dpu_cost_matches_the_analytic_bound():
    zero = ParamSet({t: DpuTaskParams(t) for t in ("FD", "FER")}, {"pre": 16.0, "mid": 12.0, "post": 9.0})
    for sid in ("b512-1t", "b512-2t", "b4096-2t"):
        cfg = apply_params(builtin_scenario(sid), zero)
        rep, _ = simulate(replace(cfg, sim=SimOptions(frames=300, warmup_frames=20)))
        assert rep.throughput_fps == pytest.approx(throughput_upper_bound(cfg).fps, rel=1e-3)


def test_single_worker_rows_use_short_runs(small_table):
    reps = run_table(TRUE, small_table, frames=500)
    assert reps[FACTORIAL_1T[0]].completed < 500
    assert reps[scenario_id(512, 400, 2)].completed == 500
