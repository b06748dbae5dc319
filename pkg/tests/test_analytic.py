import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpusim.analytic import (
    CAMERA_BOUND,
    CPU_BOUND,
    DPU_BOUND,
    WORKER_BOUND,
    grid,
    predicted_busy,
    read_saturation_csv,
    saturation_report,
    single_thread_period,
    throughput_upper_bound,
    write_saturation_csv,
)
from dpusim.engine import simulate

from conftest import toy


def test_single_thread_period_toy():
    assert single_thread_period(toy([("cpu", 30), ("dpu", 10)])) == 40.0


def test_slow_camera_sets_the_period():
    assert single_thread_period(toy([("cpu", 30)], interval=50.0)) == 50.0


def test_worker_bound_example():
    b = throughput_upper_bound(toy([("cpu", 30), ("dpu", 10)], workers=2, cores=2))
    assert b.fps == pytest.approx(50.0)
    assert b.binding == (WORKER_BOUND,)
    assert b.components[CPU_BOUND] == pytest.approx(2000 / 30)
    assert b.components[DPU_BOUND] == pytest.approx(100.0)
    assert math.isinf(b.components[CAMERA_BOUND])


def test_serialized_cpu_bound_example():
    b = throughput_upper_bound(toy([("cpu", 30), ("dpu", 10)], workers=8, cores=1, serialize=True))
    assert b.fps == pytest.approx(1000 / 30)
    assert b.binding == (CPU_BOUND,)


def test_dpu_only_bound():
    b = throughput_upper_bound(toy([("dpu", 10)], workers=4))
    assert b.fps == pytest.approx(100.0)
    assert DPU_BOUND in b.binding


def test_ties_report_every_binding_constraint():
    # one worker, one stage: the dpu bound and the worker bound coincide
    b = throughput_upper_bound(toy([("dpu", 10)]))
    assert set(b.binding) == {DPU_BOUND, WORKER_BOUND}


def test_predicted_busy_examples():
    assert predicted_busy(toy([("dpu", 10)]), None, 25.0)[("dpu", "T0")] == pytest.approx(0.25)
    busy = predicted_busy(toy([("cpu", 30), ("dpu", 10)], workers=2, cores=2), None, 50.0)
    assert busy[("cpu", "c0")] == pytest.approx(0.75)


def test_predicted_busy_rejects_impossible_throughput():
    with pytest.raises(ValueError):
        predicted_busy(toy([("dpu", 10)]), None, 100.1)
    with pytest.raises(ValueError):
        predicted_busy(toy([("dpu", 10)]), None, 0.0)


def test_predicted_busy_at_the_bound_is_at_most_one():
    cfg = toy([("cpu", 3), ("dpu", 7), ("cpu", 2)], workers=3, cores=2)
    b = throughput_upper_bound(cfg)
    assert all(v <= 1 + 1e-9 for v in predicted_busy(cfg, None, b.fps).values())


durations = st.floats(0.5, 40, allow_nan=False)
stage_lists = st.lists(st.tuples(st.sampled_from(["cpu", "dpu"]), durations), min_size=1, max_size=5)


@settings(max_examples=40)
@given(stage_lists, st.integers(1, 4), st.integers(1, 4), st.booleans())
def test_predicted_busy_reproduces_des_busy(stages, workers, cores, serialize):
    cfg = toy(stages, workers=workers, cores=cores, serialize=serialize, frames=300, warmup=30)
    rep, _ = simulate(cfg)
    bound = throughput_upper_bound(cfg)
    if DPU_BOUND in bound.binding or CPU_BOUND in bound.binding:
        return  # saturated: window edges dominate the 1% tolerance
    pred = predicted_busy(cfg, None, rep.throughput_fps)
    for key, v in pred.items():
        assert rep.busy_fraction[key] == pytest.approx(v, rel=0.01, abs=1e-9)


def test_flat_size_sweep_and_knee():
    # cpu 20 ms serialized, dpu 30 ms at B512: the dpu binds at B512 only
    cfg = toy([("cpu", 20), ("dpu", 30)], workers=2, cores=1, serialize=True)
    rows = saturation_report(cfg, None, grid([512, 1024, 2034, 4096], [400], [2]))
    assert [r.binding for r in rows][0] == (DPU_BOUND,)
    assert rows[1].knee and not any(r.knee for r in rows[2:])
    assert max(r.bound_fps for r in rows[1:]) - min(r.bound_fps for r in rows[1:]) < 1.0


def test_dpu_only_pipeline_always_dpu_bound():
    rows = saturation_report(toy([("dpu", 10)], workers=2), None, grid([512, 4096], [300, 600], [1, 2, 4]))
    assert all(DPU_BOUND in r.binding for r in rows)
    assert not any(r.knee for r in rows)


def test_empty_sweep_rejected():
    with pytest.raises(ValueError):
        saturation_report(toy([("dpu", 10)]), None, [])


def test_saturation_csv_round_trip():
    rows = saturation_report(toy([("cpu", 20), ("dpu", 30)], workers=2), None, grid([512, 1024], [300, 400], [1, 2]))
    buf = io.StringIO()
    write_saturation_csv(rows, buf)
    assert buf.getvalue().splitlines()[0] == "ops_per_cycle,freq_mhz,workers,bound_fps,binding"
    back = read_saturation_csv(io.StringIO(buf.getvalue()))
    buf2 = io.StringIO()
    write_saturation_csv(back, buf2)
    assert buf2.getvalue() == buf.getvalue()
