import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpusim.latency import ParamSet, apply_params, dpu_service_time, frame_demands
from dpusim.model import AcceleratorSpec, DpuTaskParams, PipelineSpec, ScenarioError, StageSpec
from dpusim.scenarios import builtin_scenario

nonneg = st.floats(0, 100, allow_nan=False)
sizes = st.sampled_from([512, 1024, 2034, 2304, 4096])
freqs = st.floats(50, 1000)


def test_compute_term_halves_when_size_doubles():
    t = DpuTaskParams("X", alpha_ms=10)
    assert dpu_service_time(t, AcceleratorSpec("D", 1024, 400)) == pytest.approx(5.0)


def test_size_insensitive_terms():
    t = DpuTaskParams("X", alpha_ms=0, beta_ms=8, gamma_ms=2)
    assert dpu_service_time(t, AcceleratorSpec("D", 4096, 800)) == pytest.approx(6.0)


@given(nonneg, nonneg, nonneg)
def test_reference_identity(a, b, g):
    t = DpuTaskParams("X", a, b, g)
    assert dpu_service_time(t, AcceleratorSpec("D", 512, 400.0)) == a + b + g


@given(nonneg, nonneg, nonneg, sizes, sizes, freqs, freqs)
def test_monotone_in_size_and_clock(a, b, g, b1, b2, f1, f2):
    t = DpuTaskParams("X", a, b, g)
    lo_b, hi_b = sorted((b1, b2))
    lo_f, hi_f = sorted((f1, f2))
    slow = dpu_service_time(t, AcceleratorSpec("D", lo_b, lo_f))
    assert dpu_service_time(t, AcceleratorSpec("D", hi_b, lo_f)) <= slow + 1e-12
    assert dpu_service_time(t, AcceleratorSpec("D", lo_b, hi_f)) <= slow + 1e-12


@given(nonneg, nonneg, nonneg, sizes, freqs)
def test_homogeneous(a, b, g, size, f):
    acc = AcceleratorSpec("D", size, f)
    one = dpu_service_time(DpuTaskParams("X", a, b, g), acc)
    two = dpu_service_time(DpuTaskParams("X", 2 * a, 2 * b, 2 * g), acc)
    assert two == pytest.approx(2 * one, rel=1e-12, abs=1e-12)


def test_frame_demands_toy():
    pipe = PipelineSpec((StageSpec.cpu("c", 30.0), StageSpec.dpu("X")))
    params = ParamSet({"X": DpuTaskParams("X", 10)}, {"c": 30.0})
    d = frame_demands(pipe, params, AcceleratorSpec())
    assert d.pairs() == [("cpu", 30.0), ("dpu", 10.0)]
    assert d.totals == {"cpu": 30.0, "dpu": 10.0}
    assert d.totals["cpu"] + d.totals["dpu"] == d.total_ms


def test_missing_stage_parameter_is_named():
    pipe = PipelineSpec((StageSpec.cpu("resize", 1.0), StageSpec.dpu("FD")))
    with pytest.raises(ScenarioError) as exc:
        frame_demands(pipe, ParamSet({}, {}), AcceleratorSpec())
    assert any("resize" in e for e in exc.value.errors)
    assert any("FD" in e for e in exc.value.errors)


def test_apply_params_sets_costs_and_camera():
    params = ParamSet(
        {"FD": DpuTaskParams("FD", 5, 1, 1), "FER": DpuTaskParams("FER", 2, 0, 0)},
        {"pre": 10, "mid": 5, "post": 3},
        12.5,
    )
    cfg = apply_params(builtin_scenario("b512-1t"), params)
    assert cfg.threading.camera_interval_ms == 12.5
    assert cfg.task("FD").alpha_ms == 5
    assert [s.fixed_ms for s in cfg.pipeline.stages if s.resource == "cpu"] == [10, 5, 3]


def test_param_set_range_errors():
    bad = ParamSet({"FD": DpuTaskParams("FD", -1)}, {"pre": -2}, 150)
    errs = bad.errors()
    assert len(errs) == 3
