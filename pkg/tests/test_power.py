import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpusim.model import AcceleratorSpec
from dpusim.power import (
    PowerFitError,
    PowerParams,
    estimate_power,
    fit_power,
    fps_per_watt,
    read_power_report,
    write_power_report,
)
from dpusim.scenarios import MeasurementRow, MeasurementTable, builtin_measurements, scenario_id


def test_estimate_power_examples():
    assert estimate_power(AcceleratorSpec("D", 512, 400), 0.0, PowerParams(1, 1, 0, 0)) == pytest.approx(2.0)
    assert estimate_power(AcceleratorSpec("D", 4096, 400), 0.0, PowerParams(0, 0, 0.5, 0)) == pytest.approx(1.5)


def test_estimate_power_rejects_busy_outside_unit_interval():
    with pytest.raises(ValueError):
        estimate_power(AcceleratorSpec(), 1.2, PowerParams())


def test_fps_per_watt_examples():
    assert fps_per_watt(25.00, 2.7) == pytest.approx(9.26, abs=0.005)
    assert fps_per_watt(14.69, 2.4) == pytest.approx(6.12, abs=0.005)
    assert fps_per_watt(0.0, 3.0) == 0.0
    with pytest.raises(ValueError):
        fps_per_watt(10.0, 0.0)
    with pytest.raises(ValueError):
        fps_per_watt(10.0, -1.0)


@given(st.floats(0, 100), st.floats(0.1, 10), st.floats(0.1, 10))
def test_fps_per_watt_scale_consistent(fps, w, k):
    assert fps_per_watt(k * fps, k * w) == pytest.approx(fps_per_watt(fps, w), rel=1e-12, abs=1e-12)


def test_table4_clock_fit():
    fit = fit_power(builtin_measurements().select(source="table4"), ("c0", "c_freq"))
    # hand least squares: slope 0.0017 W/MHz, intercept 1.31 W
    assert fit.params.c_freq_w / 400 == pytest.approx(0.0017, abs=1e-9)
    assert fit.params.c0_w == pytest.approx(1.31, abs=1e-9)
    f300 = estimate_power(AcceleratorSpec("D", 512, 300), 0.0, fit.params)
    assert f300 == pytest.approx(1.82, abs=0.005)
    assert fit.max_abs_residual <= 0.05


def _synthetic_power_table(pp, busy):
    rows = []
    for b in (512, 1024, 2034, 4096):
        for f in (300, 400, 600):
            sid = scenario_id(b, f, 2)
            x = np.array([1.0, f / 400, math.log2(b / 512), busy[sid]])
            rows.append(MeasurementRow(sid, {"power_w": float(x @ pp.coefficients)}, "synthetic"))
    return MeasurementTable(tuple(rows))


def test_exact_round_trip():
    rng = np.random.default_rng(3)
    pp = PowerParams(0.7, 1.1, 0.45, 1.3)
    busy = {scenario_id(b, f, 2): float(rng.uniform(0.1, 0.9)) for b in (512, 1024, 2034, 4096) for f in (300, 400, 600)}
    fit = fit_power(_synthetic_power_table(pp, busy), ("c0", "c_freq", "c_size", "c_busy"), busy)
    assert np.allclose(fit.params.coefficients, pp.coefficients, atol=1e-6)


@settings(max_examples=25)
@given(st.lists(st.floats(0.0, 1.0), min_size=12, max_size=12), st.lists(st.floats(1.0, 4.0), min_size=12, max_size=12))
def test_residuals_orthogonal_to_features(busy_vals, watts):
    ids = [scenario_id(b, f, 2) for b in (512, 1024, 2034, 4096) for f in (300, 400, 600)]
    busy = dict(zip(ids, busy_vals))
    table = MeasurementTable(tuple(MeasurementRow(i, {"power_w": w}, "s") for i, w in zip(ids, watts)))
    try:
        fit = fit_power(table, ("c0", "c_freq", "c_size", "c_busy"), busy)
    except PowerFitError:
        return  # constant busy column
    res = np.array([r[3] for r in fit.rows])
    for j in range(fit.design.shape[1]):
        col = fit.design[:, j]
        scale = np.abs(res).sum() * np.abs(col).max() + 1e-300
        assert abs(res @ col) <= 1e-9 * max(scale, 1.0)


def test_rank_deficiency_names_collinear_features():
    # all rows at 400 MHz: the clock feature duplicates the intercept
    t = builtin_measurements().select(source="table5")
    with pytest.raises(PowerFitError) as exc:
        fit_power(t, ("c0", "c_freq"))
    assert "c0" in str(exc.value) and "c_freq" in str(exc.value)


def test_too_few_rows():
    t = builtin_measurements().select(source="table3")
    with pytest.raises(PowerFitError):
        fit_power(t, ("c0", "c_freq"))


def test_busy_required_for_busy_feature():
    with pytest.raises(PowerFitError, match="busy"):
        fit_power(builtin_measurements().select(source="table5"), ("c0", "c_busy"))


def test_table_offset_absorbs_disagreement():
    t = builtin_measurements()
    rows = MeasurementTable(tuple(r for r in t if r.source in ("table3", "table4")))
    fit = fit_power(rows, ("c0", "c_freq"), offset_sources=("table4",))
    # the two b512-2t rows differ by 0.7 W; the offset carries most of it
    assert fit.offsets["table4"] < -0.5


def test_power_report_round_trip():
    fit = fit_power(builtin_measurements().select(source="table4"), ("c0", "c_freq"))
    buf = io.StringIO()
    write_power_report(fit, buf)
    assert buf.getvalue().splitlines()[0] == "row_id,observed_w,predicted_w,residual_w"
    assert read_power_report(io.StringIO(buf.getvalue())) == fit.rows
