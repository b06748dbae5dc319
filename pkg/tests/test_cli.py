import io

import pytest

from dpusim.cli import (
    EXIT_INVALID,
    EXIT_PARSE,
    METRICS_HEADER,
    SWEEP_HEADER,
    main,
    read_metrics_csv,
    read_sweep_csv,
)
from dpusim.config import PARAMS_ENV, load_params, loads_scenario
from dpusim.engine import Trace, validate_trace
from dpusim.calibration import read_fit_report, synth_table
from dpusim.latency import apply_params
from dpusim.analytic import read_saturation_csv
from dpusim.config import shipped_params
from dpusim.scenarios import builtin_scenario

from test_calibration import TRUE


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_b512_2t_prints_throughput(capsys, tmp_path):
    csv_path = tmp_path / "m.csv"
    code, out, err = run(capsys, "simulate", "--scenario", "b512-2t", "--params", "shipped", "--csv", str(csv_path))
    assert code == 0 and err == ""
    line = next(l for l in out.splitlines() if l.startswith("throughput"))
    fps = float(line.split()[1])
    assert fps == pytest.approx(25.00, rel=0.05)
    assert csv_path.read_text().splitlines()[0] == ",".join(METRICS_HEADER)
    assert read_metrics_csv(open(csv_path))["throughput_fps"] == pytest.approx(fps, abs=0.005)


def test_simulate_trace_validates(capsys, tmp_path):
    path = tmp_path / "t.csv"
    code, _, err = run(capsys, "simulate", "--scenario", "b512-1t", "--params", "shipped", "--trace", str(path))
    assert code == 0 and err == ""
    cfg = apply_params(builtin_scenario("b512-1t"), shipped_params().params)
    assert validate_trace(Trace.from_csv(path), cfg) == []


def test_simulate_from_annotated_config(capsys):
    code, out, err = run(capsys, "simulate", "--config", "configs/example_scenario.toml", "--frames", "200")
    assert code == 0 and err == "" and "example-b1024-2t" in out


def test_params_from_environment(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv(PARAMS_ENV, "configs/example_params.toml")
    code, out, _ = run(capsys, "simulate", "--scenario", "b512-1t", "--frames", "20")
    assert code == 0 and "throughput" in out


def test_missing_params_file_is_a_parse_error(capsys, tmp_path):
    missing = tmp_path / "absent.toml"
    code, out, err = run(capsys, "simulate", "--scenario", "b512-1t", "--params", str(missing))
    assert code == EXIT_PARSE and str(missing) in err and out == ""


def test_bad_config_names_file_line_and_key(capsys, tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(open("configs/example_scenario.toml").read().replace("workers = 2", "workers = 2.5"))
    code, _, err = run(capsys, "simulate", "--config", str(path))
    assert code == EXIT_PARSE
    assert f"{path}:" in err and "threading.workers" in err


def test_invalid_scenario_exit_2(capsys, tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(open("configs/example_scenario.toml").read().replace("workers = 2", "workers = 0"))
    code, _, err = run(capsys, "simulate", "--config", str(path))
    assert code == EXIT_INVALID and "workers" in err


def test_unknown_builtin_and_missing_costs_exit_2(capsys):
    assert run(capsys, "simulate", "--scenario", "b999-9t")[0] == EXIT_INVALID
    code, _, err = run(capsys, "simulate", "--scenario", "b512-1t")
    assert code == EXIT_INVALID and "--params" in err


def test_dump_config_round_trips(capsys):
    code, out, _ = run(capsys, "simulate", "--scenario", "b2034-2t", "--params", "shipped", "--dump-config")
    assert code == 0
    expected = apply_params(builtin_scenario("b2034-2t"), shipped_params().params)
    assert loads_scenario(out) == expected


def test_sweep_table5_shape(capsys, tmp_path):
    out_path = tmp_path / "s.csv"
    code, _, err = run(capsys, "sweep", "--params", "shipped", "--size", "512,1024,2034,4096", "--freq", "400",
                       "--workers", "1,2", "--frames", "200", "--out", str(out_path))
    assert code == 0 and err == ""
    rows = read_sweep_csv(open(out_path))
    assert [(r["ops_per_cycle"], r["workers"]) for r in rows] == [
        (b, w) for b in ("512", "1024", "2034", "4096") for w in ("1", "2")
    ]
    assert all(r["power_w"] and r["fps_per_watt"] for r in rows)
    # formatting: FPS 2 decimals, % 2 decimals, W 1 decimal
    r = rows[0]
    assert len(r["throughput_fps"].split(".")[1]) == 2
    assert len(r["busy_dpu_pct"].split(".")[1]) == 2
    assert len(r["power_w"].split(".")[1]) == 1


def test_sweep_table4_shape_is_deterministic(capsys):
    argv = ("sweep", "--params", "shipped", "--size", "512", "--freq", "300,400,500,600", "--workers", "2",
            "--frames", "200")
    code, out, _ = run(capsys, *argv)
    assert code == 0
    rows = read_sweep_csv(io.StringIO(out))
    assert [r["freq_mhz"] for r in rows] == ["300", "400", "500", "600"]
    fps = [float(r["throughput_fps"]) for r in rows]
    assert fps == sorted(fps)
    assert run(capsys, *argv)[1] == out
    assert out.splitlines()[0] == ",".join(SWEEP_HEADER)


def test_sweep_empty_list_exit_2(capsys):
    code, _, err = run(capsys, "sweep", "--params", "shipped", "--size", "")
    assert code == EXIT_INVALID and "--size" in err


def test_analyze(capsys, tmp_path):
    out_path = tmp_path / "a.csv"
    code, out, err = run(capsys, "analyze", "--params", "shipped", "--size", "512,1024,2034,4096", "--workers", "2",
                         "--out", str(out_path))
    assert code == 0 and err == ""
    rows = read_saturation_csv(out_path)
    assert len(rows) == 4 and "binding" in out


def test_calibrate_malformed_row_names_it(capsys, tmp_path):
    path = tmp_path / "t.csv"
    good = synth_table(TRUE, ["b512-1t", "b512-2t"])
    good.to_csv(path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[1], "fast", 1)
    path.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "calibrate", "--tables", str(path), "--out", str(tmp_path / "p.toml"))
    assert code == EXIT_PARSE
    # header is row 1, so the second data line is row 3
    assert "row 3 (b512-2t)" in err and "throughput_fps" in err


def test_calibrate_small_synthetic(capsys, tmp_path):
    path = tmp_path / "t.csv"
    synth_table(TRUE, ["b512-1t-f300", "b4096-1t-f300", "b512-1t-f600", "b4096-1t-f600", "b512-2t"]).to_csv(path)
    out = tmp_path / "p.toml"
    code, text, err = run(capsys, "calibrate", "--tables", str(path), "--out", str(out), "--max-iters", "40")
    assert code == 0 and err == ""
    assert "objective" in text and "worst row" in text
    pf = load_params(out)
    assert pf.meta["max_iters"] == 40 and pf.power is None
    assert read_fit_report(out.with_suffix(".fit.csv"))


def test_report_without_params_exit_2(capsys, monkeypatch):
    monkeypatch.delenv(PARAMS_ENV, raising=False)
    code, out, err = run(capsys, "report", "--against-paper")
    assert code == EXIT_INVALID and "calibrate" in err and out == ""


def test_report_is_deterministic_and_ranks_b512_2t_first(capsys, tmp_path):
    a, b = tmp_path / "a.md", tmp_path / "b.md"
    assert run(capsys, "report", "--params", "shipped", "--out", str(a)) == (0, "", "")
    assert run(capsys, "report", "--params", "shipped", "--out", str(b)) == (0, "", "")
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    ranking = text[text.index("## Throughput per watt"):]
    first = next(l for l in ranking.splitlines() if l.startswith("| 1 "))
    assert "b512-2t" in first
    for needle in ("Table III", "Table IV", "Table V", "6.12", "9.26", "2.4"):
        assert needle in text
