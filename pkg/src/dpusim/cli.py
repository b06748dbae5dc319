"""Command-line interface: simulate, sweep, calibrate, analyze, report.

Exit codes: 0 success, 1 unreadable or unparseable input, 2 invalid
scenario or arguments, 3 simulation failure, 4 calibration did not
improve on its warm start.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import analytic, calibration
from .config import (
    ConfigError,
    ParamFile,
    default_params_path,
    dumps_scenario,
    load_params,
    load_scenario,
    save_params,
    shipped_params,
)
from .engine import MetricsReport, SimulationError, simulate
from .latency import apply_params, scenario_demands
from .model import CPU, DPU, ScenarioConfig, ScenarioError, validate_scenario
from .power import PowerFitError, fit_power, with_power
from .report import comparison_report
from .scenarios import (
    BUILTIN_IDS,
    MeasurementError,
    MeasurementTable,
    builtin_measurements,
    builtin_scenario,
)

EXIT_PARSE, EXIT_INVALID, EXIT_SIM, EXIT_NOT_CONVERGED = 1, 2, 3, 4

SWEEP_HEADER = (
    "ops_per_cycle",
    "freq_mhz",
    "workers",
    "throughput_fps",
    "busy_dpu_pct",
    "occupancy_dpu_pct",
    "power_w",
    "fps_per_watt",
    "binding_bound",
)
METRICS_HEADER = ("metric", "value")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# -- shared argument handling ---------------------------------------------------


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scenario", help=f"builtin scenario id ({', '.join(BUILTIN_IDS)})")
    g.add_argument("--config", type=Path, help="scenario file (TOML)")
    p.add_argument("--params", help="params file, or 'shipped' for the bundled fit")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", type=int, help="measured completions")
    p.add_argument("--warmup", type=int, help="warmup completions")
    p.add_argument("--seed", type=int, help="jitter seed")
    p.add_argument("--jitter", type=float, help="service-time coefficient of variation")


def _load_scenario(args, default: str | None = None) -> ScenarioConfig:
    if args.config is not None:
        return load_scenario(args.config)
    sid = args.scenario or default
    if sid is None:
        raise CliError(EXIT_INVALID, "give --scenario ID or --config PATH")
    try:
        return builtin_scenario(sid)
    except KeyError as exc:
        raise CliError(EXIT_INVALID, exc.args[0]) from None


def _load_params(args, required: bool = False) -> ParamFile | None:
    src = args.params
    if src is None:
        env = default_params_path()
        src = str(env) if env else None
    if src is None:
        if required:
            raise CliError(EXIT_INVALID, "no parameters: run `dpusim calibrate --tables builtin --out fitted.toml` "
                                         "first and pass --params fitted.toml")
        return None
    if src == "shipped":
        return shipped_params()
    return load_params(src)


def _with_run_options(cfg: ScenarioConfig, args) -> ScenarioConfig:
    sim = cfg.sim
    updates = {
        "frames": args.frames,
        "warmup_frames": args.warmup,
        "seed": args.seed,
        "jitter_cv": args.jitter,
    }
    sim = replace(sim, **{k: v for k, v in updates.items() if v is not None})
    return replace(cfg, sim=sim)


def _resolve(cfg: ScenarioConfig, pf: ParamFile | None) -> ScenarioConfig:
    if pf is not None:
        cfg = apply_params(cfg, pf.params)
    cfg = validate_scenario(cfg).config
    if scenario_demands(cfg).total_ms <= 0:
        raise CliError(EXIT_INVALID, f"scenario {cfg.id or '(unnamed)'} has no stage costs; pass --params")
    return cfg


def _parse_list(text: str, kind, flag: str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise CliError(EXIT_INVALID, f"{flag}: empty list")
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise CliError(EXIT_INVALID, f"{flag}: not a list of numbers: {text!r}") from None


def _fmt_fps(v: float) -> str:
    return f"{v:.2f}"


def _fmt_w(v: float) -> str:
    return f"{v:.1f}"


def _fmt_pct(frac: float) -> str:
    return f"{100 * frac:.2f}"


# -- simulate ---------------------------------------------------------------------


def metrics_rows(rep: MetricsReport) -> list[tuple[str, str]]:
    """Flat (metric, value) rows at the documented output precision."""
    rows = [
        ("throughput_fps", _fmt_fps(rep.throughput_fps)),
        ("window_ms", f"{rep.window_ms:.3f}"),
        ("completed", str(rep.completed)),
        ("dropped", str(rep.dropped)),
        ("out_of_order", str(rep.out_of_order)),
        ("mean_latency_ms", f"{rep.mean_latency_ms:.3f}"),
        ("p95_latency_ms", f"{rep.p95_latency_ms:.3f}"),
        ("mean_in_system", f"{rep.mean_in_system:.3f}"),
    ]
    for (res, label), v in rep.busy_fraction.items():
        rows.append((f"busy_pct.{res}.{label}", _fmt_pct(v)))
    for (res, label), v in rep.occupancy_fraction.items():
        rows.append((f"occupancy_pct.{res}.{label}", _fmt_pct(v)))
    rows.append(("busy_dpu_pct", _fmt_pct(rep.busy_total(DPU))))
    rows.append(("occupancy_dpu_pct", _fmt_pct(rep.occupancy_total(DPU))))
    if rep.power_w is not None:
        rows.append(("power_w", _fmt_w(rep.power_w)))
    if rep.fps_per_watt is not None:
        rows.append(("fps_per_watt", f"{rep.fps_per_watt:.2f}"))
    return rows


def write_metrics_csv(rows: list[tuple[str, str]], dest) -> None:
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    w.writerows(rows)


def read_metrics_csv(src) -> dict[str, float]:
    reader = csv.reader(src)
    if tuple(next(reader)) != METRICS_HEADER:
        raise ValueError("unexpected metrics header")
    return {k: float(v) for k, v in reader}


def cmd_simulate(args) -> int:
    cfg = _load_scenario(args)
    pf = _load_params(args)
    cfg = _with_run_options(cfg, args)
    if args.dump_config:
        if pf is not None:
            cfg = apply_params(cfg, pf.params)
        sys.stdout.write(dumps_scenario(cfg))
        return 0
    cfg = _resolve(cfg, pf)
    rep, trace = simulate(cfg)
    if pf is not None and pf.power is not None:
        rep = with_power(rep, cfg.accelerator, pf.power)
    bound = analytic.throughput_upper_bound(cfg)

    name = cfg.id or (str(args.config) if args.config else "")
    print(f"scenario        {name}")
    print(f"accelerator     B{cfg.accelerator.ops_per_cycle} @ {cfg.accelerator.freq_mhz:g} MHz, "
          f"{cfg.threading.workers} worker(s)")
    print(f"throughput      {_fmt_fps(rep.throughput_fps)} FPS "
          f"({rep.completed} frames in {rep.window_ms:.1f} ms, {rep.dropped} dropped)")
    print(f"upper bound     {_fmt_fps(bound.fps)} FPS ({'+'.join(bound.binding)})")
    print(f"latency         mean {rep.mean_latency_ms:.2f} ms, p95 {rep.p95_latency_ms:.2f} ms")
    for res in (DPU, CPU):
        parts = ", ".join(
            f"{label} {_fmt_pct(rep.busy(res, label))}/{_fmt_pct(rep.occupancy(res, label))}"
            for (r, label) in rep.busy_fraction
            if r == res
        )
        print(f"{res} busy/occ %   {_fmt_pct(rep.busy_total(res))}/{_fmt_pct(rep.occupancy_total(res))}  ({parts})")
    if rep.power_w is not None:
        board = rep.power_w + pf.power.idle_board_w
        print(f"power           {_fmt_w(rep.power_w)} W dynamic, {_fmt_w(board)} W board")
        if rep.fps_per_watt is not None:
            print(f"efficiency      {rep.fps_per_watt:.2f} FPS/W")
    if rep.out_of_order:
        print(f"out of order    {rep.out_of_order} completions")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_metrics_csv(metrics_rows(rep), fh)
    if args.trace:
        trace.to_csv(args.trace)
    return 0


# -- sweep ------------------------------------------------------------------------


def sweep_rows(base: ScenarioConfig, pf: ParamFile | None, points) -> list[list[str]]:
    rows = []
    for b, f, w in points:
        cfg = _resolve(base.with_knobs(b, f, w), pf)
        rep, _ = simulate(cfg)
        power = fpw = ""
        if pf is not None and pf.power is not None:
            rep = with_power(rep, cfg.accelerator, pf.power)
            power = _fmt_w(rep.power_w)
            fpw = f"{rep.fps_per_watt:.2f}" if rep.fps_per_watt is not None else ""
        bound = analytic.throughput_upper_bound(cfg)
        rows.append([
            str(b), f"{f:g}", str(w),
            _fmt_fps(rep.throughput_fps),
            _fmt_pct(rep.busy_total(DPU)),
            _fmt_pct(rep.occupancy_total(DPU)),
            power, fpw,
            "+".join(bound.binding),
        ])
    return rows


def read_sweep_csv(src) -> list[dict[str, str]]:
    reader = csv.DictReader(src)
    if tuple(reader.fieldnames or ()) != SWEEP_HEADER:
        raise ValueError("unexpected sweep header")
    return list(reader)


def cmd_sweep(args) -> int:
    base = _with_run_options(_load_scenario(args, default="b512-1t"), args)
    pf = _load_params(args)
    acc = base.accelerator
    sizes = _parse_list(args.size, int, "--size") if args.size is not None else [acc.ops_per_cycle]
    freqs = _parse_list(args.freq, float, "--freq") if args.freq is not None else [acc.freq_mhz]
    workers = _parse_list(args.workers, int, "--workers") if args.workers is not None else [base.threading.workers]
    rows = sweep_rows(base, pf, analytic.grid(sizes, freqs, workers))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


# -- calibrate --------------------------------------------------------------------


def _load_tables(spec: str) -> MeasurementTable:
    if spec == "builtin":
        return builtin_measurements()
    out = MeasurementTable(())
    for part in spec.split(","):
        path = Path(part)
        try:
            out = out + MeasurementTable.from_csv(path)
        except OSError as exc:
            raise CliError(EXIT_PARSE, f"{path}: cannot read file: {exc.strerror or exc}") from None
        except MeasurementError as exc:
            raise CliError(EXIT_PARSE, f"{path}: {exc}") from None
    return out


def fit_power_for(tables: MeasurementTable, result: calibration.FitResult, offsets=()):
    """Power fit on every row with a power column, busy from the fitted DES."""
    rows = MeasurementTable(tuple(r for r in tables if r.get("power_w") is not None))
    if not len(rows):
        return None
    busy = {sid: min(rep.busy_total(DPU), 1.0) for sid, rep in result.simulated.items()}
    knobs = [calibration._knobs(r) for r in rows]
    features = ["c0"]
    if len({k[1] for k in knobs}) > 1:
        features.append("c_freq")
    if len({k[0] for k in knobs}) > 1:
        features.append("c_size")
    if len({round(busy[r.scenario_id], 9) for r in rows}) > 1:
        features.append("c_busy")
    offsets = [s for s in offsets if any(r.source == s for r in rows)]
    return fit_power(rows, features, busy, offsets)


def cmd_calibrate(args) -> int:
    tables = _load_tables(args.tables)
    opts = calibration.FitOptions(seed=args.seed, max_iters=args.max_iters, frames=args.frames)
    result = calibration.fit_params(tables, opts)
    offsets = args.power_offset if args.power_offset is not None else (["table4"] if args.tables == "builtin" else [])
    power_fit = None
    try:
        power_fit = fit_power_for(tables, result, offsets)
    except PowerFitError as exc:
        print(f"power model not fitted: {exc}")
    meta = {
        "tables": args.tables,
        "seed": args.seed,
        "max_iters": args.max_iters,
        "frames": args.frames,
        "iterations": result.iterations,
        "objective": result.objective,
        "converged": result.converged,
    }
    pf = ParamFile(
        result.params,
        power_fit.params if power_fit else None,
        power_fit.offsets if power_fit else {},
        meta,
    )
    save_params(pf, args.out)
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".fit.csv")
    calibration.write_fit_report(result, tables, report_path)

    worst_key, worst_m, worst_e = max(
        ((k, m, e) for k, errs in result.per_row_error.items() for m, e in errs.items()),
        key=lambda t: abs(t[2]),
    )
    unit = "abs" if worst_m in calibration.FRACTION_METRICS else "rel"
    print(f"objective       {result.objective:.6g} (warm start {result.warm_objective:.6g})")
    print(f"evaluations     {result.iterations}")
    print(f"worst row       {worst_key} {worst_m} error {100 * worst_e:+.2f}% ({unit})")
    if power_fit is not None:
        print(f"power residual  max {power_fit.max_abs_residual:.3f} W over {len(power_fit.rows)} rows")
    print(f"params          {args.out}")
    print(f"fit report      {report_path}")
    if not result.converged:
        print("calibration did not improve on the warm start", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return 0


# -- analyze ----------------------------------------------------------------------


def cmd_analyze(args) -> int:
    base = _load_scenario(args, default="b512-1t")
    pf = _load_params(args)
    _resolve(base, pf)
    acc = base.accelerator
    sizes = _parse_list(args.size, int, "--size") if args.size is not None else [acc.ops_per_cycle]
    freqs = _parse_list(args.freq, float, "--freq") if args.freq is not None else [acc.freq_mhz]
    workers = _parse_list(args.workers, int, "--workers") if args.workers is not None else [base.threading.workers]
    params = pf.params if pf else None
    rows = analytic.saturation_report(base, params, analytic.grid(sizes, freqs, workers))
    print(f"{'B':>6} {'MHz':>6} {'workers':>7} {'bound FPS':>10}  binding")
    for r in rows:
        cfg = base.with_knobs(r.ops_per_cycle, r.freq_mhz, r.workers)
        period = analytic.single_thread_period(cfg, params)
        knee = "  <- knee" if r.knee else ""
        print(f"{r.ops_per_cycle:>6} {r.freq_mhz:>6g} {r.workers:>7} {_fmt_fps(r.bound_fps):>10}  "
              f"{'+'.join(r.binding)} (1-worker period {period:.2f} ms){knee}")
    if args.out:
        analytic.write_saturation_csv(rows, args.out)
    return 0


# -- report -----------------------------------------------------------------------


def cmd_report(args) -> int:
    pf = _load_params(args, required=True)
    text = comparison_report(pf)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpusim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    _add_scenario_args(p)
    _add_run_args(p)
    p.add_argument("--csv", help="write metrics as CSV")
    p.add_argument("--trace", help="write the event trace as CSV")
    p.add_argument("--dump-config", action="store_true", help="print the resolved scenario file and exit")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="simulate a grid of sizes, clocks and worker counts")
    _add_scenario_args(p)
    _add_run_args(p)
    p.add_argument("--size", help="comma-separated ops per cycle")
    p.add_argument("--freq", help="comma-separated clocks in MHz")
    p.add_argument("--workers", help="comma-separated worker counts")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="fit parameters to measurement tables")
    p.add_argument("--tables", default="builtin", help="'builtin' or comma-separated CSV paths")
    p.add_argument("--out", required=True, help="params file to write")
    p.add_argument("--report", help="fit report CSV (default: OUT with .fit.csv suffix)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=calibration.FitOptions.max_iters)
    p.add_argument("--frames", type=int, default=calibration.FitOptions.frames,
                   help="measured frames per multi-worker run")
    p.add_argument("--power-offset", action="append", metavar="SOURCE",
                   help="give rows from this source table their own power offset (repeatable)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", help="analytic bounds and saturation knee")
    _add_scenario_args(p)
    p.add_argument("--size")
    p.add_argument("--freq")
    p.add_argument("--workers")
    p.add_argument("--out", help="saturation report CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="markdown comparison against the measurement tables")
    p.add_argument("--against-paper", action="store_true", default=True,
                   help="compare with the bundled tables (the only mode)")
    p.add_argument("--params", help="params file, or 'shipped'")
    p.add_argument("--out", help="markdown path (default: standard output)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except (ConfigError, MeasurementError) as exc:
        code, msg = EXIT_PARSE, str(exc)
    except ScenarioError as exc:
        code, msg = EXIT_INVALID, "invalid scenario: " + "; ".join(exc.errors)
    except (SimulationError, calibration.CalibrationError) as exc:
        code, msg = EXIT_SIM, f"simulation failed: {exc}"
    print(f"dpusim: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
