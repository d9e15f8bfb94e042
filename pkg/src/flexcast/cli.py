"""Command-line entry point: ``flexcast <subcommand> [options]``.

Stages exchange artifacts through one output directory::

    synth          config.yaml, fleet.json, weather.csv
    simulate       trace_random.npz, trace_none.npz
    gen-scenarios  prints the signal count (optionally saves the set)
    build-dataset  train.npz / test.npz (+ schema sidecars)
    train          model_<variant>.json
    optimize       plan_<date>.json
    emulate        kpi_<mode>.json, timeseries_<mode>.csv
    report         KPI table and emulated-vs-simulated gaps
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd
import yaml

from .dataset import Dataset
from .emulator import KpiReport, RunMode
from .fleet import Fleet
from .forecaster.model import TreeEnsembleModel
from .physics.weather import Weather
from .pipeline import (PipelineConfig, build_split, load_trace, make_fleet, make_weather, relative_gaps, run_loop,
                       save_trace, setup_loop, simulate_policies, train_model)
from .signals import SignalConstraints, count, enumerate_signals

log = logging.getLogger("flexcast")


class CliError(Exception):
    pass


def _need(path: Path) -> Path:
    if not path.exists():
        raise CliError(f"missing file: {path} (run the earlier stage first)")
    return path


def _config(args) -> PipelineConfig:
    out = Path(args.out)
    if args.config:
        cfg = PipelineConfig.from_yaml(_need(Path(args.config)))
    elif (out / "config.yaml").exists():
        cfg = PipelineConfig.from_yaml(out / "config.yaml")
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _load_inputs(out: Path):
    fleet = Fleet.from_json(_need(out / "fleet.json"))
    weather = Weather.from_csv(_need(out / "weather.csv"))
    return fleet, weather


def _load_model(out: Path, variant: str):
    return TreeEnsembleModel.load(_need(out / f"model_{variant}.json"))


# --------------------------------------------------------------------------- subcommands


def cmd_synth(args, cfg: PipelineConfig, out: Path) -> int:
    fleet = make_fleet(cfg)
    weather = Weather.from_csv(_need(Path(args.weather))) if args.weather else make_weather(cfg)
    if weather.n_days < cfg.n_weather_days:
        raise CliError(f"weather covers {weather.n_days} days, the configuration needs {cfg.n_weather_days}")
    cfg.save(out / "config.yaml")
    fleet.to_json(out / "fleet.json")
    weather.to_csv(out / "weather.csv")
    print(f"fleet: {fleet.n_hp} HP + {fleet.n_eh} EH buildings, weather: {weather.n_days} days")
    return 0


def cmd_simulate(args, cfg, out) -> int:
    fleet, weather = _load_inputs(out)
    ctrl, unctrl = simulate_policies(cfg, fleet, weather)
    save_trace(ctrl, out / "trace_random.npz")
    save_trace(unctrl, out / "trace_none.npz")
    print(f"simulated {ctrl.n_steps // 96} days: random-policy energy {ctrl.P.sum() * 0.25:.0f} kWh, "
          f"uncontrolled {unctrl.P.sum() * 0.25:.0f} kWh")
    return 0


def cmd_gen_scenarios(args, cfg, out) -> int:
    if args.constraints:
        c = SignalConstraints(**(yaml.safe_load(_need(Path(args.constraints)).read_text()) or {}))
    else:
        c = cfg.policy_signals
    if args.save:
        sig = enumerate_signals(c)
        sig.save(args.save)
        print(len(sig))
    else:
        print(count(c))
    return 0


def cmd_build_dataset(args, cfg, out) -> int:
    fleet, weather = _load_inputs(out)
    traces = [load_trace(_need(out / f"trace_{p}.npz"), weather, cfg.warmup_days) for p in ("random", "none")]
    train, test = build_split(cfg, fleet, traces, args.scheme)
    train.save(out / "train")
    test.save(out / "test")
    print(f"{len(train)} training rows, {len(test)} test rows ({args.scheme or cfg.scheme} sampling)")
    return 0


def cmd_train(args, cfg, out) -> int:
    train = Dataset.load(_need(Path(args.dataset).with_suffix(".npz")))
    variant = args.variant or cfg.variant
    model = train_model(cfg, train, variant)
    model.save(out / f"model_{variant}.json")
    print(f"trained {variant} model on {len(train)} rows")
    return 0


def cmd_optimize(args, cfg, out) -> int:
    fleet, weather = _load_inputs(out)
    variant = args.variant or cfg.variant
    setup = setup_loop(cfg, fleet, weather, _load_model(out, variant))
    date = pd.Timestamp(args.date)
    day = int((date - weather.index[0].normalize()) / pd.Timedelta(days=1))
    if day < setup.inputs.start_day or day >= weather.n_days - 1:
        first = weather.index[setup.inputs.start_day * 96].date()
        raise CliError(f"date outside the planning horizon (first plannable day {first})")
    report, trace = run_loop(cfg, setup, RunMode.FORECAST, days=[day], return_trace=True)
    plan = trace.plans[0]
    doc = {"date": str(date.date()), "variant": variant, **(plan.to_dict() if plan else {}),
           "no_control_cost": trace.no_control_cost[0]}
    path = out / f"plan_{date.date()}.json"
    path.write_text(json.dumps(doc, indent=2))
    print(json.dumps({k: doc[k] for k in ("date", "total_cost", "no_control_cost") if k in doc}))
    return 0


def cmd_emulate(args, cfg, out) -> int:
    fleet, weather = _load_inputs(out)
    variant = args.variant or cfg.variant
    setup = setup_loop(cfg, fleet, weather, _load_model(out, variant))
    n_days = args.days or cfg.loop_days
    days = range(setup.inputs.start_day, setup.inputs.start_day + n_days)
    if days[-1] >= weather.n_days - 1:
        raise CliError("not enough weather for the requested number of days")
    report, trace = run_loop(cfg, setup, args.mode, days=days, control=not args.no_control, return_trace=True)
    tag = args.mode + ("_nocontrol" if args.no_control else "")
    report.save(out / f"kpi_{tag}.json")
    pd.DataFrame({"timestamp": weather.index[trace.steps], "total_kw": trace.total, "rest_kw": trace.rest,
                  "flex_kw": trace.flex, "predicted_kw": trace.predicted}).to_csv(
        out / f"timeseries_{tag}.csv", index=False, float_format="%.6f")
    print(_kpi_table({tag: report}))
    return 0


def _kpi_table(reports: dict) -> str:
    cols = ("energy_cost", "peak_cost", "total_cost", "co2_tons", "flex_energy_cost", "flex_peak_cost",
            "comfort_ok_fraction")
    rows = {tag: {c: getattr(r, c) for c in cols} for tag, r in reports.items()}
    return pd.DataFrame(rows).T.to_string(float_format=lambda v: f"{v:.4g}")


def cmd_report(args, cfg, out) -> int:
    files = sorted(out.glob("kpi_*.json"))
    if not files:
        raise CliError(f"no KPI reports in {out}")
    reports = {f.stem[4:]: KpiReport.load(f) for f in files}
    print(_kpi_table(reports))
    doc = {tag: r.to_dict() for tag, r in reports.items()}
    if "emulated" in reports and "simulated" in reports:
        gaps = relative_gaps(reports["emulated"], reports["simulated"])
        doc["gaps_emulated_vs_simulated"] = gaps
        print("\nemulated vs simulated: " + ", ".join(f"{k} {v:+.4f}" for k, v in gaps.items()))
    (out / "report.json").write_text(json.dumps(doc, indent=2))
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", default="run", help="artifact directory (default: ./run)")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--threads", type=int, help="numba worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flexcast", description="Forecast-based day-ahead control of heating fleets.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    s = sub.add_parser("synth", parents=[common], help="synthesise the fleet and weather")
    s.add_argument("--weather", help="weather CSV (timestamp, T_ext, GHI) instead of synthetic weather")
    s.set_defaults(func=cmd_synth)
    s = sub.add_parser("simulate", parents=[common], help="simulate the random-policy and uncontrolled runs")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("gen-scenarios", parents=[common], help="count (or save) the admissible force-off signals")
    s.add_argument("--constraints", help="YAML file with signal constraint fields")
    s.add_argument("--save", help="write the signal set to this path")
    s.set_defaults(func=cmd_gen_scenarios)
    s = sub.add_parser("build-dataset", parents=[common], help="build train/test feature rows")
    s.add_argument("--scheme", choices=("grid", "random_linear"))
    s.set_defaults(func=cmd_build_dataset)
    s = sub.add_parser("train", parents=[common], help="fit the multi-step metamodel")
    s.add_argument("--dataset", required=True, help="training rows (.npz)")
    s.add_argument("--variant", choices=("plain", "energy-aware"))
    s.set_defaults(func=cmd_train)
    s = sub.add_parser("optimize", parents=[common], help="plan one day and write its DayPlan JSON")
    s.add_argument("--date", required=True)
    s.add_argument("--variant", choices=("plain", "energy-aware"))
    s.set_defaults(func=cmd_optimize)
    s = sub.add_parser("emulate", parents=[common], help="run the closed loop in one mode")
    s.add_argument("--mode", required=True, choices=[m.value for m in RunMode])
    s.add_argument("--days", type=int)
    s.add_argument("--variant", choices=("plain", "energy-aware"))
    s.add_argument("--no-control", action="store_true", help="always apply the zero signal (baseline)")
    s.set_defaults(func=cmd_emulate)
    s = sub.add_parser("report", parents=[common], help="tabulate stored KPI reports")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits on unknown flags and --help
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads:
        import numba

        n = min(args.threads, numba.config.NUMBA_NUM_THREADS)
        if n < numba.config.NUMBA_NUM_THREADS:  # avoids starting the thread pool needlessly
            numba.set_num_threads(n)
    out = Path(args.out)
    try:
        cfg = _config(args)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg, out)
    except (CliError, ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
