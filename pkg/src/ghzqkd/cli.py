"""Command-line front end.

Subcommands and their CSV headers (fixed):

    analyze         scenario,protocol,receiver,km,mu,t,mu_opt,R,QBER_used,QBER_th,P_sift,I_Eve,S
    simulate        scenario,protocol,receiver,km,pulses,seed,R,QBER_emp,QBER_th,sift_fraction,S
      --events      slot,detector,basis,bit,origin,timestamp_ps,sifted
    sweep           km,protocol,t,mu_opt,R_model,QBER_th,S
    detector-curve  pump_W,efficiency,noise_Hz
    histogram       time_ps,counts_controlled[,counts_uncontrolled]

Exit codes: 0 success, 2 usage or validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import keyrate, simulator
from .config import ConfigError, Scenario, load_scenarios
from .photonics import transmission
from .protocol import Origin, Protocol
from .updetector import DEFAULT_DETECTOR, efficiency_curve

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

ANALYZE_HEADER = ["scenario", "protocol", "receiver", "km", "mu", "t", "mu_opt", "R",
                  "QBER_used", "QBER_th", "P_sift", "I_Eve", "S"]
SIMULATE_HEADER = ["scenario", "protocol", "receiver", "km", "pulses", "seed", "R",
                   "QBER_emp", "QBER_th", "sift_fraction", "S"]
EVENTS_HEADER = ["slot", "detector", "basis", "bit", "origin", "timestamp_ps", "sifted"]
SWEEP_HEADER = ["km", "protocol", "t", "mu_opt", "R_model", "QBER_th", "S"]
CURVE_HEADER = ["pump_W", "efficiency", "noise_Hz"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def render(header, rows, fmt: str) -> str:
    cells = [[_fmt(v) for v in row] for row in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(cells)
        return buf.getvalue()
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _scenarios(path) -> list[Scenario]:
    scenarios = load_scenarios(path)
    if not scenarios:
        raise ConfigError("no scenarios")
    return scenarios


def analyze_rows(scenarios) -> list[list]:
    rows = []
    for sc in scenarios:
        rep = keyrate.analyze(sc.rate, sc.measured_rate, sc.measured_qber)
        rows.append([sc.name, sc.rate.protocol.value, sc.rate.receiver.value, sc.sim.channel.length,
                     sc.rate.mu, sc.rate.t, rep.mu_opt, rep.raw_rate, rep.qber, rep.qber_theory,
                     rep.p_sift, rep.i_eve, rep.secure_rate])
    return rows


def cmd_analyze(args) -> int:
    rows = analyze_rows(_scenarios(args.config))
    emit(render(ANALYZE_HEADER, rows, args.format), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    rows = []
    event_rows = []
    for sc in _scenarios(args.config):
        sim = sc.sim
        overrides = {}
        if args.pulses is not None:
            overrides["n_pulses"] = args.pulses
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            sim = replace(sim, **overrides)
        result = simulator.run(sim, workers=args.workers)
        s = simulator.summary(result)
        rows.append([sc.name, s["protocol"], sim.receiver.value, s["km"], sim.n_pulses, sim.seed,
                     s["R"], s["QBER_emp"], s["QBER_th"], s["sift_fraction"], s["S"]])
        if args.events:
            ev = result.events
            origin_names = {int(o): o.name.lower() for o in Origin}
            for i in range(result.detected):
                event_rows.append([int(ev["slot"][i]), int(ev["detector"][i]), "ZX"[ev["basis"][i]],
                                   int(ev["bit"][i]), origin_names[int(ev["origin"][i])],
                                   f"{ev['timestamp'][i]:.3f}", bool(ev["sifted"][i])])
    emit(render(SIMULATE_HEADER, rows, args.format), args.out)
    if args.events:
        Path(args.events).write_text(render(EVENTS_HEADER, event_rows, "csv"))
    return EXIT_OK


def sweep_rows(base: Scenario, distances) -> list[list]:
    rows = []
    for km in distances:
        chan = replace(base.sim.channel, length=float(km))
        t = transmission(chan)
        for protocol in (Protocol.BB84, Protocol.SARG):
            mu = keyrate.optimal_mu(protocol, t)
            params = replace(base.rate, protocol=protocol, t=t, mu=mu)
            q = min(keyrate.qber_theory(params), 0.5)
            rows.append([float(km), protocol.value, t, mu, keyrate.modeled_raw_rate(params), q,
                         keyrate.modeled_secure_rate(params)])
    return rows


def cmd_sweep(args) -> int:
    if args.step <= 0 or args.km_to < args.km_from or args.km_from < 0:
        raise ConfigError("sweep needs 0 <= km-from <= km-to and step > 0")
    base = _scenarios(args.config)[0]
    n = int(round((args.km_to - args.km_from) / args.step))
    distances = np.round(args.km_from + args.step * np.arange(n + 1), 9)
    distances = distances[distances <= args.km_to + 1e-9]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", keyrate.ApproximationWarning)
        rows = sweep_rows(base, distances)
    if caught:
        print(f"note: weak-signal approximation strained at {len(caught)} points; "
              "QBER capped at 0.5, S clamped at 0", file=sys.stderr)
    emit(render(SWEEP_HEADER, rows, args.format), args.out)
    return EXIT_OK


def cmd_detector_curve(args) -> int:
    if args.points < 2 or args.pump_to <= args.pump_from or args.pump_from < 0:
        raise ConfigError("detector-curve needs 0 <= pump-from < pump-to and at least 2 points")
    det = _scenarios(args.config)[0].sim.detector if args.config else DEFAULT_DETECTOR
    pumps = np.linspace(args.pump_from, args.pump_to, args.points)
    eff, noise = efficiency_curve(det, pumps)
    rows = [[p, e, nz] for p, e, nz in zip(pumps, eff, noise)]
    emit(render(CURVE_HEADER, rows, args.format), args.out)
    return EXIT_OK


def histogram_columns(sim, bin_ps: float, which: str, workers: int = 1):
    pol = {"controlled": [True], "uncontrolled": [False], "both": [True, False]}[which]
    columns = {}
    for controlled in pol:
        res = simulator.run(replace(sim, polarization_controlled=controlled), workers=workers)
        h = simulator.build_histogram(res.events["timestamp"], bin_ps, None, sim.period)
        columns["counts_controlled" if controlled else "counts_uncontrolled"] = h
    return columns


def cmd_histogram(args) -> int:
    if args.bin_ps <= 0:
        raise ConfigError("--bin-ps must be positive")
    scenarios = _scenarios(args.config)
    if args.scenario:
        scenarios = [s for s in scenarios if s.name == args.scenario]
        if not scenarios:
            raise ConfigError(f"no scenario named '{args.scenario}'")
    sim = scenarios[0].sim
    overrides = {}
    if args.pulses is not None:
        overrides["n_pulses"] = args.pulses
    if args.seed is not None:
        overrides["seed"] = args.seed
    sim = replace(sim, **overrides)
    cols = histogram_columns(sim, args.bin_ps, args.polarization, args.workers)
    first = next(iter(cols.values()))
    header = ["time_ps", *cols]
    rows = [[c, *(int(h.counts[i]) for h in cols.values())] for i, c in enumerate(first.centers)]
    emit(render(header, rows, args.format), args.out)
    return EXIT_OK


def _positive_int(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if value != int(value) or value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return int(value)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghzqkd", description="GHz weak-pulse QKD link calculator and simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="scenario file, or the name of a bundled preset (e.g. table2)")
        p.add_argument("--out", help="write output here instead of stdout")
        p.add_argument("--format", choices=("csv", "text"), default="csv")

    p = sub.add_parser("analyze", help="analytic QBER, sifting, Eve information and secure rate")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte Carlo run of each scenario")
    common(p)
    p.add_argument("--pulses", type=_positive_int)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--events", help="also write the per-event stream to this CSV file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="secure rate versus distance at the optimal mean photon number")
    common(p, config_required=False)
    p.set_defaults(config="sweep")
    p.add_argument("--km-from", type=float, default=0.0)
    p.add_argument("--km-to", type=float, default=100.0)
    p.add_argument("--step", type=float, default=5.0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("detector-curve", help="efficiency and noise versus pump power")
    common(p, config_required=False)
    p.add_argument("--pump-from", type=float, default=0.0, help="W")
    p.add_argument("--pump-to", type=float, default=0.6, help="W")
    p.add_argument("--points", type=int, default=121)
    p.set_defaults(func=cmd_detector_curve)

    p = sub.add_parser("histogram", help="time-of-arrival histogram folded on the clock period")
    common(p)
    p.add_argument("--scenario", help="scenario name within the config (default: first)")
    p.add_argument("--bin-ps", type=float, default=simulator.DEFAULT_BIN_PS)
    p.add_argument("--polarization", choices=("controlled", "uncontrolled", "both"), default="both")
    p.add_argument("--pulses", type=_positive_int)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.set_defaults(func=cmd_histogram)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
