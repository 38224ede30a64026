"""Command-line entry point: ``voltsense {simulate,montecarlo,estimate,plotdata}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .estimator import MeasurementWindow, estimate
from .lindistflow import build_sensitivities
from .metrics import mae_matrix, mae_vector
from .scenario import (
    ScenarioConfig,
    SimulationTrace,
    bundled_config,
    read_snapshots,
    run_closed_loop,
    run_monte_carlo,
    write_monte_carlo,
    write_snapshots,
)


def _config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_file(args.config) if args.config else bundled_config()
    overrides = {}
    for name in ("mode", "seed", "horizon", "estimate_every", "window"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "break_alpha", False):
        overrides["events"] = [
            {"step": e.step, "line": list(e.line), "factor": e.factor, "preserve_alpha": False}
            for e in cfg.events
        ]
    return cfg.replace(**overrides) if overrides else cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    snaps = [] if args.snapshots_out else None
    trace = run_closed_loop(cfg, snapshots=snaps)
    trace.to_csv(args.out)
    if snaps:
        write_snapshots(snaps, args.snapshots_out)
    worst = max((r.violations for r in trace.records[-10:]), default=0)
    print(f"{len(trace.records)} steps, status: {trace.status}; "
          f"buses out of band over the last 10 steps (max): {worst}")
    return 0 if trace.status == "complete" else 1


def cmd_montecarlo(args) -> int:
    cfg = _config(args)
    if args.noiseless:
        cfg = cfg.replace(sigma_m=0.0, plant_model="linear")
    windows = [int(w) for w in args.windows.split(",")]
    rows = run_monte_carlo(cfg, windows, args.replicas, workers=args.workers)
    write_monte_carlo(rows, args.out)
    for r in rows:
        print(f"m={r.window:3d}  MAE(x) mean {r.mae_x_mean:.4e} var {r.mae_x_var:.3e}  "
              f"MAE(X) mean {r.mae_X_mean:.4e} var {r.mae_X_var:.3e}  failures {r.failures}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    feeder = cfg.load_feeder()
    snaps = read_snapshots(args.snapshots)
    if not snaps:
        print("no snapshots in file", file=sys.stderr)
        return 2
    window = MeasurementWindow(args.window or len(snaps))
    for s in snaps:
        window.push(s)
    est = estimate(window, feeder.topology, feeder.params.alpha)
    X = build_sensitivities(feeder.topology, feeder.params).X
    out = {
        "snapshots_used": len(window),
        "effective_rank": est.effective_rank,
        "rank_deficient": est.rank_deficient,
        "negative_lines": [i + 1 for i in est.negative_lines],
        "x_hat": est.x_hat.tolist(),
        "r_hat": est.r_hat.tolist(),
        "mae_x_vs_feeder": mae_vector(est.x_hat, feeder.params.x),
        "mae_X_vs_feeder": mae_matrix(est.X_hat, X),
    }
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_plotdata(args) -> int:
    trace = SimulationTrace.from_csv(args.trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = trace.records
    n = trace.bus_count

    _write(out / "mae_evolution.csv", ["step", "mae_x", "mae_r", "mae_X", "mae_R"],
           [[r.step, r.mae_x, r.mae_r, r.mae_X, r.mae_R] for r in recs])
    _write(out / "voltage_envelope.csv", ["step", "v_min", "v_mean", "v_max", "violations"],
           [[r.step, r.v_true.min(), r.v_true.mean(), r.v_true.max(), r.violations] for r in recs])
    _write(out / "voltage_profiles.csv", ["step"] + [f"v_{i}" for i in range(1, n + 1)],
           [[r.step, *r.v_true.tolist()] for r in recs])
    ders = list(trace.der_buses)
    _write(out / "reactive_power.csv", ["step"] + [f"q_g_{b}" for b in ders],
           [[r.step, *[r.q_g[b - 1] for b in ders]] for r in recs])
    last = recs[-1]
    _write(out / "line_parameters.csv", ["line", "x_true", "x_hat"],
           [[i + 1, last.x_true[i], last.x_hat[i]] for i in range(len(last.x_true))])
    print(f"wrote 5 files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voltsense", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario JSON (default: bundled IEEE 37-bus scenario)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="run the closed loop and write a trace CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["estimated", "frozen", "none"])
    p.add_argument("--horizon", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--estimate-every", dest="estimate_every", type=int)
    p.add_argument("--break-alpha", dest="break_alpha", action="store_true",
                   help="perturbation events scale x only, changing the R-to-X ratio")
    p.add_argument("--snapshots-out", dest="snapshots_out", help="also write measured snapshots CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="estimation accuracy versus window size")
    common(p)
    p.add_argument("--windows", default="1,5,10,20")
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--noiseless", action="store_true", help="linear plant, no measurement noise")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("estimate", help="one-shot estimation from recorded snapshots")
    common(p)
    p.add_argument("--snapshots", required=True)
    p.add_argument("--window", type=int, help="use only the most recent N snapshots")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("plotdata", help="per-figure CSVs from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"voltsense: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
