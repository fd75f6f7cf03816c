"""Command-line front end.

Subcommands: synth, analyze, oracle-check, train, predict, report. All
randomness flows through the --seed flag; outputs that must be reproducible
(results.csv, summary.json, checkpoints, metrics) contain no wall-clock data,
timings go to a separate timing.json.

Exit codes: 0 success, 1 validation failure, 2 solver-threshold failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import nlp as nlp_mod
from . import scores as scores_mod
from . import surrogate as sg
from . import synth as synth_mod
from . import telemetry as tel
from .pipeline import analyze_lap, traditional_metrics
from .tire_model import TireParamError, load_tire_params, max_force_direction_sweep, TireState, tire_forces
from .opt_tire import optimize_tire
from .vehicle_model import VehicleParamError, load_vehicle_params

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_THRESHOLD = 2


@dataclass
class RunManifest:
    """Resolved run configuration shared by the subcommands."""

    inputs: list
    vehicle_file: Optional[str]
    tires_file: Optional[str]
    out_dir: Path
    seed: int
    workers: int
    solver_options: Optional["nlp_mod.NlpOptions"] = None
    feature_set: str = "m2"
    holdout_track: Optional[str] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        for p in self.inputs:
            if not Path(p).exists():
                raise FileNotFoundError(f"input path does not exist: {p}")
        for p in (self.vehicle_file, self.tires_file):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"parameter file does not exist: {p}")


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lap_files(inputs) -> list[Path]:
    files = []
    for p in map(Path, inputs):
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        else:
            files.append(p)
    return files


def _load_params(args):
    vehicle = load_vehicle_params(args.vehicle)
    tires = load_tire_params(args.tires)
    return vehicle, tires


def cmd_synth(args) -> int:
    out = _out_dir(args)
    vehicle, tires = _load_params(args)
    tracks = args.track.split(",")
    drivers = args.driver.split(",")
    written = []
    for track_name in tracks:
        # canned name or a track config file
        if Path(track_name).is_file():
            track = synth_mod.load_track_spec(track_name)
        else:
            track = synth_mod.canned_track(track_name)
        for driver_name in drivers:
            if Path(driver_name).is_file():
                driver = synth_mod.load_driver_spec(driver_name)
            else:
                driver = synth_mod.canned_driver(driver_name)
            for k in range(args.laps):
                seed = args.seed + 1000 * len(written) + k
                lap = synth_mod.generate_lap(track, driver, vehicle, tires, seed=seed)
                path = out / f"{lap.lap_id}.csv"
                tel.save_lap(lap, path)
                written.append(path)
    print(f"wrote {len(written)} laps to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    vehicle, tires = _load_params(args)
    solver = None
    if args.solver_max_iter or args.solver_tol:
        solver = nlp_mod.NlpOptions(
            max_iter=args.solver_max_iter or 600,
            feas_tol=args.solver_tol or 1e-6,
            opt_tol=args.solver_tol or 1e-6,
        )
    manifest = RunManifest(
        inputs=args.input, vehicle_file=args.vehicle, tires_file=args.tires,
        out_dir=out, seed=args.seed, workers=args.workers, solver_options=solver,
    )
    files = _lap_files(manifest.inputs)
    if not files:
        print("no lap files found", file=sys.stderr)
        return EXIT_VALIDATION

    rows = []
    lap_metrics = {}
    timings = {}
    used_laps = []
    failures = 0
    for path in files:
        try:
            lap = tel.load_lap(path, tires=tires)
        except tel.TelemetryError as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        analysis = analyze_lap(lap, vehicle, tires, workers=manifest.workers,
                               options=manifest.solver_options)
        for s in analysis.samples:
            rows.append((lap.lap_id, lap.driver_id, lap.track_id, s))
        lap_metrics[lap.lap_id] = {
            "driver_id": lap.driver_id,
            "track_id": lap.track_id,
            **traditional_metrics(lap),
            "samples": len(lap),
            "included": len(analysis.included),
            "convergence_rate": analysis.convergence_rate(),
        }
        timings[lap.lap_id] = {
            "wall_s": analysis.wall_time,
            "per_sample_ms": 1000.0 * analysis.wall_time / len(lap),
        }
        used_laps.append(lap)
    if not used_laps:
        print("all laps failed validation", file=sys.stderr)
        return EXIT_VALIDATION

    scores_mod.write_results_csv(out / "results.csv", rows)
    summaries = scores_mod.aggregate((driver, s) for _, driver, _, s in rows)
    summary = {
        "config": {
            "seed": manifest.seed,
            "workers": manifest.workers,
            "vehicle_file": manifest.vehicle_file,
            "tires_file": manifest.tires_file,
            "laps": [lap.lap_id for lap in used_laps],
        },
        "lap_metrics": lap_metrics,
        "groups": [
            {
                "driver_id": g.group[0],
                "control_state": g.group[1],
                "count": g.count,
                "mean": g.mean,
                "quantiles": g.quantiles,
                "histogram": g.histogram,
            }
            for g in summaries
        ],
        "validation_failures": failures,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    (out / "timing.json").write_text(json.dumps(timings, indent=1, sort_keys=True))
    print(f"analyzed {len(used_laps)} laps -> {out}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    vehicle, tires = _load_params(args)
    n = args.samples
    if n == 0:
        print("warning: n=0, trivial pass", file=sys.stderr)
        return EXIT_OK
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    fails = 0
    checked = 0
    for _ in range(n):
        ap = tires.front if rng.random() < 0.5 else tires.rear
        state = TireState(
            fz=float(rng.uniform(1500, 8000)),
            alpha=float(rng.uniform(-0.8, 0.8) * vehicle.alpha_max),
            kappa=float(rng.uniform(-0.8, 0.8) * vehicle.kappa_max),
            gamma=float(rng.uniform(-0.06, 0.06)),
        )
        fx0, fy0, _ = tire_forces(state, ap)
        if math.hypot(fx0, fy0) < 50.0:
            continue
        res = optimize_tire(state, ap, vehicle.alpha_max, vehicle.kappa_max, fx0, fy0)
        if not res.converged:
            fails += 1
            continue
        sweep = max_force_direction_sweep(
            state, ap, math.atan2(fy0, fx0), vehicle.alpha_max, vehicle.kappa_max,
            grid=901, angle_tol=0.005,
        )
        if not sweep.feasible:
            continue
        worst = max(worst, abs(res.f_rho - sweep.force) / sweep.force)
        checked += 1
    print(f"oracle check: {checked} instances, {fails} failures, "
          f"max relative deviation {worst * 100:.3f}%")
    if worst > args.threshold or fails > 0.01 * n:
        return EXIT_THRESHOLD
    return EXIT_OK


def _scores_by_lap(results_path) -> dict:
    per_lap: dict[str, list] = {}
    for row in scores_mod.read_results_csv(results_path):
        per_lap.setdefault(row["lap_id"], []).append(row)
    return per_lap


def _lap_targets(rows) -> tuple[np.ndarray, np.ndarray]:
    n = len(rows)
    y = np.zeros((n, 3))
    w = np.zeros(n)
    for i, row in enumerate(rows):
        if row["flags"] == ("ok",):
            y[i] = (row["s_handling"], row["s_veh_traj"], row["s_tot"])
            w[i] = 1.0
    return y, w


def cmd_train(args) -> int:
    out = _out_dir(args)
    tires = load_tire_params(args.tires)
    results = Path(args.results)
    if not results.exists():
        print(f"results file not found: {results}", file=sys.stderr)
        return EXIT_VALIDATION
    per_lap = _scores_by_lap(results)
    files = _lap_files(args.input)
    laps = []
    for path in files:
        lap = tel.load_lap(path, tires=tires)
        if lap.lap_id in per_lap:
            laps.append(lap)
    if not laps:
        print("no laps matching the results file", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        channels = sg.feature_channels(args.feature_set)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    config = sg.SurrogateConfig(feature_set=args.feature_set, max_epochs=args.epochs)
    split = sg.DatasetSplit.of(laps, seed=args.seed, holdout_track=args.holdout_track)
    stats = tel.fit_normalization(split.train, channels)

    def windows_of(partition):
        wins = []
        for lap in partition:
            y, w = _lap_targets(per_lap[lap.lap_id])
            norm = tel.apply_normalization(lap, stats)
            wins.extend(sg.make_windows(norm, y, w, channels, window=config.window))
        return wins

    t0 = time.perf_counter()
    model = sg.train(
        windows_of(split.train), windows_of(split.validation), config,
        seed=args.seed, stats=stats, channels=channels, verbose=args.verbose,
    )
    wall = time.perf_counter() - t0

    test_metrics = {}
    for name, part in (("validation", split.validation), ("test", split.test)):
        wins = windows_of(part)
        if not wins:
            continue
        X, Y, Wt = sg._dataset_tensors(wins)
        pred = model.predict_windows(X)
        test_metrics[name] = {
            "rmse": sg.rmse(Y, pred, Wt),
            "per_score": {
                sname: sg.rmse(Y[:, :, k], pred[:, :, k], Wt)
                for k, sname in enumerate(sg.SCORE_NAMES)
            },
        }
    sg.save_checkpoint(model, out / "surrogate.npz")
    metrics = {
        "feature_set": args.feature_set,
        "channels": channels,
        "train_rmse": model.train_rmse,
        "val_rmse": model.val_rmse,
        "epochs": len(model.history),
        "partitions": {
            "train": [lap.lap_id for lap in split.train],
            "validation": [lap.lap_id for lap in split.validation],
            "test": [lap.lap_id for lap in split.test],
        },
        "evaluation": test_metrics,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    (out / "timing.json").write_text(json.dumps({"train_wall_s": wall}, indent=1))
    print(f"trained {args.feature_set} surrogate ({len(model.history)} epochs, "
          f"val_rmse={model.val_rmse:.4f}) -> {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    out = _out_dir(args)
    tires = load_tire_params(args.tires)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"checkpoint not found: {ckpt}", file=sys.stderr)
        return EXIT_VALIDATION
    model = sg.load_checkpoint(ckpt)
    per_lap = _scores_by_lap(args.results) if args.results else {}
    files = _lap_files(args.input)
    if not files:
        print("no lap files found", file=sys.stderr)
        return EXIT_VALIDATION

    metrics = {}
    t_wall = 0.0
    with open(out / "predictions.csv", "w") as fh:
        fh.write("lap_id,t,s_handling,s_veh_traj,s_tot\n")
        for path in files:
            lap = tel.load_lap(path, tires=tires)
            norm = tel.apply_normalization(lap, model.stats)
            t0 = time.perf_counter()
            pred = sg.predict(model, norm)
            t_wall += time.perf_counter() - t0
            tcol = lap.channel("t")[: len(pred)]
            for i in range(len(pred)):
                fh.write(
                    f"{lap.lap_id},{tcol[i]!r},{pred[i,0]!r},{pred[i,1]!r},{pred[i,2]!r}\n"
                )
            if lap.lap_id in per_lap:
                y, w = _lap_targets(per_lap[lap.lap_id])
                n = len(pred)
                if w[:n].sum() > 0:
                    metrics[lap.lap_id] = {
                        "rmse": sg.rmse(y[:n], pred, w[:n]),
                        "per_score": {
                            s: sg.rmse(y[:n, k], pred[:, k], w[:n])
                            for k, s in enumerate(sg.SCORE_NAMES)
                        },
                    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    (out / "timing.json").write_text(
        json.dumps({"predict_wall_s": t_wall, "laps": len(files)}, indent=1)
    )
    print(f"predicted {len(files)} laps -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    all_rows = []
    for path in args.results:
        if not Path(path).exists():
            print(f"results file not found: {path}", file=sys.stderr)
            return EXIT_VALIDATION
        all_rows.extend(scores_mod.read_results_csv(path))
    if not all_rows:
        print("no result rows", file=sys.stderr)
        return EXIT_VALIDATION
    summaries = scores_mod.aggregate(
        (row["driver_id"], scores_mod.sample_from_row(row)) for row in all_rows
    )
    deltas = scores_mod.group_deltas(summaries, amateur_suffix=args.amateur_suffix)
    report = {
        "groups": [
            {
                "driver_id": g.group[0],
                "control_state": g.group[1],
                "count": g.count,
                "mean": g.mean,
                "quantiles": g.quantiles,
                "histogram": g.histogram,
            }
            for g in summaries
        ],
        "pro_vs_amateur": deltas,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(f"report with {len(summaries)} groups -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gripscore", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, inputs=True):
        if inputs:
            sp.add_argument("--input", nargs="+", required=True,
                            help="lap CSV files or directories")
        sp.add_argument("--vehicle", default=None, help="vehicle parameter file")
        sp.add_argument("--tires", default=None, help="tire parameter file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("synth", help="generate synthetic laps")
    common(sp, inputs=False)
    sp.add_argument("--track", default="synt-a", help="comma-separated canned tracks")
    sp.add_argument("--driver", default="D1", help="comma-separated canned drivers")
    sp.add_argument("--laps", type=int, default=1)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("analyze", help="run the optimizer pipeline over laps")
    common(sp)
    sp.add_argument("--solver-max-iter", type=int, default=None,
                    help="override the per-sample solver iteration budget")
    sp.add_argument("--solver-tol", type=float, default=None,
                    help="override solver feasibility/optimality tolerances")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("oracle-check", help="validate the per-tire optimizer "
                                             "against the grid-sweep oracle")
    common(sp, inputs=False)
    sp.add_argument("-n", "--samples", type=int, default=100)
    sp.add_argument("--threshold", type=float, default=0.005)
    sp.set_defaults(func=cmd_oracle_check)

    sp = sub.add_parser("train", help="train the score surrogate")
    common(sp)
    sp.add_argument("--results", required=True, help="results.csv from analyze")
    sp.add_argument("--feature-set", choices=("m1", "m2", "m3"), default="m2")
    sp.add_argument("--holdout-track", default=None)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="predict scores with a trained surrogate")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--results", default=None,
                    help="optional results.csv for RMSE against the optimizer")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("report", help="aggregate results into a plot-ready report")
    sp.add_argument("--results", nargs="+", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--amateur-suffix", default="A")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (tel.TelemetryError, TireParamError, VehicleParamError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
