"""Command-line orchestration: batch simulation, correlation analysis,
replay qualification, master-equation solving, and report aggregation.

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 analysis
error (some inputs failed; partial results were written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clickstream import read_clicks, write_clicks
from .config import ConfigError, ExperimentConfig, as_dotted_dict, load_config
from .correlator import cross_correlate_binned, visibility
from .clickstream import window_clicks
from .qed import (IntegrationError, build_model, emission_probability,
                  fit_coupling_scale, propagate, pure_state_density, U0)
from .correlator import correlate_counts
from .qualifier import qualified_segment_periods, replay
from .simulator import simulate_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_stream(path: Path, fmt: str | None):
    if fmt is None:
        fmt = "csv" if path.suffix == ".csv" else "ptag"
    return read_clicks(path, fmt)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = cfg.format
    files = []
    for i in range(cfg.n_runs):
        seed = cfg.seed + i
        stream, truth = simulate_run(cfg.sim, cfg.schedule, seed)
        stem = f"run_{i:04d}"
        stream_file = out / f"{stem}.{ext}"
        write_clicks(stream, cfg.format, stream_file)
        truth_file = out / f"{stem}.truth.json"
        _write_json(truth_file, truth.to_dict())
        files.append({"run": i, "seed": seed, "stream": stream_file.name,
                      "truth": truth_file.name, "n_clicks": len(stream),
                      "duration_s": stream.duration * 1e-9})
    snapshot = as_dotted_dict(cfg)
    snapshot.pop("out_dir")  # self-referential: not part of the experiment
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "n_runs": cfg.n_runs,
        "format": cfg.format,
        "config": snapshot,
        "runs": files,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {cfg.n_runs} runs to {out}")
    return EXIT_OK


def cmd_analyze(cfg: ExperimentConfig, streams: list[str], max_lag: int,
                qualified_only: bool = False) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    merged = None
    summary = {"runs": [], "failures": [], "skipped": []}
    status = EXIT_OK
    for name in streams:
        path = Path(name)
        try:
            stream = _load_stream(path, None if cfg.format == "ptag" and
                                  path.suffix == ".csv" else cfg.format)
            w = window_clicks(stream, cfg.schedule)
            if qualified_only:
                verdict, _ = replay(stream, cfg.schedule, cfg.qualifier)
                seg = qualified_segment_periods(
                    verdict, cfg.schedule, stream.duration // cfg.schedule.period)
                if seg is None:
                    summary["skipped"].append({"stream": name,
                                               "reason": "not qualified"})
                    continue
                a, b = seg
                hist = correlate_counts(w.trigger_counts[0][a:b],
                                        w.trigger_counts[1][a:b], max_lag)
            else:
                hist = cross_correlate_binned(w, max_lag)
        except (OSError, ValueError) as exc:
            summary["failures"].append({"stream": name, "error": str(exc)})
            status = EXIT_ANALYSIS
            continue
        hist_file = out / f"hist_{path.stem}.csv"
        hist.to_csv(hist_file)
        entry = {"stream": name, "histogram": hist_file.name,
                 "n_trigger_clicks": w.n_trigger}
        try:
            entry["visibility"] = visibility(hist).to_dict()
        except ValueError as exc:
            entry["visibility_error"] = str(exc)
            status = EXIT_ANALYSIS
        summary["runs"].append(entry)
        merged = hist if merged is None else merged + hist
    if merged is not None:
        merged.to_csv(out / "merged_hist.csv")
        try:
            _write_json(out / "merged_visibility.json", visibility(merged).to_dict())
        except ValueError as exc:
            summary["merged_visibility_error"] = str(exc)
    _write_json(out / "analyze_summary.json", summary)
    print(f"analyzed {len(summary['runs'])} streams "
          f"({len(summary['failures'])} failures)")
    return status


def cmd_qualify(cfg: ExperimentConfig, streams: list[str]) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verdicts = []
    failures = []
    status = EXIT_OK
    for name in streams:
        path = Path(name)
        try:
            stream = _load_stream(path, None if path.suffix == ".csv" else cfg.format)
            verdict, _ = replay(stream, cfg.schedule, cfg.qualifier)
        except (OSError, ValueError) as exc:
            failures.append({"stream": name, "error": str(exc)})
            status = EXIT_ANALYSIS
            continue
        entry = verdict.to_dict()
        entry["stream"] = name
        verdicts.append(entry)
    n_reached = sum(1 for v in verdicts if v["qual_start_ns"] is not None)
    n_passed = sum(1 for v in verdicts if v["qualified"])
    summary = {
        "n_streams": len(streams),
        "n_analyzed": len(verdicts),
        "n_reached_qualifying": n_reached,
        "n_qualified": n_passed,
        "pass_fraction_all": n_passed / len(verdicts) if verdicts else None,
        "pass_fraction_reached": n_passed / n_reached if n_reached else None,
        "total_serving_s": sum(v["serving_s"] for v in verdicts),
        "total_served_clicks": sum(v["served_clicks"] for v in verdicts),
        "failures": failures,
    }
    _write_json(out / "verdicts.json", verdicts)
    _write_json(out / "qualify_summary.json", summary)
    print(f"qualified {n_passed}/{len(verdicts)} runs "
          f"({n_reached} reached the correlation test)")
    return status


def cmd_qed(cfg: ExperimentConfig, dt: float, fit_target: float | None) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.qed, cfg.pulse)
    traj = propagate(model, pure_state_density(U0), dt, cfg.pulse.duration_ns)
    traj.to_csv(out / "trajectory.csv")
    report = {
        "emission_probability": emission_probability(traj),
        "dt_ns": dt,
        "coupling_scale": cfg.qed.coupling_scale,
    }
    if fit_target is not None:
        scale = fit_coupling_scale(cfg.qed, cfg.pulse, fit_target, dt=dt)
        report["fitted_coupling_scale"] = scale
        report["fit_target"] = fit_target
    _write_json(out / "qed_report.json", report)
    print(f"emission probability {report['emission_probability']:.4f}"
          + (f", fitted scale {report['fitted_coupling_scale']:.4f}"
             if fit_target is not None else ""))
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, inputs: list[str]) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"manifests": [], "summaries": []}
    for name in inputs:
        path = Path(name)
        if not path.exists():
            raise OSError(f"no such file or directory: {path}")
        candidates = ([path] if path.is_file()
                      else sorted(path.glob("*.json")))
        for c in candidates:
            payload = json.loads(c.read_text())
            if "runs" in payload and "seed" in payload:
                report["manifests"].append({"path": str(c), "n_runs": payload["n_runs"],
                                            "seed": payload["seed"]})
            else:
                report["summaries"].append({"path": str(c), "keys": sorted(payload)
                                            if isinstance(payload, dict) else "list"})
    report["n_manifests"] = len(report["manifests"])
    _write_json(out / "report.json", report)
    print(f"aggregated {len(report['manifests'])} manifests, "
          f"{len(report['summaries'])} summaries")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonserver",
        description="Single-atom cavity photon-server simulation and "
                    "stream qualification")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="dotted-key config file")
        p.add_argument("--seed", type=int, help="master seed (run i uses seed+i)")
        p.add_argument("--runs", type=int, help="number of runs")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--format", choices=("ptag", "csv"), help="stream file format")

    p = sub.add_parser("simulate", help="simulate runs and write stream+truth files")
    common(p)

    p = sub.add_parser("analyze", help="correlation histograms and visibility")
    common(p)
    p.add_argument("streams", nargs="+", help="stream files (.ptag/.csv)")
    p.add_argument("--max-lag", type=int, default=30)
    p.add_argument("--qualified-only", action="store_true",
                   help="restrict each run to its qualified single-atom "
                        "segment (runs the qualifier first)")

    p = sub.add_parser("qualify", help="replay streams through the qualifier")
    common(p)
    p.add_argument("streams", nargs="+")

    p = sub.add_parser("qed", help="solve the emission model, export trajectory")
    common(p)
    p.add_argument("--dt", type=float, default=1.0, help="integration step (ns)")
    p.add_argument("--fit-target", type=float,
                   help="fit coupling_scale to this emission probability")

    p = sub.add_parser("report", help="aggregate manifests/summaries")
    common(p)
    p.add_argument("inputs", nargs="+", help="manifest files or output dirs")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "n_runs": args.runs,
                     "out_dir": args.out, "format": args.format}
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.streams, args.max_lag,
                               args.qualified_only)
        if args.command == "qualify":
            return cmd_qualify(cfg, args.streams)
        if args.command == "qed":
            return cmd_qed(cfg, args.dt, args.fit_target)
        if args.command == "report":
            return cmd_report(cfg, args.inputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
