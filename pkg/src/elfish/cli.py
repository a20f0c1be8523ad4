"""Command-line front end: profiling, budget solving, simulation, reports.

Every run writes a manifest (config path, seed, scheme, timestamps) into its
output directory before any compute starts, and every emitted file carries a
schema_version field. Exit codes: 0 success, 2 config/parse error,
3 infeasible budget, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigError, InfeasibleBudgetError, NumericError, SpecError
from .masking import SoftTrainPolicy, solve_mask_budget
from .nn import model_from_config
from .profiling import (ConsumptionEstimate, DeviceProfile, TrainConfig,
                        keep_fraction_sweep, model_time)
from .simulate import (SCHEMA_VERSION, ExperimentLog, fleet_config_from_dict,
                       run_experiment)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _make_out_dir(out: str) -> Path:
    path = Path(out)
    if path.exists() and any(path.iterdir()):
        raise ConfigError(f"output directory {path} already exists and is not empty")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config_path": str(Path(args.config).resolve()),
        "out_dir": str(out_dir.resolve()),
        "seed": getattr(args, "seed", None),
        "scheme": getattr(args, "scheme", None),
        "threads": getattr(args, "threads", None),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _dump_json(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------

def _estimate_rows(est: ConsumptionEstimate) -> list[dict]:
    return [{"layer": i, "workload_flops": w, "memory_bytes": m, "time_seconds": t}
            for i, (w, m, t) in enumerate(zip(est.layer_workload, est.layer_memory,
                                              est.layer_time))]


def cmd_profile(args: argparse.Namespace) -> int:
    raw = _load_json(args.config)
    out_dir = _make_out_dir(args.out)
    _write_manifest(out_dir, args)
    try:
        device = DeviceProfile.from_dict(raw["device"])
        train = TrainConfig.from_dict(raw["train"])
        model_cfg = raw["model"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed profile config: {exc}") from exc

    if not model_cfg.get("layers", True):  # explicit empty layer list
        sweep_rows = [{"keep_fraction": f / 10, "workload_flops": 0, "memory_bytes": 0,
                       "time_seconds": device.fixed_overhead} for f in range(1, 11)]
        payload = {"totals": {"workload_flops": 0, "memory_bytes": 0,
                              "time_seconds": device.fixed_overhead},
                   "layers": [], "sweep": sweep_rows}
        print(f"empty model: cycle time is the fixed overhead, "
              f"{device.fixed_overhead:.1f} s")
    else:
        spec = model_from_config(model_cfg)
        full = model_time(spec, spec.neuron_counts, device, train)
        sweep = keep_fraction_sweep(spec, device, train)
        sweep_rows = [{"keep_fraction": f, "workload_flops": est.workload,
                       "memory_bytes": est.memory, "time_seconds": est.time}
                      for f, est in sweep]
        payload = {"totals": full.to_dict(), "layers": _estimate_rows(full),
                   "sweep": sweep_rows}
        print(f"full model: {full.workload:.3e} FLOPs, {full.memory / 1e6:.1f} MB, "
              f"{full.time / 60:.1f} min per cycle")
        for row in sweep_rows:
            print(f"  keep {row['keep_fraction']:4.0%}: {row['time_seconds'] / 60:8.2f} min, "
                  f"{row['memory_bytes'] / 1e6:8.1f} MB, {row['workload_flops']:.3e} FLOPs")

    _dump_json(out_dir / "profile.json", payload)
    with open(out_dir / "profile.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["keep_fraction", "workload_flops",
                                                "memory_bytes", "time_seconds"])
        writer.writeheader()
        writer.writerows(payload["sweep"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# budget
# ---------------------------------------------------------------------------

def cmd_budget(args: argparse.Namespace) -> int:
    raw = _load_json(args.config)
    out_dir = _make_out_dir(args.out)
    _write_manifest(out_dir, args)
    try:
        spec = model_from_config(raw["model"])
        device = DeviceProfile.from_dict(raw["device"])
        train = TrainConfig.from_dict(raw["train"])
        policy = SoftTrainPolicy.from_dict(raw.get("policy", {}))
    except SpecError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed budget config: {exc}") from exc

    budget = solve_mask_budget(spec, device, train, policy)
    est = model_time(spec, budget.keep_counts, device, train)
    payload = {"budget": budget.to_dict(), "estimate": est.to_dict(),
               "limits": {"time_seconds": device.time_budget,
                          "memory_bytes": device.main_memory_capacity,
                          "workload_flops": device.workload_budget}}
    _dump_json(out_dir / "budget.json", payload)
    print(f"masked fraction {budget.global_fraction:.2f}; keep counts {budget.keep_counts}")
    print(f"estimated cycle: {est.time:.1f} s of {device.time_budget:.1f} s budget")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.scheme is not None:
        raw["scheme"] = args.scheme
    if args.threads is not None:
        raw["threads"] = args.threads
    cfg = fleet_config_from_dict(raw)
    out_dir = _make_out_dir(args.out)
    _write_manifest(out_dir, args, {"seed": cfg.seed, "scheme": cfg.scheme})

    log = run_experiment(cfg)
    log.save_json(out_dir / "log.json")
    log.save_csv(out_dir / "cycles.csv")
    summary = log.summary
    lines = [
        f"scheme: {log.scheme}  seed: {log.seed}  devices: {len(log.device_labels)}",
        f"cycles: {summary['cycles']}  total simulated time: "
        f"{summary['total_clock_seconds']:.1f} s",
        f"final accuracy: {summary['final_accuracy']:.4f}  "
        f"best: {summary['best_accuracy']:.4f}",
        f"trailing mean/variance ({summary['trailing_window']} cycles): "
        f"{summary['trailing_mean_accuracy']:.4f} / {summary['trailing_accuracy_variance']:.2e}",
    ]
    for target, hit in summary["time_to_accuracy_seconds"].items():
        status = f"{hit:.1f} s" if hit is not None else "not reached"
        lines.append(f"time to accuracy {target}: {status}")
    text = "\n".join(lines) + "\n"
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args: argparse.Namespace) -> int:
    if not args.logs:
        raise ConfigError("report needs at least one log file")
    out_dir = _make_out_dir(args.out)
    logs = []
    for path in args.logs:
        try:
            log = ExperimentLog.load_json(path)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot read log {path}: {exc}") from exc
        if log.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"log {path} has schema_version {log.schema_version}, "
                              f"expected {SCHEMA_VERSION}")
        logs.append((Path(path).stem, log))

    with open(out_dir / "series.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "scheme", "seed", "cycle", "clock_seconds", "accuracy"])
        for name, log in logs:
            for r in log.records:
                writer.writerow([name, log.scheme, log.seed, r.cycle,
                                 r.clock_seconds, r.accuracy])

    thresholds = [round(0.05 * k, 2) for k in range(1, 20)]
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "scheme", "seed", "cycles", "total_clock_seconds",
                         "final_accuracy", "trailing_mean_accuracy",
                         "trailing_accuracy_variance"]
                        + [f"time_to_{t:.2f}" for t in thresholds])
        for name, log in logs:
            s = log.summary
            row = [name, log.scheme, log.seed, s["cycles"], s["total_clock_seconds"],
                   s["final_accuracy"], s["trailing_mean_accuracy"],
                   s["trailing_accuracy_variance"]]
            for t in thresholds:
                hit = next((r.clock_seconds for r in log.records if r.accuracy >= t), None)
                row.append("" if hit is None else hit)
            writer.writerow(row)
    print(f"wrote {out_dir / 'series.csv'} and {out_dir / 'summary.csv'} "
          f"({len(logs)} run(s))")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elfish",
        description="Resource-aware federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    profile = sub.add_parser("profile", help="per-layer consumption and keep-fraction sweep")
    profile.add_argument("--config", required=True)
    profile.add_argument("--out", required=True)

    budget = sub.add_parser("budget", help="solve the mask budget for one device")
    budget.add_argument("--config", required=True)
    budget.add_argument("--out", required=True)

    simulate = sub.add_parser("simulate", help="run a federated experiment")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--seed", type=int, default=None,
                          help="override the config seed")
    simulate.add_argument("--scheme", default=None,
                          choices=["sync", "async", "st_only", "elfish"],
                          help="override the config scheme")
    simulate.add_argument("--threads", type=int, default=None,
                          help="train devices of one cycle in parallel")

    report = sub.add_parser("report", help="tabulate one or more experiment logs")
    report.add_argument("logs", nargs="*")
    report.add_argument("--out", required=True)
    return parser


_COMMANDS = {
    "profile": cmd_profile,
    "budget": cmd_budget,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches EXIT_CONFIG
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, SpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleBudgetError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
