"""Command-line entry point: ``swarm-gov run | validate | report``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config (or missing
file), 3 checksum mismatch in a run directory.

Layout of a run directory::

    manifest.json          scenario, config hash, seeds, timestamps, checksums
    config_echo.json       the fully resolved config
    summary.json           per-label, per-seed metrics and their means
    <label>/seed_<s>/      report.json, latency.csv, evolution.csv, trace.jsonl

Everything except the timestamps in ``manifest.json`` is a pure function of
(config, seeds, mode).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODES, ConfigError, ScenarioConfig, canonical_json, load, validate_file
from .scenarios import RunResult, burst_summary, run_scenario, sweep_curve

log = logging.getLogger("swarm_gov")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_TAMPERED = 0, 1, 2, 3
METRICS = ("coordination_efficiency", "adaptation_score", "convergence_time", "global_optimality")
MANIFEST = "manifest.json"


def _configure_logging():
    level = os.environ.get("SWARM_GOV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(code: int, message: str, **extra) -> int:
    print(json.dumps({"error": message, "exit_code": code, **extra}, sort_keys=True), file=sys.stderr)
    return code


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(path: Path, doc):
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------- artifacts


def latency_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "mean_latency_s", "p95_latency_s"])
    for k, mean, p95 in result.report.latency_series:
        w.writerow([k, "" if mean is None else repr(mean), "" if p95 is None else repr(p95)])
    return buf.getvalue()


def evolution_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generation", "role", "strategy", "share", "fitness", "mean_fitness"])
    groups: dict = {}
    for row in result.history:
        groups.setdefault((row.generation, row.role), []).append(row)
    for (g, r), rows in sorted(groups.items()):
        mean_f = float(sum(x.share * x.fitness for x in rows))
        for x in sorted(rows, key=lambda x: x.strategy):
            w.writerow([g, r, x.strategy, repr(x.share), repr(x.fitness), repr(mean_f)])
    return buf.getvalue()


def trace_jsonl(result: RunResult) -> str:
    """One line per request record; ``count`` requests share each line."""
    lines = []
    for rec in result.trace.records:
        lines.append(json.dumps({
            "window": rec.window, "entry": rec.entry, "count": rec.count, "path": list(rec.path),
            "latency_s": rec.latency, "met_slo": rec.met_slo, "failed": rec.failed,
        }, sort_keys=True))
    for k, ev in result.trace.events:
        lines.append(json.dumps({"window": k, "event": ev}, sort_keys=True))
    return "\n".join(lines) + "\n"


def report_doc(result: RunResult, cfg_hash: str) -> dict:
    doc = result.report.to_json()
    doc.update({"mode": result.mode, "seed": result.seed, "agent_count": result.agent_count,
                "config_hash": cfg_hash})
    return doc


def _mean(vals):
    vals = [v for v in vals if isinstance(v, (int, float))]
    return float(np.mean(vals)) if vals else None


def summary_doc(table: dict, cfg: ScenarioConfig) -> dict:
    out = {"scenario": cfg.scenario.name, "kind": cfg.scenario.kind, "labels": {}}
    for label, by_seed in table.items():
        per_seed = {str(s): {m: r.report.to_json()[m] for m in METRICS} for s, r in sorted(by_seed.items())}
        means = {m: _mean([row[m] for row in per_seed.values()]) for m in METRICS}
        means["converged_seeds"] = sum(r.report.convergence_time is not None for r in by_seed.values())
        out["labels"][label] = {"per_seed": per_seed, "mean": means}
    if cfg.scenario.kind == "sweep":
        counts = {int(label.split("_")[1]): v for label, v in table.items()}
        out["sweep"] = [{"agents": c, "global_optimality_mean": m, "global_optimality_std": s}
                        for c, m, s in sweep_curve(counts)]
    if cfg.scenario.kind == "burst":
        out["burst"] = {}
        for label, by_seed in table.items():
            b = burst_summary(by_seed, cfg)
            out["burst"][label] = {
                "peak_window": b.peak_window, "pre_latency_s": b.pre_latency,
                "post_latency_s": b.post_latency, "adaptation_score": b.adaptation_score,
                "burst_windows": list(b.burst_windows),
                "mean_latency_s": [m for _, m, _ in b.series],
            }
    return out


def write_run(out_dir: Path, cfg: ScenarioConfig, table: dict, seeds, started: float) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.config_hash()
    written = []

    def put(rel: str, text: str):
        p = out_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        written.append(rel)

    put("config_echo.json", json.dumps(cfg.to_json(), sort_keys=True, indent=2) + "\n")
    for label, by_seed in table.items():
        for seed, res in sorted(by_seed.items()):
            base = f"{label}/seed_{seed}"
            put(f"{base}/report.json", json.dumps(report_doc(res, cfg_hash), sort_keys=True, indent=2) + "\n")
            put(f"{base}/latency.csv", latency_csv(res))
            put(f"{base}/evolution.csv", evolution_csv(res))
            put(f"{base}/trace.jsonl", trace_jsonl(res))
    put("summary.json", json.dumps(summary_doc(table, cfg), sort_keys=True, indent=2) + "\n")
    manifest = {
        "scenario": cfg.scenario.name,
        "config_hash": cfg_hash,
        "seeds": list(seeds),
        "labels": list(table),
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": sorted(written),
        "checksums": {rel: sha256_file(out_dir / rel) for rel in sorted(written)},
        "version": __version__,
    }
    _dump(out_dir / MANIFEST, manifest)
    return manifest


def verify(run_dir: Path) -> list[str]:
    """Paths whose checksum does not match the manifest (missing files count)."""
    manifest = json.loads((run_dir / MANIFEST).read_text())
    bad = []
    for rel, digest in manifest["checksums"].items():
        p = run_dir / rel
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    diags = validate_file(args.config)
    for d in diags:
        print(str(d))
    if diags:
        print(json.dumps({"diagnostics": [d.to_json() for d in diags]}, sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(str(d), file=sys.stderr)
        return _fail(EXIT_CONFIG, "invalid config", diagnostics=[d.to_json() for d in exc.diagnostics])
    if args.mode is not None and args.mode not in MODES:
        return _fail(EXIT_CONFIG, f"unknown mode {args.mode!r}",
                     diagnostics=[{"path": "--mode", "message": f"must be one of {', '.join(MODES)}"}])
    seeds = tuple(args.seed) if args.seed else tuple(cfg.scenario.seeds)
    cfg = replace(cfg, scenario=replace(cfg.scenario, seeds=seeds))
    started = time.time()
    try:
        table = run_scenario(cfg, seeds, args.mode, args.jobs)
        manifest = write_run(Path(args.out_dir), cfg, table, seeds, started)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.exception("run failed")
        return _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")
    print(json.dumps({"out_dir": str(args.out_dir), "config_hash": manifest["config_hash"],
                      "outputs": len(manifest["outputs"])}, sort_keys=True))
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{v:.6f}"


def format_summary(summary: dict) -> str:
    lines = [f"scenario {summary['scenario']} ({summary['kind']})"]
    for label, body in summary["labels"].items():
        seeds = list(body["per_seed"])
        head = ["metric".ljust(24)] + [f"seed {s}".rjust(14) for s in seeds] + ["mean".rjust(14)]
        lines.append("")
        lines.append(f"[{label}]")
        lines.append(" ".join(head))
        for m in METRICS:
            row = [m.ljust(24)] + [_fmt(body["per_seed"][s][m]).rjust(14) for s in seeds]
            row.append(_fmt(body["mean"][m]).rjust(14))
            lines.append(" ".join(row))
        lines.append(f"{'converged seeds'.ljust(24)} {body['mean']['converged_seeds']}/{len(seeds)}")
    if "sweep" in summary:
        lines.append("")
        lines.append("agents  global_optimality_mean  std")
        for row in summary["sweep"]:
            lines.append(f"{row['agents']:>6}  {_fmt(row['global_optimality_mean']):>22}  "
                         f"{_fmt(row['global_optimality_std'])}")
    if "burst" in summary:
        for label, b in summary["burst"].items():
            lines.append("")
            lines.append(f"burst [{label}] windows {b['burst_windows']} peak {b['peak_window']} "
                         f"pre {_fmt(b['pre_latency_s'])} post {' '.join(_fmt(v) for v in b['post_latency_s'])}")
            lines.append("  mean latency: " + " ".join(_fmt(v) for v in b["mean_latency_s"]))
    return "\n".join(lines)


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / MANIFEST).is_file():
        return _fail(EXIT_TAMPERED, f"no {MANIFEST} in {run_dir}")
    try:
        bad = verify(run_dir)
    except (json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_TAMPERED, f"unreadable manifest: {exc}")
    if bad:
        return _fail(EXIT_TAMPERED, "checksum mismatch", files=bad)
    summary = json.loads((run_dir / "summary.json").read_text())
    print(format_summary(summary))
    if args.csv:
        _merge_csv(run_dir, Path(args.csv))
    return EXIT_OK


def _merge_csv(run_dir: Path, dest: Path):
    """All per-run latency series stacked into one CSV with label and seed columns."""
    manifest = json.loads((run_dir / MANIFEST).read_text())
    rows = []
    for rel in manifest["outputs"]:
        if rel.endswith("latency.csv"):
            label, seed_dir, _ = rel.split("/")
            with open(run_dir / rel, newline="") as fh:
                for r in csv.DictReader(fh):
                    rows.append([label, seed_dir.split("_")[1], r["window"], r["mean_latency_s"], r["p95_latency_s"]])
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "seed", "window", "mean_latency_s", "p95_latency_s"])
        w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarm-gov", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write its artifacts")
    r.add_argument("config", help="scenario JSON file")
    r.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides scenario.seeds")
    r.add_argument("--out-dir", default="out", help="output directory (default: out)")
    r.add_argument("--mode", default=None, help=f"baseline mode override, one of {', '.join(MODES)}")
    r.add_argument("--jobs", type=int, default=1, help="parallel (mode, seed) cells (default: 1)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="verify a run directory and print its summary")
    rep.add_argument("run_dir")
    rep.add_argument("--csv", default=None, help="also write the merged latency series here")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        return _fail(EXIT_CONFIG, "--jobs must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
