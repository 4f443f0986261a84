"""Command-line front end: ``run``, ``verify`` and ``sweep``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigValidationError, ExperimentConfig, load_config
from .data import DataError
from .engine import ConfigError, RunTrace, SchemaError, read_trace, run_matrix
from .evaluation import (
    EvaluationError,
    ErrorSeries,
    UnsupportedCheck,
    WindowSpec,
    local_multiaccuracy_error,
    local_prediction_error,
    total_error,
    verify_interval_bounds,
    write_series_csv,
)
from .plotting import write_chart

log = logging.getLogger("lamo")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3, 4
MANIFEST_VERSION = 1
SWEEP_PARAMS = ("tau", "gamma", "eta", "eta_scale", "m", "width")


class CliFailure(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _report(code: int, kind: str, message: str) -> int:
    print(json.dumps({"status": "error", "exit_code": code, "error": kind, "message": message}), file=sys.stderr)
    return code


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=@+-]", "_", name)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, files: list[Path], extra: dict) -> Path:
    """List every output with its digest; written last through an atomic rename."""
    doc = {"schema_version": MANIFEST_VERSION, **extra,
           "files": [{"path": str(f.relative_to(out)), "sha256": _sha256(f)} for f in files]}
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out / "manifest.json")
    return out / "manifest.json"


# ---------------------------------------------------------------------------
# shared experiment execution


def _load(args) -> ExperimentConfig:
    try:
        return load_config(args.config, seed=args.seed, output_dir=args.out)
    except ConfigValidationError as exc:
        raise CliFailure(EXIT_CONFIG, "config_validation", str(exc)) from exc


def _stream(cfg: ExperimentConfig):
    try:
        stream = cfg.load_stream()
    except (DataError, FileNotFoundError, KeyError, ValueError) as exc:
        raise CliFailure(EXIT_DATA, "data", f"{type(exc).__name__}: {exc}") from exc
    try:
        cfg.validate_against(stream)
    except ConfigValidationError as exc:
        raise CliFailure(EXIT_CONFIG, "config_validation", str(exc)) from exc
    return stream


def _run_status(traces: list[RunTrace]) -> tuple[int, str, str]:
    for tr in traces:
        if tr.status == "error":
            code = EXIT_CONFIG if "ConfigError" in tr.error else EXIT_VIOLATION
            return code, "run_error", f"{tr.run_id}: {tr.error}"
    for tr in traces:
        if tr.status == "solver_failure":
            return EXIT_SOLVER, "solver_failure", f"{tr.run_id}: {tr.error}"
    return EXIT_OK, "", ""


def evaluate_traces(cfg: ExperimentConfig, traces: list[RunTrace], widths=None) -> dict[int, list[ErrorSeries]]:
    plan = cfg.evaluation
    out: dict[int, list[ErrorSeries]] = {}
    for w in widths or plan.widths:
        window = WindowSpec(w, calendar=plan.calendar)
        series = []
        for tr in traces:
            if not len(tr):
                continue
            if "ma" in plan.metrics:
                series.append(local_multiaccuracy_error(tr, window, mode=plan.mode))
            if "pred" in plan.metrics and tr.baseline is not None:
                series.append(local_prediction_error(tr, window, plan.cost, plan.mode))
        out[w] = series
    return out


def _write_outputs(cfg: ExperimentConfig, traces: list[RunTrace], out: Path) -> list[Path]:
    files: list[Path] = []
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    for tr in traces:
        tr.config = replace(tr.config, run_id=_safe(tr.run_id))
        files.extend(tr.save(tdir, include_timing=False))
    try:
        by_width = evaluate_traces(cfg, traces)
    except EvaluationError as exc:
        raise CliFailure(EXIT_CONFIG, "config_validation", str(exc)) from exc
    rows = []
    unit = "days" if cfg.evaluation.calendar else "steps"
    for w, series in by_width.items():
        path = out / f"series_w{w}.csv"
        write_series_csv(path, series)
        files.append(path)
        for s in series:
            rows.append([s.run_id, w, s.metric, repr(total_error(s))])
        if cfg.evaluation.figures:
            for metric in cfg.evaluation.metrics:
                chosen = [s for s in series if s.metric == metric]
                if not chosen:
                    continue
                fig = out / f"fig_{metric}_w{w}.svg"
                write_chart(fig, [(s.run_id, s.ends, s.values) for s in chosen], skip=cfg.evaluation.skip,
                            title=f"local {'multiaccuracy' if metric == 'ma' else 'prediction'} error, width {w} {unit}",
                            xlabel="window end", ylabel="error")
                files.append(fig)
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "status", "T", "width", "metric", "total_error"])
        status = {tr.run_id: (tr.status, len(tr)) for tr in traces}
        for rid, width, metric, total in rows:
            w.writerow([rid, status[rid][0], status[rid][1], width, metric, total])
        for tr in traces:
            if not len(tr):
                w.writerow([tr.run_id, tr.status, 0, "", "", ""])
    files.append(summary)
    return files


def cmd_run(args) -> int:
    cfg = _load(args)
    stream = _stream(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").unlink(missing_ok=True)
    traces = run_matrix(cfg.runs, stream, workers=args.workers)
    code, kind, msg = _run_status(traces)
    if kind == "run_error":
        raise CliFailure(code, kind, msg)
    files = _write_outputs(cfg, traces, out)
    write_manifest(out, files, {"command": "run", "config": cfg.name, "seed": cfg.seed,
                                "status": "ok" if code == EXIT_OK else kind})
    for tr in traces:
        print(f"{tr.run_id}: status={tr.status} T={len(tr)}")
    if code:
        return _report(code, kind, msg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def parse_values(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        for conv in (int, float):
            try:
                out.append(conv(item))
                break
            except ValueError:
                continue
        else:
            out.append(item)
    return out


def _with_param(run, param, value):
    tag = f"{run.run_id}@{param}={value}"
    if param == "m":
        return replace(run, run_id=tag, problem=replace(run.problem, m=int(value)))
    return replace(run, run_id=tag, **{param: value})


def cmd_sweep(args) -> int:
    if not args.param:
        return cmd_run(args)
    if args.param not in SWEEP_PARAMS:
        raise CliFailure(EXIT_CONFIG, "config_validation", f"--param must be one of {SWEEP_PARAMS}")
    values = parse_values(args.values or "")
    if not values:
        raise CliFailure(EXIT_CONFIG, "config_validation", "--values must list at least one value")
    cfg = _load(args)
    stream = _stream(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").unlink(missing_ok=True)

    if args.param == "width":
        if any(not isinstance(v, int) or v < 1 or (v > len(stream) and not cfg.evaluation.calendar) for v in values):
            raise CliFailure(EXIT_CONFIG, "config_validation", f"sweep widths must be integers in [1, {len(stream)}]")
        traces = run_matrix(cfg.runs, stream, workers=args.workers)
        base_of = {tr.run_id: (tr.run_id, None) for tr in traces}
    else:
        try:
            configs, base_of = [], {}
            for v in values:
                for run in cfg.runs:
                    new = _with_param(run, args.param, v)
                    configs.append(new)
                    base_of[new.run_id] = (run.run_id, v)
        except (ConfigError, ValueError, TypeError) as exc:
            raise CliFailure(EXIT_CONFIG, "config_validation", str(exc)) from exc
        traces = run_matrix(configs, stream, workers=args.workers)
    code, kind, msg = _run_status(traces)
    if kind == "run_error":
        raise CliFailure(code, kind, msg)
    files = _write_outputs(cfg, traces, out)

    widths = values if args.param == "width" else cfg.evaluation.widths
    rows = []
    for w, series in evaluate_traces(cfg, traces, widths).items():
        for s in series:
            base, v = base_of[s.run_id]
            rows.append((base, w if args.param == "width" else v, w, s.metric, total_error(s)))
    agg = out / f"sweep_{args.param}.csv"
    with open(agg, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["run_id", "param", "value", "width", "metric", "total_error"])
        for base, v, w, metric, total in rows:
            wr.writerow([base, args.param, v, w, metric, repr(total)])
    files.append(agg)
    numeric = all(isinstance(v, (int, float)) for v in values)
    if numeric and cfg.evaluation.figures:
        for metric in cfg.evaluation.metrics:
            curves = {}
            for base, v, w, m, total in rows:
                if m != metric or (args.param != "width" and w != widths[0]):
                    continue
                curves.setdefault(base, []).append((v, total))
            if curves:
                fig = out / f"sweep_{args.param}_{metric}.svg"
                write_chart(fig, [(b, [a for a, _ in sorted(c)], [t for _, t in sorted(c)]) for b, c in curves.items()],
                            title=f"total {metric} error vs {args.param}", xlabel=args.param, ylabel="total error")
                files.append(fig)
    write_manifest(out, files, {"command": "sweep", "config": cfg.name, "seed": cfg.seed, "param": args.param,
                                "values": values, "status": "ok" if code == EXIT_OK else kind})
    print(f"sweep over {args.param}: {len(traces)} runs, {len(rows)} totals")
    if code:
        return _report(code, kind, msg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    checks = [c for c in ("lemma31", "lemma32", "thm33", "eq8") if getattr(args, c)]
    if not checks:
        checks = ["lemma31", "lemma32", "thm33"]
    try:
        arr = read_trace(args.trace)
    except (SchemaError, FileNotFoundError, ValueError, KeyError, IndexError) as exc:
        raise CliFailure(EXIT_CONFIG, "schema", str(exc)) from exc
    try:
        report = verify_interval_bounds(arr, ["simplex", *checks], eta=args.eta, gamma=args.gamma,
                                        sample_count=args.samples, seed=args.seed or 0)
    except UnsupportedCheck as exc:
        raise CliFailure(EXIT_CONFIG, "unsupported_check", str(exc)) from exc
    except EvaluationError as exc:
        raise CliFailure(EXIT_CONFIG, "schema", str(exc)) from exc
    for line in report.lines():
        print(line)
    summary = {"status": "ok" if report.ok else "violations", "violations": report.violations,
               "exhaustive": report.exhaustive,
               "worst": {k: {"min_slack": r.min_slack, "interval": r.worst_interval}
                         for k, r in report.results.items()}}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if report.ok else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=1, help="parallel runs (default 1)")
    common.add_argument("--out", default=None, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lamo", description="Locally adaptive online multi-objective prediction.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="execute a run matrix from a JSON config")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", parents=[common], help="check per-interval bounds on a trace")
    ver.add_argument("trace", help="trace CSV (its .meta sidecar must sit next to it)")
    ver.add_argument("--lemma31", action="store_true", help="weighted-loss lower bound")
    ver.add_argument("--lemma32", action="store_true", help="nonpositive weighted loss")
    ver.add_argument("--thm33", action="store_true", help="per-interval max-objective bound")
    ver.add_argument("--eq8", action="store_true", help="width-tuned envelope (diagnostic)")
    ver.add_argument("--samples", type=int, default=10_000, help="random intervals when T > 512")
    ver.add_argument("--eta", type=float, default=None, help="override the recorded learning rate")
    ver.add_argument("--gamma", type=float, default=None, help="override the recorded mixing rate")
    ver.set_defaults(func=cmd_verify)

    sw = sub.add_parser("sweep", parents=[common], help="cross-product over one hyperparameter")
    sw.add_argument("config")
    sw.add_argument("--param", default=None, help=f"one of {', '.join(SWEEP_PARAMS)}")
    sw.add_argument("--values", default=None, help="comma-separated values")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliFailure as exc:
        return _report(exc.code, exc.kind, str(exc))


if __name__ == "__main__":
    sys.exit(main())
