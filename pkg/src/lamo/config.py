"""Experiment configuration: JSON document -> dataset, run matrix, evaluation plan.

Environment variables may override paths (dataset ``*_path`` keys and the
output directory) and nothing else: ``LAMO_OUTPUT_DIR`` and
``LAMO_<KEY>`` for a dataset key such as ``load_path``.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import (
    SampleStream,
    ShiftScenario,
    gen_jump_shift,
    gen_switch,
    load_compas,
    load_gefcom,
    synth_gefcom_frame,
)
from .engine import ConfigError, RunConfig
from .objectives import LabelRange
from .solvers import SolverSettings

SCHEMA_VERSION = 1
DATASETS = ("switch", "jump_shift", "gefcom", "gefcom_synthetic", "compas", "stream_csv")
METRICS = ("ma", "pred")
RUN_KEYS = {"run_id", "learner", "eta", "eta_scale", "gamma", "tau", "seed", "baseline", "ogd_step",
            "ogd_intercept", "weight_stride", "problem", "solver"}
SKIP_DEFAULTS = {"gefcom": 10, "gefcom_synthetic": 10, "compas": 2}
INTERVAL_SKIP = 30

# published schema of the configuration document (informal, checked by validate_document)
CONFIG_SCHEMA = {
    "schema_version": "int, must equal 1",
    "name": "str",
    "seed": "int, global seed (runs and synthetic data default to it)",
    "output_dir": "str path",
    "dataset": {"kind": f"one of {DATASETS}", "...": "kind-specific keys, *_path keys are files"},
    "problem": "default problem block shared by every run (kind, groups, m, alpha, cost, ...)",
    "defaults": "default run keys merged into every run",
    "runs": f"list of run blocks with keys {sorted(RUN_KEYS)}",
    "evaluation": {"widths": "list[int]", "metrics": f"subset of {METRICS}", "skip": "int",
                   "calendar": "bool (COMPAS day windows)", "mode": "auto|realized|expected",
                   "cost": "squared", "figures": "bool"},
}


class ConfigValidationError(ValueError):
    """The configuration document is malformed or inconsistent."""


@dataclass
class EvaluationPlan:
    widths: list[int] = field(default_factory=lambda: [100])
    metrics: list[str] = field(default_factory=lambda: ["ma"])
    skip: int = 0
    calendar: bool = False
    mode: str = "auto"
    cost: str = "squared"
    figures: bool = True


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    runs: list[RunConfig]
    evaluation: EvaluationPlan
    output_dir: Path
    seed: int = 0
    source: Path | None = None
    raw: dict = field(default_factory=dict)

    def load_stream(self) -> SampleStream:
        return build_stream(self.dataset, self.seed, self.source)

    def validate_against(self, stream: SampleStream):
        T = len(stream)
        if not self.evaluation.calendar:
            for w in self.evaluation.widths:
                if w > T:
                    raise ConfigValidationError(f"window width {w} exceeds stream length {T}")


def _env_override(key: str, value):
    env = os.environ.get(f"LAMO_{key.upper()}")
    return env if env else value


def _resolve(path, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None and not p.exists():
        candidate = base.parent / p
        if candidate.exists():
            return candidate
    return p


def build_stream(dataset: dict, seed: int, source: Path | None = None) -> SampleStream:
    kind = dataset["kind"]
    opts = {k: v for k, v in dataset.items() if k != "kind"}
    if kind == "switch":
        return gen_switch(int(opts.get("T", 2000)), int(opts.get("seed", seed)))
    if kind == "jump_shift":
        return gen_jump_shift(ShiftScenario(
            setting=opts.get("setting", "large"), T=int(opts.get("T", 3000)), d=int(opts.get("d", 5)),
            seed=int(opts.get("seed", seed)), noise=float(opts.get("noise", 0.1)),
            segments=int(opts.get("segments", 30)), raw_groups=bool(opts.get("raw_groups", False)),
        ))
    if kind == "gefcom_synthetic":
        import tempfile

        frame = synth_gefcom_frame(int(opts.get("hours", 8760)) + int(opts.get("warmup_hours", 0)),
                                   int(opts.get("seed", seed)), opts.get("start", "2011-01-01"))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "load.csv"
            frame.to_csv(path, index=False)
            stream = load_gefcom(path, None, float(opts.get("threshold_mw", 150.0)),
                                 fallback_weeks=int(opts.get("fallback_weeks", 8)),
                                 start=opts.get("eval_start"))
        stream.meta["dataset"] = "gefcom_synthetic"
        return stream
    if kind == "gefcom":
        return load_gefcom(
            _resolve(opts["load_path"], source),
            _resolve(opts["forecast_path"], source) if opts.get("forecast_path") else None,
            float(opts.get("threshold_mw", 150.0)),
            timestamp_col=opts.get("timestamp_col", "TIMESTAMP"), load_col=opts.get("load_col", "LOAD"),
            temperature_cols=opts.get("temperature_cols"), start=opts.get("start"), end=opts.get("end"),
            fallback_weeks=int(opts.get("fallback_weeks", 8)),
        )
    if kind == "compas":
        return load_compas(_resolve(opts["path"], source), opts.get("date_col"))
    if kind == "stream_csv":
        lr = LabelRange(*opts.get("label_range", (0.0, 1.0)))
        return SampleStream.from_csv(_resolve(opts["path"], source), lr)
    raise ConfigValidationError(f"unknown dataset kind {kind!r}")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_document(doc: dict):
    if not isinstance(doc, dict):
        raise ConfigValidationError("configuration must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigValidationError(f"unsupported config schema_version {version!r}")
    ds = doc.get("dataset")
    if not isinstance(ds, dict) or ds.get("kind") not in DATASETS:
        raise ConfigValidationError(f"dataset.kind must be one of {DATASETS}")
    runs = doc.get("runs")
    if not isinstance(runs, list) or not runs:
        raise ConfigValidationError("runs must be a nonempty list")
    ids = set()
    for i, run in enumerate(runs):
        if not isinstance(run, dict):
            raise ConfigValidationError(f"runs[{i}] must be an object")
        extra = set(run) - RUN_KEYS
        if extra:
            raise ConfigValidationError(f"runs[{i}] has unknown keys {sorted(extra)}")
        rid = run.get("run_id")
        if not rid or not isinstance(rid, str):
            raise ConfigValidationError(f"runs[{i}] needs a string run_id")
        if rid in ids:
            raise ConfigValidationError(f"duplicate run_id {rid!r}")
        ids.add(rid)
    ev = doc.get("evaluation", {})
    for w in ev.get("widths", [100]):
        if not isinstance(w, int) or w < 1:
            raise ConfigValidationError(f"window widths must be positive integers, got {w!r}")
    bad = set(ev.get("metrics", ["ma"])) - set(METRICS)
    if bad:
        raise ConfigValidationError(f"unknown metrics {sorted(bad)}")


def parse_config(doc: dict, source: Path | None = None, seed: int | None = None,
                 output_dir: str | None = None) -> ExperimentConfig:
    validate_document(doc)
    g_seed = int(doc.get("seed", 0) if seed is None else seed)
    dataset = dict(doc["dataset"])
    for key in list(dataset):
        if key.endswith("_path") or key == "path":
            dataset[key] = _env_override(key, dataset[key])
            if dataset[key] and not _resolve(dataset[key], source).exists():
                raise ConfigValidationError(f"dataset file {dataset[key]!r} ({key}) does not exist")
    if seed is not None:
        dataset.pop("seed", None)
    out = output_dir or _env_override("output_dir", doc.get("output_dir", "out"))

    problem = doc.get("problem", {})
    defaults = doc.get("defaults", {})
    runs = []
    for block in doc["runs"]:
        merged = _merge({"problem": problem, **defaults}, block)
        merged.setdefault("seed", g_seed)
        if seed is not None:
            merged["seed"] = g_seed
        try:
            prob = dict(merged.pop("problem", {}))
            if "label_range" in prob:
                prob["label_range"] = tuple(prob["label_range"])
            solver = merged.pop("solver", {})
            runs.append(RunConfig(problem=prob, solver=SolverSettings(**solver), **merged))
        except (TypeError, ValueError, ConfigError) as exc:
            raise ConfigValidationError(f"run {block.get('run_id')!r}: {exc}") from exc

    ev = doc.get("evaluation", {})
    skip = ev.get("skip", SKIP_DEFAULTS.get(dataset["kind"], INTERVAL_SKIP if dataset["kind"] == "jump_shift" else 0))
    plan = EvaluationPlan(
        widths=list(ev.get("widths", [100])), metrics=list(ev.get("metrics", ["ma"])), skip=int(skip),
        calendar=bool(ev.get("calendar", dataset["kind"] == "compas")), mode=ev.get("mode", "auto"),
        cost=ev.get("cost", "squared"), figures=bool(ev.get("figures", True)),
    )
    if plan.mode not in ("auto", "realized", "expected"):
        raise ConfigValidationError(f"evaluation.mode must be auto, realized or expected, got {plan.mode!r}")
    return ExperimentConfig(doc.get("name", "experiment"), dataset, runs, plan, Path(out), g_seed, source, doc)


def load_config(path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigValidationError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, path, seed, output_dir)


def bundled_config(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.json"
