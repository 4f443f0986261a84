"""The learner-vs-adversary loop and its trace.

Each step: read the side information for x_t, solve the learner's minimax
problem against the current weights, emit (and, if randomized, sample) a
prediction, reveal y_t, evaluate every objective, update the weights.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .data import SampleStream
from .objectives import LabelRange, ObjectiveSet, ProblemSpec, StepContext
from .solvers import (
    BaselineParams,
    BestResponse,
    ConvergenceError,
    PredictionPolicy,
    SolverSettings,
    best_response,
    ogd_baseline_step,
)
from .weights import (
    AdaptiveObjectivesHedge,
    FixedShare,
    Hedge,
    WeightLearner,
    mc_optimal_eta,
    optimal_eta,
    width_eta,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ETA_MODES = ("optimal", "width", "adaptive", "mc_optimal")
LEARNER_CHOICES = ("hedge", "fixed_share", "adaptive_objectives", "baseline")
BASELINE_SOURCES = ("external", "ogd", "none")


class ConfigError(ValueError):
    """Inconsistent run configuration."""


@dataclass
class RunConfig:
    """One learner configuration.

    ``eta`` is a number or one of ``optimal`` (sqrt(log N / T) times
    ``eta_scale``), ``width`` (tuned to interval width ``tau``), ``adaptive``
    (trailing-window schedule, Fixed Share only) and ``mc_optimal``.
    ``gamma=None`` means 1/(2 tau) for Fixed Share.  ``learner="baseline"``
    passes the baseline forecast through unchanged.
    """

    run_id: str = "run"
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    learner: str = "fixed_share"
    eta: float | str | None = None
    eta_scale: float = 1.0
    gamma: float | None = None
    tau: int = 100
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0
    baseline: str = "external"
    ogd_step: float = 0.01
    ogd_intercept: bool = True
    weight_stride: int = 1

    def __post_init__(self):
        if isinstance(self.problem, dict):
            self.problem = ProblemSpec(**self.problem)
        if isinstance(self.solver, dict):
            self.solver = SolverSettings(**self.solver)
        if self.eta is None:
            self.eta = "adaptive" if self.learner == "fixed_share" else "optimal"
        self.validate()

    def validate(self):
        if self.learner not in LEARNER_CHOICES:
            raise ConfigError(f"learner must be one of {LEARNER_CHOICES}, got {self.learner!r}")
        if self.baseline not in BASELINE_SOURCES:
            raise ConfigError(f"baseline must be one of {BASELINE_SOURCES}, got {self.baseline!r}")
        if int(self.tau) < 1:
            raise ConfigError("tau must be >= 1")
        if isinstance(self.eta, str):
            if self.eta not in ETA_MODES:
                raise ConfigError(f"eta mode must be a number or one of {ETA_MODES}")
            if self.eta == "adaptive" and self.learner != "fixed_share":
                raise ConfigError("the adaptive eta schedule is only offered with fixed_share")
        else:
            eta = float(self.eta)
            if not eta > 0:
                raise ConfigError("eta must be positive")
            if self.learner == "fixed_share" and eta > 1:
                raise ConfigError("fixed eta must be <= 1 for fixed_share")
        if self.gamma is not None and not 0.0 <= float(self.gamma) <= 0.5:
            raise ConfigError("gamma must lie in [0, 1/2]")
        if self.weight_stride < 1:
            raise ConfigError("weight_stride must be >= 1")

    @property
    def fixed_eta(self) -> bool:
        return self.eta != "adaptive"

    @property
    def effective_gamma(self) -> float:
        if self.learner != "fixed_share":
            return 0.0
        return 1.0 / (2 * self.tau) if self.gamma is None else float(self.gamma)

    def resolve_eta(self, n_objectives: int, horizon: int) -> float | str:
        if not isinstance(self.eta, str):
            return float(self.eta)
        if self.eta == "adaptive":
            return "adaptive"
        if self.eta == "width":
            return width_eta(n_objectives, self.tau)
        if self.eta == "mc_optimal":
            return mc_optimal_eta(n_objectives, self.problem.m, horizon)
        n = n_objectives
        if self.learner == "adaptive_objectives":
            n = n_objectives * horizon * (horizon + 1) / 2
        eta = optimal_eta(n, horizon, self.eta_scale)
        return min(eta, 1.0) if self.learner == "fixed_share" else eta

    def to_dict(self) -> dict:
        d = asdict(self)
        d["problem"]["label_range"] = [self.problem.label_range.a, self.problem.label_range.b]
        for k in ("groups", "competitors", "losses"):
            d["problem"][k] = list(d["problem"][k])
        return d


@dataclass
class StepRecord:
    t: int
    timestamp: object
    y: float
    baseline: float | None
    policy: PredictionPolicy
    prediction: float
    fvals: np.ndarray
    expected_losses: np.ndarray
    realized_losses: np.ndarray
    q: np.ndarray
    eta: float
    game_value: float
    residual: float
    iterations: int = 0


@dataclass
class RunTrace:
    config: RunConfig
    objective_ids: list[str]
    group_ids: list[str]
    records: list[StepRecord] = field(default_factory=list)
    status: str = "ok"
    error: str = ""
    elapsed: float = 0.0
    eta_resolved: float | str | None = None
    label_range: LabelRange = field(default_factory=LabelRange)

    def __len__(self):
        return len(self.records)

    @property
    def run_id(self) -> str:
        return self.config.run_id

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def _stack(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @cached_property
    def y(self):
        return self._stack("y")

    @cached_property
    def predictions(self):
        return self._stack("prediction")

    @cached_property
    def policy_means(self):
        return np.array([r.policy.mean for r in self.records])

    @cached_property
    def baseline(self):
        if not self.records or self.records[0].baseline is None:
            return None
        return self._stack("baseline")

    @cached_property
    def fvals(self):
        return np.vstack([r.fvals for r in self.records]) if self.records else np.zeros((0, len(self.group_ids)))

    @cached_property
    def expected_losses(self):
        return np.vstack([r.expected_losses for r in self.records])

    @cached_property
    def realized_losses(self):
        return np.vstack([r.realized_losses for r in self.records])

    @cached_property
    def q(self):
        return np.vstack([r.q for r in self.records])

    @cached_property
    def etas(self):
        return self._stack("eta")

    @cached_property
    def game_values(self):
        return self._stack("game_value")

    @cached_property
    def timestamps(self):
        return np.array([r.timestamp for r in self.records])

    @property
    def randomized(self) -> bool:
        return any(not r.policy.deterministic for r in self.records)

    def arrays(self) -> "TraceArrays":
        """Column view shared with traces read back from disk."""
        n = len(self.objective_ids)
        empty = np.zeros((0, n))
        return TraceArrays(
            meta={k: str(v) for k, v in self.metadata().items()},
            y=self.y, prediction=self.predictions, policy_mean=self.policy_means, baseline=self.baseline,
            fvals=self.fvals,
            expected_losses=self.expected_losses if self.records else empty,
            realized_losses=self.realized_losses if self.records else empty,
            q=self.q if self.records else empty,
            eta=self.etas, game_value=self.game_values,
            objective_ids=list(self.objective_ids), group_ids=list(self.group_ids),
            timestamps=self.timestamps, policies=[r.policy for r in self.records],
        )

    # -- serialization -----------------------------------------------------

    def header(self) -> list[str]:
        cols = ["t", "timestamp", "y", "baseline", "prediction", "policy_mean", "policy", "eta",
                "game_value", "residual", "iterations"]
        cols += [f"f:{g}" for g in self.group_ids]
        cols += [f"el:{o}" for o in self.objective_ids]
        cols += [f"rl:{o}" for o in self.objective_ids]
        cols += [f"q:{o}" for o in self.objective_ids]
        return cols

    def write_csv(self, path):
        stride = self.config.weight_stride
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for r in self.records:
                row = [r.t, _fmt_ts(r.timestamp), repr(r.y), "" if r.baseline is None else repr(r.baseline),
                       repr(r.prediction), repr(r.policy.mean), r.policy.encode(), repr(r.eta),
                       repr(r.game_value), repr(r.residual), r.iterations]
                row += [repr(v) for v in r.fvals.tolist()]
                row += [repr(v) for v in r.expected_losses.tolist()]
                row += [repr(v) for v in r.realized_losses.tolist()]
                if (r.t - 1) % stride == 0:
                    row += [repr(v) for v in r.q.tolist()]
                else:
                    row += [""] * len(self.objective_ids)
                w.writerow(row)

    def metadata(self) -> dict:
        c = self.config
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": c.run_id,
            "status": self.status,
            "error": self.error,
            "problem": c.problem.kind,
            "learner": c.learner,
            "eta_mode": c.eta if isinstance(c.eta, str) else "fixed",
            "eta": self.eta_resolved if self.eta_resolved is not None else "",
            "fixed_eta": c.fixed_eta,
            "gamma": c.effective_gamma,
            "tau": c.tau,
            "n_objectives": len(self.objective_ids),
            "objective_ids": ",".join(self.objective_ids),
            "group_ids": ",".join(self.group_ids),
            "label_range": f"{self.label_range.a!r},{self.label_range.b!r}",
            "m": c.problem.m,
            "alpha": c.problem.alpha,
            "cost": c.problem.cost,
            "solver_tol": c.solver.tol,
            "grid_size": c.solver.grid_size,
            "seed": c.seed,
            "baseline_source": c.baseline,
            "weight_stride": c.weight_stride,
            "T": len(self.records),
        }

    def write_meta(self, path, include_timing: bool = True):
        meta = self.metadata()
        if include_timing:
            meta["elapsed_seconds"] = f"{self.elapsed:.3f}"
        with open(path, "w") as fh:
            for k, v in meta.items():
                fh.write(f"{k} = {v}\n")

    def save(self, directory, include_timing: bool = True) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"trace_{self.run_id}.csv"
        meta_path = directory / f"trace_{self.run_id}.meta"
        self.write_csv(csv_path)
        self.write_meta(meta_path, include_timing)
        return csv_path, meta_path


def _fmt_ts(ts) -> str:
    if isinstance(ts, np.datetime64):
        return str(np.datetime_as_string(ts, unit="s"))
    if isinstance(ts, (np.integer, int)):
        return str(int(ts))
    return str(ts)


def read_meta(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" = ")
            meta[key.strip()] = value
    return meta


@dataclass
class TraceArrays:
    """Columns of a serialized trace, as read back for verification."""

    meta: dict
    y: np.ndarray
    prediction: np.ndarray
    policy_mean: np.ndarray
    baseline: np.ndarray | None
    fvals: np.ndarray
    expected_losses: np.ndarray
    realized_losses: np.ndarray
    q: np.ndarray
    eta: np.ndarray
    game_value: np.ndarray
    objective_ids: list[str]
    group_ids: list[str]
    timestamps: np.ndarray | None = None
    policies: list[PredictionPolicy] | None = None

    def __len__(self):
        return len(self.y)

    @property
    def randomized(self) -> bool:
        return self.policies is not None and any(not pol.deterministic for pol in self.policies)


class SchemaError(ValueError):
    pass


def read_trace(csv_path, meta_path=None) -> TraceArrays:
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".meta")
    if not meta_path.exists():
        raise SchemaError(f"missing metadata sidecar {meta_path}")
    meta = read_meta(meta_path)
    if str(meta.get("schema_version")) != str(SCHEMA_VERSION):
        raise SchemaError(f"unsupported trace schema {meta.get('schema_version')!r}")
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("empty trace file")
    head, body = rows[0], rows[1:]
    col = {name: i for i, name in enumerate(head)}
    oids = [h[3:] for h in head if h.startswith("el:")]
    gids = [h[2:] for h in head if h.startswith("f:")]
    for needed in ("y", "prediction", "policy_mean", "eta", "game_value"):
        if needed not in col:
            raise SchemaError(f"trace lacks column {needed!r}")

    def grab(names):
        idx = [col[n] for n in names]
        return np.array([[float(r[i]) if r[i] != "" else np.nan for i in idx] for r in body]).reshape(len(body), len(idx))

    base_raw = [r[col["baseline"]] for r in body]
    return TraceArrays(
        meta=meta,
        y=grab(["y"])[:, 0],
        prediction=grab(["prediction"])[:, 0],
        policy_mean=grab(["policy_mean"])[:, 0],
        baseline=None if any(b == "" for b in base_raw) else np.array([float(b) for b in base_raw]),
        fvals=grab([f"f:{g}" for g in gids]),
        expected_losses=grab([f"el:{o}" for o in oids]),
        realized_losses=grab([f"rl:{o}" for o in oids]),
        q=grab([f"q:{o}" for o in oids]),
        eta=grab(["eta"])[:, 0],
        game_value=grab(["game_value"])[:, 0],
        objective_ids=oids,
        group_ids=gids,
        timestamps=_parse_ts([r[col["timestamp"]] for r in body]) if "timestamp" in col else None,
        policies=[PredictionPolicy.decode(r[col["policy"]]) for r in body] if "policy" in col else None,
    )


def _parse_ts(values: list[str]) -> np.ndarray:
    try:
        return np.array([int(v) for v in values])
    except ValueError:
        pass
    try:
        return np.array(values, dtype="datetime64[s]")
    except ValueError:
        return np.array(values, dtype=object)


# ---------------------------------------------------------------------------
# the game loop


def make_learner(config: RunConfig, n: int, horizon: int) -> tuple[WeightLearner | None, float | str]:
    eta = config.resolve_eta(n, horizon)
    if config.learner == "baseline":
        return None, eta
    if config.learner == "hedge":
        return Hedge(n, eta), eta
    if config.learner == "fixed_share":
        return FixedShare(n, eta, config.effective_gamma, config.tau), eta
    return AdaptiveObjectivesHedge(n, eta, horizon), eta


class OnlineGame:
    """Step-by-step driver; ``predict`` never sees the label of its step."""

    def __init__(self, objset: ObjectiveSet, learner: WeightLearner | None, settings: SolverSettings,
                 rng: np.random.Generator):
        self.objset = objset
        self.learner = learner
        self.settings = settings
        self.rng = rng
        self.n = len(objset)
        self._pending = None

    @property
    def weights(self) -> np.ndarray:
        if self.learner is None:
            return np.full(self.n, 1.0 / self.n)
        return np.array(self.learner.weights, copy=True)

    def predict(self, ctx: StepContext) -> tuple[float, BestResponse]:
        if self._pending is not None:
            raise RuntimeError("predict called twice without observe")
        q = self.weights
        if self.learner is None:
            br = BestResponse(PredictionPolicy.point(ctx.baseline), float("nan"))
        else:
            br = best_response(self.objset, q, ctx, self.settings)
        p = br.policy.sample(self.rng)
        self._pending = (ctx, q, br, p)
        return p, br

    def observe(self, y: float):
        if self._pending is None:
            raise RuntimeError("observe called before predict")
        ctx, q, br, p = self._pending
        self._pending = None
        pol = br.policy
        expected = pol.probs @ self.objset.losses(pol.support, y, ctx)
        realized = expected if pol.deterministic else self.objset.losses([p], y, ctx)[0]
        eta = float("nan")
        if self.learner is not None:
            self.learner.update(expected)
            eta = float(self.learner.eta)
        return q, expected, realized, eta


def _features(stream: SampleStream, t: int, intercept: bool) -> np.ndarray:
    x = stream.features[t] if stream.features is not None else np.zeros(0)
    return np.r_[1.0, x] if intercept else x


def run_episode(config: RunConfig, stream: SampleStream, adversary=None) -> RunTrace:
    """Play the full game on ``stream``; solver failures abort with a partial trace.

    ``adversary(t, p, best_response, ctx) -> y`` replaces the stream labels
    with labels chosen after seeing the prediction (t is 0-based).
    """
    T = len(stream)
    if T == 0:
        raise ConfigError("empty stream")
    spec = config.problem
    if tuple(spec.groups) != tuple(stream.group_ids):
        spec = replace(spec, groups=tuple(stream.group_ids))
    if spec.label_range != stream.label_range:
        spec = replace(spec, label_range=stream.label_range)
    if spec.kind in ("omniprediction", "multigroup") and tuple(spec.competitors) != tuple(stream.competitor_ids):
        spec = replace(spec, competitors=tuple(stream.competitor_ids))
    config = replace(config, problem=spec)
    objset = ObjectiveSet.from_spec(spec)
    needs_base = objset.has("prediction_error") or objset.has("quantile_pred") or config.learner == "baseline"
    if config.baseline == "external" and needs_base and stream.baseline is None:
        raise ConfigError(f"run {config.run_id!r} needs a baseline column the stream does not have")
    if config.baseline == "ogd" and stream.features is None and not config.ogd_intercept:
        raise ConfigError("online baseline needs features")
    if spec.kind in ("omniprediction", "multigroup") and stream.competitors is None:
        raise ConfigError("omniprediction / multigroup runs need competitor predictions in the stream")

    learner, eta = make_learner(config, len(objset), T)
    rng = np.random.default_rng(config.seed)
    game = OnlineGame(objset, learner, config.solver, rng)
    trace = RunTrace(config, list(objset.ids), list(stream.group_ids), eta_resolved=eta, label_range=stream.label_range)
    lr = stream.label_range
    params = None
    if config.baseline == "ogd":
        dim = _features(stream, 0, config.ogd_intercept).size
        params = BaselineParams(np.zeros(dim), config.ogd_step)

    start = time.perf_counter()
    for t in range(T):
        if params is not None:
            x = _features(stream, t, config.ogd_intercept)
            base = params.predict(x, lr)
        elif stream.baseline is not None:
            base = float(stream.baseline[t])
        else:
            base = None
        ctx = StepContext(
            stream.fvals[t], base, None if stream.competitors is None else stream.competitors[t]
        )
        try:
            p, br = game.predict(ctx)
        except ConvergenceError as exc:
            trace.status = "solver_failure"
            trace.error = f"step {t + 1}: {exc}"
            log.warning("run %s aborted: %s", config.run_id, trace.error)
            break
        y = float(stream.y[t]) if adversary is None else float(adversary(t, p, br, ctx))
        if not lr.contains(y):
            raise ConfigError(f"adversary label {y} outside the label range")
        q, expected, realized, eta_t = game.observe(y)
        trace.records.append(StepRecord(
            t=t + 1, timestamp=stream.timestamps[t], y=y, baseline=base, policy=br.policy, prediction=p,
            fvals=np.asarray(stream.fvals[t], dtype=float), expected_losses=expected, realized_losses=realized,
            q=q, eta=eta_t, game_value=br.value, residual=br.residual, iterations=br.iterations,
        ))
        if params is not None:
            params = ogd_baseline_step(params, x, y)
    trace.elapsed = time.perf_counter() - start
    return trace


def _run_one(args):
    config, stream = args
    try:
        return run_episode(config, stream)
    except Exception as exc:  # isolate per-run failures
        log.warning("run %s failed: %s", config.run_id, exc)
        return RunTrace(config, [], list(stream.group_ids), status="error", error=f"{type(exc).__name__}: {exc}")


def run_matrix(configs: list[RunConfig], stream: SampleStream, workers: int = 1) -> list[RunTrace]:
    """Independent runs over one stream; output order follows ``configs``."""
    if not configs:
        return []
    jobs = [(c, stream) for c in configs]
    if workers <= 1 or len(configs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
