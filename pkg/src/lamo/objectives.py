"""Objective (loss) functionals for online multi-objective learning.

Every objective maps a prediction, the step context (group-function values,
baseline forecast, competitor predictions) and a label to a bounded loss in
[-1, 1].  Positive values mean the objective is being violated; the
adversary up-weights such objectives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

KINDS = (
    "multiaccuracy",
    "prediction_error",
    "multicalibration",
    "coverage",
    "quantile_pred",
    "omniprediction",
    "multigroup",
)

PROBLEMS = ("ma", "ma_pred", "mc", "mc_pred", "quantile", "omniprediction", "multigroup")


class ObjectiveError(ValueError):
    """Invalid objective parameters or inputs outside the loss domain."""


@dataclass(frozen=True)
class LabelRange:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise ObjectiveError(f"label range needs a < b, got [{self.a}, {self.b}]")

    @property
    def width(self) -> float:
        return self.b - self.a

    def contains(self, v, atol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all((v >= self.a - atol) & (v <= self.b + atol)))

    def clip(self, v):
        return np.clip(v, self.a, self.b)


UNIT = LabelRange()


@dataclass(frozen=True)
class BinGrid:
    """Partition of [0, 1] into ``m`` bins; the last bin is closed at 1."""

    m: int

    def __post_init__(self):
        if int(self.m) < 1:
            raise ObjectiveError(f"bin count must be >= 1, got {self.m}")

    @property
    def midpoints(self) -> np.ndarray:
        j = np.arange(1, self.m + 1)
        return (2 * j - 1) / (2 * self.m)

    @property
    def bins(self) -> list[tuple[float, float]]:
        return [((j - 1) / self.m, j / self.m) for j in range(1, self.m + 1)]

    def midpoint(self, j: int) -> float:
        self._check(j)
        return (2 * j - 1) / (2 * self.m)

    def index(self, p):
        """1-based bin index of ``p``; p = 1 falls in the last bin."""
        p = np.asarray(p, dtype=float)
        idx = np.floor(p * self.m).astype(int) + 1
        return np.clip(idx, 1, self.m)

    def _check(self, j):
        if not (1 <= int(j) <= self.m):
            raise ObjectiveError(f"bin index must be in 1..{self.m}, got {j}")


@dataclass(frozen=True)
class GroupFunction:
    """Named map from a feature record to [0, 1]."""

    id: str
    evaluator: Callable[[Mapping], float] = field(compare=False, repr=False)

    def __call__(self, x) -> float:
        return float(min(1.0, max(0.0, float(self.evaluator(x)))))

    @classmethod
    def interval(cls, column: str, lo: float, hi: float, id: str | None = None):
        """Indicator of ``lo <= x[column] < hi``."""
        gid = id or f"{column}_in_[{lo:g},{hi:g})"
        return cls(gid, lambda x: 1.0 if lo <= float(x[column]) < hi else 0.0)

    @classmethod
    def equals(cls, column: str, value, id: str | None = None):
        gid = id or f"{column}=={value}"
        return cls(gid, lambda x: 1.0 if x[column] == value else 0.0)

    @classmethod
    def coordinate(cls, column: str, shift: float = 0.0, scale: float = 1.0, id: str | None = None):
        """(x[column] + shift) / scale, clamped to [0, 1]."""
        gid = id or f"coord_{column}"
        return cls(gid, lambda x: (float(x[column]) + shift) / scale)

    @classmethod
    def constant(cls, value: float = 1.0, id: str = "one"):
        return cls(id, lambda x: value)


def group_from_config(cfg: Mapping) -> GroupFunction:
    """Build a group function from its run-configuration declaration."""
    kind = cfg.get("type")
    if kind == "interval":
        return GroupFunction.interval(cfg["column"], float(cfg["lo"]), float(cfg["hi"]), cfg.get("id"))
    if kind == "equals":
        return GroupFunction.equals(cfg["column"], cfg["value"], cfg.get("id"))
    if kind == "coordinate":
        return GroupFunction.coordinate(
            cfg["column"], float(cfg.get("shift", 0.0)), float(cfg.get("scale", 1.0)), cfg.get("id")
        )
    if kind == "constant":
        return GroupFunction.constant(float(cfg.get("value", 1.0)), cfg.get("id", "one"))
    raise ObjectiveError(f"unknown group function type {kind!r}")


# ---------------------------------------------------------------------------
# scalar losses


def _check_unit(name, v):
    if not (0.0 <= v <= 1.0):
        raise ObjectiveError(f"{name} must lie in [0, 1], got {v}")


def _check_label(name, v, label_range):
    if not (label_range.a - 1e-12 <= v <= label_range.b + 1e-12):
        raise ObjectiveError(f"{name}={v} outside label range [{label_range.a}, {label_range.b}]")


def _check_sign(sign):
    if sign not in (1, -1):
        raise ObjectiveError(f"sign must be +1 or -1, got {sign}")


def multiaccuracy_loss(f_value, sign, p, y, label_range: LabelRange = UNIT) -> float:
    _check_unit("f_value", f_value)
    _check_sign(sign)
    _check_label("p", p, label_range)
    _check_label("y", y, label_range)
    return sign * f_value * (y - p) / label_range.width


def squared_cost(p, y):
    return (np.asarray(y) - np.asarray(p)) ** 2


def absolute_cost(p, y):
    return np.abs(np.asarray(y) - np.asarray(p))


def pinball(theta, y, alpha):
    """Quantile loss (alpha - 1{y <= theta}) (y - theta)."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    return (alpha - (y <= theta)) * (y - theta)


# proper losses for the mean, with the power of the range width used to scale them
MEAN_COSTS: dict[str, tuple[Callable, int]] = {"squared": (squared_cost, 2)}


def _cost_entry(cost):
    try:
        return MEAN_COSTS[cost]
    except KeyError:
        raise ObjectiveError(f"unregistered cost {cost!r}; known: {sorted(MEAN_COSTS)}") from None


def prediction_error_loss(p, p_base, y, cost: str = "squared", label_range: LabelRange = UNIT) -> float:
    fn, power = _cost_entry(cost)
    for name, v in (("p", p), ("p_base", p_base), ("y", y)):
        _check_label(name, v, label_range)
    return float(fn(p, y) - fn(p_base, y)) / label_range.width**power


def multicalibration_loss(f_value, sign, bin_index, m, p, y) -> float:
    grid = BinGrid(m)
    grid._check(bin_index)
    _check_unit("f_value", f_value)
    _check_sign(sign)
    _check_label("p", p, UNIT)
    _check_label("y", y, UNIT)
    if int(grid.index(p)) != bin_index:
        return 0.0
    return sign * f_value * (y - grid.midpoint(bin_index))


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise ObjectiveError(f"alpha must lie in (0, 1), got {alpha}")


def coverage_loss(f_value, sign, theta, y, alpha) -> float:
    _check_alpha(alpha)
    _check_unit("f_value", f_value)
    _check_sign(sign)
    return sign * f_value * (float(y <= theta) - alpha)


def quantile_pred_loss(theta, theta_base, y, alpha, label_range: LabelRange = UNIT) -> float:
    _check_alpha(alpha)
    for name, v in (("theta", theta), ("theta_base", theta_base), ("y", y)):
        _check_label(name, v, label_range)
    return float(pinball(theta, y, alpha) - pinball(theta_base, y, alpha)) / label_range.width


# losses with closed-form evaluation usable by omniprediction / multigroup objectives
def _loss_class(tag: str) -> tuple[Callable, int]:
    if tag == "squared":
        return squared_cost, 2
    if tag == "absolute":
        return absolute_cost, 1
    if tag.startswith("pinball"):
        alpha = float(tag.split(":", 1)[1]) if ":" in tag else 0.5
        _check_alpha(alpha)
        return (lambda p, y: pinball(p, y, alpha)), 1
    raise ObjectiveError(f"unregistered loss class {tag!r}")


# ---------------------------------------------------------------------------
# objective records


@dataclass(frozen=True)
class StepContext:
    """Per-step side information an objective may read (never the label)."""

    fvals: np.ndarray
    baseline: float | None = None
    competitors: np.ndarray | None = None


@dataclass(frozen=True)
class Objective:
    id: str
    kind: str
    group: int | None = None
    sign: int = 1
    bin: int | None = None
    m: int | None = None
    alpha: float | None = None
    cost: str | None = None
    competitor: int | None = None
    label_range: LabelRange = UNIT

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ObjectiveError(f"unknown objective kind {self.kind!r}")

    def __call__(self, p: float, y: float, ctx: StepContext) -> float:
        lr = self.label_range
        f = float(ctx.fvals[self.group]) if self.group is not None else 1.0
        if self.kind == "multiaccuracy":
            return multiaccuracy_loss(f, self.sign, p, y, lr)
        if self.kind == "prediction_error":
            return prediction_error_loss(p, ctx.baseline, y, self.cost, lr)
        if self.kind == "multicalibration":
            return multicalibration_loss(f, self.sign, self.bin, self.m, p, y)
        if self.kind == "coverage":
            return coverage_loss(f, self.sign, p, y, self.alpha)
        if self.kind == "quantile_pred":
            return quantile_pred_loss(p, ctx.baseline, y, self.alpha, lr)
        fn, power = _loss_class(self.cost)
        diff = float(fn(p, y) - fn(ctx.competitors[self.competitor], y)) / lr.width**power
        if self.kind == "multigroup":
            diff *= f
        return diff


@dataclass(frozen=True)
class ProblemSpec:
    """Descriptor of a multi-objective problem.

    ``groups`` are the ids of the group functions (their values arrive per
    step through :class:`StepContext`); ``competitors`` name competitor
    predictors for omniprediction / multigroup; ``losses`` is the finite
    loss class for those two problems.
    """

    kind: str = "ma_pred"
    groups: tuple[str, ...] = ("one",)
    m: int = 10
    alpha: float = 0.5
    cost: str = "squared"
    competitors: tuple[str, ...] = ()
    losses: tuple[str, ...] = ("squared",)
    label_range: LabelRange = UNIT

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "competitors", tuple(self.competitors))
        object.__setattr__(self, "losses", tuple(self.losses))
        if isinstance(self.label_range, (tuple, list)):
            object.__setattr__(self, "label_range", LabelRange(*self.label_range))


def build_objective_set(spec: ProblemSpec) -> list[Objective]:
    if spec.kind not in PROBLEMS:
        raise ObjectiveError(f"unknown problem {spec.kind!r}; known: {PROBLEMS}")
    if not spec.groups:
        raise ObjectiveError("the group function class must be nonempty")
    lr = spec.label_range
    out: list[Objective] = []
    signs = ((1, "+"), (-1, "-"))

    if spec.kind in ("ma", "ma_pred"):
        for g, gid in enumerate(spec.groups):
            for s, tag in signs:
                out.append(Objective(f"ma[{gid}]{tag}", "multiaccuracy", group=g, sign=s, label_range=lr))
        if spec.kind == "ma_pred":
            _cost_entry(spec.cost)
            out.append(Objective("pred", "prediction_error", cost=spec.cost, label_range=lr))
    elif spec.kind in ("mc", "mc_pred"):
        if int(spec.m) < 1:
            raise ObjectiveError(f"bin count must be >= 1, got {spec.m}")
        if lr != UNIT:
            raise ObjectiveError("multicalibration bins are defined on the label range [0, 1]")
        for g, gid in enumerate(spec.groups):
            for s, tag in signs:
                for j in range(1, spec.m + 1):
                    out.append(
                        Objective(f"mc[{gid}]{tag}v{j}", "multicalibration", group=g, sign=s, bin=j, m=spec.m)
                    )
        if spec.kind == "mc_pred":
            _cost_entry(spec.cost)
            out.append(Objective("pred", "prediction_error", cost=spec.cost, label_range=lr))
    elif spec.kind == "quantile":
        _check_alpha(spec.alpha)
        for g, gid in enumerate(spec.groups):
            for s, tag in signs:
                out.append(Objective(f"cov[{gid}]{tag}", "coverage", group=g, sign=s, alpha=spec.alpha, label_range=lr))
        out.append(Objective("qpred", "quantile_pred", alpha=spec.alpha, label_range=lr))
    else:
        if not spec.competitors:
            raise ObjectiveError(f"{spec.kind} needs at least one competitor")
        for tag in spec.losses:
            _loss_class(tag)
        for c, cid in enumerate(spec.competitors):
            for tag in spec.losses:
                if spec.kind == "omniprediction":
                    out.append(Objective(f"omni[{tag}|{cid}]", "omniprediction", competitor=c, cost=tag, label_range=lr))
                else:
                    for g, gid in enumerate(spec.groups):
                        out.append(
                            Objective(
                                f"mg[{gid}|{tag}|{cid}]", "multigroup", group=g, competitor=c, cost=tag, label_range=lr
                            )
                        )
    return out


def expected_size(spec: ProblemSpec) -> int:
    nf = len(spec.groups)
    return {
        "ma": 2 * nf,
        "ma_pred": 2 * nf + 1,
        "mc": 2 * nf * spec.m,
        "mc_pred": 2 * nf * spec.m + 1,
        "quantile": 2 * nf + 1,
        "omniprediction": len(spec.losses) * len(spec.competitors),
        "multigroup": nf * len(spec.losses) * len(spec.competitors),
    }[spec.kind]


class ObjectiveSet(Sequence):
    """An ordered objective list with vectorized evaluation.

    ``losses(points, y, ctx)`` returns the (n_points, n_objectives) matrix of
    losses when predicting each of ``points``; it is what both the minimax
    solvers and the engine consume.
    """

    def __init__(self, objectives: Sequence[Objective], spec: ProblemSpec | None = None):
        self.objectives = list(objectives)
        if not self.objectives:
            raise ObjectiveError("empty objective set")
        ids = [o.id for o in self.objectives]
        if len(set(ids)) != len(ids):
            raise ObjectiveError("objective ids must be unique")
        self.spec = spec
        self.ids = ids
        self.label_range = self.objectives[0].label_range
        kinds = np.array([o.kind for o in self.objectives])
        self.kinds = kinds
        self.group = np.array([o.group if o.group is not None else -1 for o in self.objectives])
        self.sign = np.array([o.sign for o in self.objectives], dtype=float)
        self.bin = np.array([o.bin or 0 for o in self.objectives])
        self.m = max((o.m or 0) for o in self.objectives) or None
        self._masks = {k: kinds == k for k in KINDS}
        self.alpha = next((o.alpha for o in self.objectives if o.alpha is not None), None)
        cost = next((o.cost for o in self.objectives if o.kind == "prediction_error"), None)
        self.cost = cost
        self._loss_cls = [
            (i, o.competitor, o.kind == "multigroup", *_loss_class(o.cost))
            for i, o in enumerate(self.objectives)
            if o.kind in ("omniprediction", "multigroup")
        ]

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "ObjectiveSet":
        return cls(build_objective_set(spec), spec)

    def __len__(self):
        return len(self.objectives)

    def __getitem__(self, i):
        return self.objectives[i]

    def has(self, kind: str) -> bool:
        return bool(self._masks[kind].any())

    @property
    def kind_set(self) -> frozenset:
        return frozenset(self.kinds.tolist())

    def index(self, objective_id: str) -> int:
        return self.ids.index(objective_id)

    def _f(self, ctx):
        fv = np.asarray(ctx.fvals, dtype=float)
        return np.where(self.group >= 0, fv[np.maximum(self.group, 0)], 1.0)

    def losses(self, points, y: float, ctx: StepContext) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        lr = self.label_range
        out = np.zeros((pts.size, len(self)))
        f = self._f(ctx)
        M = self._masks
        if M["multiaccuracy"].any():
            k = M["multiaccuracy"]
            out[:, k] = (self.sign[k] * f[k])[None, :] * ((y - pts) / lr.width)[:, None]
        if M["prediction_error"].any():
            fn, power = _cost_entry(self.cost)
            out[:, M["prediction_error"]] = ((fn(pts, y) - fn(ctx.baseline, y)) / lr.width**power)[:, None]
        if M["multicalibration"].any():
            k = M["multicalibration"]
            grid = BinGrid(self.m)
            idx = grid.index(pts)
            mids = grid.midpoints[self.bin[k] - 1]
            hit = idx[:, None] == self.bin[k][None, :]
            out[:, k] = hit * (self.sign[k] * f[k] * (y - mids))[None, :]
        if M["coverage"].any():
            k = M["coverage"]
            ind = (y <= pts).astype(float) - self.alpha
            out[:, k] = (self.sign[k] * f[k])[None, :] * ind[:, None]
        if M["quantile_pred"].any():
            d = (pinball(pts, y, self.alpha) - pinball(ctx.baseline, y, self.alpha)) / lr.width
            out[:, M["quantile_pred"]] = d[:, None]
        for i, comp, grouped, fn, power in self._loss_cls:
            d = (fn(pts, y) - fn(ctx.competitors[comp], y)) / lr.width**power
            out[:, i] = d * (f[i] if grouped else 1.0)
        return out

    def ma_coefficient(self, q, ctx: StepContext) -> float:
        """Net residual pressure sum_{f,sigma} q * sigma * f(x)."""
        k = self._masks["multiaccuracy"]
        return float(np.sum(np.asarray(q)[k] * self.sign[k] * self._f(ctx)[k]))

    def weight_of(self, q, kind: str) -> float:
        return float(np.sum(np.asarray(q)[self._masks[kind]]))
