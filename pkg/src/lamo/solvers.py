"""Learner best responses: argmin over prediction policies of the worst-case
weighted objective.

Mean estimation with multiaccuracy (+ squared prediction error) has a closed
form.  Everything else is reduced to a finite zero-sum game between a
prediction grid (rows, minimizing) and a label grid (columns, maximizing).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .objectives import LabelRange, ObjectiveSet, StepContext, UNIT, BinGrid, pinball

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
MW_MAX_ITER = 100_000
EXACT_MAX_DIM = 256


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


@dataclass
class PredictionPolicy:
    """Either a deterministic value or a finite distribution over support points."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.support = np.atleast_1d(np.asarray(self.support, dtype=float))
        self.probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if self.support.shape != self.probs.shape:
            raise ValueError("support and probabilities must align")
        if np.any(self.probs < -1e-12) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("policy probabilities must form a distribution")

    @classmethod
    def point(cls, p: float) -> "PredictionPolicy":
        return cls(np.array([float(p)]), np.array([1.0]))

    @property
    def deterministic(self) -> bool:
        return self.support.size == 1

    @property
    def mean(self) -> float:
        return float(self.probs @ self.support)

    def sample(self, rng: np.random.Generator) -> float:
        if self.deterministic:
            return float(self.support[0])
        return float(self.support[rng.choice(self.support.size, p=self.probs)])

    def compact(self, eps: float = 1e-12) -> "PredictionPolicy":
        keep = self.probs > eps
        pr = self.probs[keep]
        return PredictionPolicy(self.support[keep], pr / pr.sum())

    def encode(self) -> str:
        return ";".join(f"{s!r}:{p!r}" for s, p in zip(self.support.tolist(), self.probs.tolist()))

    @classmethod
    def decode(cls, text: str) -> "PredictionPolicy":
        pairs = [item.split(":") for item in text.split(";") if item]
        return cls([float(a) for a, _ in pairs], [float(b) for _, b in pairs])


@dataclass
class GameMatrix:
    payoff: np.ndarray
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None

    def __post_init__(self):
        self.payoff = np.atleast_2d(np.asarray(self.payoff, dtype=float))
        if self.payoff.size == 0 or not np.all(np.isfinite(self.payoff)):
            raise ValueError("game matrix must be nonempty and finite")


@dataclass
class GameSolution:
    strategy: np.ndarray
    value: float
    residual: float = 0.0
    iterations: int = 0
    method: str = ""


@dataclass
class SolverSettings:
    tol: float = DEFAULT_TOL
    grid_size: int = 101
    max_iter: int = MW_MAX_ITER
    exact_max_dim: int = EXACT_MAX_DIM


@dataclass
class BestResponse:
    policy: PredictionPolicy
    value: float
    residual: float = 0.0
    iterations: int = 0
    method: str = "closed_form"


# ---------------------------------------------------------------------------
# zero-sum games


def _solve_two_columns(U: np.ndarray) -> GameSolution:
    """Exact min-max for an n x 2 payoff: optimal support has size <= 2."""
    n = U.shape[0]
    pure = U.max(axis=1)
    best = int(np.argmin(pure))
    best_val = float(pure[best])
    x = np.zeros(n)
    x[best] = 1.0
    # a mixture of rows i, k helps only if i is better against column 0 and k against column 1
    d = U[:, 0] - U[:, 1]
    lo = np.flatnonzero(d < 0)
    hi = np.flatnonzero(d > 0)
    if lo.size and hi.size:
        di = d[lo][:, None]
        dk = d[hi][None, :]
        lam = dk / (dk - di)  # weight on the row from ``lo`` where both columns tie
        val = lam * U[lo, 0][:, None] + (1 - lam) * U[hi, 0][None, :]
        a, b = np.unravel_index(np.argmin(val), val.shape)
        if val[a, b] < best_val - 1e-15:
            best_val = float(val[a, b])
            x = np.zeros(n)
            x[lo[a]] = lam[a, b]
            x[hi[b]] += 1 - lam[a, b]
    value = float((x @ U).max())
    return GameSolution(x, value, 0.0, 0, "pairs")


def _solve_lp(U: np.ndarray) -> GameSolution:
    n, k = U.shape
    # variables: x (n), v ; minimize v s.t. U^T x <= v, sum x = 1
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([U.T, -np.ones((k, 1))])
    b_ub = np.zeros(k)
    A_eq = np.hstack([np.ones((1, n)), np.zeros((1, 1))])
    bounds = [(0, None)] * n + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"linear program failed: {res.message}", np.inf)
    x = np.clip(res.x[:n], 0.0, None)
    x /= x.sum()
    y = np.clip(-res.ineqlin.marginals, 0.0, None)
    y = y / y.sum() if y.sum() > 0 else np.full(k, 1.0 / k)
    upper = float((x @ U).max())
    lower = float((U @ y).min())
    return GameSolution(x, upper, max(0.0, upper - lower), int(getattr(res, "nit", 0)), "lp")


def _solve_mw(U: np.ndarray, tol: float, max_iter: int, eta: float = 0.25) -> GameSolution:
    """Optimistic multiplicative-weights self-play with averaged strategies.

    Each player's exponent adds the last observed gradient a second time
    (a prediction of the next one), which brings the duality gap of the
    averages down at rate O(log(n) / T) instead of O(1 / sqrt(T)).
    """
    n, k = U.shape
    lo = float(U.min())
    span = max(float(U.max()) - lo, 1e-12)
    Us = (U - lo) / span
    gx = np.zeros(n)  # cumulative row losses
    gy = np.zeros(k)  # cumulative column gains
    last_x = np.zeros(n)
    last_y = np.zeros(k)
    xs = np.zeros(n)
    ys = np.zeros(k)
    gap = np.inf
    for it in range(1, max_iter + 1):
        lx = -eta * (gx + last_x)
        x = np.exp(lx - lx.max())
        x /= x.sum()
        ly = eta * (gy + last_y)
        y = np.exp(ly - ly.max())
        y /= y.sum()
        xs += x
        ys += y
        last_x = Us @ y
        last_y = x @ Us
        gx += last_x
        gy += last_y
        if it % 50 == 0 or it == max_iter:
            xa = xs / it
            ya = ys / it
            gap = float((xa @ U).max() - (U @ ya).min())
            if gap <= tol:
                return GameSolution(xa, float((xa @ U).max()), gap, it, "mw")
    raise ConvergenceError(f"multiplicative weights did not reach tol {tol} in {max_iter} iterations", gap)


def solve_zero_sum(matrix, tol: float = DEFAULT_TOL, max_iter: int = MW_MAX_ITER,
                   exact_max_dim: int = EXACT_MAX_DIM) -> GameSolution:
    """Row player's minimax mixture and the game value.

    Two-column games are solved exactly by enumerating pure rows and row
    pairs; games with both dimensions at most ``exact_max_dim`` go through an
    LP; larger ones through multiplicative-weights self-play.
    """
    U = matrix.payoff if isinstance(matrix, GameMatrix) else GameMatrix(matrix).payoff
    if tol <= 0:
        raise ValueError("tol must be positive")
    if U.shape[1] == 1:
        x = np.zeros(U.shape[0])
        x[int(np.argmin(U[:, 0]))] = 1.0
        return GameSolution(x, float(U[:, 0].min()), 0.0, 0, "pure")
    if U.shape[1] == 2:
        return _solve_two_columns(U)
    if max(U.shape) <= exact_max_dim:
        sol = _solve_lp(U)
        if sol.residual <= tol:
            return sol
        log.debug("LP duality gap %.3g above tol, falling back to MW", sol.residual)
    return _solve_mw(U, tol, max_iter)


# ---------------------------------------------------------------------------
# closed forms for mean estimation


def solve_mean_ma_only(A: float, label_range: LabelRange = UNIT) -> float:
    """b when the net residual pressure is positive, a otherwise."""
    return label_range.b if A > 0 else label_range.a


def solve_mean_ma_pred(A: float, q_pred: float, p_base: float, label_range: LabelRange = UNIT) -> float:
    """Minimizer of the max over the two label endpoints.

    With losses scaled by the range width w, the endpoint payoffs cross at
    p = p_base + A * w / (2 q_pred); the envelope is minimized there, clipped.
    """
    if q_pred <= 0:
        return solve_mean_ma_only(A, label_range)
    p = p_base + A * label_range.width / (2.0 * q_pred)
    return float(np.clip(p, label_range.a, label_range.b))


# ---------------------------------------------------------------------------
# game builders


def build_game(objset: ObjectiveSet, q, ctx: StepContext, rows, cols) -> GameMatrix:
    """Payoff u(p_i, y_j) = sum_l q_l l(p_i, x, y_j) over prediction and label grids."""
    q = np.asarray(q, dtype=float)
    U = np.column_stack([objset.losses(rows, y, ctx) @ q for y in cols])
    return GameMatrix(U, np.asarray(rows, float), np.asarray(cols, float))


def solve_mc_minimax(objset: ObjectiveSet, q, ctx: StepContext, settings: SolverSettings | None = None) -> BestResponse:
    """Mixture over bin midpoints against labels {0, 1}."""
    settings = settings or SolverSettings()
    mids = BinGrid(objset.m).midpoints
    game = build_game(objset, q, ctx, mids, np.array([0.0, 1.0]))
    sol = solve_zero_sum(game, settings.tol, settings.max_iter, settings.exact_max_dim)
    policy = PredictionPolicy(mids, sol.strategy).compact()
    return BestResponse(policy, sol.value, sol.residual, sol.iterations, sol.method)


def uniform_grid(label_range: LabelRange, size: int) -> np.ndarray:
    if size < 2:
        raise ValueError("grid needs at least two points")
    return np.linspace(label_range.a, label_range.b, size)


def solve_grid_minimax(objset: ObjectiveSet, q, ctx: StepContext, settings: SolverSettings | None = None) -> BestResponse:
    """Generic finite game on a uniform G x G prediction/label grid."""
    settings = settings or SolverSettings()
    grid = uniform_grid(objset.label_range, settings.grid_size)
    game = build_game(objset, q, ctx, grid, grid)
    sol = solve_zero_sum(game, settings.tol, settings.max_iter, settings.exact_max_dim)
    policy = PredictionPolicy(grid, sol.strategy).compact()
    return BestResponse(policy, sol.value, sol.residual, sol.iterations, sol.method)


def solve_quantile_minimax(objset: ObjectiveSet, q, ctx: StepContext,
                           settings: SolverSettings | None = None) -> BestResponse:
    """Randomized quantile prediction; the coverage payoff is discontinuous in
    theta so the minimizer generally needs mixing."""
    return solve_grid_minimax(objset, q, ctx, settings)


def best_response(objset: ObjectiveSet, q, ctx: StepContext, settings: SolverSettings | None = None) -> BestResponse:
    kinds = objset.kind_set
    lr = objset.label_range
    if kinds <= {"multiaccuracy", "prediction_error"} and objset.cost in (None, "squared"):
        A = objset.ma_coefficient(q, ctx)
        q_pred = objset.weight_of(q, "prediction_error")
        if q_pred > 0:
            p = solve_mean_ma_pred(A, q_pred, ctx.baseline, lr)
        else:
            p = solve_mean_ma_only(A, lr)
        # worst case over the two endpoints is the game value
        val = max(float(objset.losses([p], y, ctx)[0] @ q) for y in (lr.a, lr.b))
        return BestResponse(PredictionPolicy.point(p), val)
    if kinds <= {"multicalibration", "prediction_error"}:
        return solve_mc_minimax(objset, q, ctx, settings)
    if kinds <= {"coverage", "quantile_pred"}:
        return solve_quantile_minimax(objset, q, ctx, settings)
    return solve_grid_minimax(objset, q, ctx, settings)


# ---------------------------------------------------------------------------
# online baseline


@dataclass
class BaselineParams:
    beta: np.ndarray
    step: float = 0.01

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("baseline coefficients must be finite")

    def predict(self, x, label_range: LabelRange = UNIT) -> float:
        return float(label_range.clip(self.beta @ np.asarray(x, dtype=float)))


def squared_loss_grad(beta, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -2.0 * (y - beta @ x) * x


def ogd_baseline_step(params: BaselineParams, x, y: float, loss: str = "squared") -> BaselineParams:
    """One online gradient step on the linear baseline f(x) = beta^T x."""
    if loss != "squared":
        raise ValueError(f"unsupported baseline loss {loss!r}")
    x = np.asarray(x, dtype=float)
    if x.shape != params.beta.shape:
        raise ValueError(f"feature dimension {x.shape} does not match coefficients {params.beta.shape}")
    return BaselineParams(params.beta - params.step * squared_loss_grad(params.beta, x, y), params.step)
