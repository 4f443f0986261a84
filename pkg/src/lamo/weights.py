"""Adversary weight learners over the objective simplex.

All updates run in log space with max-subtraction so that long horizons do
not overflow.  Learners own mutable state and are driven by one run loop.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

ETA_EPS = 1e-12
SIMPLEX_TOL = 1e-12


class WeightError(ValueError):
    pass


@dataclass
class WeightVector:
    weights: np.ndarray
    t: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        check_simplex(self.weights)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.full(n, 1.0 / n), 1)


def check_simplex(q, tol: float = 1e-9):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any(q < 0) or abs(q.sum() - 1.0) > tol:
        raise WeightError("weights must be a nonnegative vector summing to 1")


def _check_losses(losses, n):
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (n,):
        raise WeightError(f"expected {n} losses, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise WeightError("losses must be finite")
    return losses


def hedge_update(q, losses, eta: float) -> np.ndarray:
    """q'_l proportional to q_l * exp(eta * loss_l)."""
    q = np.asarray(q, dtype=float)
    check_simplex(q)
    losses = _check_losses(losses, q.size)
    if eta < 0:
        raise WeightError("eta must be nonnegative")
    with np.errstate(divide="ignore"):
        logits = np.log(q) + eta * losses
    z = logsumexp(logits)
    assert np.isfinite(z), "hedge normalizer vanished"
    return np.exp(logits - z)


def fixed_share_update(q, losses, eta: float, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise WeightError(f"gamma must lie in [0, 1], got {gamma}")
    qt = hedge_update(q, losses, eta)
    if gamma == 0.0:
        return qt
    return (1.0 - gamma) * qt + gamma / qt.size


def width_eta(n_objectives: int, tau: int) -> float:
    """Interval-tuned rate sqrt((log(2 tau |L|) + 1) / tau), capped at 1."""
    return min(1.0, math.sqrt((math.log(n_objectives * 2 * tau) + 1.0) / tau))


def optimal_eta(n_experts: float, horizon: int, scale: float = 1.0) -> float:
    """Horizon-tuned Hedge rate scale * sqrt(log N / T)."""
    return scale * math.sqrt(math.log(max(n_experts, 2)) / horizon)


def mc_optimal_eta(n_objectives: int, m: int, horizon: int) -> float:
    return math.sqrt(math.log(2 * n_objectives * m) / (4 * horizon))


class EtaWindowState:
    """Trailing window of q^T (loss^2) feeding the adaptive learning rate."""

    RESYNC_EVERY = 1024

    def __init__(self, tau: int):
        if tau < 1:
            raise WeightError("tau must be >= 1")
        self.tau = int(tau)
        self.buffer: deque[float] = deque(maxlen=self.tau)
        self.total = 0.0
        self._pushes = 0

    def push(self, value: float):
        if len(self.buffer) == self.tau:
            self.total -= self.buffer[0]
        self.buffer.append(float(value))
        self.total += float(value)
        self._pushes += 1
        if self._pushes % self.RESYNC_EVERY == 0:
            self.total = math.fsum(self.buffer)

    @property
    def exact_sum(self) -> float:
        return math.fsum(self.buffer)


def adaptive_eta(state: EtaWindowState, tau: int, n_objectives: int) -> float:
    window = max(ETA_EPS, state.total)
    return min(1.0, math.sqrt((math.log(n_objectives * 2 * tau) + 1.0) / window))


def adaptive_objectives_state(loss_history, eta, t: int, horizon: int) -> np.ndarray:
    """Relative weights of interval objectives active at step ``t``.

    ``loss_history`` holds the base losses of steps 1..t-1 as a (t-1, n)
    array.  Returns an (n, t) array whose entry (l, r-1) is proportional to
    exp(eta * sum_{u=r}^{t-1} loss_l(u)); every interval [r, s] with s >= t
    shares that weight, and the number of such end times is the same for
    every start, so one value per start suffices.  ``eta`` may be a scalar
    or a per-step sequence of rates used for steps 1..t-1.
    """
    if t > horizon:
        raise WeightError(f"step {t} beyond horizon {horizon}")
    L = np.asarray(loss_history, dtype=float)
    if L.ndim != 2 or L.shape[0] != t - 1:
        raise WeightError(f"loss history must have shape ({t - 1}, n), got {L.shape}")
    etas = np.broadcast_to(np.asarray(eta, dtype=float), (t - 1,))
    scaled = L * etas[:, None]
    # suffix sums: start r aggregates steps r..t-1, and start t has none
    suffix = np.vstack([np.cumsum(scaled[::-1], axis=0)[::-1], np.zeros((1, L.shape[1]))])
    logw = suffix.T
    w = np.exp(logw - logw.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# stateful learners used by the engine


class WeightLearner:
    """Interface: ``weights`` is q^(t); ``update`` consumes expected losses."""

    name = "base"
    n: int
    eta: float

    @property
    def weights(self) -> np.ndarray:
        raise NotImplementedError

    def update(self, losses: np.ndarray) -> None:
        raise NotImplementedError

    # learning rate that will be applied in the next update
    def current_eta(self) -> float:
        return self.eta


class Hedge(WeightLearner):
    name = "hedge"

    def __init__(self, n: int, eta: float):
        if eta <= 0:
            raise WeightError("eta must be positive")
        self.n = n
        self.eta = float(eta)
        self._logw = np.zeros(n)
        self.t = 1

    @property
    def weights(self):
        return np.exp(self._logw - logsumexp(self._logw))

    def update(self, losses):
        losses = _check_losses(losses, self.n)
        self._logw = self._logw + self.eta * losses
        self._logw -= self._logw.max()
        self.t += 1


class FixedShare(WeightLearner):
    """Hedge step followed by mixing a gamma fraction toward uniform.

    ``eta`` is a number (fixed rate) or ``"adaptive"``, in which case the
    rate is recomputed from the trailing ``tau`` values of q^T loss^2
    before each update.
    """

    name = "fixed_share"

    def __init__(self, n: int, eta: float | str, gamma: float, tau: int):
        if not 0.0 <= gamma <= 0.5:
            raise WeightError(f"gamma must lie in [0, 1/2], got {gamma}")
        self.n = n
        self.gamma = float(gamma)
        self.tau = int(tau)
        self.adaptive = eta == "adaptive"
        if not self.adaptive:
            eta = float(eta)
            if not 0 < eta <= 1:
                raise WeightError(f"fixed eta must lie in (0, 1], got {eta}")
        self.eta = 1.0 if self.adaptive else eta
        self.window = EtaWindowState(self.tau)
        self.q = np.full(n, 1.0 / n)
        self.t = 1

    @property
    def weights(self):
        return self.q

    def prepare(self, losses) -> float:
        """Fold step-t losses into the eta window and return the rate for this update."""
        if self.adaptive:
            self.window.push(float(self.q @ (np.asarray(losses) ** 2)))
            self.eta = adaptive_eta(self.window, self.tau, self.n)
        return self.eta

    def update(self, losses):
        losses = _check_losses(losses, self.n)
        self.prepare(losses)
        self.q = fixed_share_update(self.q, losses, self.eta, self.gamma)
        self.t += 1


class AdaptiveObjectivesHedge(WeightLearner):
    """Hedge over interval-restricted copies of every objective.

    Keeps one log-weight per (objective, start) pair; the effective weight
    of a base objective is the normalized sum over starts r <= t.
    """

    name = "adaptive_objectives"

    def __init__(self, n: int, eta: float, horizon: int):
        if eta <= 0:
            raise WeightError("eta must be positive")
        self.n = n
        self.eta = float(eta)
        self.horizon = int(horizon)
        self._logw = np.zeros((n, max(horizon, 1)))
        self._offset = 0.0
        self.t = 1

    def start_weights(self) -> np.ndarray:
        lw = self._logw[:, : self.t]
        w = np.exp(lw - lw.max())
        return w / w.sum()

    @property
    def weights(self):
        return self.start_weights().sum(axis=1)

    def update(self, losses):
        losses = _check_losses(losses, self.n)
        if self.t > self.horizon:
            raise WeightError(f"step {self.t} beyond horizon {self.horizon}")
        self._logw[:, : self.t] += self.eta * losses[:, None]
        self.t += 1
        if self.t <= self.horizon:
            # a freshly started interval carries no history
            self._logw[:, self.t - 1] = -self._offset
            top = self._logw[:, : self.t].max()
            if abs(top) > 500:
                self._logw[:, : self.t] -= top
                self._offset += top


LEARNERS = ("hedge", "fixed_share", "adaptive_objectives")
