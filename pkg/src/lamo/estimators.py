"""scikit-learn style wrapper around the online game.

``X`` holds the group-function values f(x_t) in [0, 1], one column per
group; the optional ``baseline`` array is the forecaster being corrected.
``fit`` plays the game once over the rows in order; ``predict`` answers with
the current adversary weights frozen.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .engine import OnlineGame, RunConfig, make_learner
from .objectives import LabelRange, ObjectiveSet, ProblemSpec, StepContext
from .solvers import SolverSettings, best_response


class OnlineMultiObjectivePredictor(RegressorMixin, BaseEstimator):
    """Online predictor keeping every multiaccuracy-type objective small.

    Parameters mirror :class:`lamo.engine.RunConfig`; ``horizon`` fixes T
    for the horizon-tuned rates and defaults to the length of the first
    ``fit`` / ``partial_fit`` call.
    """

    def __init__(self, problem="ma_pred", learner="fixed_share", eta="adaptive", tau=100, gamma=None,
                 m=10, alpha=0.5, cost="squared", label_range=(0.0, 1.0), grid_size=101, solver_tol=1e-4,
                 horizon=None, random_state=0):
        self.problem = problem
        self.learner = learner
        self.eta = eta
        self.tau = tau
        self.gamma = gamma
        self.m = m
        self.alpha = alpha
        self.cost = cost
        self.label_range = label_range
        self.grid_size = grid_size
        self.solver_tol = solver_tol
        self.horizon = horizon
        self.random_state = random_state

    def _run_config(self, n_groups: int) -> RunConfig:
        spec = ProblemSpec(kind=self.problem, groups=tuple(f"f{j}" for j in range(n_groups)), m=self.m,
                           alpha=self.alpha, cost=self.cost, label_range=LabelRange(*self.label_range))
        return RunConfig(run_id="estimator", problem=spec, learner=self.learner, eta=self.eta, tau=self.tau,
                         gamma=self.gamma, seed=self.random_state,
                         solver=SolverSettings(tol=self.solver_tol, grid_size=self.grid_size), baseline="external")

    def _check_inputs(self, X, y=None, baseline=None):
        if y is None:
            X = check_array(X, dtype=float)
        else:
            X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if np.any(X < 0) or np.any(X > 1):
            raise ValueError("group values in X must lie in [0, 1]")
        if baseline is not None:
            baseline = np.asarray(baseline, dtype=float).reshape(-1)
            if baseline.shape[0] != X.shape[0]:
                raise ValueError("baseline needs one value per row of X")
        return X, y, baseline

    def _needs_baseline(self):
        return self.objset_.has("prediction_error") or self.objset_.has("quantile_pred")

    def _start(self, n_groups: int, horizon: int):
        self.config_ = self._run_config(n_groups)
        self.objset_ = ObjectiveSet.from_spec(self.config_.problem)
        learner, self.eta_ = make_learner(self.config_, len(self.objset_), self.horizon or horizon)
        self.game_ = OnlineGame(self.objset_, learner, self.config_.solver,
                                np.random.default_rng(self.random_state))
        self.n_features_in_ = n_groups
        self.n_steps_ = 0
        self.online_predictions_ = []
        self.expected_losses_ = []

    def partial_fit(self, X, y, baseline=None):
        X, y, baseline = self._check_inputs(X, y, baseline)
        if not hasattr(self, "game_"):
            self._start(X.shape[1], X.shape[0])
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        if baseline is None and self._needs_baseline():
            raise ValueError(f"problem {self.problem!r} needs a baseline forecast")
        lr = self.config_.problem.label_range
        if not lr.contains(y):
            raise ValueError("labels outside label_range")
        for t in range(X.shape[0]):
            ctx = StepContext(X[t], None if baseline is None else float(baseline[t]))
            p, _ = self.game_.predict(ctx)
            _, expected, _, _ = self.game_.observe(float(y[t]))
            self.online_predictions_.append(p)
            self.expected_losses_.append(expected)
            self.n_steps_ += 1
        return self

    def fit(self, X, y, baseline=None):
        for attr in ("game_", "config_", "objset_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X, y, baseline)

    def fit_predict(self, X, y, baseline=None) -> np.ndarray:
        """Predictions made online, each before its own label was revealed."""
        self.fit(X, y, baseline)
        return np.asarray(self.online_predictions_)

    @property
    def weights_(self) -> np.ndarray:
        check_is_fitted(self, "game_")
        return self.game_.weights

    def predict(self, X, baseline=None) -> np.ndarray:
        check_is_fitted(self, "game_")
        X, _, baseline = self._check_inputs(X, None, baseline)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        if baseline is None and self._needs_baseline():
            raise ValueError(f"problem {self.problem!r} needs a baseline forecast")
        q = self.weights_
        out = np.empty(X.shape[0])
        for t in range(X.shape[0]):
            ctx = StepContext(X[t], None if baseline is None else float(baseline[t]))
            out[t] = best_response(self.objset_, q, ctx, self.config_.solver).policy.mean
        return out
