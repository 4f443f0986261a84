"""Independent brute-force references used by the unit and acceptance tests."""
import itertools

import numpy as np


def grid_minimax_ma_pred(A, q_pred, p_base, n_grid=1001, label_grid=None):
    """argmin over a prediction grid of the max over labels, for arrays of instances.

    The payoff is A (y - p) + q_pred ((p - y)^2 - (p_base - y)^2) on [0, 1].
    Returns (p_star, value) with one entry per instance.
    """
    A = np.atleast_1d(np.asarray(A, float))[:, None, None]
    qp = np.atleast_1d(np.asarray(q_pred, float))[:, None, None]
    pb = np.atleast_1d(np.asarray(p_base, float))[:, None, None]
    p = np.linspace(0.0, 1.0, n_grid)[None, :, None]
    ys = np.array([0.0, 1.0]) if label_grid is None else np.asarray(label_grid, float)
    y = ys[None, None, :]
    pay = A * (y - p) + qp * ((p - y) ** 2 - (pb - y) ** 2)
    worst = pay.max(axis=2)
    idx = worst.argmin(axis=1)
    return p[0, idx, 0], worst[np.arange(len(idx)), idx]


def kernel_game_value(U):
    """Exact value of min_x max_j (x^T U)_j by enumerating square sub-games.

    Some optimal row strategy equalizes the payoffs of a square submatrix
    (an extreme optimal strategy), so the minimum over every equalizing,
    nonnegative solution of its guaranteed payoff is the value.
    """
    U = np.asarray(U, float)
    n, k = U.shape
    best = U.max(axis=1).min()  # pure rows
    for s in range(2, min(n, k) + 1):
        for rows in itertools.combinations(range(n), s):
            R = U[list(rows)]
            for cols in itertools.combinations(range(k), s):
                M = R[:, list(cols)]
                sys_ = np.zeros((s + 1, s + 1))
                sys_[:s, :s] = M.T
                sys_[:s, s] = -1.0
                sys_[s, :s] = 1.0
                rhs = np.zeros(s + 1)
                rhs[s] = 1.0
                try:
                    sol = np.linalg.solve(sys_, rhs)
                except np.linalg.LinAlgError:
                    continue
                x = sol[:s]
                if np.any(x < -1e-12):
                    continue
                x = np.clip(x, 0, None)
                x /= x.sum()
                best = min(best, float((x @ R).max()))
    return best


def simplex_grid_value(U, steps=200):
    """Discretized search over all row mixtures with resolution 1/steps (n <= 3)."""
    U = np.asarray(U, float)
    n = U.shape[0]
    if n == 1:
        return float(U[0].max())
    if n == 2:
        lam = np.linspace(0, 1, steps + 1)[:, None]
        return float((lam * U[0] + (1 - lam) * U[1]).max(axis=1).min())
    if n == 3:
        a = np.arange(steps + 1)
        i, j = np.meshgrid(a, a, indexing="ij")
        ok = i + j <= steps
        x = np.stack([i[ok], j[ok], steps - i[ok] - j[ok]], axis=1) / steps
        return float((x @ U).max(axis=1).min())
    raise ValueError("grid search supports at most three rows")


def naive_interval_weights(L, eta, t, T):
    """Hedge over every (objective, interval [r, s]) pair; effective base weights at step t."""
    n = L.shape[1]
    logs = []
    for r, s in itertools.combinations_with_replacement(range(1, T + 1), 2):
        hi = min(s, t - 1)
        cum = L[r - 1:hi].sum(axis=0) if hi >= r else np.zeros(n)
        logs.append((r, s, eta * cum))
    top = max(v.max() for _, _, v in logs)
    total = np.zeros(n)
    for r, s, v in logs:
        if r <= t <= s:
            total += np.exp(v - top)
    return total / total.sum()
