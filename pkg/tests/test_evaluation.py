import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lamo import data
from lamo.engine import RunConfig, TraceArrays, read_trace, run_episode
from lamo.evaluation import (
    ErrorSeries,
    EvaluationError,
    UnsupportedCheck,
    WindowSpec,
    bound_slacks_naive,
    day_windows,
    local_multiaccuracy_error,
    local_prediction_error,
    ma_mc_gap,
    multiaccuracy_error,
    multicalibration_error,
    read_series_csv,
    total_error,
    verify_interval_bounds,
    window_sums,
    write_series_csv,
)
from lamo.objectives import BinGrid, ProblemSpec


def arrays(y, p, fvals, baseline=None, timestamps=None, run_id="r"):
    y = np.asarray(y, float)
    T = y.size
    fvals = np.asarray(fvals, float).reshape(T, -1)
    empty = np.zeros((T, 0))
    return TraceArrays(
        meta={"run_id": run_id}, y=y, prediction=np.asarray(p, float), policy_mean=np.asarray(p, float),
        baseline=None if baseline is None else np.asarray(baseline, float), fvals=fvals,
        expected_losses=empty, realized_losses=empty, q=empty, eta=np.full(T, np.nan),
        game_value=np.full(T, np.nan), objective_ids=[], group_ids=[f"g{j}" for j in range(fvals.shape[1])],
        timestamps=timestamps,
    )


def brute_ma(y, p, fvals, width):
    out = []
    for end in range(width, len(y) + 1):
        best = -math.inf
        for j, sigma in itertools.product(range(fvals.shape[1]), (1, -1)):
            s = sum(sigma * fvals[t, j] * (y[t] - p[t]) for t in range(end - width, end))
            best = max(best, s / width)
        out.append(best)
    return np.array(out)


def random_arrays(rng, T, groups=3, baseline=False):
    return arrays(rng.uniform(size=T), rng.uniform(size=T), rng.uniform(size=(T, groups)),
                  rng.uniform(size=T) if baseline else None)


# -- local multiaccuracy ------------------------------------------------------

def test_perfect_predictions_have_zero_error():
    y = np.linspace(0, 1, 30)
    s = local_multiaccuracy_error(arrays(y, y, np.ones(30)), WindowSpec(10))
    np.testing.assert_array_equal(s.values, 0.0)
    np.testing.assert_array_equal(s.ends, np.arange(10, 31))


def test_symmetric_residuals_cancel():
    s = local_multiaccuracy_error(arrays([1, 1, 0, 0], [0.5] * 4, np.ones(4)), WindowSpec(4))
    assert s.values.tolist() == [0.0]


def test_matches_enumeration_on_twenty_steps(rng):
    arr = random_arrays(rng, 20)
    s = local_multiaccuracy_error(arr, WindowSpec(5))
    np.testing.assert_allclose(s.values, brute_ma(arr.y, arr.prediction, arr.fvals, 5), atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 200), st.integers(1, 4))
@settings(max_examples=30)
def test_matches_enumeration_property(seed, T, groups):
    rng = np.random.default_rng(seed)
    arr = random_arrays(rng, T, groups)
    width = int(rng.integers(1, T + 1))
    s = local_multiaccuracy_error(arr, WindowSpec(width))
    np.testing.assert_allclose(s.values, brute_ma(arr.y, arr.prediction, arr.fvals, width), atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
@settings(max_examples=30)
def test_subset_of_groups_never_exceeds_full_class(seed, drop):
    rng = np.random.default_rng(seed)
    arr = random_arrays(rng, 60, 5)
    full = local_multiaccuracy_error(arr, WindowSpec(12))
    sub = local_multiaccuracy_error(arr, WindowSpec(12), groups=arr.group_ids[drop:])
    assert np.all(sub.values <= full.values + 1e-15)


@given(st.integers(0, 2**31 - 1), st.integers(1, 50))
@settings(max_examples=30)
def test_incremental_window_sums_match_recomputation(seed, width):
    v = np.random.default_rng(seed).normal(size=(120, 2))
    running = v[:width].sum(axis=0)
    fast = window_sums(v, width)
    np.testing.assert_allclose(fast[0], running, atol=1e-9)
    for i, end in enumerate(range(width + 1, 121), start=1):
        running = running + v[end - 1] - v[end - 1 - width]
        np.testing.assert_allclose(fast[i], v[end - width:end].sum(axis=0), atol=1e-9)
        np.testing.assert_allclose(fast[i], running, atol=1e-9)


def test_stride_and_skip():
    arr = arrays(np.ones(20), np.zeros(20), np.ones(20))
    s = local_multiaccuracy_error(arr, WindowSpec(5, stride=5))
    assert s.ends.tolist() == [5, 10, 15, 20]
    assert s.after(2).ends.tolist() == [15, 20]


def test_window_wider_than_trace_rejected():
    with pytest.raises(EvaluationError):
        local_multiaccuracy_error(arrays([0, 1], [0, 1], [1, 1]), WindowSpec(3))
    with pytest.raises(EvaluationError):
        WindowSpec(0)


def test_unknown_group_rejected():
    with pytest.raises(EvaluationError):
        local_multiaccuracy_error(arrays([0, 1], [0, 1], [1, 1]), WindowSpec(1), groups=["nope"])


# -- calendar windows ---------------------------------------------------------

def day_stamps(days):
    return np.array([np.datetime64("2013-01-01") + np.timedelta64(int(d), "D") for d in days], dtype="datetime64[s]")


def test_calendar_windows_count_empty_days():
    ts = day_stamps([0, 0, 1, 4, 4, 5])
    ranges, closing = day_windows(ts, 2)
    assert ranges == [(0, 3), (2, 3), (3, 3), (3, 5), (3, 6)]
    assert str(closing[0]) == "2013-01-02"


@given(st.lists(st.integers(0, 40), min_size=1, max_size=80), st.integers(1, 10))
@settings(max_examples=50)
def test_calendar_partition_forward_equals_backward(days, n_days):
    days = sorted(days)
    if n_days > days[-1] - days[0] + 1:
        return
    ts = day_stamps(days)
    ranges, _ = day_windows(ts, n_days)
    # backward: walk the index from the end, grouping by day membership
    d = np.array(days)
    back = []
    for close in range(d[-1], d[0] + n_days - 2, -1):
        members = [i for i in range(len(d) - 1, -1, -1) if close - n_days < d[i] <= close]
        back.append((min(members), max(members) + 1) if members else None)
    back.reverse()
    for (a, b), m in zip(ranges, back):
        assert (a, b) == m if m is not None else a == b


def test_calendar_ma_error_averages_within_days():
    ts = day_stamps([0, 0, 1, 1])
    arr = arrays([1, 0, 1, 1], [0, 0, 0, 0], np.ones(4), timestamps=ts)
    s = local_multiaccuracy_error(arr, WindowSpec(1, calendar=True))
    np.testing.assert_allclose(s.values, [0.5, 1.0])
    assert [str(x) for x in s.labels] == ["2013-01-01", "2013-01-02"]


# -- local prediction error ---------------------------------------------------

def test_prediction_error_zero_when_equal_to_baseline():
    p = np.linspace(0, 1, 10)
    s = local_prediction_error(arrays(np.zeros(10), p, np.ones(10), baseline=p), WindowSpec(3))
    np.testing.assert_array_equal(s.values, 0.0)


def test_perfect_predictions_beat_imperfect_baseline():
    y = np.linspace(0, 1, 10)
    s = local_prediction_error(arrays(y, y, np.ones(10), baseline=1 - y + 0.01 * (y == 0.5)), WindowSpec(3))
    assert np.all(s.values < 0)


def test_prediction_error_matches_direct_sum(rng):
    arr = random_arrays(rng, 40, baseline=True)
    s = local_prediction_error(arr, WindowSpec(7))
    d = (arr.prediction - arr.y) ** 2 - (arr.baseline - arr.y) ** 2
    naive = [sum(d[e - 7:e]) / 7 for e in range(7, 41)]
    np.testing.assert_allclose(s.values, naive, atol=1e-12)


def test_prediction_error_needs_baseline():
    with pytest.raises(EvaluationError):
        local_prediction_error(arrays([0], [0], [1]), WindowSpec(1))


def test_randomized_trace_uses_expected_cost():
    s = data.SampleStream(y=np.r_[np.ones(20), np.zeros(20)], fvals=np.ones((40, 1)), group_ids=("one",),
                          baseline=np.full(40, 0.5))
    tr = run_episode(RunConfig(problem=ProblemSpec(kind="mc_pred", m=4), learner="hedge", eta=0.5), s)
    assert tr.randomized
    exp = local_prediction_error(tr, WindowSpec(40))
    direct = np.mean([r.policy.probs @ (r.policy.support - r.y) ** 2 - (0.5 - r.y) ** 2 for r in tr.records])
    assert exp.values[0] == pytest.approx(direct, abs=1e-12)


# -- totals and IO ------------------------------------------------------------

def test_total_error_examples(rng):
    z = ErrorSeries(np.arange(1, 6), np.zeros(5), "ma")
    assert total_error(z) == 0.0
    c = ErrorSeries(np.arange(1, 8), np.full(7, 0.25), "ma")
    assert total_error(c) == pytest.approx(1.75)
    v = rng.uniform(size=300)
    assert total_error(ErrorSeries(np.arange(300), v, "ma")) == pytest.approx(sum(v.tolist()), abs=1e-12)


def test_series_csv_roundtrip(tmp_path, rng):
    a = ErrorSeries(np.arange(3, 9), rng.uniform(size=6), "ma", "one")
    b = ErrorSeries(np.arange(3, 9), rng.uniform(size=6), "pred", "two")
    write_series_csv(tmp_path / "s.csv", [a, b])
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "window_end,value,metric,run_id"
    back = read_series_csv(tmp_path / "s.csv")
    for orig, got in zip([a, b], back):
        np.testing.assert_array_equal(orig.values, got.values)
        np.testing.assert_array_equal(orig.ends, got.ends)
        assert (orig.metric, orig.run_id) == (got.metric, got.run_id)


# -- whole-horizon MA / MC relation -------------------------------------------

@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 80))
@settings(max_examples=100)
def test_mc_error_upper_bounds_ma_error(seed, m, T):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, T).astype(float)
    p = rng.uniform(size=T)
    f = rng.uniform(size=(T, 3))
    assert ma_mc_gap(y, p, f, m) >= -1e-12


def test_mc_error_by_hand():
    # two samples, bins of width 1/2 with midpoints 0.25 and 0.75
    y, p, f = np.array([1.0, 0.0]), np.array([0.2, 0.9]), np.ones((2, 1))
    assert multicalibration_error(y, p, f, 2) == pytest.approx(0.75 / 2)
    assert multiaccuracy_error(y, p, f) == pytest.approx(abs(0.8 - 0.9) / 2)
    assert BinGrid(2).midpoint(1) == 0.25


# -- per-interval bound checks ------------------------------------------------

def conforming_trace(seed, T=120, eta=0.4):
    rng = np.random.default_rng(seed)
    s = data.SampleStream(y=rng.uniform(size=T), fvals=rng.uniform(size=(T, 3)), group_ids=("a", "b", "c"),
                          baseline=rng.uniform(size=T))
    return run_episode(RunConfig(problem=ProblemSpec(kind="ma_pred"), eta=eta, tau=30), s)


def test_conforming_trace_has_no_violations():
    rep = verify_interval_bounds(conforming_trace(0), checks=("simplex", "lemma31", "lemma32", "thm33", "eq8"))
    assert rep.ok, rep.lines()
    assert rep["lemma31"].intervals == 120 * 121 // 2
    assert rep.exhaustive


def test_off_simplex_weights_detected():
    arr = conforming_trace(1).arrays()
    arr.q[10] = arr.q[10] * 1.5
    rep = verify_interval_bounds(arr, checks=("simplex",))
    assert not rep.ok and rep["simplex"].worst_interval == (11, 11)


def test_tampered_losses_break_the_weighted_loss_bound():
    arr = conforming_trace(2).arrays()
    arr.expected_losses[:] = np.abs(arr.expected_losses) + 0.1
    assert not verify_interval_bounds(arr, checks=("lemma32",)).ok


def test_slacks_match_direct_loops(tmp_path):
    tr = conforming_trace(3, T=40)
    tr.save(tmp_path)
    arr = read_trace(tmp_path / "trace_run.csv")
    rep = verify_interval_bounds(arr)
    q, L = arr.q, arr.expected_losses
    worst = {k: math.inf for k in ("lemma31", "lemma32", "thm33")}
    for r in range(1, 41):
        for s in range(r, 41):
            for k, v in bound_slacks_naive(q, L, 0.4, 1 / 60, r, s).items():
                worst[k] = min(worst[k], v)
    for k, v in worst.items():
        assert rep[k].min_slack == pytest.approx(v, abs=1e-9)


def test_sampled_intervals_for_long_traces():
    tr = conforming_trace(4, T=600)
    rep = verify_interval_bounds(tr, sample_count=500)
    assert not rep.exhaustive and rep["lemma31"].intervals == 500 and rep.ok


def test_adaptive_trace_is_unsupported_for_fixed_rate_bounds():
    rng = np.random.default_rng(5)
    s = data.SampleStream(y=rng.uniform(size=30), fvals=np.ones((30, 1)), group_ids=("one",),
                          baseline=rng.uniform(size=30))
    tr = run_episode(RunConfig(problem=ProblemSpec(kind="ma_pred"), eta="adaptive", tau=10), s)
    with pytest.raises(UnsupportedCheck):
        verify_interval_bounds(tr, checks=("lemma31",))
    assert verify_interval_bounds(tr, checks=("simplex", "lemma32")).ok


def test_hedge_trace_is_unsupported_for_fixed_share_bounds():
    rng = np.random.default_rng(6)
    s = data.SampleStream(y=rng.uniform(size=30), fvals=np.ones((30, 1)), group_ids=("one",),
                          baseline=rng.uniform(size=30))
    tr = run_episode(RunConfig(problem=ProblemSpec(kind="ma_pred"), learner="hedge", eta=0.3), s)
    with pytest.raises(UnsupportedCheck):
        verify_interval_bounds(tr, checks=("thm33",))
