import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lamo.objectives import (
    UNIT,
    BinGrid,
    GroupFunction,
    LabelRange,
    ObjectiveError,
    ObjectiveSet,
    ProblemSpec,
    StepContext,
    build_objective_set,
    coverage_loss,
    expected_size,
    group_from_config,
    multiaccuracy_loss,
    multicalibration_loss,
    prediction_error_loss,
    quantile_pred_loss,
)

unit = st.floats(0.0, 1.0)
signs = st.sampled_from([1, -1])


class TestMultiaccuracyLoss:
    def test_maximal_residual(self):
        assert multiaccuracy_loss(1.0, 1, 0.0, 1.0) == 1.0

    @pytest.mark.parametrize("sign", [1, -1])
    def test_zero_reweighting(self, sign):
        assert multiaccuracy_loss(0.0, sign, 0.3, 0.9) == 0.0

    def test_arithmetic(self):
        assert multiaccuracy_loss(0.5, -1, 0.4, 0.0) == pytest.approx(0.2, abs=1e-15)

    def test_domain_errors(self):
        with pytest.raises(ObjectiveError):
            multiaccuracy_loss(1.5, 1, 0.0, 1.0)
        with pytest.raises(ObjectiveError):
            multiaccuracy_loss(0.5, 1, 1.2, 1.0)
        with pytest.raises(ObjectiveError):
            multiaccuracy_loss(0.5, 0, 0.2, 1.0)

    @given(unit, unit, unit)
    def test_sign_antisymmetry(self, f, p, y):
        assert multiaccuracy_loss(f, 1, p, y) == -multiaccuracy_loss(f, -1, p, y)

    def test_wide_range_scaled(self):
        lr = LabelRange(-2.0, 2.0)
        assert multiaccuracy_loss(1.0, 1, -2.0, 2.0, lr) == 1.0


class TestPredictionErrorLoss:
    @given(unit, unit)
    def test_identical(self, p, y):
        assert prediction_error_loss(p, p, y) == 0.0

    def test_examples(self):
        assert prediction_error_loss(1.0, 0.0, 0.0) == 1.0
        assert prediction_error_loss(0.5, 0.8, 1.0) == pytest.approx(0.21, abs=1e-15)

    def test_unregistered_cost(self):
        with pytest.raises(ObjectiveError):
            prediction_error_loss(0.5, 0.5, 0.5, cost="hinge")

    def test_range_scaling(self):
        lr = LabelRange(0.0, 10.0)
        assert prediction_error_loss(10.0, 0.0, 0.0, label_range=lr) == 1.0


class TestMulticalibrationLoss:
    def test_outside_bin(self):
        assert multicalibration_loss(1.0, 1, 1, 10, 0.55, 1.0) == 0.0

    def test_examples(self):
        assert multicalibration_loss(1.0, 1, 1, 10, 0.05, 1.0) == pytest.approx(0.95)
        assert multicalibration_loss(1.0, 1, 2, 2, 0.8, 0.0) == pytest.approx(-0.75)

    def test_invalid_bin(self):
        with pytest.raises(ObjectiveError):
            multicalibration_loss(1.0, 1, 0, 10, 0.5, 1.0)
        with pytest.raises(ObjectiveError):
            multicalibration_loss(1.0, 1, 11, 10, 0.5, 1.0)

    def test_p_one_in_last_bin(self):
        assert multicalibration_loss(1.0, 1, 4, 4, 1.0, 1.0) == pytest.approx(1 - 7 / 8)


class TestBinGrid:
    @given(st.integers(1, 50))
    def test_partition_and_midpoints(self, m):
        g = BinGrid(m)
        bins = g.bins
        assert bins[0][0] == 0.0 and bins[-1][1] == 1.0
        for (_, hi), (lo, _) in zip(bins, bins[1:]):
            assert hi == lo
        for j, (lo, hi) in enumerate(bins, start=1):
            assert lo <= g.midpoint(j) < hi
            assert g.index(g.midpoint(j)) == j

    @given(st.integers(1, 50), unit)
    def test_index_membership(self, m, p):
        g = BinGrid(m)
        j = int(g.index(p))
        lo, hi = g.bins[j - 1]
        assert lo <= p < hi or (p == 1.0 and j == m)

    def test_bad_m(self):
        with pytest.raises(ObjectiveError):
            BinGrid(0)


class TestCoverage:
    def test_examples(self):
        assert coverage_loss(1.0, 1, 0.6, 0.5, 0.5) == 0.5
        assert coverage_loss(1.0, 1, 0.4, 0.5, 0.5) == -0.5
        assert coverage_loss(0.2, -1, 0.4, 0.5, 0.9) == pytest.approx(0.18)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_domain(self, alpha):
        with pytest.raises(ObjectiveError):
            coverage_loss(1.0, 1, 0.4, 0.5, alpha)


class TestQuantilePred:
    def test_examples(self):
        assert quantile_pred_loss(0.3, 0.3, 0.9, 0.5) == 0.0
        assert quantile_pred_loss(0.0, 1.0, 1.0, 0.5) == pytest.approx(0.5)
        assert quantile_pred_loss(0.5, 0.5, 0.2, 0.9) == 0.0


class TestBuildObjectiveSet:
    def test_sizes(self):
        five = tuple(f"g{i}" for i in range(5))
        assert len(build_objective_set(ProblemSpec("ma_pred", five))) == 11
        assert len(build_objective_set(ProblemSpec("ma", ("one",)))) == 2
        assert len(build_objective_set(ProblemSpec("mc_pred", ("a", "b", "c"), m=10))) == 61

    @given(st.sampled_from(["ma", "ma_pred", "mc", "mc_pred", "quantile"]), st.integers(1, 4), st.integers(1, 6))
    def test_size_formula_by_enumeration(self, kind, nf, m):
        spec = ProblemSpec(kind, tuple(f"g{i}" for i in range(nf)), m=m)
        objs = build_objective_set(spec)
        assert len(objs) == expected_size(spec)
        assert len({o.id for o in objs}) == len(objs)

    def test_omni_and_multigroup(self):
        spec = ProblemSpec("omniprediction", ("a", "b"), competitors=("c1", "c2"), losses=("squared", "absolute"))
        assert len(build_objective_set(spec)) == 4
        spec = ProblemSpec("multigroup", ("a", "b"), competitors=("c1",), losses=("squared", "pinball:0.9"))
        assert len(build_objective_set(spec)) == 4

    def test_errors(self):
        with pytest.raises(ObjectiveError):
            build_objective_set(ProblemSpec("ma", ()))
        with pytest.raises(ObjectiveError):
            build_objective_set(ProblemSpec("mc", ("a",), m=0))
        with pytest.raises(ObjectiveError):
            build_objective_set(ProblemSpec("omniprediction", ("a",)))
        with pytest.raises(ObjectiveError):
            build_objective_set(ProblemSpec("nope", ("a",)))


def _random_ctx(rng, nf, ncomp=2):
    return StepContext(rng.random(nf), float(rng.random()), rng.random(ncomp))


ALL_SPECS = [
    ProblemSpec("ma_pred", ("a", "b", "c")),
    ProblemSpec("mc_pred", ("a", "b", "c"), m=5),
    ProblemSpec("quantile", ("a", "b", "c"), alpha=0.9),
    ProblemSpec("omniprediction", ("a", "b", "c"), competitors=("u", "v"), losses=("squared", "absolute", "pinball:0.3")),
    ProblemSpec("multigroup", ("a", "b", "c"), competitors=("u", "v"), losses=("squared", "absolute")),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
def test_vectorized_matches_scalar(spec, rng):
    objset = ObjectiveSet.from_spec(spec)
    for _ in range(20):
        ctx = _random_ctx(rng, 3)
        pts = rng.random(7)
        y = float(rng.random())
        mat = objset.losses(pts, y, ctx)
        for i, p in enumerate(pts):
            for j, obj in enumerate(objset):
                assert mat[i, j] == pytest.approx(obj(float(p), y, ctx), abs=1e-14)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
def test_boundedness(spec):
    rng = np.random.default_rng(7)
    objset = ObjectiveSet.from_spec(spec)
    n = 20_000 // len(objset) + 50
    for _ in range(n // 50):
        ctx = StepContext(rng.random(3), float(rng.choice([0.0, 1.0, rng.random()])), rng.random(2))
        pts = np.r_[0.0, 1.0, rng.random(48)]
        for y in (0.0, 1.0, float(rng.random())):
            L = objset.losses(pts, y, ctx)
            assert np.all(L >= -1.0) and np.all(L <= 1.0)


def test_equal_ids_evaluate_identically(rng):
    a = ObjectiveSet.from_spec(ProblemSpec("mc_pred", ("a", "b"), m=4))
    b = ObjectiveSet.from_spec(ProblemSpec("mc_pred", ("a", "b"), m=4))
    ctx = _random_ctx(rng, 2)
    for y in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(a.losses([0.1, 0.6, 1.0], y, ctx), b.losses([0.1, 0.6, 1.0], y, ctx))


def test_proper_loss_mean_minimizes_expected_squared_cost(rng):
    grid = np.linspace(0, 1, 1001)
    for _ in range(50):
        support = rng.random(5)
        probs = rng.dirichlet(np.ones(5))
        expected = ((grid[:, None] - support[None, :]) ** 2) @ probs
        assert abs(grid[np.argmin(expected)] - probs @ support) <= 1e-3


class TestGroupFunctions:
    def test_interval_half_open(self):
        g = GroupFunction.interval("temp", 20, 40)
        assert g({"temp": 20.0}) == 1.0 and g({"temp": 40.0}) == 0.0

    def test_clamped(self):
        g = GroupFunction.coordinate("x", shift=3.0, scale=6.0)
        assert g({"x": 10.0}) == 1.0 and g({"x": -10.0}) == 0.0 and g({"x": 0.0}) == 0.5

    def test_from_config(self):
        g = group_from_config({"type": "equals", "column": "race", "value": "Caucasian", "id": "cauc"})
        assert g.id == "cauc" and g({"race": "Caucasian"}) == 1.0
        with pytest.raises(ObjectiveError):
            group_from_config({"type": "mystery"})


def test_label_range():
    with pytest.raises(ValueError):
        LabelRange(1.0, 1.0)
    assert UNIT.width == 1.0
    assert math.isclose(LabelRange(-1, 3).clip(5.0), 3.0)
