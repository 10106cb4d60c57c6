import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import oracles
from rmstperm.errors import InvalidInputError
from rmstperm.survival import (
    Observation,
    Sample,
    StepFunction,
    censoring_km,
    counting_processes,
    estimability,
    event_table,
    integrate_step,
    kaplan_meier,
    nelson_aalen,
)

HAND = Sample([1, 2, 3], [1, 0, 1])


@st.composite
def samples(draw, max_n=25, tied=None):
    n = draw(st.integers(1, max_n))
    if tied if tied is not None else draw(st.booleans()):
        times = draw(st.lists(st.integers(0, 6).map(float), min_size=n, max_size=n))
    else:
        times = draw(st.lists(st.floats(0, 50, allow_nan=False), min_size=n, max_size=n))
    statuses = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    return Sample(times, statuses)


class TestSample:
    def test_rejects_negative_times(self):
        with pytest.raises(InvalidInputError):
            Sample([1.0, -0.5], [1, 0])

    def test_rejects_bad_status(self):
        with pytest.raises(InvalidInputError):
            Sample([1.0, 2.0], [1, 2])

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            Sample([1.0, math.inf], [1, 0])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            Sample([1.0, 2.0], [1])

    def test_immutable(self):
        with pytest.raises(AttributeError):
            HAND.group = 2
        with pytest.raises(ValueError):
            HAND.times[0] = 5.0

    def test_observation_roundtrip(self):
        obs = HAND.observations()
        assert obs[1] == Observation(2.0, 0, 1)
        assert Sample.from_observations(obs) == HAND

    def test_from_observations_mixed_groups(self):
        with pytest.raises(InvalidInputError):
            Sample.from_observations([Observation(1, 1, 1), Observation(2, 0, 2)])

    def test_observation_validation(self):
        with pytest.raises(InvalidInputError):
            Observation(-1.0, 1)
        with pytest.raises(InvalidInputError):
            Observation(1.0, 3)


class TestStepFunction:
    f = StepFunction([1.0, 3.0], [0.5, 0.2], 1.0)

    def test_right_continuous(self):
        assert_allclose(self.f([0.0, 0.999, 1.0, 2.0, 3.0, 9.0]), [1, 1, 0.5, 0.5, 0.2, 0.2])

    def test_left_limit(self):
        assert self.f.left_limit(1.0) == 1.0
        assert self.f.left_limit(3.0) == 0.5
        assert self.f.right_limit(1.0) == 0.5

    def test_left_continuous_variant(self):
        g = StepFunction([1.0, 3.0], [0.5, 0.2], 1.0, left_continuous=True)
        assert g(1.0) == 1.0
        assert g(1.0001) == 0.5

    def test_jumps(self):
        assert_allclose(self.f.jumps(), [-0.5, -0.3])

    def test_requires_increasing(self):
        with pytest.raises(InvalidInputError):
            StepFunction([2.0, 1.0], [0, 0])

    def test_integrate_constant(self):
        assert integrate_step(StepFunction.constant(1.0), 0, 10) == 10.0

    def test_integrate_hand_km(self):
        assert_allclose(integrate_step(kaplan_meier(HAND), 0, 3), 7 / 3, rtol=1e-15)

    def test_integrate_empty_interval(self):
        assert integrate_step(self.f, 2.0, 2.0) == 0.0

    def test_integrate_reversed(self):
        with pytest.raises(InvalidInputError):
            integrate_step(self.f, 3.0, 1.0)

    @given(
        st.lists(st.floats(0.01, 20), min_size=1, max_size=10, unique=True),
        st.floats(0, 10),
        st.floats(0, 10),
        st.floats(0, 10),
    )
    def test_additive(self, jumps, a, b, c):
        a, b, c = sorted((a, b, c))
        jumps = sorted(jumps)
        f = StepFunction(jumps, np.linspace(1, 0, len(jumps)), 1.0)
        whole = integrate_step(f, a, c)
        assert abs(integrate_step(f, a, b) + integrate_step(f, b, c) - whole) <= 4 * np.spacing(max(whole, 1.0))


class TestCountingProcesses:
    def test_two_points(self):
        N, Y = counting_processes(Sample([2, 5], [1, 0]))
        assert_allclose(N([0, 1.9, 2, 4, 10]), [0, 0, 1, 1, 1])
        assert_allclose(Y([0, 2, 2.1, 5, 5.1]), [2, 2, 1, 1, 0])

    def test_all_censored(self):
        N, _ = counting_processes(Sample([1, 2, 3], [0, 0, 0]))
        assert_allclose(N([0, 1, 2, 3, 9]), 0)

    def test_ties(self):
        N, Y = counting_processes(Sample([3, 3, 3], [1, 1, 0]))
        assert N(3) - N.left_limit(3) == 2
        assert Y(3) == 3

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            counting_processes(Sample([], []))

    def test_event_table(self):
        tab = event_table(Sample([3, 1, 3, 3], [1, 0, 1, 0]))
        assert_array_equal(tab.times, [1, 3])
        assert_array_equal(tab.events, [0, 2])
        assert_array_equal(tab.censored, [1, 1])
        assert_array_equal(tab.at_risk, [4, 3])


class TestKaplanMeier:
    def test_single_event(self):
        S = kaplan_meier(Sample([5], [1]))
        assert_allclose(S([0, 4.99, 5, 7]), [1, 1, 0, 0])

    def test_all_censored(self):
        S = kaplan_meier(Sample([1, 2, 3], [0, 0, 0]))
        assert_allclose(S([0, 1, 2, 3, 4]), 1)

    def test_hand_example(self):
        S = kaplan_meier(HAND)
        assert_allclose(S([0, 0.5, 1, 2, 2.9, 3, 10]), [1, 1, 2 / 3, 2 / 3, 2 / 3, 0, 0], rtol=1e-15)

    def test_defined_to(self):
        assert kaplan_meier(Sample([1, 8], [1, 0])).defined_to == 8.0
        assert kaplan_meier(HAND).defined_to == math.inf

    def test_exhaustive_against_product_oracle(self):
        grid = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
        for pairs in oracles.small_samples():
            s = Sample([p[0] for p in pairs], [p[1] for p in pairs])
            got = kaplan_meier(s)(grid)
            want = [float(oracles.km(pairs, t)) for t in grid]
            assert_allclose(got, want, rtol=1e-12, atol=1e-15, err_msg=str(pairs))

    @given(samples())
    def test_monotone_and_bounded(self, s):
        S = kaplan_meier(s)
        vals = np.concatenate(([S.initial_value], S.values))
        assert np.all(np.diff(vals) <= 0)
        assert np.all((vals >= 0) & (vals <= 1))
        # jumps only at event times
        assert set(S.jump_times) <= set(s.times[s.statuses == 1])

    @given(st.lists(st.floats(0, 30), min_size=1, max_size=30))
    def test_uncensored_is_empirical(self, times):
        s = Sample(times, np.ones(len(times)))
        grid = np.linspace(0, 31, 64)
        emp = 1 - np.array([np.mean(np.asarray(times) <= t) for t in grid])
        assert_allclose(kaplan_meier(s)(grid), emp, atol=1e-12)


class TestNelsonAalen:
    def test_hand_example(self):
        A = nelson_aalen(HAND)
        assert_allclose(A.jumps(), [1 / 3, 1.0])
        assert_array_equal(A.jump_times, [1, 3])

    def test_all_censored(self):
        assert_allclose(nelson_aalen(Sample([1, 2], [0, 0]))([0, 5]), 0)

    def test_all_fail_at_once(self):
        A = nelson_aalen(Sample([4, 4], [1, 1]))
        assert_array_equal(A.jump_times, [4])
        assert_allclose(A.jumps(), [1.0])

    def test_exhaustive_against_sum_oracle(self):
        grid = [0.0, 1.0, 1.5, 2.0, 3.0]
        for pairs in oracles.small_samples():
            s = Sample([p[0] for p in pairs], [p[1] for p in pairs])
            want = [float(oracles.nelson_aalen(pairs, t)) for t in grid]
            assert_allclose(nelson_aalen(s)(grid), want, rtol=1e-12, atol=1e-15)

    @given(samples())
    def test_increments_in_unit_interval(self, s):
        inc = nelson_aalen(s).jumps()
        assert np.all((inc >= 0) & (inc <= 1 + 1e-12))


class TestCensoringKM:
    def test_no_censoring(self):
        G = censoring_km(Sample([1, 2, 3], [1, 1, 1]))
        assert_allclose(G([0, 1, 2, 3, 4]), 1)

    def test_hand_example(self):
        G = censoring_km(HAND)
        assert_allclose(G([0, 1, 1.9, 2, 3, 5]), [1, 1, 1, 0.5, 0.5, 0.5])

    def test_product_identity_hand(self):
        S, G = kaplan_meier(HAND), censoring_km(HAND)
        _, Y = counting_processes(HAND)
        for t in (1.0, 2.0, 3.0):
            assert S.left_limit(t) * G.left_limit(t) == pytest.approx(Y(t) / 3, rel=1e-15)

    @settings(max_examples=200)
    @given(samples())
    def test_product_identity(self, s):
        S, G = kaplan_meier(s), censoring_km(s)
        _, Y = counting_processes(s)
        ts = np.unique(s.times)
        assert_allclose(S.left_limit(ts) * G.left_limit(ts), Y(ts) / len(s), rtol=1e-12, atol=1e-15)

    def test_exhaustive_against_oracle(self):
        grid = [0.0, 1.0, 2.0, 2.5, 3.0]
        for pairs in oracles.small_samples(6):
            s = Sample([p[0] for p in pairs], [p[1] for p in pairs])
            want = [float(oracles.censoring_km(pairs, t)) for t in grid]
            assert_allclose(censoring_km(s)(grid), want, rtol=1e-12, atol=1e-15)


class TestEstimability:
    @pytest.mark.parametrize(
        "times, statuses, ok",
        [([1, 8], [1, 0], False), ([1, 8], [1, 1], True), ([1, 12], [1, 0], True), ([1, 8, 8], [1, 0, 1], True)],
    )
    def test_cases(self, times, statuses, ok):
        assert estimability(Sample(times, statuses), 10.0).fully_estimable_on_window is ok

    def test_reports_limit(self):
        assert estimability(Sample([1, 8], [1, 0]), 10).estimable_to == 8.0

    def test_bad_tau(self):
        with pytest.raises(InvalidInputError):
            estimability(HAND, 0.0)

    @given(samples(), st.floats(0.1, 60))
    def test_rule(self, s, tau):
        t_max = s.times.max()
        censored_max = not np.any(s.statuses[s.times == t_max] == 1)
        expected = not (censored_max and t_max < tau)
        assert estimability(s, tau).fully_estimable_on_window is expected
