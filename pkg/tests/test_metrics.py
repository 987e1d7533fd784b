import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.common.errors import EmptyReportError, InvalidArgumentError
from src.env.flow import STAT_SMOOTHING
from src.metrics.conformance import (WARMUP_SLOTS, CapacityTrace, bucket_levels, compute_report, m1, m2, m3,
                                     mean_streak, warmup_slots, window_excess)
from src.models.tbrm import RateConstraint

CMAX = 20.0


def unit_trace(rates, rho_g=0.0, rho_M=CMAX, cmax=CMAX, tau=1.0):
    return CapacityTrace(rates=np.asarray(rates, dtype=float), tau=tau,
                         constraint=RateConstraint(rho_g=rho_g, rho_M=rho_M, cmax=cmax))


class TestM1:
    def test_excess_bucket(self):
        trace = unit_trace([2, 2, 0, 0], rho_M=1.0, cmax=4.0)
        assert list(bucket_levels((trace.rates - 1.0) * trace.tau)) == [1, 2, 1, 0]
        result = m1(trace, 1.0)
        assert result.max == 0.25 and not result.max_disabled
        assert result.min == 0.0 and result.min_disabled

    def test_deficit_bucket(self):
        result = m1(unit_trace([0, 1, 1], rho_g=1.0, rho_M=4.0, cmax=4.0), 0.5)
        assert result.min == 1.0 and not result.min_disabled
        assert result.max_disabled

    def test_conforming_trace(self):
        assert m1(unit_trace([3, 4, 5, 4], rho_g=3.0, rho_M=5.0), 0.1)[:2] == (0.0, 0.0)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            m1(unit_trace([1, 2]), 0.0)
        with pytest.raises(EmptyReportError):
            m1(unit_trace([]), 1.0)


class TestWindows:
    def test_m2_examples(self):
        trace = unit_trace([3, 0, 2, 2], rho_M=1.0, cmax=4.0)
        assert m2(trace, 2).max == 1.5
        assert m2(trace, 4).max == 3.0
        assert m2(unit_trace([2, 2, 2, 2], rho_g=2.0, rho_M=2.0), 2)[:2] == (0.0, 0.0)

    def test_trailing_partial_window_is_dropped(self):
        excess, deficit = window_excess(unit_trace([3, 0, 2, 2, 9], rho_M=1.0, cmax=10.0), 2)
        assert list(excess) == [1.0, 2.0]
        assert list(deficit) == [0.0, 0.0]

    def test_streaks(self):
        assert mean_streak([True, True, False, True]) == 1.5
        assert mean_streak([False] * 4) == 0.0
        assert mean_streak([True] * 7) == 7.0

    def test_m3(self):
        # windows of 1 slot over rho_M=1: excess flags (1, 1, 0, 1)
        assert m3(unit_trace([2, 3, 0, 2], rho_M=1.0, cmax=4.0), 1).max == 1.5
        assert m3(unit_trace([2, 3, 2, 2], rho_M=1.0, cmax=4.0), 2).max == 2.0
        assert m3(unit_trace([1, 1], rho_M=1.0, cmax=4.0), 1).max == 0.0

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            m2(unit_trace([1, 2]), 0)
        with pytest.raises(EmptyReportError):
            m3(unit_trace([1, 2, 3]), 4)


def test_trace_validation():
    with pytest.raises(InvalidArgumentError):
        unit_trace([1.0, 25.0])
    with pytest.raises(InvalidArgumentError):
        unit_trace([-1.0])
    with pytest.raises(InvalidArgumentError):
        unit_trace([1.0], tau=0.0)


bounds = st.integers(min_value=1, max_value=19).flatmap(
    lambda g: st.tuples(st.just(g), st.integers(min_value=g, max_value=19)))


def integer_rates(low, high, min_size=1):
    return st.lists(st.integers(min_value=low, max_value=high), min_size=min_size, max_size=80)


@settings(max_examples=100, deadline=None)
@given(rho=bounds, data=st.data())
def test_m1_non_increasing_in_burst(rho, data):
    trace = unit_trace(data.draw(integer_rates(0, 20)), rho_g=rho[0], rho_M=rho[1])
    xs = sorted(data.draw(st.lists(st.floats(min_value=0.01, max_value=50.0), min_size=2, max_size=6)))
    values = [m1(trace, x) for x in xs]
    for a, b in zip(values, values[1:]):
        assert b.max <= a.max and b.min <= a.min


@settings(max_examples=100, deadline=None)
@given(rho=bounds, data=st.data(), G=st.integers(min_value=1, max_value=10))
def test_merging_windows_never_adds_excess(rho, data, G):
    trace = unit_trace(data.draw(integer_rates(0, 20, min_size=2 * G)), rho_g=rho[0], rho_M=rho[1])
    small = window_excess(trace, G)
    large = window_excess(trace, 2 * G)
    for fine, coarse in zip(small, large):
        assert coarse.sum() <= fine.sum()


@settings(max_examples=100, deadline=None)
@given(rho=bounds, data=st.data(), G=st.integers(min_value=1, max_value=5))
def test_min_bound_mirrors_max_bound(rho, data, G):
    rho_g, rho_M = rho
    rates = data.draw(integer_rates(max(0, rho_g + rho_M - 20), min(20, rho_g + rho_M), min_size=G))
    trace = unit_trace(rates, rho_g=rho_g, rho_M=rho_M)
    mirrored = unit_trace([rho_g + rho_M - c for c in rates], rho_M=rho_M)
    assert m2(trace, G).min == m2(mirrored, G).max
    assert m3(trace, G).min == m3(mirrored, G).max


@settings(max_examples=100, deadline=None)
@given(rho=st.integers(min_value=1, max_value=19), data=st.data(), x=st.floats(min_value=0.05, max_value=5.0))
def test_m1_mirror_with_equal_bounds(rho, data, x):
    rates = data.draw(integer_rates(max(0, 2 * rho - 20), min(20, 2 * rho)))
    trace = unit_trace(rates, rho_g=rho, rho_M=rho)
    mirrored = unit_trace([2 * rho - c for c in rates], rho_M=rho)
    assert m1(trace, x).min == m1(mirrored, x).max


@settings(max_examples=100, deadline=None)
@given(rho=bounds, data=st.data(), x=st.floats(min_value=0.01, max_value=10.0),
       G=st.integers(min_value=1, max_value=8))
def test_conforming_traces_score_zero(rho, data, x, G):
    rates = data.draw(integer_rates(rho[0], rho[1], min_size=G))
    trace = unit_trace(rates, rho_g=rho[0], rho_M=rho[1])
    for metric in (m1(trace, x), m2(trace, G), m3(trace, G)):
        assert metric[:2] == (0.0, 0.0)


class TestReport:
    def test_disabled_bounds_are_nan(self):
        report = compute_report(unit_trace([5.0] * 40, rho_g=0.0, rho_M=10.0), [1.0], [0.5], [1, 4], warmup=0)
        assert report.min_disabled and not report.max_disabled
        assert math.isnan(report.m1_min[0.5]) and math.isnan(report.m2_min[4]) and math.isnan(report.m3_min[1])
        assert report.m1_max[1.0] == 0.0 and report.m2_max[4] == 0.0 and report.m3_max[1] == 0.0

    def test_warmup_is_cut(self):
        rates = [20.0] * 20 + [5.0] * 30
        trace = unit_trace(rates, rho_g=2.0, rho_M=10.0)
        cut = compute_report(trace, [1.0], [1.0], [1], warmup=20)
        assert cut.m1_max[1.0] == 0.0 and cut.m2_max[1] == 0.0
        kept = compute_report(trace, [1.0], [1.0], [1], warmup=0)
        assert kept.m1_max[1.0] > 0.0 and kept.m2_max[1] == pytest.approx(10.0 * 20 / 50)

    def test_default_warmup_outlasts_the_cold_start(self):
        assert WARMUP_SLOTS == warmup_slots() == 100
        # weight left on the initial value of an average when the metric window opens
        assert (1 - STAT_SMOOTHING) ** WARMUP_SLOTS < 0.01
        assert warmup_slots(1.0) == 20 and warmup_slots(5.0, smoothing=0.1) == 50 and warmup_slots(0.0) == 0
        with pytest.raises(InvalidArgumentError):
            warmup_slots(-1.0)
        with pytest.raises(InvalidArgumentError):
            warmup_slots(5.0, smoothing=0.0)

    def test_default_warmup_is_applied(self):
        trace = unit_trace([20.0] * WARMUP_SLOTS + [5.0] * 30, rho_g=2.0, rho_M=10.0)
        report = compute_report(trace, [1.0], [1.0], [1])
        assert report.m1_max[1.0] == 0.0 and report.m2_max[1] == 0.0 and report.m1_min[1.0] == 0.0

    def test_long_windows_are_skipped(self):
        report = compute_report(unit_trace([5.0] * 30, rho_g=2.0, rho_M=10.0), [1.0], [1.0], [1, 10, 40], warmup=20)
        assert sorted(report.m2_max) == [1, 10]

    def test_errors(self):
        trace = unit_trace([5.0] * 30, rho_g=2.0, rho_M=10.0)
        with pytest.raises(EmptyReportError):
            compute_report(trace, [1.0], [1.0], [1], warmup=30)
        with pytest.raises(InvalidArgumentError):
            compute_report(trace, [1.0], [0.0], [1], warmup=0)

    def test_fractions_and_averages_are_in_range(self):
        rng = np.random.default_rng(3)
        trace = unit_trace(rng.uniform(0, CMAX, 500), rho_g=6.0, rho_M=12.0)
        report = compute_report(trace, [0.5, 1.0, 4.0], [0.1, 0.5, 1.0], [1, 5, 25])
        for values in (report.m1_max, report.m1_min):
            assert all(0.0 <= v <= 1.0 for v in values.values())
        for values in (report.m2_max, report.m2_min, report.m3_max, report.m3_min):
            assert all(v >= 0.0 for v in values.values())
