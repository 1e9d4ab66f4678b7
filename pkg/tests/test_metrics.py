import numpy as np
import pytest
from hypothesis import given, strategies as st

from swarm_gov.metrics import (
    CostTerms,
    MetricsError,
    MetricsReport,
    RunTrace,
    WindowSnapshot,
    adaptation_score,
    convergence_time,
    coordination_efficiency,
    global_optimality,
    latency_series,
    mean_latency,
    ratio_score,
    weighted_percentile,
)
from swarm_gov.simulator import RequestRecord

SLO = 0.5


def rec(latency, failed=False, window=0, count=1, ideal=0.1, worst=10.0):
    return RequestRecord(window, 0, count, latency, latency <= SLO and not failed, failed, (0,), ideal, worst)


def test_coordination_efficiency_examples():
    assert coordination_efficiency([rec(0.1), rec(0.4)], SLO) == 1.0
    assert coordination_efficiency([rec(10.0, True)] * 3, SLO) == 0.0
    six = [rec(0.1), rec(0.2), rec(0.3), rec(0.9), rec(0.8), rec(10.0, True)]
    assert coordination_efficiency(six, SLO) == 0.5
    with pytest.raises(MetricsError):
        coordination_efficiency([], SLO)


def test_coordination_efficiency_counts_weights():
    assert coordination_efficiency([rec(0.1, count=3), rec(0.9, count=1)], SLO) == 0.75


@given(st.lists(st.tuples(st.floats(0.01, 2.0), st.booleans()), min_size=1, max_size=40))
def test_coordination_efficiency_is_monotone(items):
    recs = [rec(lat, fail) for lat, fail in items]
    ce = coordination_efficiency(recs, SLO)
    assert 0.0 <= ce <= 1.0
    assert coordination_efficiency(recs + [rec(0.2)], SLO) >= ce
    assert coordination_efficiency(recs + [rec(10.0, True)], SLO) <= ce


def _trace(ce_by_window, n=10):
    """Each window gets n requests, round(ce * n) of them inside the SLO."""
    t = RunTrace()
    for w, ce in enumerate(ce_by_window):
        good = int(round(ce * n))
        if good:
            t.records.append(rec(0.1, window=w, count=good))
        if n - good:
            t.records.append(rec(2.0, window=w, count=n - good))
        t.windows.append(WindowSnapshot(w, 0.1, 0.1, 0.8))
    return t


def test_adaptation_score_examples():
    flat = _trace([0.8] * 10)
    assert adaptation_score(flat, (3, 5), SLO) == 1.0
    dip = _trace([0.8, 0.8, 0.8, 0.1, 0.1, 0.6, 0.6, 0.6, 0.8, 0.8])
    assert adaptation_score(dip, (3, 5), SLO) == pytest.approx(0.75)
    better = _trace([0.5, 0.5, 0.5, 0.0, 0.0, 0.9, 0.9, 0.9, 0.9])
    assert adaptation_score(better, (3, 5), SLO) == 1.0
    with pytest.raises(MetricsError):
        adaptation_score(_trace([0.8] * 6), (2, 4), SLO)
    assert ratio_score(0.0, 0.5) == 0.0


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_adaptation_is_scale_invariant(pre, post, c):
    assert ratio_score(c * pre, c * post) == pytest.approx(ratio_score(pre, post), rel=1e-12)


def _history(moves):
    """One role with two strategies; generation g moves the first share by moves[g-1]."""
    x = 0.5
    h = [[np.array([x, 1 - x])]]
    sign = 1.0
    for m in moves:
        x += sign * m
        sign = -sign
        h.append([np.array([x, 1 - x])])
    return h


def test_convergence_time_examples():
    const = [[np.array([0.3, 0.7])]] * 12
    assert convergence_time(const, 60.0, 0.02, 5) == 5 * 60.0
    flip = [[np.array([1.0, 0.0])], [np.array([0.0, 1.0])]] * 6
    assert convergence_time(flip, 60.0, 0.02, 3) is None
    geo = _history([0.5**g for g in range(1, 15)])
    assert convergence_time(geo, 2.0, 0.01, 3) == 9 * 2.0
    with pytest.raises(MetricsError):
        convergence_time(const[:3], 1.0, 0.02, 5)
    with pytest.raises(MetricsError):
        convergence_time(const, 1.0, 0.0, 5)


def test_convergence_uses_the_worst_role():
    calm = np.array([0.5, 0.5])
    h = [[calm, np.array([0.5, 0.5])]]
    for g in range(1, 10):
        other = np.array([0.5, 0.5]) if g % 2 else np.array([0.9, 0.1])
        h.append([calm, other])
    assert convergence_time(h, 1.0, 0.02, 2) is None


@given(st.lists(st.floats(0.0, 0.2), min_size=6, max_size=30), st.floats(0.001, 0.1), st.floats(0.001, 0.1),
       st.integers(1, 5))
def test_convergence_is_monotone_in_eps(moves, e1, e2, W):
    h = _history(moves)
    if len(h) < W + 1:
        return
    lo, hi = sorted((e1, e2))
    t_lo, t_hi = convergence_time(h, 1.0, lo, W), convergence_time(h, 1.0, hi, W)
    if t_lo is not None:
        assert t_hi is not None and t_hi <= t_lo


def _cost_trace(latency_fraction):
    """Records whose latency sits at a chosen point between the ideal and worst bound."""
    t = RunTrace()
    for w in range(4):
        lat = 0.1 + latency_fraction * (10.0 - 0.1)
        t.records.append(rec(lat, window=w, count=5))
        cpu = 0.1 + latency_fraction * (0.8 - 0.1)
        t.windows.append(WindowSnapshot(w, cpu, 0.1, 0.8))
    return t


def test_global_optimality_examples():
    assert global_optimality(_cost_trace(0.0)) == 1.0
    assert global_optimality(_cost_trace(1.0)) == 0.0
    assert global_optimality(_cost_trace(0.5)) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(MetricsError):
        global_optimality(RunTrace())


@given(st.floats(-0.5, 1.5))
def test_global_optimality_is_clamped(frac):
    assert 0.0 <= global_optimality(_cost_trace(frac)) <= 1.0


def test_latency_series_and_percentile():
    t = RunTrace()
    t.records = [rec(0.1, window=0, count=19), rec(1.0, window=0, count=1), rec(0.3, window=2)]
    t.windows = [WindowSnapshot(w, 0, 0, 0) for w in range(3)]
    s = latency_series(t)
    assert len(s) == 3
    assert s[0][1] == pytest.approx((19 * 0.1 + 1.0) / 20)
    assert s[0][2] == 0.1  # 95% of the mass sits at 0.1
    assert s[1] == (1, None, None)
    assert mean_latency(s, [0, 1, 2]) == pytest.approx(np.mean([s[0][1], 0.3]))
    assert weighted_percentile([3.0, 1.0, 2.0], [1, 1, 1], 0.5) == 2.0


def test_metrics_are_pure():
    t = _trace([0.2, 0.9, 0.4, 0.7, 0.7, 0.3, 0.8])
    assert coordination_efficiency(t, SLO) == coordination_efficiency(t, SLO)
    assert global_optimality(t) == global_optimality(t)
    assert latency_series(t) == latency_series(t)


def test_report_json():
    r = MetricsReport(0.5, None, None, 0.25, [(0, 0.1, 0.2)])
    doc = r.to_json()
    assert doc["convergence_time"] == "not converged"
    assert doc["latency_series"] == [{"window": 0, "mean_latency_s": 0.1, "p95_latency_s": 0.2}]
