"""Run-level measurements computed from traces.

All quantities are request-weighted: a ``RequestRecord`` with ``count = k``
contributes k requests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .simulator import RequestRecord


class MetricsError(ValueError):
    pass


@dataclass
class WindowSnapshot:
    window: int
    cpu_cost: float  # mean over live services of replicas * unit cost
    cpu_ideal: float  # same at one replica each
    cpu_worst: float  # same at max replicas
    replicas: float = 0.0  # mean replicas over live services
    mean_reward: float = 0.0


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    windows: list = field(default_factory=list)  # WindowSnapshot per window
    window_length: float = 60.0
    events: list = field(default_factory=list)  # (window, event json)

    @property
    def num_windows(self) -> int:
        return len(self.windows)

    def in_windows(self, lo: int, hi: int) -> list:
        return [r for r in self.records if lo <= r.window < hi]


@dataclass(frozen=True)
class CostTerms:
    beta: float = 0.1
    slo_target: float = 0.5


@dataclass
class MetricsReport:
    coordination_efficiency: float
    adaptation_score: float | None
    convergence_time: float | None
    global_optimality: float
    latency_series: list  # [(window, mean_s, p95_s)]

    def to_json(self) -> dict:
        return {
            "coordination_efficiency": self.coordination_efficiency,
            "adaptation_score": self.adaptation_score,
            "convergence_time": "not converged" if self.convergence_time is None else self.convergence_time,
            "global_optimality": self.global_optimality,
            "latency_series": [
                {"window": w, "mean_latency_s": m, "p95_latency_s": p} for w, m, p in self.latency_series
            ],
        }


def _records(trace) -> Sequence[RequestRecord]:
    return trace.records if isinstance(trace, RunTrace) else list(trace)


def coordination_efficiency(trace, slo_target: float) -> float:
    """Share of requests that completed within the SLO; failures stay in the denominator."""
    recs = _records(trace)
    total = sum(r.count for r in recs)
    if total == 0:
        raise MetricsError("coordination efficiency of an empty trace")
    ok = sum(r.count for r in recs if not r.failed and r.latency <= slo_target)
    return ok / total


def adaptation_score(trace: RunTrace, disturbance: tuple, slo_target: float, span: int = 3) -> float:
    """min(1, CE after / CE before) around a disturbance ``(first_window, end_window_exclusive)``.

    CE before uses the ``span`` windows preceding the disturbance, CE after
    the ``span`` windows following its end.
    """
    start, end = disturbance
    if start - span < 0 or end + span > trace.num_windows:
        raise MetricsError(
            f"need {span} windows before {start} and after {end}; trace has {trace.num_windows}"
        )
    pre = coordination_efficiency(trace.in_windows(start - span, start), slo_target)
    post = coordination_efficiency(trace.in_windows(end, end + span), slo_target)
    return ratio_score(pre, post)


def ratio_score(ce_pre: float, ce_post: float) -> float:
    if ce_pre <= 0:
        return 0.0
    return min(1.0, ce_post / ce_pre)


def convergence_time(share_history, wall: float, eps: float, W: int) -> float | None:
    """Simulated seconds until shares move by less than ``eps`` for ``W`` generations in a row.

    ``share_history[g]`` holds the share vectors of every role after
    generation g. The movement at generation g is the largest L-infinity
    change over roles between g-1 and g; the returned time is the generation
    that completes the first run of ``W`` small moves, times ``wall``.
    """
    if eps <= 0 or W < 1:
        raise MetricsError("eps must be > 0 and W >= 1")
    if len(share_history) < W + 1:
        raise MetricsError(f"history of {len(share_history)} generations is shorter than W+1 = {W + 1}")
    run = 0
    for g in range(1, len(share_history)):
        prev, cur = share_history[g - 1], share_history[g]
        move = max(float(np.max(np.abs(np.asarray(c) - np.asarray(p)))) for c, p in zip(cur, prev))
        run = run + 1 if move < eps else 0
        if run >= W:
            return g * wall
    return None


def _window_costs(trace: RunTrace, cost: CostTerms):
    by_window: dict = {}
    for r in trace.records:
        acc = by_window.setdefault(r.window, [0, 0.0, 0.0, 0.0])
        acc[0] += r.count
        acc[1] += r.count * r.latency
        acc[2] += r.count * r.ideal_latency
        acc[3] += r.count * r.worst_latency
    snaps = {s.window: s for s in trace.windows}
    achieved, ideal, worst = [], [], []
    for w in sorted(by_window):
        n, lat, lat_i, lat_w = by_window[w]
        s = snaps.get(w)
        cpu = (s.cpu_cost, s.cpu_ideal, s.cpu_worst) if s else (0.0, 0.0, 0.0)
        achieved.append(lat / n / cost.slo_target + cost.beta * cpu[0])
        ideal.append(lat_i / n / cost.slo_target + cost.beta * cpu[1])
        worst.append(lat_w / n / cost.slo_target + cost.beta * cpu[2])
    return np.array(achieved), np.array(ideal), np.array(worst)


def global_optimality(trace: RunTrace, cost_terms: CostTerms = CostTerms()) -> float:
    """1 - (cost - ideal) / (worst - ideal) on the mean per-window system cost, clamped to [0, 1]."""
    if not trace.records:
        raise MetricsError("global optimality of an empty trace")
    achieved, ideal, worst = _window_costs(trace, cost_terms)
    a, i, w = achieved.mean(), ideal.mean(), worst.mean()
    if w - i <= 0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - (a - i) / (w - i))))


def weighted_percentile(values, weights, q: float) -> float:
    v = np.asarray(values, dtype=float)
    wts = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(wts[order])
    k = int(np.searchsorted(cum, q * cum[-1], side="left"))
    return float(v[order][min(k, len(v) - 1)])


def latency_series(trace: RunTrace) -> list:
    """(window, mean latency, p95 latency) per window; ``None`` where a window saw no requests."""
    out = []
    for w in range(trace.num_windows):
        recs = [r for r in trace.records if r.window == w]
        n = sum(r.count for r in recs)
        if n == 0:
            out.append((w, None, None))
            continue
        mean = sum(r.count * r.latency for r in recs) / n
        p95 = weighted_percentile([r.latency for r in recs], [r.count for r in recs], 0.95)
        out.append((w, mean, p95))
    return out


def mean_latency(series: list, windows: Sequence[int]) -> float:
    vals = [m for w, m, _ in series if w in set(windows) and m is not None]
    if not vals:
        return math.nan
    return float(np.mean(vals))
