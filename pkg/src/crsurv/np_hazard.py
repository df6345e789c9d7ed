"""Nonparametric cause-specific hazards and cumulative incidence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cohort import SubjectRecord


@dataclass(frozen=True)
class HazardCurve:
    """Cause-specific hazards on periods 1..T with a nonempty risk set.

    ``hazard[r - 1, t - 1]`` is h(r, t); ``events`` has the same layout and
    ``risk_set[t - 1]`` counts subjects with terminal time >= t.
    """

    hazard: np.ndarray
    risk_set: np.ndarray
    events: np.ndarray

    @property
    def periods(self) -> np.ndarray:
        return np.arange(1, self.risk_set.size + 1)

    @property
    def n_events(self) -> int:
        return self.hazard.shape[0]


def np_sub_hazard(records: Sequence[SubjectRecord], n_events: int | None = None) -> HazardCurve:
    """Events of type r at t divided by the number at risk at t."""
    times = np.array([rec.terminal_time for rec in records], dtype=int)
    codes = np.array([rec.event for rec in records], dtype=int)
    if n_events is None:
        n_events = int(codes.max(initial=0))
    horizon = int(times.max(initial=0))
    # risk_set[t-1] = #{i: t_i >= t}
    at_t = np.bincount(times, minlength=horizon + 1)[1:]
    risk_set = at_t[::-1].cumsum()[::-1]
    events = np.zeros((n_events, horizon), dtype=int)
    observed = codes > 0
    np.add.at(events, (codes[observed] - 1, times[observed] - 1), 1)
    hazard = events / np.maximum(risk_set, 1)
    return HazardCurve(hazard, risk_set, events)


def total_hazard(curve: HazardCurve) -> np.ndarray:
    """All-cause hazard h(t) = sum_r h(r, t)."""
    return curve.hazard.sum(axis=0)


def survivor(curve: HazardCurve) -> np.ndarray:
    """P(T > t) for t = 1..T."""
    return np.cumprod(1.0 - total_hazard(curve))


def cumulative_incidence(curve: HazardCurve) -> np.ndarray:
    """F(r, t) = sum_{s<=t} h(r, s) * prod_{u<s} (1 - h(u))."""
    surv = survivor(curve)
    before = np.concatenate([[1.0], surv[:-1]])
    return np.cumsum(curve.hazard * before, axis=1)
