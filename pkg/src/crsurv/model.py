"""Multinomial-logistic proportional-odds model for discrete competing risks.

For event r in 1..R at period t the log-odds against "no event" is
``delta[r, min(t, t0)] + x' beta[r]``; the R+1 hazards are the softmax of
``(0, eta_1, ..., eta_R)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cohort import PersonPeriodFrame, SubjectRecord, period_design


@dataclass(frozen=True)
class ParamBlock:
    """Period log-odds ``delta`` (R x t0) and coefficients ``beta`` (R x k)."""

    delta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float, ndmin=2)
        beta = np.array(self.beta, dtype=float).reshape(delta.shape[0], -1)
        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(beta))):
            raise ValueError("parameters must be finite")
        delta.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "beta", beta)

    @property
    def n_events(self) -> int:
        return self.delta.shape[0]

    @property
    def t0(self) -> int:
        return self.delta.shape[1]

    @property
    def k(self) -> int:
        return self.beta.shape[1]

    def stacked(self) -> np.ndarray:
        """Rows (delta_r', beta_r')' matching the design column order."""
        return np.hstack([self.delta, self.beta])

    @classmethod
    def from_stacked(cls, coef: np.ndarray, t0: int) -> "ParamBlock":
        coef = np.asarray(coef, dtype=float)
        return cls(coef[:, :t0], coef[:, t0:])

    @classmethod
    def zeros(cls, n_events: int, t0: int, k: int = 0) -> "ParamBlock":
        return cls(np.zeros((n_events, t0)), np.zeros((n_events, k)))


def linear_predictors(params: ParamBlock, design: np.ndarray) -> np.ndarray:
    """(N, R) matrix of log-odds against the no-event category."""
    eta = np.asarray(design, dtype=float) @ params.stacked().T
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite linear predictor")
    return eta


def log1p_sum_exp(eta: np.ndarray) -> np.ndarray:
    """Row-wise log(1 + sum_j exp(eta_j)), shifted by the row maximum."""
    if eta.shape[1] == 0:
        return np.zeros(eta.shape[0])
    m = np.maximum(eta.max(axis=1), 0.0)
    return m + np.log(np.exp(-m) + np.exp(eta - m[:, None]).sum(axis=1))


def log_hazards(params: ParamBlock, design: np.ndarray) -> np.ndarray:
    """(N, R+1) log hazards; column 0 is the no-event category."""
    eta = linear_predictors(params, np.atleast_2d(design))
    full = np.hstack([np.zeros((eta.shape[0], 1)), eta])
    return full - log1p_sum_exp(eta)[:, None]


def hazard(params: ParamBlock, z: np.ndarray) -> np.ndarray:
    """Hazards (h(0,t), h(1,t), ..., h(R,t)) for one design vector."""
    z = np.asarray(z, dtype=float)
    if z.shape != (params.t0 + params.k,):
        raise ValueError(f"design vector must have length {params.t0 + params.k}")
    return np.exp(log_hazards(params, z[None, :])[0])


def baseline_hazards(params: ParamBlock, periods: Sequence[int]) -> np.ndarray:
    """(R+1, len(periods)) hazards at the reference covariate x = 0."""
    design = np.hstack([period_design(np.asarray(periods), params.t0),
                        np.zeros((len(periods), params.k))])
    return np.exp(log_hazards(params, design)).T


def row_loglik(params: ParamBlock, frame: PersonPeriodFrame) -> np.ndarray:
    """log h(y_it, t | z_it) for each person-period row."""
    if frame.n_rows == 0:
        return np.zeros(0)
    lh = log_hazards(params, frame.design)
    return lh[np.arange(frame.n_rows), frame.outcome]


def subject_loglik(params: ParamBlock, design: np.ndarray, outcome: np.ndarray) -> float:
    """Log-likelihood of one subject's rows, sum_t log h(y_t, t)."""
    outcome = np.asarray(outcome, dtype=int)
    if outcome.size == 0:
        return 0.0
    lh = log_hazards(params, design)
    return float(lh[np.arange(outcome.size), outcome].sum())


def subject_logliks(params: ParamBlock, frame: PersonPeriodFrame) -> np.ndarray:
    """Per-subject log-likelihoods (length n_subjects)."""
    return np.bincount(frame.subject, weights=row_loglik(params, frame),
                       minlength=frame.n_subjects)


def cohort_loglik(params: ParamBlock, frame: PersonPeriodFrame) -> float:
    # summed per subject first so the result does not depend on row layout
    return float(np.sum(subject_logliks(params, frame)))


def cohort_score(params: ParamBlock, frame: PersonPeriodFrame) -> np.ndarray:
    """Gradient of :func:`cohort_loglik` w.r.t. the stacked (R, t0+k) coefficients."""
    probs = np.exp(log_hazards(params, frame.design))[:, 1:]
    onehot = frame.outcome[:, None] == np.arange(1, params.n_events + 1)[None, :]
    return (onehot - probs).T @ frame.design


CovariateSampler = Callable[[np.random.Generator, int], np.ndarray]


def simulate_cohort(
    params: ParamBlock,
    covariate_sampler: CovariateSampler | None,
    n: int,
    horizon: int,
    seed: int | np.random.Generator | None = None,
) -> list[SubjectRecord]:
    """Forward-simulate (T, R) for ``n`` subjects.

    Each period every subject still at risk draws an outcome from the R+1
    hazards; subjects without an event by ``horizon`` are censored there.
    """
    if n < 1 or horizon < 1:
        raise ValueError("n and horizon must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if params.k == 0:
        x = np.zeros((n, 0))
    else:
        if covariate_sampler is None:
            raise ValueError("a covariate sampler is required when k > 0")
        x = np.asarray(covariate_sampler(rng, n), dtype=float).reshape(n, params.k)
    xb = x @ params.beta.T
    times = np.full(n, horizon, dtype=int)
    events = np.zeros(n, dtype=int)
    alive = np.arange(n)
    for t in range(1, horizon + 1):
        if alive.size == 0:
            break
        eta = params.delta[:, min(t, params.t0) - 1][None, :] + xb[alive]
        full = np.hstack([np.zeros((alive.size, 1)), eta])
        probs = np.exp(full - log1p_sum_exp(eta)[:, None])
        u = rng.random(alive.size)
        draw = np.minimum((u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), params.n_events)
        hit = draw > 0
        times[alive[hit]] = t
        events[alive[hit]] = draw[hit]
        alive = alive[~hit]
    return [SubjectRecord(str(i + 1), times[i], events[i], x[i]) for i in range(n)]
