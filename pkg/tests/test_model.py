import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crsurv.cohort import CohortMeta, expand_person_period
from crsurv.model import (
    ParamBlock,
    baseline_hazards,
    cohort_loglik,
    cohort_score,
    hazard,
    log_hazards,
    simulate_cohort,
    subject_loglik,
    subject_logliks,
)

from conftest import make_records
from oracles import path_loglik


def test_symmetric_softmax():
    p = ParamBlock.zeros(3, 2)
    np.testing.assert_allclose(hazard(p, np.array([1.0, 0.0])), 0.25)


def test_very_negative_cause():
    p = ParamBlock([[-20.0, 0.0], [0.0, 0.0]], np.zeros((2, 0)))
    h = hazard(p, np.array([1.0, 0.0]))
    e = np.exp(-20.0)
    np.testing.assert_allclose(h[1], e / (2 + e), rtol=1e-12)
    # three outcomes share the remaining mass: no-event, cause 2, and cause 1
    p3 = ParamBlock([[-20.0, 0.0], [0.0, 0.0], [0.0, 0.0]], np.zeros((3, 0)))
    np.testing.assert_allclose(hazard(p3, np.array([1.0, 0.0]))[1], e / (3 + e), rtol=1e-12)


def test_binary_reduction():
    p = ParamBlock([[0.3, -1.2]], [[0.7]])
    z = np.array([0.0, 1.0, 2.0])
    expect = 1 / (1 + np.exp(-(-1.2 + 1.4)))
    np.testing.assert_allclose(hazard(p, z)[1], expect, rtol=1e-14)


def test_extreme_predictors_stay_finite():
    p = ParamBlock([[800.0, -800.0], [-800.0, 800.0]], np.zeros((2, 0)))
    lh = log_hazards(p, np.eye(2))
    assert np.all(np.isfinite(lh))
    np.testing.assert_allclose(np.exp(lh).sum(axis=1), 1.0)


def test_likelihood_examples():
    zero = ParamBlock.zeros(1, 2)
    # binary, all odds 1: event at t=3 after two survivals
    design = np.array([[1, 0], [0, 1], [0, 1]], dtype=float)
    assert subject_loglik(zero, design, [0, 0, 1]) == pytest.approx(np.log(0.125), abs=1e-14)
    three = ParamBlock.zeros(3, 2)
    assert subject_loglik(three, design[:1], [2]) == pytest.approx(np.log(0.25), abs=1e-14)
    assert subject_loglik(zero, np.zeros((0, 2)), []) == 0.0


def test_subject_loglik_matches_enumeration(rng):
    for _ in range(50):
        params = ParamBlock(rng.normal(0, 1.5, (2, 3)), rng.normal(0, 1, (2, 2)))
        x = rng.normal(size=2)
        t, r = int(rng.integers(1, 5)), int(rng.integers(0, 3))
        fr = expand_person_period(make_records([(t, r, x)]), CohortMeta.plain(2, 2), t0=3)
        got = subject_loglik(params, fr.design, fr.outcome)
        assert got == pytest.approx(path_loglik(params, x, t, r), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_proportional_odds(b, shift):
    """The covariate effect on log(h_r / h_0) does not depend on the period."""
    p = ParamBlock([[-1.0, 0.5, 2.0]], [[b]])
    lo = []
    for t in range(3):
        z = np.zeros(4)
        z[t] = 1
        h0 = hazard(p, np.r_[z[:3], shift])
        h1 = hazard(p, np.r_[z[:3], shift + 1])
        lo.append(np.log(h1[1] / h1[0]) - np.log(h0[1] / h0[0]))
    np.testing.assert_allclose(lo, b, atol=1e-10)


def test_score_matches_finite_differences(rng):
    meta = CohortMeta.plain(2, 2)
    params = ParamBlock(rng.normal(-1, 0.5, (2, 3)), rng.normal(0, 0.5, (2, 2)))
    recs = simulate_cohort(params, lambda g, n: g.normal(size=(n, 2)), 60, 6, rng)
    fr = expand_person_period(recs, meta, t0=3)
    coef = params.stacked()
    grad = cohort_score(params, fr)
    num = np.zeros_like(coef)
    h = 1e-6
    for idx in np.ndindex(coef.shape):
        up, dn = coef.copy(), coef.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (cohort_loglik(ParamBlock.from_stacked(up, 3), fr)
                    - cohort_loglik(ParamBlock.from_stacked(dn, 3), fr)) / (2 * h)
    np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-6)


def test_label_symmetry(rng):
    params = ParamBlock(rng.normal(size=(3, 2)), rng.normal(size=(3, 1)))
    recs = simulate_cohort(params, lambda g, n: g.normal(size=(n, 1)), 40, 5, rng)
    perm = np.array([2, 0, 1])
    relabel = {0: 0, **{int(perm[i]) + 1: i + 1 for i in range(3)}}
    swapped = make_records([(r.terminal_time, relabel[r.event], r.covariates) for r in recs])
    meta = CohortMeta.plain(3, 1)
    a = cohort_loglik(params, expand_person_period(recs, meta, t0=2))
    b = cohort_loglik(ParamBlock(params.delta[perm], params.beta[perm]),
                      expand_person_period(swapped, meta, t0=2))
    assert a == pytest.approx(b, abs=1e-10)


def test_subject_logliks_sum(rng):
    params = ParamBlock(rng.normal(-1, 1, (2, 2)), np.zeros((2, 0)))
    recs = simulate_cohort(params, None, 30, 4, rng)
    fr = expand_person_period(recs, CohortMeta.plain(2, 0), t0=2)
    per = subject_logliks(params, fr)
    assert per.shape == (30,)
    assert per.sum() == pytest.approx(cohort_loglik(params, fr))


def test_simulation_matches_path_probabilities():
    params = ParamBlock([[-1.0, -0.5], [-1.5, 0.0]], [[0.8], [-0.4]])
    x = 0.5
    n, horizon = 100_000, 3
    recs = simulate_cohort(params, lambda g, m: np.full((m, 1), x), n, horizon, seed=9)
    counts = {}
    for rec in recs:
        counts[(rec.terminal_time, rec.event)] = counts.get((rec.terminal_time, rec.event), 0) + 1
    for t in range(1, horizon + 1):
        for r in range(3):
            if r == 0 and t < horizon:
                continue
            # r = 0 at the horizon is the all-survive path, i.e. censoring
            p = np.exp(path_loglik(params, np.array([x]), t, r))
            freq = counts.get((t, r), 0) / n
            assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-12, (t, r)


def test_always_event_one():
    params = ParamBlock([[50.0, 50.0], [-50.0, -50.0]], np.zeros((2, 0)))
    recs = simulate_cohort(params, None, 100, 5, seed=1)
    assert all(r.terminal_time == 1 and r.event == 1 for r in recs)


def test_baseline_hazards_sum_to_one():
    params = ParamBlock([[-1.0, 0.0, 1.0]], np.zeros((1, 0)))
    h = baseline_hazards(params, [1, 2, 3, 9])
    np.testing.assert_allclose(h.sum(axis=0), 1.0)
    np.testing.assert_allclose(h[1, 3], h[1, 2])


def test_param_block_validation():
    with pytest.raises(ValueError):
        ParamBlock([[np.nan, 0.0]], np.zeros((1, 0)))
