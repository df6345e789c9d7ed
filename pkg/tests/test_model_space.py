import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from crsurv.cohort import CohortMeta, expand_person_period
from crsurv.gibbs import SamplerConfig, run_chain
from crsurv.model import ParamBlock, cohort_loglik, simulate_cohort
from crsurv.model_space import (
    EvidenceConfig,
    batch_means_se,
    bma_mixture,
    dic,
    enumerate_models,
    fit_model,
    full_coefficients,
    inclusion_probabilities,
    inclusion_se,
    log_cpo,
    log_marginal_likelihood,
    mask_label,
    model_prior_vector,
    parse_mask,
    posterior_model_probs,
    psml,
    run_bma,
)
from crsurv.priors import PriorConfig

from conftest import make_records


def test_enumeration_order_and_cap():
    masks = enumerate_models(2)
    assert [mask_label(m) for m in masks] == ["00", "10", "01", "11"]
    assert len(enumerate_models(8)) == 256
    with pytest.raises(ValueError, match="cap"):
        enumerate_models(21)
    np.testing.assert_array_equal(parse_mask("101", 3), [True, False, True])
    with pytest.raises(ValueError):
        parse_mask("10", 3)


def test_equal_evidence_uniform_prior():
    masks = enumerate_models(3)
    probs = posterior_model_probs(np.zeros(8), model_prior_vector(masks, "uniform"))
    np.testing.assert_allclose(probs, 1 / 8, atol=1e-15)
    np.testing.assert_allclose(inclusion_probabilities(probs, masks), 0.5, atol=1e-15)


def test_equal_evidence_binomial_beta_odds():
    masks = enumerate_models(8)
    probs = posterior_model_probs(np.zeros(256), model_prior_vector(masks, "binomial-beta"))
    size4 = next(i for i, m in enumerate(masks) if m.sum() == 4)
    assert probs[0] / probs[size4] == pytest.approx(70.0, rel=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-10)


def test_dominant_model():
    probs = posterior_model_probs(np.array([0.0, 100.0, 3.0]), np.zeros(3))
    assert probs[1] == pytest.approx(1.0, abs=1e-15)


def test_ineligible_models_get_zero():
    probs = posterior_model_probs(np.array([-np.inf, 1.0, np.nan]), np.zeros(3))
    np.testing.assert_array_equal(probs, [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        posterior_model_probs(np.array([-np.inf]), np.zeros(1))


def test_inclusion_hand_computation():
    masks = enumerate_models(2)
    log_ml = np.array([-10.0, -8.5, -11.0, -9.2])
    w = np.exp(log_ml - log_ml.max())
    p = w / w.sum()
    got = inclusion_probabilities(posterior_model_probs(log_ml, np.full(4, -np.log(4))), masks)
    np.testing.assert_allclose(got, [p[1] + p[3], p[2] + p[3]], atol=1e-10)


def test_inclusion_se_zero_without_mc_error():
    masks = enumerate_models(2)
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(inclusion_se(probs, masks, np.zeros(4)), 0.0)
    assert np.all(inclusion_se(probs, masks, np.full(4, 0.1)) > 0)


def test_mixture_mean():
    rng = np.random.default_rng(0)
    pooled = bma_mixture([np.ones(10), np.full(10, 2.0)], np.array([0.7, 0.3]), 200_000, rng)
    assert pooled.mean() == pytest.approx(1.3, abs=0.005)


def test_mixture_single_model_is_identity():
    rng = np.random.default_rng(1)
    src = np.arange(50.0)
    pooled = bma_mixture([src, np.full(5, -1.0)], np.array([1.0, 0.0]), 1_000, rng)
    assert set(pooled) <= set(src)


def test_mixture_point_mass_at_zero():
    rng = np.random.default_rng(2)
    with_x = rng.normal(1.0, 0.1, size=500)
    pooled = bma_mixture([np.zeros(500), with_x], np.array([0.35, 0.65]), 100_000, rng)
    p0 = np.mean(pooled == 0.0)
    assert abs(p0 - 0.35) < 4 * np.sqrt(0.35 * 0.65 / 1e5)


def test_dic_and_psml_point_mass():
    ll = np.full(10, -42.0)
    d, p_d = dic(ll, -42.0)
    assert p_d == 0.0 and d == 84.0
    sub = np.tile([-1.0, -2.5, -0.5], (7, 1))
    np.testing.assert_allclose(log_cpo(sub), [-1.0, -2.5, -0.5])
    assert psml(sub) == pytest.approx(-4.0)
    with pytest.raises(ValueError):
        dic(np.zeros(1), 0.0)


def test_psml_additive_in_subjects(rng):
    sub = rng.normal(-1, 0.3, size=(40, 5))
    dup = np.hstack([sub, sub[:, [2]]])
    assert psml(dup) == pytest.approx(psml(sub) + log_cpo(sub)[2])


def test_zero_row_frame_has_zero_evidence():
    fr = expand_person_period([], CohortMeta.plain(1, 0), t0=2)
    assert log_marginal_likelihood(fr, PriorConfig()).log_ml == 0.0


def test_batch_means_se_iid(rng):
    x = rng.normal(size=40_000)
    assert batch_means_se(x) == pytest.approx(1 / 200, rel=0.15)
    assert batch_means_se(np.array([1.0, np.inf])) == np.inf


def test_cpo_matches_leave_one_out_quadrature():
    # binary intercept toy: every subject leaves at t=1
    n_ev, n = 9, 45
    recs = make_records([(1, 1)] * n_ev + [(1, 0)] * (n - n_ev))
    fr = expand_person_period(recs, CohortMeta.plain(1, 0), t0=2)
    draws = run_chain(fr, PriorConfig(), SamplerConfig(iterations=24_000, burn_in=0.1,
                                                       retained=21_600, seed=4))

    def z(events, total):
        f = lambda d: np.exp(events * d - total * np.logaddexp(0, d)
                             + stats.cauchy.logpdf(d, scale=10.0))
        return integrate.quad(f, -30, 30, limit=200, epsabs=0)[0]

    full = z(n_ev, n)
    exact = np.log([full / z(n_ev - 1, n - 1), full / z(n_ev, n - 1)])
    d = draws.delta[:, 0, 0]
    for i, (lik, ex) in enumerate(zip([expit(d), expit(-d)], exact)):
        inv = 1 / lik
        est = -np.log(inv.mean())
        se = batch_means_se(inv) / inv.mean()
        assert abs(est - ex) < 3 * se + 1e-12, i
    got = log_cpo(draws.subject_loglik)
    assert got[0] == pytest.approx(-np.log(np.mean(1 / expit(d))))


def test_pd_counts_effective_parameters():
    params = ParamBlock([[-1.5, -1.0, -1.2]], [[0.5]])
    recs = simulate_cohort(params, lambda g, m: g.normal(size=(m, 1)), 1_500, 5, 3)
    fr = expand_person_period(recs, CohortMeta.plain(1, 1), t0=3)
    draws = run_chain(fr, PriorConfig(), SamplerConfig(iterations=3_000, burn_in=0.2,
                                                       retained=2_400, seed=1))
    _, p_d = dic(draws.loglik, cohort_loglik(draws.posterior_mean(), fr))
    assert p_d == pytest.approx(4.0, rel=0.2)


def test_duplicate_covariate_is_ineligible():
    x = np.random.default_rng(0).normal(size=30)
    recs = make_records([(2, 1, [v, v]) for v in x])
    fit = fit_model(recs, CohortMeta.plain(1, 2), np.array([True, True]), 2, PriorConfig(),
                    SamplerConfig(iterations=10, retained=5), None)
    assert not fit.score.eligible and fit.draws is None


def test_full_coefficients_zero_for_excluded():
    recs = make_records([(2, 1, [1.0, 2.0, -1.0]), (1, 0, [0.5, 0.0, 1.0]), (3, 1, [2.0, 1.0, 0.0])])
    meta = CohortMeta.plain(1, 3)
    mask = np.array([True, False, True])
    fit = fit_model(recs, meta, mask, 2, PriorConfig(), SamplerConfig(iterations=20, retained=5), None)
    full = full_coefficients(fit.draws, mask, meta)
    assert full.shape == (5, 1, 3)
    np.testing.assert_array_equal(full[:, :, 1], 0.0)
    np.testing.assert_array_equal(full[:, :, [0, 2]], fit.draws.beta)


def test_bma_probabilities_normalised_and_worker_independent():
    params = ParamBlock([[-1.5, -1.0]], [[1.0, 0.0]])
    recs = simulate_cohort(params, lambda g, m: g.normal(size=(m, 2)), 150, 4, 2)
    meta = CohortMeta.plain(1, 2)
    sampler = SamplerConfig(iterations=200, retained=50, seed=3)
    ev = EvidenceConfig(rungs=4, rung_iterations=100, prior_draws=300)
    a = run_bma(recs, meta, 2, PriorConfig(), sampler, ev, workers=1)
    b = run_bma(recs, meta, 2, PriorConfig(), sampler, ev, workers=2)
    for choice in ("uniform", "binomial-beta"):
        assert a.probabilities[choice].sum() == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_array_equal(a.probabilities[choice], b.probabilities[choice])
    assert len(a.fits) == 4
