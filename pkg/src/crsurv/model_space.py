"""Model space: enumeration, evidence, posterior model probabilities, BMA.

Evidence (log marginal likelihood) comes from a ladder of power posteriors
``prior * L ** tau`` with ``tau_j = (j / K) ** power``.  The reported
estimate is the stepping-stone product of ratios
``E_{tau_{j-1}}[L ** (tau_j - tau_{j-1})]``; the trapezoid
(thermodynamic-integration) value over the same ladder is kept alongside
it.  Rung 0 is sampled exactly from the prior.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .cohort import CohortMeta, PersonPeriodFrame, SubjectRecord, expand_person_period
from .gibbs import GibbsSampler, PosteriorDraws, SamplerConfig, chain_rng, run_chain
from .model import ParamBlock, cohort_loglik
from .priors import (
    IneligibleModel,
    PriorConfig,
    check_xtx,
    log_model_prior,
    sample_log_g,
)

logger = logging.getLogger(__name__)

MAX_K_STAR = 20


def enumerate_models(k_star: int, cap: int = MAX_K_STAR) -> list[np.ndarray]:
    """All 2^k* inclusion masks in binary-counting order (bit j = covariate j+1)."""
    if k_star < 0:
        raise ValueError("k* must be nonnegative")
    if k_star > cap:
        raise ValueError(f"k* = {k_star} exceeds the enumeration cap {cap}")
    bits = np.arange(k_star)
    return [((m >> bits) & 1).astype(bool) for m in range(2 ** k_star)]


def mask_label(mask: Sequence[bool]) -> str:
    """Bit string with covariate 1 first, e.g. '10' for {x1}."""
    return "".join("1" if b else "0" for b in mask)


def parse_mask(text: str, k_star: int) -> np.ndarray:
    text = text.strip()
    if len(text) != k_star or set(text) - {"0", "1"}:
        raise ValueError(f"mask must be a {k_star}-character bit string")
    return np.array([c == "1" for c in text], dtype=bool)


# -- MC error -------------------------------------------------------------

def batch_means_se(x: np.ndarray) -> float:
    """Standard error of the mean of an autocorrelated series by batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if not np.all(np.isfinite(x)):
        return np.inf
    if n < 4:
        return float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else np.inf
    size = max(int(np.sqrt(n)), 1)
    nb = n // size
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    iid = np.std(x, ddof=1) / np.sqrt(n)
    return float(max(np.std(means, ddof=1) / np.sqrt(nb), iid))


# -- evidence -------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceConfig:
    rungs: int = 20
    ladder_power: float = 5.0
    rung_iterations: int = 2_000
    rung_burn_in: float = 0.25
    prior_draws: int = 5_000
    seed: int = 0

    def temperatures(self) -> np.ndarray:
        return (np.arange(self.rungs + 1) / self.rungs) ** self.ladder_power

    def rung_config(self) -> SamplerConfig:
        burn = int(self.rung_iterations * self.rung_burn_in)
        return SamplerConfig(iterations=self.rung_iterations, burn_in=self.rung_burn_in,
                             retained=self.rung_iterations - burn, seed=self.seed,
                             rescale_moves=True)


@dataclass
class EvidenceResult:
    log_ml: float
    mc_error: float
    temperatures: np.ndarray
    mean_loglik: np.ndarray
    var_loglik: np.ndarray
    log_ratios: np.ndarray
    ti_estimate: float
    ti_mc_error: float


def sample_prior(frame: PersonPeriodFrame, prior: PriorConfig, size: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Independent prior draws of the stacked coefficients, shape (size, R, t0+k)."""
    R, t0, k = frame.n_events, frame.t0, frame.k
    lam = rng.gamma(0.5, 2.0, size=(size, R))
    delta = rng.standard_normal((size, R, t0)) * np.sqrt(prior.omega2 / lam)[:, :, None]
    beta = np.zeros((size, R, k))
    log_g = np.zeros((size, R))
    if k:
        b1, b2 = prior.g_hyper(frame.n_subjects, k)
        chol = check_xtx(frame.xtx())
        log_g = sample_log_g(rng, b1, b2, size=(size, R))
        # beta = sqrt(g) * L^-T z has covariance g (X'X)^-1
        z = rng.standard_normal((size, R, k))
        base = np.linalg.solve(chol.T, z.reshape(-1, k).T).T.reshape(size, R, k)
        beta = base * np.exp(0.5 * log_g)[:, :, None]
    return np.concatenate([delta, beta], axis=2), log_g


def _loglik_draws(frame: PersonPeriodFrame, coefs: np.ndarray) -> np.ndarray:
    out = np.empty(coefs.shape[0])
    for m, coef in enumerate(coefs):
        if not np.all(np.isfinite(coef)):
            out[m] = -np.inf
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            val = cohort_loglik(ParamBlock.from_stacked(coef, frame.t0), frame)
        out[m] = val if np.isfinite(val) else -np.inf
    return out


def _log_mean_exp_se(logw: np.ndarray) -> tuple[float, float]:
    """log of the mean of exp(logw) and the delta-method SE of that log."""
    n = logw.size
    est = float(logsumexp(logw) - np.log(n))
    w = np.exp(logw - logw.max())
    mean = w.mean()
    if mean <= 0:
        return est, np.inf
    return est, batch_means_se(w) / mean


def log_marginal_likelihood(
    frame: PersonPeriodFrame,
    prior: PriorConfig,
    config: EvidenceConfig | None = None,
    model_index: int = 0,
) -> EvidenceResult:
    """Stepping-stone estimate of log p(data | model) with its MC standard error."""
    config = config or EvidenceConfig()
    if frame.k:
        check_xtx(frame.xtx())
    temps = config.temperatures()
    K = config.rungs
    if frame.n_rows == 0:
        zeros = np.zeros(K + 1)
        return EvidenceResult(0.0, 0.0, temps, zeros, zeros, np.zeros(K), 0.0, 0.0)

    rng = chain_rng(config.seed, model_index, 1_000)
    coefs, _ = sample_prior(frame, prior, config.prior_draws, rng)
    rung_ll = [_loglik_draws(frame, coefs)]

    rung_cfg = replace(config.rung_config(), seed=config.seed)
    state = None
    for j in range(1, K + 1):
        sampler = GibbsSampler(frame, prior, rung_cfg, temps[j])
        if state is None:
            state = sampler.initial_state(chain_rng(config.seed, model_index, 1_000 + j))
        state.iteration = 0
        draws = run_chain(frame, prior, rung_cfg, temperature=temps[j],
                          model_index=model_index, chain_index=1_000 + j, state=state)
        rung_ll.append(draws.loglik)

    log_ratios = np.zeros(K)
    var_terms = np.zeros(K)
    for j in range(1, K + 1):
        est, se = _log_mean_exp_se((temps[j] - temps[j - 1]) * rung_ll[j - 1])
        log_ratios[j - 1] = est
        var_terms[j - 1] = se ** 2

    # trapezoid over the same ladder (with the variance correction); under
    # heavy-tailed priors E_0[log L] can diverge, in which case it is NaN
    with np.errstate(over="ignore", invalid="ignore"):
        means = np.array([ll.mean() for ll in rung_ll])
        variances = np.array([ll.var(ddof=1) for ll in rung_ll])
        ses = np.array([batch_means_se(ll) for ll in rung_ll])
        dt = np.diff(temps)
        ti = float(np.sum(dt * (means[1:] + means[:-1]) / 2)
                   - np.sum(dt ** 2 * (variances[1:] - variances[:-1]) / 12))
        weights = np.zeros(K + 1)
        weights[1:] += dt / 2
        weights[:-1] += dt / 2
        ti_se = float(np.sqrt(np.sum((weights * ses) ** 2)))
    if not (np.isfinite(ti) and np.isfinite(ti_se)):
        ti, ti_se = float("nan"), float("nan")

    return EvidenceResult(
        log_ml=float(log_ratios.sum()),
        mc_error=float(np.sqrt(var_terms.sum())),
        temperatures=temps,
        mean_loglik=means,
        var_loglik=variances,
        log_ratios=log_ratios,
        ti_estimate=ti,
        ti_mc_error=ti_se,
    )


# -- criteria -------------------------------------------------------------

def dic(loglik_draws: np.ndarray, loglik_at_mean: float) -> tuple[float, float]:
    """(DIC, pD) with deviance -2 loglik and the posterior-mean plug-in."""
    loglik_draws = np.asarray(loglik_draws, dtype=float)
    if loglik_draws.size < 2:
        raise ValueError("DIC needs at least two draws")
    dbar = -2.0 * loglik_draws.mean()
    p_d = dbar + 2.0 * loglik_at_mean
    return float(dbar + p_d), float(p_d)


def log_cpo(subject_loglik: np.ndarray) -> np.ndarray:
    """Per-subject log CPO: harmonic mean of the likelihood over draws."""
    ll = np.atleast_2d(np.asarray(subject_loglik, dtype=float))
    return np.log(ll.shape[0]) - logsumexp(-ll, axis=0)


def psml(subject_loglik: np.ndarray) -> float:
    """log pseudo-marginal likelihood, sum_i log CPO_i."""
    return float(np.sum(log_cpo(subject_loglik)))


# -- model probabilities and averaging ------------------------------------

def posterior_model_probs(log_ml: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """Normalise log ML + log prior over eligible models (NaN/-inf = ineligible)."""
    score = np.asarray(log_ml, dtype=float) + np.asarray(log_prior, dtype=float)
    score = np.where(np.isfinite(score), score, -np.inf)
    if not np.isfinite(score).any():
        raise ValueError("no eligible model")
    return np.exp(score - logsumexp(score))


def model_prior_vector(masks: Sequence[np.ndarray], choice: str,
                       a1: float = 1.0, a2: float = 1.0) -> np.ndarray:
    return np.array([log_model_prior(m, choice, a1, a2) for m in masks])


def inclusion_probabilities(probs: np.ndarray, masks: Sequence[np.ndarray]) -> np.ndarray:
    """P(covariate j included | data) = sum of probabilities of masks containing j."""
    return np.asarray(probs) @ np.array(masks, dtype=float).reshape(len(masks), -1)


def inclusion_se(probs: np.ndarray, masks: Sequence[np.ndarray], log_ml_se: np.ndarray) -> np.ndarray:
    """Delta-method MC error of inclusion probabilities from log-ML errors."""
    probs = np.asarray(probs)
    mat = np.array(masks, dtype=float).reshape(len(masks), -1)
    incl = probs @ mat
    se = np.where(np.isfinite(log_ml_se), log_ml_se, 0.0)
    grad = probs[:, None] * (mat - incl[None, :])
    return np.sqrt(np.sum((grad * se[:, None]) ** 2, axis=0))


def bma_mixture(per_model: Sequence[np.ndarray], probs: np.ndarray, size: int,
                rng: np.random.Generator) -> np.ndarray:
    """Pool draws of a quantity across models by resampling with model weights.

    ``per_model[m]`` holds draws (first axis) of the quantity under model m;
    a coefficient excluded from a model should be passed as zeros.
    """
    probs = np.asarray(probs, dtype=float)
    which = rng.choice(len(per_model), size=size, p=probs / probs.sum())
    first = np.asarray(per_model[int(np.argmax(probs))])
    out = np.empty((size,) + first.shape[1:])
    for m in np.unique(which):
        pick = np.flatnonzero(which == m)
        src = np.asarray(per_model[m])
        out[pick] = src[rng.integers(0, src.shape[0], size=pick.size)]
    return out


def full_coefficients(draws: PosteriorDraws, mask: np.ndarray, meta: CohortMeta) -> np.ndarray:
    """(M, R, k) coefficient draws on all design columns; excluded columns are exactly 0."""
    cols = meta.columns_for(mask)
    out = np.zeros(draws.beta.shape[:2] + (meta.k,))
    out[:, :, cols] = draws.beta
    return out


# -- per-model fit and full enumeration -----------------------------------

@dataclass
class ModelScore:
    index: int
    mask: np.ndarray
    eligible: bool = True
    log_ml: float = float("nan")
    log_ml_se: float = float("nan")
    ti_log_ml: float = float("nan")
    dic: float = float("nan")
    p_d: float = float("nan")
    log_psml: float = float("nan")
    log_prior: dict = field(default_factory=dict)
    probability: dict = field(default_factory=dict)


@dataclass
class ModelFit:
    score: ModelScore
    draws: PosteriorDraws | None


def fit_model(
    records: Sequence[SubjectRecord],
    meta: CohortMeta,
    mask: np.ndarray,
    t0: int,
    prior: PriorConfig,
    sampler: SamplerConfig,
    evidence: EvidenceConfig | None,
    model_index: int = 0,
) -> ModelFit:
    """Posterior chain, DIC, PsML and (optionally) evidence for one mask."""
    mask = np.asarray(mask, dtype=bool)
    frame = expand_person_period(records, meta, t0=t0, mask=mask)
    score = ModelScore(model_index, mask)
    try:
        if frame.k:
            check_xtx(frame.xtx())
    except IneligibleModel as exc:
        logger.warning("model %s ineligible: %s", mask_label(mask), exc)
        score.eligible = False
        return ModelFit(score, None)
    draws = run_chain(frame, prior, sampler, model_index=model_index)
    at_mean = cohort_loglik(draws.posterior_mean(), frame)
    score.dic, score.p_d = dic(draws.loglik, at_mean)
    score.log_psml = psml(draws.subject_loglik)
    if evidence is not None:
        ev = log_marginal_likelihood(frame, prior, replace(evidence, seed=sampler.seed),
                                     model_index=model_index)
        score.log_ml, score.log_ml_se, score.ti_log_ml = ev.log_ml, ev.mc_error, ev.ti_estimate
    return ModelFit(score, draws)


@dataclass
class BMAResult:
    fits: list[ModelFit]
    masks: list[np.ndarray]
    probabilities: dict[str, np.ndarray]
    inclusion: dict[str, np.ndarray]
    inclusion_se: dict[str, np.ndarray]


def _fit_star(args):
    return fit_model(*args)


def run_bma(
    records: Sequence[SubjectRecord],
    meta: CohortMeta,
    t0: int,
    prior: PriorConfig,
    sampler: SamplerConfig,
    evidence: EvidenceConfig | None = None,
    workers: int = 1,
    masks: Sequence[np.ndarray] | None = None,
) -> BMAResult:
    """Fit every model and compute probabilities under both model-space priors.

    Each model owns the RNG stream keyed by its index, so the result does not
    depend on ``workers``.
    """
    evidence = evidence or EvidenceConfig()
    masks = list(masks) if masks is not None else enumerate_models(meta.k_star)
    jobs = [(records, meta, m, t0, prior, sampler, evidence, i) for i, m in enumerate(masks)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(_fit_star, jobs))
    else:
        fits = [_fit_star(job) for job in jobs]

    log_ml = np.array([f.score.log_ml if f.score.eligible else -np.inf for f in fits])
    log_ml_se = np.array([f.score.log_ml_se if f.score.eligible else 0.0 for f in fits])
    probabilities, inclusion, incl_se = {}, {}, {}
    for choice in ("uniform", "binomial-beta"):
        lp = model_prior_vector(masks, choice, prior.beta_a1, prior.beta_a2)
        probs = posterior_model_probs(log_ml, lp)
        probabilities[choice] = probs
        inclusion[choice] = inclusion_probabilities(probs, masks)
        incl_se[choice] = inclusion_se(probs, masks, log_ml_se)
        for f, p, l in zip(fits, probs, lp):
            f.score.probability[choice] = float(p)
            f.score.log_prior[choice] = float(l)
    return BMAResult(fits, masks, probabilities, inclusion, incl_se)
