"""Polya-Gamma Gibbs sampler for the competing-risks model.

One sweep, for each event r: refresh the latent PG variables of block r
given the current coefficients, then draw ``(delta_r, beta_r)`` jointly from
its Gaussian full conditional with the other blocks entering through the
offset ``C_r = log(1 + sum_{s != r} exp(psi_s))``.  Afterwards every
Cauchy mixing precision ``lam_r`` gets a Gamma draw and every ``g_r`` an
adaptive random-walk Metropolis step on ``log g_r``.

A ``temperature`` below one samples the power posterior
``prior * likelihood ** temperature`` with the same kernel (PG(temperature, .)
latents), which is what the evidence estimators need.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .cohort import PersonPeriodFrame
from .model import ParamBlock, log1p_sum_exp, subject_logliks
from .polyagamma import sample_pg
from .priors import IneligibleModel, PriorConfig, check_xtx, log_prior_log_g

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 200_000
    burn_in: float = 0.5
    retained: int = 1_000
    seed: int = 0
    adapt_batch: int = 50
    target_accept: float = 0.44
    rescale_moves: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.retained < 1:
            raise ValueError("iterations and retained must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must be in [0, 1)")
        if self.retained > self.iterations - self.burn_in_iterations:
            raise ValueError("retained draws exceed post-burn-in iterations")
        if self.adapt_batch < 1 or not 0 < self.target_accept < 1:
            raise ValueError("bad adaptation settings")

    @property
    def burn_in_iterations(self) -> int:
        return int(self.iterations * self.burn_in)

    @property
    def thin(self) -> int:
        return (self.iterations - self.burn_in_iterations) // self.retained

    def retained_iterations(self) -> np.ndarray:
        """1-based iteration numbers whose state is kept."""
        return self.burn_in_iterations + self.thin * np.arange(1, self.retained + 1)


def chain_rng(seed: int, model_index: int = 0, chain_index: int = 0) -> np.random.Generator:
    """Independent stream per (model, chain) so results do not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(model_index, chain_index)))


@dataclass
class ChainState:
    coef: np.ndarray          # (R, t0 + k) stacked (delta_r, beta_r)
    lam: np.ndarray           # (R,)
    log_g: np.ndarray         # (R,)
    eta: np.ndarray           # (N, R) latent PG draws
    log_scale: np.ndarray     # (R,) log proposal sd for log g
    rng: np.random.Generator
    t0: int
    iteration: int = 0
    batch_accepts: np.ndarray = field(default=None)
    total_accepts: np.ndarray = field(default=None)
    total_proposals: int = 0
    n_batches: int = 0
    rescale_log_step: np.ndarray = field(default=None)   # (2,) delta/lam and beta/g moves

    def __post_init__(self):
        R = self.coef.shape[0]
        if self.batch_accepts is None:
            self.batch_accepts = np.zeros(R, dtype=int)
        if self.total_accepts is None:
            self.total_accepts = np.zeros(R, dtype=int)
        if self.rescale_log_step is None:
            self.rescale_log_step = np.zeros(2)

    @property
    def params(self) -> ParamBlock:
        return ParamBlock.from_stacked(self.coef, self.t0)

    @property
    def g(self) -> np.ndarray:
        return np.exp(self.log_g)

    def acceptance_rate(self) -> np.ndarray:
        return self.total_accepts / max(self.total_proposals, 1)


def save_checkpoint(path: str | Path, state: ChainState, **extra: np.ndarray) -> None:
    """Write a versioned ``.npz`` snapshot of the chain (RNG state as JSON)."""
    np.savez(
        path,
        version=CHECKPOINT_VERSION,
        coef=state.coef, lam=state.lam, log_g=state.log_g, eta=state.eta,
        log_scale=state.log_scale, t0=state.t0, iteration=state.iteration,
        batch_accepts=state.batch_accepts, total_accepts=state.total_accepts,
        total_proposals=state.total_proposals, n_batches=state.n_batches,
        rescale_log_step=state.rescale_log_step,
        rng=json.dumps(state.rng.bit_generator.state),
        rng_kind=type(state.rng.bit_generator).__name__,
        **{f"extra_{k}": v for k, v in extra.items()},
    )


def load_checkpoint(path: str | Path) -> tuple[ChainState, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        bitgen = getattr(np.random, str(data["rng_kind"]))()
        bitgen.state = json.loads(str(data["rng"]))
        state = ChainState(
            coef=data["coef"].copy(), lam=data["lam"].copy(), log_g=data["log_g"].copy(),
            eta=data["eta"].copy(), log_scale=data["log_scale"].copy(),
            rng=np.random.Generator(bitgen), t0=int(data["t0"]),
            iteration=int(data["iteration"]), batch_accepts=data["batch_accepts"].copy(),
            total_accepts=data["total_accepts"].copy(),
            total_proposals=int(data["total_proposals"]), n_batches=int(data["n_batches"]),
            rescale_log_step=data["rescale_log_step"].copy(),
        )
        extra = {k[len("extra_"):]: data[k].copy() for k in data.files if k.startswith("extra_")}
    return state, extra


class GibbsSampler:
    """Full-conditional updates for one model (one covariate mask) and temperature."""

    def __init__(self, frame: PersonPeriodFrame, prior: PriorConfig,
                 config: SamplerConfig | None = None, temperature: float = 1.0):
        if not 0 <= temperature <= 1:
            raise ValueError("temperature must be in [0, 1]")
        self.frame = frame
        self.prior = prior
        self.config = config or SamplerConfig()
        self.temperature = float(temperature)
        self.R = frame.n_events
        self.t0 = frame.t0
        self.k = frame.k
        self.p = self.t0 + self.k
        self.Z = np.asarray(frame.design, dtype=float)
        self.hit = frame.outcome[:, None] == np.arange(1, self.R + 1)[None, :]
        self.xtx = frame.xtx()
        if self.k:
            check_xtx(self.xtx)
        self.b1, self.b2 = prior.g_hyper(frame.n_subjects, self.k)

    # -- state ----------------------------------------------------------
    def initial_state(self, rng: np.random.Generator) -> ChainState:
        log_g0 = np.log(max(self.frame.n_subjects, self.k ** 2, 1))
        eta = sample_pg(1.0, np.zeros((self.frame.n_rows, self.R)), rng)
        return ChainState(
            coef=np.zeros((self.R, self.p)),
            lam=np.ones(self.R),
            log_g=np.full(self.R, log_g0),
            eta=eta,
            log_scale=np.zeros(self.R),
            rng=rng,
            t0=self.t0,
        )

    def linear_predictors(self, state: ChainState) -> np.ndarray:
        return self.Z @ state.coef.T

    def offsets(self, psi: np.ndarray, r: int) -> np.ndarray:
        """C_r = log(1 + sum_{s != r} exp(psi_s)) per row (r is 0-based)."""
        return log1p_sum_exp(np.delete(psi, r, axis=1))

    def loglik(self, coef: np.ndarray) -> float:
        return float(np.sum(self.subject_logliks(coef)))

    def subject_logliks(self, coef: np.ndarray) -> np.ndarray:
        return subject_logliks(ParamBlock.from_stacked(coef, self.t0), self.frame)

    # -- full conditionals ----------------------------------------------
    def kappa(self, r: int, eta_r: np.ndarray, offset: np.ndarray) -> np.ndarray:
        return self.temperature * (self.hit[:, r] - 0.5) + eta_r * offset

    def prior_precision(self, state: ChainState, r: int) -> np.ndarray:
        prec = np.zeros((self.p, self.p))
        idx = np.arange(self.t0)
        prec[idx, idx] = state.lam[r] / self.prior.omega2
        if self.k:
            prec[self.t0:, self.t0:] = self.xtx * np.exp(-state.log_g[r])
        return prec

    def update_eta(self, state: ChainState, r: int | None = None) -> None:
        blocks = range(self.R) if r is None else [r]
        psi = self.linear_predictors(state)
        for s in blocks:
            tilt = psi[:, s] - self.offsets(psi, s)
            state.eta[:, s] = sample_pg(self.temperature, tilt, state.rng)

    def update_beta_block(self, state: ChainState, r: int) -> None:
        psi = self.linear_predictors(state)
        offset = self.offsets(psi, r)
        eta_r = state.eta[:, r]
        prec = self.prior_precision(state, r) + (self.Z.T * eta_r) @ self.Z
        rhs = self.Z.T @ self.kappa(r, eta_r, offset)
        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise RuntimeError("posterior precision is not positive definite") from None
        mean = cho_solve((chol, True), rhs)
        noise = solve_triangular(chol.T, state.rng.standard_normal(self.p), lower=False)
        state.coef[r] = mean + noise

    def lambda_rate(self, delta: np.ndarray) -> float:
        quad = float(delta @ delta) / (2 * self.prior.omega2)
        if self.prior.lambda_update == "literal":
            return max(quad, 1e-12)
        return 0.5 + quad

    def update_lambda(self, state: ChainState, r: int) -> None:
        delta = state.coef[r, : self.t0]
        shape = (self.t0 + 1) / 2
        state.lam[r] = state.rng.gamma(shape, 1.0 / self.lambda_rate(delta))

    def log_g_target(self, log_g: float, beta: np.ndarray) -> float:
        """Unnormalised full conditional of log g given beta."""
        quad = float(beta @ self.xtx @ beta)
        return (-0.5 * self.k * log_g - 0.5 * quad * np.exp(-log_g)
                + log_prior_log_g(log_g, self.b1, self.b2))

    def log_accept_ratio_g(self, current: float, proposal: float, beta: np.ndarray) -> float:
        return self.log_g_target(proposal, beta) - self.log_g_target(current, beta)

    def update_g(self, state: ChainState, r: int) -> bool:
        beta = state.coef[r, self.t0:]
        cur = state.log_g[r]
        prop = cur + np.exp(state.log_scale[r]) * state.rng.standard_normal()
        ok = np.log(state.rng.random()) < self.log_accept_ratio_g(cur, prop, beta)
        if ok:
            state.log_g[r] = prop
        state.batch_accepts[r] += ok
        state.total_accepts[r] += ok
        return bool(ok)

    def adapt(self, state: ChainState) -> None:
        """Batch-wise log-scale adjustment with step 1/sqrt(batch)."""
        state.n_batches += 1
        step = 1.0 / np.sqrt(state.n_batches)
        rate = state.batch_accepts / self.config.adapt_batch
        state.log_scale += np.where(rate > self.config.target_accept, step, -step)
        state.batch_accepts[:] = 0

    # -- joint rescaling moves (optional) --------------------------------
    def _rescale(self, state: ChainState, r: int, which: int) -> None:
        step = np.exp(state.rescale_log_step[which])
        eps = step * state.rng.standard_normal()
        coef = state.coef.copy()
        if which == 0:
            new_lam = state.lam[r] * np.exp(eps)
            coef[r, : self.t0] *= np.exp(-eps / 2)
            log_ratio = eps / 2 - (new_lam - state.lam[r]) / 2
        else:
            new_log_g = state.log_g[r] + eps
            coef[r, self.t0:] *= np.exp(eps / 2)
            log_ratio = (log_prior_log_g(new_log_g, self.b1, self.b2)
                         - log_prior_log_g(state.log_g[r], self.b1, self.b2))
        if self.temperature > 0:
            log_ratio += self.temperature * (self.loglik(coef) - self.loglik(state.coef))
        if np.log(state.rng.random()) < log_ratio:
            state.coef[:] = coef
            if which == 0:
                state.lam[r] = new_lam
            else:
                state.log_g[r] = new_log_g

    # -- driver ---------------------------------------------------------
    def sweep(self, state: ChainState) -> None:
        for r in range(self.R):
            self.update_eta(state, r)
            self.update_beta_block(state, r)
        for r in range(self.R):
            self.update_lambda(state, r)
            if self.k:
                self.update_g(state, r)
            if self.config.rescale_moves:
                self._rescale(state, r, 0)
                if self.k:
                    self._rescale(state, r, 1)
        state.iteration += 1
        if self.k:
            state.total_proposals += 1
            if state.iteration % self.config.adapt_batch == 0:
                self.adapt(state)


@dataclass
class PosteriorDraws:
    """Retained draws of one chain plus per-draw log-likelihoods."""

    delta: np.ndarray           # (M, R, t0)
    beta: np.ndarray            # (M, R, k)
    lam: np.ndarray             # (M, R)
    log_g: np.ndarray           # (M, R)
    loglik: np.ndarray          # (M,)
    subject_loglik: np.ndarray  # (M, n)
    acceptance: np.ndarray      # (R,)
    column_names: tuple[str, ...] = ()
    temperature: float = 1.0

    @property
    def n_draws(self) -> int:
        return self.loglik.shape[0]

    @property
    def g(self) -> np.ndarray:
        return np.exp(self.log_g)

    def params(self, m: int) -> ParamBlock:
        return ParamBlock(self.delta[m], self.beta[m])

    def posterior_mean(self) -> ParamBlock:
        return ParamBlock(self.delta.mean(axis=0), self.beta.mean(axis=0))


def run_chain(
    frame: PersonPeriodFrame,
    prior: PriorConfig,
    config: SamplerConfig,
    *,
    temperature: float = 1.0,
    model_index: int = 0,
    chain_index: int = 0,
    state: ChainState | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
) -> PosteriorDraws:
    """Run one chain and keep ``config.retained`` evenly thinned post-burn-in draws.

    If ``checkpoint_path`` names an existing checkpoint the chain resumes from
    it; with ``checkpoint_every > 0`` a snapshot is written every that many
    iterations.
    """
    sampler = GibbsSampler(frame, prior, config, temperature)
    keep = config.retained_iterations()
    M, R, n = config.retained, frame.n_events, frame.n_subjects
    coefs = np.zeros((M, R, sampler.p))
    lams = np.zeros((M, R))
    log_gs = np.zeros((M, R))
    sub_ll = np.zeros((M, n))

    if checkpoint_path is not None and Path(checkpoint_path).exists():
        state, extra = load_checkpoint(checkpoint_path)
        coefs, lams, log_gs, sub_ll = (extra["coefs"], extra["lams"],
                                       extra["log_gs"], extra["sub_ll"])
        logger.info("resuming chain at iteration %d", state.iteration)
    elif state is None:
        state = sampler.initial_state(chain_rng(config.seed, model_index, chain_index))
    if state.eta.shape != (frame.n_rows, R):
        state = replace(state, eta=sample_pg(1.0, np.zeros((frame.n_rows, R)), state.rng))

    slot = {int(it): j for j, it in enumerate(keep)}
    while state.iteration < config.iterations:
        sampler.sweep(state)
        j = slot.get(state.iteration)
        if j is not None:
            coefs[j] = state.coef
            lams[j] = state.lam
            log_gs[j] = state.log_g
            sub_ll[j] = sampler.subject_logliks(state.coef)
        if checkpoint_every and checkpoint_path is not None \
                and state.iteration % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, state, coefs=coefs, lams=lams,
                            log_gs=log_gs, sub_ll=sub_ll)

    return PosteriorDraws(
        delta=coefs[:, :, : frame.t0].copy(),
        beta=coefs[:, :, frame.t0:].copy(),
        lam=lams,
        log_g=log_gs,
        loglik=sub_ll.sum(axis=1),
        subject_loglik=sub_ll,
        acceptance=state.acceptance_rate(),
        column_names=frame.column_names,
        temperature=temperature,
    )


__all__ = [
    "ChainState", "GibbsSampler", "IneligibleModel", "PosteriorDraws", "SamplerConfig",
    "chain_rng", "load_checkpoint", "run_chain", "save_checkpoint",
]
