"""Prior densities: Cauchy period effects, hyper-g coefficients, model space.

The multivariate Cauchy on each ``delta_r`` is handled through its normal
scale mixture ``delta_r | lam ~ N(0, omega2 / lam * I)``, ``lam ~ Gamma(1/2, 1/2)``;
the coefficients get a g-prior ``beta_r | g ~ N(0, g (X'X)^-1)`` with a
benchmark Beta prior on ``g / (1 + g)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betaln, gammaln

MODEL_PRIORS = ("uniform", "binomial-beta")

# guard for draws of log g from the very heavy-tailed benchmark prior
LOG_G_MAX = 1400.0


class IneligibleModel(ValueError):
    """The g-prior is undefined because X'X is singular."""


@dataclass(frozen=True)
class PriorConfig:
    omega2: float = 100.0
    model_prior: str = "uniform"
    beta_a1: float = 1.0
    beta_a2: float = 1.0
    g_b1: float | None = None
    g_b2: float = 0.01
    lambda_update: str = "conjugate"

    def __post_init__(self):
        if not self.omega2 > 0:
            raise ValueError("omega2 must be positive")
        if self.model_prior not in MODEL_PRIORS:
            raise ValueError(f"model_prior must be one of {MODEL_PRIORS}")
        if not (self.beta_a1 > 0 and self.beta_a2 > 0 and self.g_b2 > 0):
            raise ValueError("Beta hyper-parameters must be positive")
        if self.g_b1 is not None and not self.g_b1 > 0:
            raise ValueError("g_b1 must be positive")
        if self.lambda_update not in ("conjugate", "literal"):
            raise ValueError("lambda_update must be 'conjugate' or 'literal'")

    def g_hyper(self, n: int, k: int) -> tuple[float, float]:
        """(b1, b2); b1 defaults to 0.01 * max(n, k^2) with n counted in subjects."""
        b1 = self.g_b1 if self.g_b1 is not None else 0.01 * max(n, k * k)
        return b1, self.g_b2


def log_prior_delta(delta: np.ndarray, lam: float, omega2: float) -> float:
    """log N(delta | 0, omega2 / lam * I)."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    delta = np.asarray(delta, dtype=float)
    var = omega2 / lam
    return float(-0.5 * delta.size * np.log(2 * np.pi * var) - 0.5 * delta @ delta / var)


def log_cauchy_delta(delta: np.ndarray, omega2: float) -> float:
    """Multivariate Cauchy log-density with scale matrix omega2 * I."""
    delta = np.asarray(delta, dtype=float)
    d = delta.size
    return float(gammaln((1 + d) / 2) - gammaln(0.5) - 0.5 * d * np.log(np.pi * omega2)
                 - 0.5 * (1 + d) * np.log1p(delta @ delta / omega2))


def check_xtx(xtx: np.ndarray) -> np.ndarray:
    """Cholesky factor of X'X; raises :class:`IneligibleModel` if singular."""
    xtx = np.asarray(xtx, dtype=float)
    if xtx.size == 0:
        return xtx
    try:
        chol = np.linalg.cholesky(xtx)
    except np.linalg.LinAlgError:
        raise IneligibleModel("X'X is not positive definite") from None
    diag = np.diag(chol)
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise IneligibleModel("X'X is numerically singular")
    return chol


def log_prior_beta(beta: np.ndarray, g: float, xtx: np.ndarray) -> float:
    """log N(beta | 0, g (X'X)^-1)."""
    if not g > 0:
        raise ValueError("g must be positive")
    beta = np.asarray(beta, dtype=float)
    chol = check_xtx(xtx)
    k = beta.size
    logdet_prec = 2 * np.sum(np.log(np.diag(chol))) - k * np.log(g)
    quad = beta @ np.asarray(xtx) @ beta / g
    return float(-0.5 * k * np.log(2 * np.pi) + 0.5 * logdet_prec - 0.5 * quad)


def log_prior_g(g: float, b1: float, b2: float) -> float:
    """Density of g when g / (1 + g) ~ Beta(b1, b2)."""
    if not g > 0:
        raise ValueError("g must be positive")
    return log_prior_log_g(np.log(g), b1, b2) - float(np.log(g))


def log_prior_log_g(log_g, b1: float, b2: float):
    """Density of log g (includes the Jacobian g)."""
    return -betaln(b1, b2) + b1 * log_g - (b1 + b2) * np.logaddexp(0.0, log_g)


def sample_log_g(rng: np.random.Generator, b1: float, b2: float, size=None):
    """Draw log g from the benchmark prior, as log G1 - log G2 with Gamma(b) variates.

    Small shapes use Gamma(b) = Gamma(b + 1) * U^(1/b) so the logs never underflow.
    """
    def log_gamma(shape):
        return np.log(rng.gamma(shape + 1.0, size=size)) + np.log(rng.random(size)) / shape

    out = log_gamma(b1) - log_gamma(b2)
    return np.clip(out, -LOG_G_MAX, LOG_G_MAX)


def log_model_prior(mask: Sequence[bool], choice: str = "uniform",
                    a1: float = 1.0, a2: float = 1.0) -> float:
    """Log prior probability of one covariate-inclusion mask.

    ``uniform`` gives every one of the 2^k* models the same mass;
    ``binomial-beta`` puts Bernoulli(theta) on each indicator with
    theta ~ Beta(a1, a2).
    """
    mask = np.asarray(mask, dtype=bool)
    k_star = mask.size
    if choice == "uniform":
        return float(-k_star * np.log(2.0))
    if choice == "binomial-beta":
        w = int(mask.sum())
        return float(betaln(a1 + w, a2 + k_star - w) - betaln(a1, a2))
    raise ValueError(f"unknown model prior {choice!r}")
