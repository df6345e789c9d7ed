"""Independent reference computations used by the tests.

Nothing here calls the sampler; everything is enumeration or quadrature.
"""

import itertools

import numpy as np
from scipy import integrate, optimize
from scipy.special import betainc, expit, gammaln, logsumexp, roots_hermite

from crsurv.model import hazard
from crsurv.priors import log_prior_log_g


def path_loglik(params, x, t, r):
    """log P(T=t, R=r | x) by summing over every outcome path (r=0: survive to t)."""
    R = params.n_events
    total = 0.0
    for path in itertools.product(range(R + 1), repeat=t):
        if any(path[:-1]) or path[-1] != r:
            continue
        prob = 1.0
        for s, y in enumerate(path, start=1):
            z = np.zeros(params.t0)
            z[min(s, params.t0) - 1] = 1
            prob *= hazard(params, np.concatenate([z, x]))[y]
        total += prob
    return np.log(total)


def _log_cauchy(delta, omega2):
    d = delta.shape[1]
    q = np.sum(delta * delta, axis=1) / omega2
    return (gammaln((1 + d) / 2) - gammaln(0.5) - 0.5 * d * np.log(np.pi * omega2)
            - 0.5 * (1 + d) * np.log1p(q))


def null_log_ml_dblquad(n_t, e_t, omega2):
    """Binary null model with two periods: 2-d adaptive quadrature over delta."""
    n_t, e_t = np.asarray(n_t, float), np.asarray(e_t, float)

    def ll(d1, d2):
        d = np.array([d1, d2])
        return float(np.sum(e_t * d - n_t * np.logaddexp(0, d)))

    mle = np.log(e_t / (n_t - e_t))
    se = 1 / np.sqrt(e_t * (1 - e_t / n_t))
    shift = ll(*mle)

    def f(d2, d1):
        return np.exp(ll(d1, d2) - shift + _log_cauchy(np.array([[d1, d2]]), omega2)[0])

    val, _ = integrate.dblquad(f, mle[0] - 15 * se[0], mle[0] + 15 * se[0],
                               mle[1] - 15 * se[1], mle[1] + 15 * se[1], epsabs=0, epsrel=1e-10)
    return np.log(val) + shift


class _Integrand:
    """log [L(theta) p(delta) p(beta | g)] for a binary (R=1) person-period frame."""

    def __init__(self, design, y, t0, xtx, omega2):
        self.Z, self.y, self.t0, self.xtx, self.omega2 = design, y, t0, xtx, omega2
        self.k = design.shape[1] - t0
        self.logdet = np.linalg.slogdet(xtx)[1] if self.k else 0.0

    def __call__(self, theta, log_g):
        theta = np.atleast_2d(theta)
        psi = theta @ self.Z.T
        out = np.sum(self.y * psi - np.logaddexp(0, psi), axis=1)
        out += _log_cauchy(theta[:, : self.t0], self.omega2)
        if self.k:
            b = theta[:, self.t0:]
            quad = np.einsum("ij,jk,ik->i", b, self.xtx, b) * np.exp(-log_g)
            out += (-0.5 * self.k * np.log(2 * np.pi) + 0.5 * self.logdet
                    - 0.5 * self.k * log_g - 0.5 * quad)
        return out


def _gauss_hermite(f, d, log_g, m, x0):
    """Laplace-centred product Gauss-Hermite estimate of log int exp(f)."""
    obj = lambda th: -f(th, log_g)[0]
    mode = optimize.minimize(obj, x0, method="BFGS", options=dict(gtol=1e-10)).x
    eps = 1e-4
    H = np.zeros((d, d))
    eye = np.eye(d) * eps
    for i in range(d):
        for j in range(i, d):
            H[i, j] = H[j, i] = (obj(mode + eye[i] + eye[j]) - obj(mode + eye[i] - eye[j])
                                 - obj(mode - eye[i] + eye[j]) + obj(mode - eye[i] - eye[j])) / (4 * eps ** 2)
    L = np.linalg.cholesky(np.linalg.inv(H))
    z, w = roots_hermite(m)
    nodes = np.stack([g.ravel() for g in np.meshgrid(*([z] * d), indexing="ij")], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * d), indexing="ij")]), axis=0)
    theta = mode + np.sqrt(2) * nodes @ L.T
    vals = f(theta, log_g) + np.sum(nodes ** 2, axis=1)
    return 0.5 * d * np.log(2) + np.sum(np.log(np.diag(L))) + logsumexp(vals, b=weights), mode


def binary_log_ml(frame, prior, m=12, h=0.25, u_lo=-30.0, u_hi=80.0):
    """Quadrature log marginal likelihood of a one-event frame.

    Inner integral over (delta, beta) by Gauss-Hermite at fixed g, outer
    trapezoid over log g; below ``u_lo`` the inner integral is replaced by
    its g -> 0 limit (the model without covariates) times the prior tail mass.
    """
    if frame.n_events != 1:
        raise ValueError("binary frames only")
    Z, y, t0 = frame.design, (frame.outcome == 1).astype(float), frame.t0
    d, k = Z.shape[1], frame.k
    if k == 0:
        return _gauss_hermite(_Integrand(Z, y, t0, None, prior.omega2), d, 0.0, m, np.zeros(d))[0]
    b1, b2 = prior.g_hyper(frame.n_subjects, k)
    ml0 = _gauss_hermite(_Integrand(Z[:, :t0], y, t0, None, prior.omega2), t0, 0.0, m,
                         np.zeros(t0))[0]
    f = _Integrand(Z, y, t0, frame.xtx(), prior.omega2)
    us = np.arange(u_lo, u_hi + h / 2, h)
    vals = np.empty(us.size)
    x0 = np.zeros(d)
    for i, u in enumerate(us):
        v, x0 = _gauss_hermite(f, d, u, m, x0)
        vals[i] = v + log_prior_log_g(u, b1, b2)
    wts = np.full(us.size, h)
    wts[[0, -1]] = h / 2
    tail = ml0 + np.log(betainc(b1, b2, expit(u_lo)))
    return float(np.logaddexp(logsumexp(vals, b=wts), tail))
