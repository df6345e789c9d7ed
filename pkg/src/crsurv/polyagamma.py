"""Polya-Gamma random variates.

PG(1, c) is drawn exactly with Devroye's alternating-series accept/reject
scheme on a proposal that is inverse-Gaussian below the truncation point
0.64 and exponential above it.  Draws are vectorised: every pending
element gets a proposal per round and the series is evaluated in lock-step
until each element is accepted or rejected.

PG(b, c) with fractional 0 < b < 1 (needed by tempered chains) uses the
infinite Gamma-sum representation, truncated after ``N_TERMS`` terms with
the remainder replaced by a moment-matched Gamma variate.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_ndtr

TRUNC = 0.64
N_TERMS = 64


def pg_mean(b, c):
    """E[PG(b, c)] = b tanh(c/2) / (2c), with the c -> 0 limit b/4."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    return b * np.where(small, 0.25 - c * c / 48.0, np.tanh(safe / 2) / (2 * safe))


def pg_var(b, c):
    """Var[PG(b, c)]."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-3
    safe = np.where(small, 1.0, c)
    big = (np.sinh(safe) - safe) / (4 * safe ** 3 * np.cosh(safe / 2) ** 2)
    return b * np.where(small, 1.0 / 24 - c * c / 240.0, big)


def _series_coef(n: int, x: np.ndarray) -> np.ndarray:
    """n-th term a_n(x) of the alternating series for the J*(1) density."""
    k = (n + 0.5) * np.pi
    out = np.empty_like(x)
    hi = x > TRUNC
    out[hi] = k * np.exp(-0.5 * k * k * x[hi])
    lo = ~hi
    xl = x[lo]
    out[lo] = np.exp(-1.5 * (np.log(0.5 * np.pi) + np.log(xl)) + np.log(k)
                     - 2.0 * (n + 0.5) ** 2 / xl)
    return out


def _exp_mass(z: np.ndarray) -> np.ndarray:
    """Probability of proposing from the exponential (right) piece."""
    t = TRUNC
    fz = np.pi ** 2 / 8 + 0.5 * z * z
    b = np.sqrt(1.0 / t) * (t * z - 1)
    a = -np.sqrt(1.0 / t) * (t * z + 1)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + log_ndtr(b)
    xa = x0 + z + log_ndtr(a)
    log_q_over_p = np.log(4 / np.pi) + np.logaddexp(xb, xa)
    return expit(-log_q_over_p)


def _truncated_inverse_gaussian(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """IG(1/z, 1) restricted to (0, TRUNC]."""
    t = TRUNC
    out = np.empty_like(z)
    small = z < 1.0 / t

    # mean above the truncation point: tilt a truncated Levy proposal
    pend = np.flatnonzero(small)
    while pend.size:
        zz = z[pend]
        e1 = rng.standard_exponential(pend.size)
        e2 = rng.standard_exponential(pend.size)
        bad = e1 * e1 > 2 * e2 / t
        while bad.any():
            e1[bad] = rng.standard_exponential(bad.sum())
            e2[bad] = rng.standard_exponential(bad.sum())
            bad = e1 * e1 > 2 * e2 / t
        x = t / (1 + e1 * t) ** 2
        ok = rng.random(pend.size) <= np.exp(-0.5 * zz * zz * x)
        out[pend[ok]] = x[ok]
        pend = pend[~ok]

    # mean below the truncation point: plain IG draws until one lands inside
    pend = np.flatnonzero(~small)
    while pend.size:
        mu = 1.0 / z[pend]
        y = rng.standard_normal(pend.size) ** 2
        mu_y = mu * y
        x = mu + 0.5 * mu * mu_y - 0.5 * mu * np.sqrt(4 * mu_y + mu_y * mu_y)
        flip = rng.random(pend.size) > mu / (mu + x)
        x[flip] = mu[flip] ** 2 / x[flip]
        ok = x <= t
        out[pend[ok]] = x[ok]
        pend = pend[~ok]
    return out


def _pg1(c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = 0.5 * np.abs(c)
    out = np.empty_like(z)
    pend = np.arange(z.size)
    while pend.size:
        zz = z[pend]
        m = pend.size
        fz = np.pi ** 2 / 8 + 0.5 * zz * zz
        x = np.empty(m)
        right = rng.random(m) < _exp_mass(zz)
        x[right] = TRUNC + rng.standard_exponential(right.sum()) / fz[right]
        x[~right] = _truncated_inverse_gaussian(zz[~right], rng)

        s = _series_coef(0, x)
        y = rng.random(m) * s
        accepted = np.zeros(m, dtype=bool)
        open_ = np.ones(m, dtype=bool)
        n = 0
        while open_.any():
            n += 1
            idx = np.flatnonzero(open_)
            if n % 2:
                s[idx] -= _series_coef(n, x[idx])
                hit = idx[y[idx] <= s[idx]]
                accepted[hit] = True
                open_[hit] = False
            else:
                s[idx] += _series_coef(n, x[idx])
                open_[idx[y[idx] > s[idx]]] = False
        out[pend[accepted]] = 0.25 * x[accepted]
        pend = pend[~accepted]
    return out


def _pg_gamma_sum(b: np.ndarray, c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    d = (c / (2 * np.pi)) ** 2
    k = np.arange(1, N_TERMS + 1)
    w = 1.0 / ((k[None, :] - 0.5) ** 2 + d[:, None])
    g = rng.standard_gamma(np.broadcast_to(b[:, None], w.shape))
    head = np.sum(g * w, axis=1)

    a = np.sqrt(d)
    a_safe = np.where(a > 1e-12, a, 1.0)
    total = np.where(a > 1e-12, np.pi * np.tanh(np.pi * a_safe) / (2 * a_safe), np.pi ** 2 / 2)
    s1 = np.maximum(total - w.sum(axis=1), 1e-300)
    K = float(N_TERMS)
    theta = np.arctan(a / K)
    r = a / K
    s2 = np.where(r < 1e-2,
                  1 / (3 * K ** 3) - 2 * a * a / (5 * K ** 5),
                  (theta / a_safe - K / (K * K + d)) / (2 * np.where(r < 1e-2, 1.0, d)))
    tail = rng.gamma(b * s1 * s1 / s2, s2 / s1)
    return (head + tail) / (2 * np.pi ** 2)


def sample_pg(b, c, rng: np.random.Generator) -> np.ndarray:
    """Draw PG(b, c) elementwise.

    ``b`` may be 0 (returns 0), 1 (exact), a positive integer (sum of exact
    PG(1, c) draws) or fractional in (0, 1) (truncated Gamma sum).
    """
    c = np.asarray(c, dtype=float)
    b_arr = np.broadcast_to(np.asarray(b, dtype=float), c.shape)
    flat_c = c.reshape(-1)
    flat_b = b_arr.reshape(-1)
    out = np.zeros(flat_c.size)
    if np.any(flat_b < 0):
        raise ValueError("b must be nonnegative")
    whole = np.isclose(flat_b, np.round(flat_b)) & (flat_b >= 1)
    if whole.any():
        reps = np.round(flat_b[whole]).astype(int)
        idx = np.repeat(np.flatnonzero(whole), reps)
        draws = _pg1(flat_c[idx], rng)
        np.add.at(out, idx, draws)
    frac = (flat_b > 0) & ~whole
    if frac.any():
        if np.any(flat_b[frac] > 1):
            raise ValueError("fractional b above 1 is not supported")
        out[frac] = _pg_gamma_sum(flat_b[frac], flat_c[frac], rng)
    return out.reshape(c.shape)


def sample_pg1(c: float, rng: np.random.Generator) -> float:
    """One exact draw from PG(1, c)."""
    if not np.isfinite(c):
        raise ValueError("tilt must be finite")
    return float(_pg1(np.array([float(c)]), rng)[0])
