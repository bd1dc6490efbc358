"""Maximum draw-up of drifted Brownian motion over an independent exponential horizon.

For ``X(t) = sigma W(t) + nu t`` and ``T ~ Exp(mean mu)``::

    P[D+_{[0,T]}(X) > a] = e^{nu a / sigma^2} / (cosh(a r) + (nu / (sigma rho)) sinh(a r))

with ``rho = sqrt(2/mu + nu^2/sigma^2)`` and ``r = rho / sigma``.  For
``nu < 0``, large ``a |nu|`` and ``nu^2 mu``, and small ``a / (mu |nu|)``,
this behaves like ``1 / (1 + sigma^2 / (2 nu^2 mu) * e^{2 |nu| a / sigma^2})``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng as _rng
from .simulate import Frequency

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class DriftedBMParams:
    sigma: float
    nu: float
    mu: float
    a: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.a >= 0:
            raise ValueError("level a must be non-negative")
        if not math.isfinite(self.nu):
            raise ValueError("nu must be finite")


def _log_cosh(x):
    x = abs(x)
    return x + math.log1p(math.exp(-2.0 * x)) - _LN2


def prop0_survival(p):
    """Exact ``P[D+_{[0,T]} > a]``, evaluated through log-cosh / log-sinh forms."""
    if p.a == 0:
        return 1.0
    rho = math.sqrt(2.0 / p.mu + (p.nu / p.sigma) ** 2)
    x = p.a * rho / p.sigma
    sr = p.sigma * rho
    # 1 +- nu/sr without cancellation: sr^2 - nu^2 = 2 sigma^2 / mu
    small = 2.0 * p.sigma ** 2 / (p.mu * sr * (sr + abs(p.nu)))
    big = 1.0 + abs(p.nu) / sr
    plus, minus = (small, big) if p.nu < 0 else (big, small)
    # cosh x + (nu/sr) sinh x = e^x/2 * plus + e^-x/2 * minus
    log_den = x - _LN2 + math.log(plus + minus * math.exp(-2.0 * x))
    return min(1.0, math.exp(p.nu * p.a / p.sigma ** 2 - log_den))


def cor1_asymptotic(p):
    """Asymptotic form ``1 / (1 + sigma^2/(2 nu^2 mu) e^{2|nu| a/sigma^2})`` (needs ``nu < 0``)."""
    if not p.nu < 0:
        raise ValueError("the asymptotic form assumes a negative drift")
    log_term = math.log(p.sigma ** 2 / (2.0 * p.nu ** 2 * p.mu)) + 2.0 * abs(p.nu) * p.a / p.sigma ** 2
    # 1/(1+e^z) = expit(-z), kept stable for large |z|
    if log_term > 0:
        e = math.exp(-log_term)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(log_term))


@njit(nogil=True, cache=True)
def _drawup_over_horizon(gen, sigma, nu, horizon, dt, cap):
    """Discrete draw-up of ``sigma W + nu t`` sampled every ``dt`` on ``[0, horizon]``.

    The last step is the partial step ``horizon - n dt``.  Returns as soon as
    the draw-up exceeds ``cap``, since larger values are not needed.
    """
    n_full = int(horizon // dt)
    rem = horizon - n_full * dt
    sd = sigma * math.sqrt(dt)
    m = nu * dt
    x = 0.0
    trough = 0.0
    best = 0.0
    for _ in range(n_full):
        x += m + sd * gen.standard_normal()
        if x < trough:
            trough = x
        elif x - trough > best:
            best = x - trough
            if best > cap:
                return best
    if rem > 0.0:
        x += nu * rem + sigma * math.sqrt(rem) * gen.standard_normal()
        if x - trough > best:
            best = x - trough
    return best


def _path_generator(seed, i):
    return np.random.Generator(np.random.SFC64(_rng.seed_sequence(seed, int(i), _rng.TAG_BM)))


def sample_drawups(sigma, nu, mu, dt, n_paths, seed, cap=math.inf, threads=1):
    """Per-path discrete draw-ups (values above ``cap`` are only known to exceed it)."""
    if not dt > 0 or n_paths < 1:
        raise ValueError("need dt > 0 and n_paths >= 1")

    def one(i):
        gen = _path_generator(seed, i)
        horizon = gen.exponential(mu)
        return _drawup_over_horizon(gen, float(sigma), float(nu), horizon, float(dt), float(cap))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.fromiter(pool.map(one, range(n_paths), chunksize=256), float, n_paths)
    return np.fromiter((one(i) for i in range(n_paths)), float, n_paths)


def mc_drawup_survival_levels(sigma, nu, mu, levels, dt, n_paths, seed, threads=1):
    """Monte Carlo ``P[D+ > a]`` for several levels from one set of paths.

    Level 0 is reported as frequency 1: with ``sigma > 0`` the draw-up is
    positive almost surely, but a grid shorter than a few steps can miss it.
    """
    levels = np.asarray(levels, dtype=float)
    d = sample_drawups(sigma, nu, mu, dt, n_paths, seed, cap=float(levels.max()), threads=threads)
    return [Frequency.from_successes(n_paths if a == 0 else int(np.count_nonzero(d > a)), n_paths)
            for a in levels]


def mc_drawup_survival(p, dt, n_paths, seed, threads=1):
    """Monte Carlo estimate of :func:`prop0_survival` from paths sampled on a ``dt`` grid."""
    return mc_drawup_survival_levels(p.sigma, p.nu, p.mu, [p.a], dt, n_paths, seed, threads)[0]
