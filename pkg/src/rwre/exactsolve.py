"""Exact quenched quantities for the birth-death walk.

Everything involving ``exp(+-U)`` is carried in log space.  With the
reversible measure ``pi(0) = 1``, ``pi(x) = e^{-U(x)} + e^{-U(x-1)}`` one has
``pi(k) (1 - q_k) = e^{-U(k)}`` for every ``k >= 0``, which gives the
closed forms used below:

* ruin: ``P^x[tau_c < tau_a] = sum_{a<=j<x} e^{U(j)} / sum_{a<=j<c} e^{U(j)}``
* one-step hitting: ``E^k[tau_{k+1}] = e^{U(k)} sum_{j<=k} pi(j)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit

from .pathfunc import interval_stats

_LOG_MAX = math.log(np.finfo(float).max)


class ExpOverflowError(OverflowError):
    """A quantity whose natural-scale value does not fit in a double."""

    def __init__(self, log_value, what="value"):
        super().__init__(f"{what} overflows a double (log value {log_value:.6g})")
        self.log_value = log_value


@dataclass(frozen=True)
class LogWeight:
    log_value: float

    @property
    def value(self):
        if self.log_value > _LOG_MAX:
            raise ExpOverflowError(self.log_value)
        return math.exp(self.log_value)

    def __mul__(self, other):
        return LogWeight(self.log_value + other.log_value)

    def __truediv__(self, other):
        return LogWeight(self.log_value - other.log_value)

    def __add__(self, other):
        return LogWeight(log_sum_exp([self.log_value, other.log_value]))


def log_sum_exp(values):
    """``log sum exp(v)`` with a max shift and exactly summed shifted terms."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = float(v.max())
    if v.size == 1 or not math.isfinite(m):
        return m
    return m + math.log(math.fsum(np.exp(v - m)))


def log_pi(env):
    """``log pi(x)`` for every site ``x = 0 .. n``."""
    out = np.empty(env.n_sites + 1)
    out[0] = 0.0
    out[1:] = np.logaddexp(-env.U[1:], -env.U[:-1])
    return out


def reversible_measure_log(env, x):
    x = int(x)
    if not 0 <= x <= env.n_sites:
        raise IndexError(f"site {x} outside [0, {env.n_sites}]")
    if x == 0:
        return LogWeight(0.0)
    return LogWeight(float(np.logaddexp(-env.U[x], -env.U[x - 1])))


def log_q(env):
    """``(log q_y, log(1 - q_y))`` for ``y = 0 .. n``; ``log q_0 = -inf``."""
    inc = env.U[1:] - env.U[:-1]
    lq = np.empty(env.n_sites + 1)
    lp = np.empty(env.n_sites + 1)
    lq[0], lp[0] = -np.inf, 0.0
    lq[1:] = log_expit(inc)
    lp[1:] = log_expit(-inc)
    return lq, lp


def detailed_balance_residual(env):
    """``max |log[pi(x)(1-q_x)] - log[q_{x+1} pi(x+1)]|`` over ``x = 0 .. n-1``."""
    lpi = log_pi(env)
    lq, lp = log_q(env)
    return float(np.max(np.abs((lpi[:-1] + lp[:-1]) - (lq[1:] + lpi[1:]))))


def ruin_prob(env, a, x, c):
    """``P^x[tau_c < tau_a]`` for ``a <= x <= c``."""
    a, x, c = int(a), int(x), int(c)
    if not (0 <= a <= x <= c <= env.n_sites and a < c):
        raise ValueError(f"need 0 <= a <= x <= c <= n_sites with a < c, got a={a}, x={x}, c={c}")
    if x == a:
        return 0.0
    if x == c:
        return 1.0
    u = env.U[a:c]
    return math.exp(log_sum_exp(u[: x - a]) - log_sum_exp(u))


def ruin_profile(env, a, c):
    """``P^x[tau_c < tau_a]`` for every ``x = a .. c``."""
    u = env.U[a:c]
    m = u.max()
    w = np.exp(u - m)
    cs = np.concatenate(([0.0], np.cumsum(w)))
    return cs / cs[-1]


def _log_step_times(env, y):
    """``log E^k[tau_{k+1}]`` for ``k = 0 .. y-1``."""
    lpi = log_pi(env)[:y]
    return np.logaddexp.accumulate(lpi) + env.U[:y]


def expected_hit_log(env, x, y):
    """``log E^x[tau_y]`` for ``x < y`` (unit-rate clock, reflecting at 0)."""
    x, y = int(x), int(y)
    if not 0 <= x < y <= env.n_sites:
        raise ValueError(f"need 0 <= x < y <= n_sites, got x={x}, y={y}")
    terms = _log_step_times(env, y)[x:]
    return LogWeight(log_sum_exp(terms))


def expected_hit(env, x, y):
    """``E^x[tau_y]``; raises :class:`ExpOverflowError` (carrying the log value) on overflow."""
    x, y = int(x), int(y)
    if not 0 <= x < y <= env.n_sites:
        raise ValueError(f"need 0 <= x < y <= n_sites, got x={x}, y={y}")
    terms = _log_step_times(env, y)[x:]
    m = float(terms.max())
    s = math.fsum(np.exp(terms - m))
    log_value = m + math.log(s)
    if log_value > _LOG_MAX:
        raise ExpOverflowError(log_value, "expected hitting time")
    return math.exp(m) * s if m < _LOG_MAX else math.exp(log_value)


def expected_hit_profile(env, y):
    """``E^x[tau_y]`` for every ``x = 0 .. y`` (natural scale, suffix sums)."""
    steps = np.exp(_log_step_times(env, y))
    return np.concatenate((np.cumsum(steps[::-1])[::-1], [0.0]))


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class BoundParams:
    K1: float = 1.0
    K2: float = 1.0
    K3: float = 1.0

    def __post_init__(self):
        for name in ("K1", "K2", "K3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BoundValue:
    log_value: float
    applicable: bool = True

    @property
    def value(self):
        """The bound as a probability, clipped to ``[0, 1]``; ``nan`` when not applicable."""
        if not self.applicable:
            return math.nan
        return math.exp(min(self.log_value, 0.0))


def confinement_scale_log(env, a, c, K2=1.0):
    """``log[K2 (c-a)^3 (c-a+M) e^H]`` with ``H``, ``M`` the min/max draw of ``U`` on ``[a, c]``."""
    st = interval_stats(env.U, (a, c))
    L = c - a
    return math.log(K2) + 3.0 * math.log(L) + math.log(L + st.max_draw) + st.barrier


def confinement_bound(env, a, c, x, t, params=BoundParams()):
    """Upper bound on ``P^x[tau_{a,c} >= t]``; ``applicable`` is False inside the excluded region."""
    a, c, x = int(a), int(c), int(x)
    if not 0 <= a < x < c <= env.n_sites:
        raise ValueError(f"need 0 <= a < x < c <= n_sites, got a={a}, x={x}, c={c}")
    ls = confinement_scale_log(env, a, c, params.K2)
    ratio_log = math.log(t) - ls
    if ratio_log <= 0.0:
        return BoundValue(0.0, applicable=False)
    return BoundValue(-math.exp(ratio_log))


def escape_bound(env, a, c, t, params=BoundParams(), use_watq=False):
    """Upper bound on ``P^a[tau_c < t]`` through the barrier top ``h`` of ``U`` on ``[a, c]``."""
    a, c = int(a), int(c)
    if not 0 <= a < c <= env.n_sites:
        raise ValueError(f"need 0 <= a < c <= n_sites, got a={a}, c={c}")
    if not t > 1:
        raise ValueError("escape bound needs t > 1")
    h = interval_stats(env.U, (a, c)).argmax_index
    head = math.log(params.K3) + math.log(t)
    if use_watq:
        return BoundValue(head - env.U[h] + env.U[a] + math.log((2.0 * params.K1 + 1.0) * math.log(t)))
    return BoundValue(head + reversible_measure_log(env, h).log_value - reversible_measure_log(env, a).log_value)


def calibrate_K2(records):
    """Smallest ``K2`` for which the confinement bound covers every record.

    ``records`` are ``(log_scale_at_K2_1, t, frequency)``.  A record is
    covered when it falls in the excluded region or the bound exceeds the
    frequency; the admissible set of ``K2`` is upward closed.
    """
    k = 0.0
    for ls, t, f in records:
        if f <= 0.0:
            continue
        r = t / math.exp(ls)
        need = r if f >= math.exp(-1.0) else min(r, r / -math.log(f))
        k = max(k, need)
    return k


def calibrate_K3(records):
    """Smallest ``K3`` with ``f <= K3 t pi(h)/pi(a)``; ``records`` are ``(log_ratio, t, frequency)``."""
    k = 0.0
    for lr, t, f in records:
        if f > 0.0:
            k = max(k, f / (t * math.exp(lr)))
    return k
