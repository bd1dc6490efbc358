"""Draw-up / draw-down functionals, the localization scale, and the trap events.

Conventions for a sampled path ``f[0..n-1]``:

* draw-up   ``D+ = max_{v <= u} f[u] - f[v]`` (largest rise from a running minimum)
* draw-down ``D- = max_{u <= v} f[u] - f[v]`` (largest fall to a later minimum)

Both are computed in one forward pass.  The running extremum is always one of
the stored samples, so the result is bit-identical to the O(n^2) pairwise
definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .environment import ConfigurationError, CoverageError


@njit(cache=True)
def _drawup(v, lo, hi):
    trough = v[lo]
    best = 0.0
    for i in range(lo, hi):
        x = v[i]
        if x < trough:
            trough = x
        elif x - trough > best:
            best = x - trough
    return best


@njit(cache=True)
def _drawdown(v, lo, hi):
    peak = v[lo]
    best = 0.0
    for i in range(lo, hi):
        x = v[i]
        if x > peak:
            peak = x
        elif peak - x > best:
            best = peak - x
    return best


@njit(cache=True)
def _greedy_cuts(v, lo, hi, threshold, rising, max_parts):
    """Number of consecutive pieces (sharing endpoints) whose functional exceeds ``threshold``.

    A piece starts at the previous cut and ends at the first index where the
    running functional strictly exceeds the threshold.  Pieces have at least
    two samples.  Scanning stops after ``max_parts`` pieces.
    """
    parts = 0
    start = lo
    ext = v[start]
    best = 0.0
    i = start + 1
    while i < hi and parts < max_parts:
        x = v[i]
        if rising:
            if x < ext:
                ext = x
            elif x - ext > best:
                best = x - ext
        else:
            if x > ext:
                ext = x
            elif ext - x > best:
                best = ext - x
        if best > threshold:
            parts += 1
            start = i
            ext = v[i]
            best = 0.0
        i += 1
    return parts


def _as_values(values):
    v = np.ascontiguousarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a non-empty one-dimensional sequence")
    return v


def drawup(values):
    v = _as_values(values)
    return float(_drawup(v, 0, v.size))


def drawdown(values):
    v = _as_values(values)
    return float(_drawdown(v, 0, v.size))


@dataclass(frozen=True)
class DrawStats:
    drawup: float
    drawdown: float
    argmax_index: int
    range_max: float

    @property
    def barrier(self):
        """``H(I) = min(D+, D-)``."""
        return min(self.drawup, self.drawdown)

    @property
    def max_draw(self):
        """``max(D+, D-)``."""
        return max(self.drawup, self.drawdown)

    def as_row(self):
        return {
            "drawup": self.drawup,
            "drawdown": self.drawdown,
            "barrier": self.barrier,
            "max_draw": self.max_draw,
            "argmax_index": self.argmax_index,
            "range_max": self.range_max,
        }


def interval_stats(values, interval=None):
    """Draw statistics of ``values`` on the closed index range ``interval = (a, c)``.

    ``argmax_index`` is the leftmost index of the maximum, in the coordinates
    of ``values`` (not relative to ``a``).
    """
    v = np.ascontiguousarray(values, dtype=float)
    a, c = (0, v.size - 1) if interval is None else (int(interval[0]), int(interval[1]))
    if c < a:
        raise ValueError(f"empty interval [{a}, {c}]")
    if a < 0 or c >= v.size:
        raise IndexError(f"interval [{a}, {c}] outside [0, {v.size - 1}]")
    seg = v[a : c + 1]
    return DrawStats(
        drawup=float(_drawup(v, a, c + 1)),
        drawdown=float(_drawdown(v, a, c + 1)),
        argmax_index=a + int(np.argmax(seg)),
        range_max=float(seg.max()),
    )


def partition_count(values, threshold, rising, max_parts, interval=None):
    """Greedy count of pieces with draw functional ``> threshold`` (capped at ``max_parts``)."""
    v = _as_values(values)
    a, c = (0, v.size - 1) if interval is None else interval
    return int(_greedy_cuts(v, int(a), int(c) + 1, float(threshold), bool(rising), int(max_parts)))


def has_partition(values, threshold, n_parts, rising, interval=None):
    """Whether the index range splits into ``n_parts`` consecutive pieces each exceeding ``threshold``.

    Shrinking a piece never increases its draw functional, so cutting as early
    as possible is optimal and the greedy count decides existence.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    return partition_count(values, threshold, rising, n_parts, interval) >= n_parts


# ---------------------------------------------------------------------------
# localization scale


@dataclass(frozen=True)
class ScaleParams:
    alpha: float
    b: float
    sigma: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ConfigurationError(f"alpha must lie in the open interval (0, 1/2), got {self.alpha!r}")
        if not self.b > 0:
            raise ConfigurationError("b must be positive")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")

    @property
    def cstar(self):
        return 2.0 * self.alpha * self.b / (self.sigma ** 2 * (1.0 - 2.0 * self.alpha))

    def s(self, t):
        return scale_s(self, t)


def scale_s(params, t):
    """``(C* ln t / ln ln t)^(1/alpha)``; defined for ``t > e``."""
    if not t > math.e:
        raise ValueError(f"scale is undefined for t <= e (got t={t!r})")
    lt = math.log(t)
    return (params.cstar * lt / math.log(lt)) ** (1.0 / params.alpha)


def tangent_drift(params, anchor):
    """Slope ``-b anchor^-alpha`` of the drift term ``-b/(1-alpha) x^(1-alpha)`` at ``anchor``."""
    if not anchor > 0:
        raise ValueError("anchor must be positive")
    return -params.b * anchor ** (-params.alpha)


def tangent_drift_at(params, t, factor):
    """Tangent slope at ``factor * s(t)``, e.g. ``factor = 1 - eps`` for event A."""
    return tangent_drift(params, factor * scale_s(params, t))


# ---------------------------------------------------------------------------
# admissible event parameters


def max_delta_A(epsilon, alpha):
    """Supremum of admissible ``delta`` for event A: ``2 delta < 1 - (1-eps)^alpha``."""
    return 0.5 * (1.0 - (1.0 - epsilon) ** alpha)


def max_delta_C(epsilon, alpha):
    """Supremum of admissible ``delta`` for event C: ``2 delta < (1+eps/2)^alpha - 1``."""
    return 0.5 * ((1.0 + 0.5 * epsilon) ** alpha - 1.0)


# ---------------------------------------------------------------------------
# events on a sampled V path


def event_A_drawup(path, params, t, epsilon):
    i0, i1 = path.index_range(0.0, (1.0 - epsilon) * scale_s(params, t))
    return float(_drawup(path.values, i0, i1 + 1))


def check_event_A(path, params, t, epsilon, delta):
    """Draw-up of V on ``[0, (1-eps) s(t)]`` is at most ``(1-delta) ln t``."""
    return event_A_drawup(path, params, t, epsilon) <= (1.0 - delta) * math.log(t)


def check_event_B(path, params, t, epsilon, delta, N):
    """``[(1-eps) s(t), (1-eps/2) s(t)]`` splits into ``N`` pieces with draw-down ``> (1+delta) ln t``."""
    s = scale_s(params, t)
    i0, i1 = path.index_range((1.0 - epsilon) * s, (1.0 - 0.5 * epsilon) * s)
    return has_partition(path.values, (1.0 + delta) * math.log(t), N, rising=False, interval=(i0, i1))


def check_event_C(path, params, t, epsilon, delta, N):
    """``[s(t), (1+eps) s(t)]`` splits into ``N`` pieces with draw-up ``> (1+delta) ln t``."""
    s = scale_s(params, t)
    i0, i1 = path.index_range(s, (1.0 + epsilon) * s)
    return has_partition(path.values, (1.0 + delta) * math.log(t), N, rising=True, interval=(i0, i1))


def check_event_G(path, params, t):
    """``max |V|`` on ``[0, ln^(1/alpha) t]`` is at most ``2 ln^(1/alpha) t``."""
    if not t > 1:
        raise ValueError("t must exceed 1")
    r = math.log(t) ** (1.0 / params.alpha)
    _, i1 = path.index_range(0.0, r)
    return float(np.max(np.abs(path.values[: i1 + 1]))) <= 2.0 * r


def lemma_path_length(params, t, epsilon):
    """Path length needed to evaluate all four events at time ``t``."""
    return max((1.0 + epsilon) * scale_s(params, t), math.log(t) ** (1.0 / params.alpha))
