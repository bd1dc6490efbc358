"""Monte Carlo of the continuous-time walk.

The walk jumps at total rate 1 from every site, so the jump epochs form a
rate-1 Poisson process independent of the embedded jump chain.  The
simulator therefore draws the event counts ``N(t_k)`` at the checkpoints
and runs only the embedded chain; positions at the checkpoints are the chain
after ``N(t_k)`` steps.  A first hit at embedded step ``K`` happens at the
``K``-th Poisson epoch.  That epoch is an order statistic of the uniform
epochs inside the checkpoint segment containing ``K``, or a Gamma increment
past the last checkpoint.  The law is the same as with per-event
exponential clocks, which are kept as the ``method="clock"`` reference.

Replica ``r`` of configuration seed ``s`` always uses the same streams (see
:mod:`rwre.rng`).  Results are therefore independent of batching, thread
count and execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from . import rng as _rng
from .environment import CoverageError
from .pathfunc import scale_s
from .rng import mix64

LANES = 16
_STOP_NONE, _STOP_ANY, _STOP_ALL = 0, 1, 2


def thresholds(env):
    """Left-jump thresholds ``floor(q_y 2^32)`` compared against 32-bit uniforms."""
    return np.floor(np.ldexp(env.q, 32)).astype(np.int64)


@njit(nogil=True, cache=True)
def _run_lanes(thr, x0, keys, gammas, stop, rec, targets, stop_mode, first_return):
    L = x0.size
    K = rec.shape[1]
    J = targets.size
    edge = thr.size - 1
    pos = np.full((L, K), -1, np.int64)
    hit = np.full((L, J), -1, np.int64)
    steps = np.zeros(L, np.int64)
    over = np.full(L, -1, np.int64)
    x = x0.copy()
    kidx = np.zeros(L, np.int64)
    nhit = np.zeros(L, np.int64)
    active = np.ones(L, np.bool_)
    n_active = L
    for l in range(L):
        while kidx[l] < K and rec[l, kidx[l]] == 0:
            pos[l, kidx[l]] = x[l]
            kidx[l] += 1
        if not first_return:
            for j in range(J):
                if x[l] == targets[j] and hit[l, j] < 0:
                    hit[l, j] = 0
                    nhit[l] += 1
        if stop[l] <= 0 or (stop_mode == 1 and nhit[l] > 0) or (stop_mode == 2 and nhit[l] == J and kidx[l] == K):
            active[l] = False
            n_active -= 1
    s = 0
    mask = np.uint64(0xFFFFFFFF)
    while n_active > 0:
        word = np.uint64(s >> 1)
        shift = np.uint64((s & 1) * 32)
        s1 = s + 1
        for l in range(L):
            if not active[l]:
                continue
            u = np.int64((mix64(keys[l] + word * gammas[l]) >> shift) & mask)
            xl = x[l]
            if u < thr[xl]:
                xl -= 1
            else:
                xl += 1
            x[l] = xl
            while kidx[l] < K and rec[l, kidx[l]] == s1:
                pos[l, kidx[l]] = xl
                kidx[l] += 1
            for j in range(J):
                if xl == targets[j] and hit[l, j] < 0:
                    hit[l, j] = s1
                    nhit[l] += 1
            fin = (s1 >= stop[l] or (stop_mode == 1 and nhit[l] > 0)
                   or (stop_mode == 2 and nhit[l] == J and kidx[l] == K))
            if xl >= edge and not fin:
                over[l] = s1
                fin = True
            if fin:
                active[l] = False
                steps[l] = s1
                n_active -= 1
        s = s1
    return pos, hit, steps, over


@njit(inline="always")
def _advance(xl, u, thr):
    return xl - 1 if u < thr[xl] else xl + 1


@njit(nogil=True, cache=True)
def _run_positions(thr, x0, keys, gammas, rec):
    """Positions after ``rec[l, k]`` embedded steps; the fast path used when no targets are tracked.

    Draws are consumed exactly as in :func:`_run_lanes` (step ``s`` uses half
    ``s & 1`` of word ``s >> 1``), so both kernels give identical walks.
    """
    L = x0.size
    K = rec.shape[1]
    edge = thr.size - 1
    pos = np.full((L, K), -1, np.int64)
    over = np.full(L, -1, np.int64)
    x = x0.copy()
    kidx = np.zeros(L, np.int64)
    nxt = np.empty(L, np.int64)
    for l in range(L):
        while kidx[l] < K and rec[l, kidx[l]] == 0:
            pos[l, kidx[l]] = x[l]
            kidx[l] += 1
        nxt[l] = rec[l, kidx[l]] if kidx[l] < K else -1
    common = rec[:, K - 1].min() if L > 0 else 0
    mask = np.uint64(0xFFFFFFFF)
    sh = np.uint64(32)
    for c in range(common >> 1):
        word = np.uint64(c)
        s1 = 2 * c + 1
        for l in range(L):
            w = mix64(keys[l] + word * gammas[l])
            xl = _advance(x[l], np.int64(w & mask), thr)
            if s1 == nxt[l]:
                while kidx[l] < K and rec[l, kidx[l]] == s1:
                    pos[l, kidx[l]] = xl
                    kidx[l] += 1
                nxt[l] = rec[l, kidx[l]] if kidx[l] < K else -1
            xl = _advance(xl, np.int64(w >> sh), thr)
            if s1 + 1 == nxt[l]:
                while kidx[l] < K and rec[l, kidx[l]] == s1 + 1:
                    pos[l, kidx[l]] = xl
                    kidx[l] += 1
                nxt[l] = rec[l, kidx[l]] if kidx[l] < K else -1
            if xl >= edge:
                # reaching site n ends the lane; clamp so the remaining lock-step reads stay in range
                if over[l] < 0:
                    over[l] = s1 + 1
                xl = edge - 1
            x[l] = xl
    start = (common >> 1) * 2
    for l in range(L):
        if over[l] >= 0:
            continue
        xl = x[l]
        for s in range(start, rec[l, K - 1]):
            w = mix64(keys[l] + np.uint64(s >> 1) * gammas[l])
            u = np.int64((w >> np.uint64((s & 1) * 32)) & mask)
            xl = _advance(xl, u, thr)
            while kidx[l] < K and rec[l, kidx[l]] == s + 1:
                pos[l, kidx[l]] = xl
                kidx[l] += 1
            if xl >= edge:
                over[l] = s + 1
                break
        x[l] = xl
    return pos, over


@njit(nogil=True, cache=True)
def _clock_walk(gen, q, x0, checkpoints, targets, first_return, max_events):
    K = checkpoints.size
    J = targets.size
    pos = np.full(K, -1, np.int64)
    hit_t = np.full(J, np.nan)
    edge = q.size - 1
    x = x0
    t = 0.0
    nhit = 0
    if not first_return:
        for j in range(J):
            if targets[j] == x:
                hit_t[j] = 0.0
                nhit += 1
    k = 0
    events = 0
    while events < max_events:
        t_next = t + gen.exponential(1.0)
        while k < K and checkpoints[k] < t_next:
            pos[k] = x
            k += 1
        if k == K and nhit == J:
            return pos, hit_t, events, False
        t = t_next
        if gen.random() < q[x]:
            x -= 1
        else:
            x += 1
        events += 1
        for j in range(J):
            if x == targets[j] and np.isnan(hit_t[j]):
                hit_t[j] = t
                nhit += 1
        if x >= edge and not (k == K and nhit == J):
            return pos, hit_t, events, True
    return pos, hit_t, events, False


class _LaneOutput(NamedTuple):
    positions: np.ndarray
    hit_steps: np.ndarray
    steps: np.ndarray
    overrun: np.ndarray
    counts: np.ndarray


def _poisson_counts(seed, replica, times, key=()):
    """Cumulative Poisson event counts at ``times`` for one replica, plus the generator left after drawing them."""
    gen = _rng.generator(seed, *key, int(replica), _rng.TAG_CLOCK)
    gaps = np.diff(np.concatenate(([0.0], np.asarray(times, dtype=float))))
    return np.cumsum(gen.poisson(gaps)), gen


def _simulate(env, x0, replicas, seed, count_times, targets, stop_mode, first_return,
              extra_steps=0, max_events=None, threads=1, key=()):
    """Run replicas as lanes; returns raw embedded-step data and the Poisson counts used."""
    replicas = np.asarray(replicas, dtype=np.int64)
    R = replicas.size
    thr = thresholds(env)
    keys, gammas = _rng.walk_streams(seed, replicas, *key)
    counts = np.zeros((R, len(count_times)), np.int64)
    for i, r in enumerate(replicas):
        counts[i] = _poisson_counts(seed, r, count_times, key)[0]
    stop = (counts[:, -1] if len(count_times) else np.zeros(R, np.int64)) + extra_steps
    if max_events is not None:
        stop = np.minimum(stop, max_events)
    starts = np.broadcast_to(np.asarray(x0, dtype=np.int64), (R,)).copy()
    targets = np.asarray(targets, dtype=np.int64)
    groups = [slice(i, min(i + LANES, R)) for i in range(0, R, LANES)]

    def work(g):
        return _run_lanes(thr, starts[g], keys[g], gammas[g], stop[g], np.ascontiguousarray(counts[g]),
                          targets, stop_mode, first_return)

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, groups))
    else:
        parts = [work(g) for g in groups]
    pos, hit, steps, over = (np.concatenate([p[i] for p in parts]) if parts else None for i in range(4))
    if pos is None:
        pos = np.zeros((0, len(count_times)), np.int64)
        hit = np.zeros((0, targets.size), np.int64)
        steps = over = np.zeros(0, np.int64)
    return _LaneOutput(pos, hit, steps, over, counts)


def _check_overrun(env, out, required):
    bad = (out.overrun >= 0) & (out.overrun <= required)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CoverageError(
            f"walk reached the right edge (site {env.n_sites}) after {int(out.overrun[i])} events, "
            f"before the {int(required[i])} events needed; enlarge n_sites")


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class SimConfig:
    t_checkpoints: tuple
    max_events: int = 10 ** 9
    seed: int = 0
    replicas: int = 1
    targets: tuple = ()
    first_return: bool = False
    start: int = 0

    def __post_init__(self):
        t = np.asarray(self.t_checkpoints, dtype=float)
        object.__setattr__(self, "t_checkpoints", tuple(float(v) for v in t))
        object.__setattr__(self, "targets", tuple(int(v) for v in self.targets))
        if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("checkpoints must be positive and strictly increasing")
        if self.max_events < 1 or self.replicas < 1:
            raise ValueError("max_events and replicas must be positive")


@dataclass(frozen=True)
class HitRecord:
    target: int
    time: float | None

    @property
    def censored(self):
        return self.time is None


@dataclass(frozen=True)
class Trajectory:
    checkpoint_positions: np.ndarray
    hit_records: tuple = ()
    events: int = 0

    def hit_time(self, target):
        for h in self.hit_records:
            if h.target == target:
                return h.time
        raise KeyError(target)


def _epoch_times(hit_steps, counts, times, gen):
    """Poisson epoch times for the given embedded step indices, sampled jointly.

    ``counts[k]`` events fall in ``[0, times[k]]``.  Given the counts, the
    epochs inside a segment are uniform order statistics, so each requested
    epoch is a Beta-distributed fraction of what is left of its segment after
    the previous one.  Beyond the last checkpoint the gaps are Exp(1).
    """
    out = {0: 0.0}
    cur_t, cur_n = 0.0, 0
    for k in sorted(set(int(k) for k in hit_steps if k > 0)):
        seg = int(np.searchsorted(counts, k))
        if seg < len(times):
            start_t, start_n = (times[seg - 1], int(counts[seg - 1])) if seg > 0 else (0.0, 0)
            if cur_n < start_n:
                cur_t, cur_n = start_t, start_n
            r, m = k - cur_n, int(counts[seg]) - cur_n
            cur_t += (times[seg] - cur_t) * gen.beta(r, m - r + 1)
        else:
            if cur_n < counts[-1]:
                cur_t, cur_n = times[-1], int(counts[-1])
            cur_t += gen.gamma(k - cur_n)
        cur_n = k
        out[k] = cur_t
    return out


def _trajectory_from_lanes(out, i, cfg, gen):
    counts = out.counts[i]
    steps = out.hit_steps[i]
    times = _epoch_times(steps[steps >= 0], counts, cfg.t_checkpoints, gen)
    records = tuple(HitRecord(tg, None if k < 0 else float(times[int(k)]))
                    for tg, k in zip(cfg.targets, steps))
    return Trajectory(out.positions[i].copy(), records, int(out.steps[i]))


def run_replicas(env, cfg, replicas=None, threads=1):
    """Trajectories for the given replica indices (default ``range(cfg.replicas)``)."""
    replicas = np.arange(cfg.replicas) if replicas is None else np.asarray(replicas, dtype=np.int64)
    for tg in cfg.targets:
        if not 0 <= tg <= env.n_sites:
            raise IndexError(f"target {tg} outside [0, {env.n_sites}]")
    mode = _STOP_ALL if cfg.targets else _STOP_NONE
    # keep running after the last checkpoint only while some target is still unhit
    extra = cfg.max_events if cfg.targets else 0
    out = _simulate(env, cfg.start, replicas, cfg.seed, cfg.t_checkpoints, cfg.targets, mode,
                    cfg.first_return, extra_steps=extra, max_events=cfg.max_events, threads=threads)
    _check_overrun(env, out, out.counts[:, -1])
    if np.any(out.counts[:, -1] > cfg.max_events):
        raise CoverageError("max_events is smaller than the event count needed for the last checkpoint")
    trajs = []
    for i, r in enumerate(replicas):
        gen = _poisson_counts(cfg.seed, r, cfg.t_checkpoints)[1]
        trajs.append(_trajectory_from_lanes(out, i, cfg, gen))
    return trajs


def run_trajectory(env, cfg, replica=0, method="poisson"):
    """One replica.  ``method="clock"`` uses explicit exponential holding times (reference path)."""
    if method == "poisson":
        return run_replicas(env, cfg, [replica])[0]
    if method != "clock":
        raise ValueError(f"unknown method {method!r}")
    gen = np.random.Generator(np.random.Philox(_rng.seed_sequence(cfg.seed, int(replica), _rng.TAG_MISC)))
    pos, hit_t, events, over = _clock_walk(gen, env.q, int(cfg.start), np.asarray(cfg.t_checkpoints),
                                           np.asarray(cfg.targets, dtype=np.int64), cfg.first_return,
                                           int(cfg.max_events))
    if over and np.any(pos < 0):
        raise CoverageError(f"walk reached the right edge (site {env.n_sites}) before the last checkpoint")
    records = tuple(HitRecord(tg, None if np.isnan(h) else float(h)) for tg, h in zip(cfg.targets, hit_t))
    return Trajectory(pos, records, int(events))


# ---------------------------------------------------------------------------
# aggregate estimators


@dataclass(frozen=True)
class Frequency:
    value: float
    se: float
    n: int

    @classmethod
    def from_successes(cls, k, n):
        p = k / n
        return cls(p, math.sqrt(p * (1.0 - p) / n), n)


def positions(env, t_checkpoints, n_replicas, seed, start=0, threads=1, key=()):
    """Positions at each checkpoint, shape ``(n_replicas, len(t_checkpoints))``, plus total events."""
    times = tuple(float(t) for t in t_checkpoints)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("checkpoints must be positive and strictly increasing")
    replicas = np.arange(n_replicas)
    thr = thresholds(env)
    keys, gammas = _rng.walk_streams(seed, replicas, *key)
    counts = np.array([_poisson_counts(seed, r, times, key)[0] for r in replicas], dtype=np.int64)
    counts = counts.reshape(n_replicas, len(times))
    starts = np.full(n_replicas, int(start), np.int64)
    groups = [slice(i, min(i + LANES, n_replicas)) for i in range(0, n_replicas, LANES)]

    def work(g):
        return _run_positions(thr, starts[g], keys[g], gammas[g], np.ascontiguousarray(counts[g]))

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, groups))
    else:
        parts = [work(g) for g in groups]
    pos = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, len(times)), np.int64)
    over = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    if np.any(over >= 0):
        i = int(np.argmax(over >= 0))
        raise CoverageError(f"walk reached the right edge (site {env.n_sites}) after {int(over[i])} events, "
                            f"before the {int(counts[i, -1])} events needed; enlarge n_sites")
    return pos, int(counts[:, -1].sum())


def hit_frequencies(env, start, targets, t_grid, n_replicas, seed, first_return=False, threads=1, key=()):
    """``P^start[tau_targets <= t]`` for each ``t`` in the (increasing) grid.

    ``tau_targets`` is the first hit of any site in ``targets``.  Returns a
    list of :class:`Frequency` and the total number of simulated events.
    """
    t_grid = tuple(float(t) for t in t_grid)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    targets = tuple(int(v) for v in targets)
    for tg in targets:
        if not 0 <= tg <= env.n_sites:
            raise IndexError(f"target {tg} outside [0, {env.n_sites}]")
    if t_grid and t_grid[0] <= 0:
        # the event count at t = 0 is zero; keep the grid strictly positive for the counter
        pos_grid = tuple(max(t, 1e-300) for t in t_grid)
    else:
        pos_grid = t_grid
    out = _simulate(env, start, np.arange(n_replicas), seed, pos_grid, targets, _STOP_ANY,
                    first_return, threads=threads, key=key)
    first = np.where(out.hit_steps >= 0, out.hit_steps, np.iinfo(np.int64).max).min(axis=1)
    hit_by = first[:, None] <= out.counts
    # the walk cannot leave the simulated range before it is stopped at N(t_max)
    _check_overrun(env, out, out.counts[:, -1])
    return [Frequency.from_successes(int(k), n_replicas) for k in hit_by.sum(axis=0)], int(out.steps.sum())


def mc_hit_cdf(env, target, t, n_replicas, seed, start=0, first_return=False, threads=1):
    """Empirical ``P^start[tau_target <= t]`` with its binomial standard error."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        hit = target == start and not first_return
        return Frequency(1.0 if hit else 0.0, 0.0, n_replicas)
    return hit_frequencies(env, start, [target], [t], n_replicas, seed, first_return, threads)[0][0]


def exit_survival(env, a, c, x, t_grid, n_replicas, seed, threads=1, key=()):
    """Empirical ``P^x[tau_{a,c} >= t]`` on a time grid."""
    freqs, events = hit_frequencies(env, x, [a, c], t_grid, n_replicas, seed, threads=threads, key=key)
    return [Frequency(1.0 - f.value, f.se, f.n) for f in freqs], events


@dataclass(frozen=True)
class RatioQuantiles:
    q25: float
    median: float
    q75: float
    scale: float
    samples: np.ndarray = field(repr=False)


def localization_ratio(env, params, t, n_replicas, seed, threads=1):
    """Quartiles of ``X_t / s(t)`` over replicas in one environment."""
    s = scale_s(params, t)
    if env.n_sites <= 2 * s:
        raise CoverageError(f"environment needs more than 2 s(t) = {2 * s:.1f} sites, has {env.n_sites}")
    pos, _ = positions(env, [t], n_replicas, seed, threads=threads)
    r = pos[:, 0] / s
    q25, med, q75 = np.percentile(r, [25, 50, 75])
    return RatioQuantiles(float(q25), float(med), float(q75), s, r)


def expected_events(t_max, n_lanes):
    """Upper estimate of the embedded steps needed for ``n_lanes`` lanes to reach ``t_max``."""
    return int(n_lanes * math.ceil(t_max + 6.0 * math.sqrt(t_max) + 10.0))
