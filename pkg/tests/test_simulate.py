import math

import numpy as np
import pytest

from conftest import env_from_increments
from rwre.environment import CoverageError, EnvSpec, Gaussian, Rademacher, environment_from_omega, sample_environment
from rwre.exactsolve import expected_hit
from rwre.pathfunc import ScaleParams
from rwre.simulate import (
    SimConfig,
    hit_frequencies,
    localization_ratio,
    mc_hit_cdf,
    positions,
    run_replicas,
    run_trajectory,
)


def _flat(n):
    return env_from_increments(np.zeros(n))


def _all_right(n):
    # huge negative disorder drives every q_y to 0
    spec = EnvSpec(Rademacher(), 1.0, 0.25, n)
    return environment_from_omega(spec, np.full(n, -1e3))


def test_config_validation():
    for kw in ({"t_checkpoints": ()}, {"t_checkpoints": (2.0, 1.0)}, {"t_checkpoints": (0.0,)},
               {"t_checkpoints": (1.0,), "max_events": 0}):
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_all_right_positions_are_poisson():
    env = _all_right(300)
    assert np.all(env.q == 0.0)
    t, n = 50.0, 10 ** 4
    pos, events = positions(env, [t], n, seed=1)
    x = pos[:, 0]
    assert events == x.sum()
    assert abs(x.mean() - t) <= 3 * math.sqrt(t / n)
    # variance of a Poisson(t) sample has standard error ~ t sqrt(2/n) (plus a small 4th-cumulant term)
    se_var = math.sqrt((2 * t * t + t) / n)
    assert abs(x.var(ddof=1) - t) <= 3 * se_var


def test_clock_reference_is_poisson_too():
    env = _all_right(300)
    t, n = 20.0, 2000
    x = np.array([run_trajectory(env, SimConfig((t,), seed=2), r, method="clock").checkpoint_positions[0]
                  for r in range(n)])
    assert abs(x.mean() - t) <= 3 * math.sqrt(t / n)


def test_forced_left_jump_caps_the_walk():
    m = 12
    inc = np.zeros(60)
    inc[m - 1] = 1e3  # U(m) - U(m-1) huge: q_m = 1
    env = env_from_increments(inc)
    assert env.q[m] == 1.0
    pos, _ = positions(env, [10.0, 100.0, 1000.0], 500, seed=3)
    assert pos.max() <= m
    assert np.any(pos == m)
    # a forced left jump one site lower keeps the walk strictly below m
    inc2 = np.zeros(60)
    inc2[m - 2] = 1e3
    pos2, _ = positions(env_from_increments(inc2), [10.0, 100.0, 1000.0], 500, seed=3)
    assert pos2.max() < m


def test_mean_hitting_time_on_flat_potential():
    env = _flat(200)
    oracle = expected_hit(env, 0, 10)
    assert oracle == pytest.approx(100.0, rel=1e-13)
    n = 10 ** 4
    trajs = run_replicas(env, SimConfig((1.0,), seed=4, replicas=n, targets=(10,)))
    tau = np.array([tr.hit_time(10) for tr in trajs])
    assert not np.any(np.isnan(tau))
    assert abs(tau.mean() - oracle) <= 3 * tau.std(ddof=1) / math.sqrt(n)


def test_clock_and_poisson_methods_agree_in_law():
    env = sample_environment(EnvSpec(Gaussian(1.0), 1.0, 0.4, 300), 5)
    cfg = SimConfig((30.0, 300.0), seed=6, targets=(8,), replicas=3000)
    fast = run_replicas(env, cfg)
    slow = [run_trajectory(env, cfg, r, method="clock") for r in range(cfg.replicas)]

    def stats(trs):
        tau = np.array([tr.hit_time(8) for tr in trs])
        x = np.array([tr.checkpoint_positions[1] for tr in trs], dtype=float)
        return tau, x

    for a, b in zip(stats(fast), stats(slow)):
        se = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(cfg.replicas)
        assert abs(a.mean() - b.mean()) <= 3 * se


def test_hit_time_exceeds_checkpoint_iff_position_short_of_target():
    env = _flat(200)
    trajs = run_replicas(env, SimConfig((30.0,), seed=7, replicas=500, targets=(6,)))
    for tr in trajs:
        # the walk moves by unit steps from 0, so X_30 >= 6 forces a hit before 30
        if tr.checkpoint_positions[0] >= 6:
            assert tr.hit_time(6) <= 30.0


def test_unknown_method():
    with pytest.raises(ValueError):
        run_trajectory(_flat(10), SimConfig((1.0,)), method="euler")


# ---------------------------------------------------------------------------
# hitting frequencies


def test_hit_cdf_at_time_zero(flat_env):
    assert mc_hit_cdf(flat_env, 5, 0.0, 100, seed=1).value == 0.0
    assert mc_hit_cdf(flat_env, 0, 0.0, 100, seed=1).value == 1.0
    assert mc_hit_cdf(flat_env, 0, 0.0, 100, seed=1, first_return=True).value == 0.0


def test_hit_cdf_at_start(flat_env):
    for t in (0.5, 10.0, 1e3):
        f = mc_hit_cdf(flat_env, 0, t, 100, seed=2)
        assert f.value == 1.0 and f.se == 0.0


def test_first_return_to_start(flat_env):
    # from 0 the first jump goes right and comes back at the earliest after two jumps
    f = mc_hit_cdf(flat_env, 0, 1e3, 400, seed=3, first_return=True)
    assert 0.0 < f.value < 1.0


def test_deep_trap_blocks_target():
    inc = np.concatenate((np.full(20, 2.0), np.full(20, -2.0)))  # barrier of height 40
    env = env_from_increments(inc)
    assert expected_hit(env, 0, 30) > 1e15
    f = mc_hit_cdf(env, 30, 1e4, 500, seed=4)
    assert f.value == 0.0


def test_hit_frequencies_are_nondecreasing_in_t():
    env = sample_environment(EnvSpec(Rademacher(1.0), 1.0, 0.4, 400), 8)
    freqs, _ = hit_frequencies(env, 0, [15], [10.0, 100.0, 1e3, 1e4], 300, seed=9)
    vals = [f.value for f in freqs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_target_range(flat_env):
    with pytest.raises(IndexError):
        mc_hit_cdf(flat_env, 201, 1.0, 10, seed=0)


def test_right_edge_overrun_is_reported():
    with pytest.raises(CoverageError, match="right edge"):
        positions(_all_right(20), [100.0], 4, seed=0)
    with pytest.raises(CoverageError, match="right edge"):
        run_replicas(_all_right(20), SimConfig((100.0,), targets=(5,)))


# ---------------------------------------------------------------------------
# localization ratio


def test_localization_ratio_domain(flat_env):
    with pytest.raises(ValueError):
        localization_ratio(flat_env, ScaleParams(0.4, 1.0, 1.0), 10.0, 10, seed=0)


def test_localization_ratio_coverage(flat_env):
    with pytest.raises(CoverageError):
        localization_ratio(flat_env, ScaleParams(0.4, 1.0, 1.0), 1e4, 10, seed=0)


def test_diffusive_null_model():
    # without disorder or drift the walk is a reflected simple walk: X_t ~ |N(0, t)|
    env = _flat(6000)
    p = ScaleParams(0.4, 1.0, 1.0)
    n = 2000
    med_abs_normal = 0.6744897501960817
    ratios = []
    for t in (1e4, 1e5):
        r = localization_ratio(env, p, t, n, seed=11)
        med = r.median * r.scale
        # sample-median standard error for |N(0, t)|: sqrt(1/(4n)) / density at the median
        dens = 2 * math.exp(-med_abs_normal ** 2 / 2) / math.sqrt(2 * math.pi)
        se = math.sqrt(t) * 0.5 / math.sqrt(n) / dens
        assert abs(med - med_abs_normal * math.sqrt(t)) <= 3 * se + 1.0
        assert r.q25 <= r.median <= r.q75
        ratios.append(r.median)
    # sqrt(t) outgrows s(t), so the ratio grows with t for the null model
    assert ratios[1] > ratios[0]


def test_localization_ratio_positive_in_drifted_environment():
    p = ScaleParams(0.4, 1.0, 1.0)
    env = sample_environment(EnvSpec(Rademacher(1.0), 1.0, 0.4, 5000), 12)
    r = localization_ratio(env, p, 1e6, 50, seed=13)
    assert math.isfinite(r.median) and r.median > 0


# ---------------------------------------------------------------------------
# determinism and stream addressing


def test_positions_independent_of_threads_and_batching():
    env = sample_environment(EnvSpec(Rademacher(1.0), 1.0, 0.4, 3000), 14)
    t = [1e2, 1e3, 1e4]
    a, ea = positions(env, t, 70, seed=15, threads=1)
    b, eb = positions(env, t, 70, seed=15, threads=4)
    assert np.array_equal(a, b) and ea == eb
    c, _ = positions(env, t, 33, seed=15)
    assert np.array_equal(a[:33], c)


def test_replica_order_does_not_matter():
    env = sample_environment(EnvSpec(Rademacher(1.0), 1.0, 0.4, 3000), 16)
    cfg = SimConfig((50.0, 500.0), seed=17, replicas=40, targets=(4, 9))
    full = run_replicas(env, cfg, threads=3)
    some = run_replicas(env, cfg, replicas=[31, 2, 17])
    for r, tr in zip((31, 2, 17), some):
        assert np.array_equal(tr.checkpoint_positions, full[r].checkpoint_positions)
        assert tr.hit_records == full[r].hit_records
    again = run_replicas(env, cfg, threads=1)
    assert all(a.hit_records == b.hit_records for a, b in zip(full, again))


def test_both_kernels_walk_the_same_path():
    env = sample_environment(EnvSpec(Rademacher(1.0), 1.0, 0.4, 3000), 18)
    t = (10.0, 1e3, 5e3)
    pos, _ = positions(env, t, 37, seed=19)
    trajs = run_replicas(env, SimConfig(t, seed=19, replicas=37))
    assert np.array_equal(pos, np.array([tr.checkpoint_positions for tr in trajs]))


def test_seeds_give_different_walks():
    env = _flat(2000)
    a, _ = positions(env, [1e4], 20, seed=1)
    b, _ = positions(env, [1e4], 20, seed=2)
    assert not np.array_equal(a, b)


# ---------------------------------------------------------------------------
# embedded chain and censoring


def test_one_step_left_frequency_matches_q():
    env = sample_environment(EnvSpec(Gaussian(1.0), 1.0, 0.4, 100), 20)
    n = 10 ** 4
    for y in (3, 20, 57):
        cfg = SimConfig((1e-9,), max_events=1, seed=21 + y, replicas=n, targets=(y - 1, y + 1), start=y)
        trajs = run_replicas(env, cfg)
        left = sum(tr.hit_time(y - 1) is not None for tr in trajs)
        right = sum(tr.hit_time(y + 1) is not None for tr in trajs)
        assert left + right == n
        q = env.q[y]
        assert abs(left / n - q) <= 3 * math.sqrt(q * (1 - q) / n)


def test_censoring_soundness():
    env = _flat(500)
    cfg = SimConfig((5.0,), max_events=200, seed=22, replicas=300, targets=(5, 10, 20))
    trajs = run_replicas(env, cfg)
    n_censored = 0
    for tr in trajs:
        times = [tr.hit_time(tg) for tg in (5, 10, 20)]
        n_censored += sum(h.censored for h in tr.hit_records)
        for h in tr.hit_records:
            assert h.censored == (h.time is None)
            if not h.censored:
                assert math.isfinite(h.time) and h.time > 0
        # nested targets: a farther target is never hit before a nearer one
        finite = [x for x in times if x is not None]
        assert finite == sorted(finite)
        assert times[: len(finite)] == finite
    assert n_censored > 0
    # the cap must cover the event count needed for the last checkpoint
    with pytest.raises(CoverageError):
        run_replicas(env, SimConfig((1e3,), max_events=10, targets=(5,)))
