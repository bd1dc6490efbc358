"""Batch studies: configuration, execution and CSV/JSON reporting.

A study is described by an :class:`ExperimentSpec`, usually read from a YAML
file by :func:`parse_config`.  :func:`run_experiment` produces an
:class:`ExperimentResult` (a flat table plus a summary dictionary) and
:func:`emit_report` writes it as ``<out>.csv`` and ``<out>.json``.

Every random object is addressed by ``(root_seed, role, index, tag)``, so
outputs depend only on the spec and not on the thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import beta as beta_dist

from . import __version__
from . import rng as _rng
from .bmlaw import DriftedBMParams, cor1_asymptotic, mc_drawup_survival_levels, prop0_survival
from .environment import (
    ConfigurationError,
    CoverageError,
    EnvSpec,
    check_gamma_event,
    coupled_environment,
    default_gamma_exponent,
    distribution_from_dict,
    sample_environment,
    sample_potential_path,
)
from .exactsolve import (
    BoundParams,
    calibrate_K2,
    calibrate_K3,
    confinement_bound,
    confinement_scale_log,
    escape_bound,
    reversible_measure_log,
)
from .pathfunc import (
    ScaleParams,
    check_event_A,
    check_event_B,
    check_event_C,
    check_event_G,
    event_A_drawup,
    interval_stats,
    lemma_path_length,
    max_delta_A,
    max_delta_C,
    partition_count,
    scale_s,
)
from .simulate import exit_survival, expected_events, hit_frequencies, positions

KINDS = ("localization_trend", "lemma_frequency", "bound_validation", "prop0_validation", "cor1_convergence")
WALK_KINDS = ("localization_trend", "bound_validation")
EVENTS = ("A", "B", "C", "G", "Gamma")

DEFAULT_BUDGET = 10 ** 11
DEFAULT_GRID_RATIO = 0.1

# seed roles
ROLE_MAIN = 0
ROLE_CALIBRATION = 1
ROLE_HITTING = 2


class BudgetError(RuntimeError):
    """The pre-run work estimate exceeds the configured budget."""

    def __init__(self, estimate, budget):
        super().__init__(f"estimated work {estimate:.4g} events exceeds the budget of {budget:.4g}")
        self.estimate = estimate
        self.budget = budget


class ExperimentError(RuntimeError):
    """A failure inside a study, tagged with the coordinate where it happened."""

    def __init__(self, message, coordinate):
        where = ", ".join(f"{k}={v}" for k, v in coordinate.items())
        super().__init__(f"{message} [{where}]")
        self.coordinate = coordinate


# ---------------------------------------------------------------------------
# time grids


def proof_grid(t_min, t_max, ratio=DEFAULT_GRID_RATIO):
    """Times ``exp((1+ratio)^n)`` lying in ``[t_min, t_max]``."""
    if not ratio > 0:
        raise ConfigurationError("grid ratio must be positive")
    if not t_max >= t_min > 1:
        raise ConfigurationError("grid needs 1 < t_min <= t_max")
    base = math.log1p(ratio)
    n0 = math.ceil(math.log(math.log(t_min)) / base - 1e-12)
    out = []
    n = n0
    while True:
        t = math.exp((1.0 + ratio) ** n)
        if t > t_max * (1 + 1e-12):
            break
        if t >= t_min * (1 - 1e-12):
            out.append(t)
        n += 1
    return tuple(out)


# ---------------------------------------------------------------------------
# spec


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    env_spec: EnvSpec | None
    t_grid: tuple = ()
    n_environments: int = 10
    n_replicas: int = 50
    epsilon: float = 0.5
    delta: float = 0.0
    N_partition: int = 1
    root_seed: int = 0
    output_path: str | None = None
    threads: int = 1
    budget_events: float = DEFAULT_BUDGET
    options: dict = field(default_factory=dict)

    @property
    def scale(self):
        if self.env_spec is None:
            return None
        return ScaleParams(self.env_spec.alpha, self.env_spec.b, self.env_spec.sigma)

    def to_dict(self):
        return {
            "kind": self.kind,
            "environment": None if self.env_spec is None else self.env_spec.to_dict(),
            "t_grid": [float(t) for t in self.t_grid],
            "n_environments": self.n_environments,
            "n_replicas": self.n_replicas,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "N_partition": self.N_partition,
            "root_seed": self.root_seed,
            "output_path": self.output_path,
            "threads": self.threads,
            "budget_events": self.budget_events,
            "options": _plain(self.options),
        }


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


_KIND_OPTIONS = {
    "localization_trend": {"bootstrap": 2000, "site_factor": 2.5},
    "lemma_frequency": {"events": ["A", "B", "C", "G"], "grid_step": 1.0, "gamma_K": 10.0},
    "bound_validation": {
        "n_calibration": None,
        "interval_start": 10,
        "interval_length": 20,
        "confidence": 0.999,
        "K1": 1.0,
        "hitting_t": None,
    },
    "prop0_validation": {
        "sigma": 1.0,
        "nu": -0.5,
        "mu": 20.0,
        "levels": [1.0, 2.0, 3.0],
        "dt": 1e-4,
        "n_paths": 200000,
        "allowance": 0.01,
    },
    "cor1_convergence": {"sigma": 1.0, "ks": [2, 4, 8, 16], "tolerance": 0.05},
}

_TOP_KEYS = {
    "kind", "environment", "t_grid", "n_environments", "n_replicas", "events", "seed", "root_seed",
    "output", "output_path", "threads", "budget_events", "options",
}
_ENV_KEYS = {"distribution", "b", "alpha", "n_sites", "theta0_check"}


def _require(d, key, where):
    if key not in d or d[key] is None:
        raise ConfigurationError(f"missing required field '{where}{key}'")
    return d[key]


def _number(v, name, cast=float):
    try:
        x = cast(v)
    except (TypeError, ValueError):
        raise ConfigurationError(f"field '{name}' must be a number, got {v!r}") from None
    if cast is int and x != float(v):
        raise ConfigurationError(f"field '{name}' must be an integer, got {v!r}")
    return x


def check_event_constraints(epsilon, delta, N):
    """Reject event parameters outside the admissible region before any work is done."""
    if not 0.0 < epsilon < 1.0:
        raise ConfigurationError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not delta > 0.0:
        raise ConfigurationError(f"delta must be positive, got {delta!r}")
    if int(N) != N or N < 1:
        raise ConfigurationError(f"N_partition must be a positive integer, got {N!r}")


def _check_delta(alpha, epsilon, delta, events):
    if "A" in events and not 2.0 * delta < 2.0 * max_delta_A(epsilon, alpha):
        raise ConfigurationError(
            f"2*delta < 1-(1-epsilon)^alpha required for event A (delta={delta!r}, "
            f"bound {max_delta_A(epsilon, alpha):.6g})")
    if "C" in events and not 2.0 * delta < 2.0 * max_delta_C(epsilon, alpha):
        raise ConfigurationError(
            f"2*delta < (1+epsilon/2)^alpha-1 required for event C (delta={delta!r}, "
            f"bound {max_delta_C(epsilon, alpha):.6g})")


def estimate_work(spec):
    """Upper estimate of the work (walk events, or path samples / normals) a spec needs."""
    k = spec.kind
    o = spec.options
    if k == "localization_trend":
        if not spec.t_grid:
            return 0
        return spec.n_environments * expected_events(spec.t_grid[-1], spec.n_replicas)
    if k == "bound_validation":
        n_env = spec.n_environments + o["n_calibration"]
        per_env = 2 * expected_events(spec.t_grid[-1], spec.n_replicas) if spec.t_grid else 0
        total = n_env * per_env
        if o["hitting_t"] is not None:
            total += spec.n_environments * expected_events(o["hitting_t"], spec.n_replicas)
        return total
    if k == "lemma_frequency":
        if not spec.t_grid:
            return 0
        length = _lemma_length(spec)
        return int(spec.n_environments * math.ceil(length / o["grid_step"] + 1))
    if k == "prop0_validation":
        n = o["n_paths"]
        mean_steps = o["mu"] / o["dt"]
        return int(math.ceil(n * mean_steps * (1.0 + 5.0 / math.sqrt(n)) + n))
    return 0


def _lemma_length(spec):
    p = spec.scale
    t_max = spec.t_grid[-1]
    length = lemma_path_length(p, t_max, spec.epsilon)
    if "Gamma" in spec.options["events"]:
        length = max(length, math.log(t_max) ** default_gamma_exponent(p.alpha))
    return length


def _budget_capped_grid(spec_fn, t_min, t_max, ratio, budget):
    """The proof grid from ``t_min``, truncated to the points a budget allows."""
    grid = proof_grid(t_min, t_max, ratio)
    keep = [t for t in grid if estimate_work(spec_fn(grid[: grid.index(t) + 1])) <= budget]
    return tuple(keep)


def _build_options(kind, raw):
    opts = dict(_KIND_OPTIONS[kind])
    unknown = set(raw) - set(opts)
    if unknown:
        raise ConfigurationError(f"unknown option(s) for {kind}: {sorted(unknown)}")
    opts.update(raw)
    return opts


def spec_from_dict(d, overrides=None):
    """Validated :class:`ExperimentSpec` from a parsed config mapping, defaults applied."""
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a mapping")
    d = dict(d)
    for k, v in (overrides or {}).items():
        if v is not None:
            d[k] = v
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown top-level field(s): {sorted(unknown)}")
    kind = _require(d, "kind", "")
    if kind not in KINDS:
        raise ConfigurationError(f"unknown kind {kind!r}; expected one of {list(KINDS)}")
    opts = _build_options(kind, d.get("options") or {})

    env_spec = None
    env_raw = None
    if kind not in ("prop0_validation", "cor1_convergence"):
        env_raw = dict(_require(d, "environment", ""))
        unknown = set(env_raw) - _ENV_KEYS
        if unknown:
            raise ConfigurationError(f"unknown environment field(s): {sorted(unknown)}")
        alpha = _number(_require(env_raw, "alpha", "environment."), "environment.alpha")
        b = _number(_require(env_raw, "b", "environment."), "environment.b")
        dist = distribution_from_dict(env_raw.get("distribution", {"family": "rademacher", "c": 1.0}))
        env_spec = EnvSpec(dist, b, alpha, 1, _number(env_raw.get("theta0_check", 1.0), "environment.theta0_check"))

    ev = dict(d.get("events") or {})
    unknown = set(ev) - {"epsilon", "delta", "N"}
    if unknown:
        raise ConfigurationError(f"unknown events field(s): {sorted(unknown)}")
    epsilon = _number(ev.get("epsilon", 0.5), "events.epsilon")
    events = tuple(opts.get("events", ()))
    if kind == "lemma_frequency":
        bad = set(events) - set(EVENTS)
        if bad:
            raise ConfigurationError(f"unknown event(s) {sorted(bad)}; expected a subset of {list(EVENTS)}")
    delta = ev.get("delta")
    if delta is None:
        # half the tightest admissible bound among the requested events
        bounds = [max_delta_A(epsilon, env_spec.alpha)] if env_spec is not None else [0.05]
        if "C" in events:
            bounds.append(max_delta_C(epsilon, env_spec.alpha))
        delta = 0.5 * min(bounds)
    delta = _number(delta, "events.delta")
    N = _number(ev.get("N", 1), "events.N", int)
    check_event_constraints(epsilon, delta, N)
    if kind == "lemma_frequency":
        _check_delta(env_spec.alpha, epsilon, delta, events)

    seed = d.get("root_seed", d.get("seed", 0))
    seed = _number(seed, "seed", int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    threads = _number(d.get("threads", 1), "threads", int)
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    budget = _number(d.get("budget_events", DEFAULT_BUDGET), "budget_events")
    n_env = _number(d.get("n_environments", 10), "n_environments", int)
    n_rep = _number(d.get("n_replicas", 50), "n_replicas", int)
    if n_env < 1 or n_rep < 1:
        raise ConfigurationError("n_environments and n_replicas must be >= 1")
    if kind == "bound_validation" and opts["n_calibration"] is None:
        opts["n_calibration"] = n_env

    spec = ExperimentSpec(
        kind=kind, env_spec=env_spec, n_environments=n_env, n_replicas=n_rep, epsilon=epsilon, delta=delta,
        N_partition=N, root_seed=seed, output_path=d.get("output_path", d.get("output")), threads=threads,
        budget_events=budget, options=opts,
    )
    spec = replace(spec, t_grid=_resolve_grid(spec, d.get("t_grid")))
    if env_spec is not None:
        spec = replace(spec, env_spec=replace(env_spec, n_sites=_resolve_sites(spec, env_raw.get("n_sites", "auto"))))
    _validate_kind(spec)
    return spec


def _resolve_grid(spec, raw):
    if spec.kind in ("prop0_validation", "cor1_convergence"):
        return ()
    if isinstance(raw, (list, tuple)):
        grid = tuple(_number(t, "t_grid") for t in raw)
        if not grid:
            raise ConfigurationError("t_grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("t_grid must be strictly increasing")
        if grid[0] <= math.e:
            raise ConfigurationError("t_grid values must exceed e (the scale s(t) is undefined below)")
        return grid
    raw = dict(raw or {})
    unknown = set(raw) - {"ratio", "t_min", "t_max"}
    if unknown:
        raise ConfigurationError(f"unknown t_grid field(s): {sorted(unknown)}")
    ratio = _number(raw.get("ratio", DEFAULT_GRID_RATIO), "t_grid.ratio")
    t_min = _number(raw.get("t_min", math.exp(math.e)), "t_grid.t_min")
    default_max = 1e8 if spec.kind == "lemma_frequency" else 1e12
    t_max = _number(raw.get("t_max", default_max), "t_grid.t_max")
    if t_min <= math.e:
        raise ConfigurationError("t_grid.t_min must exceed e")
    return _budget_capped_grid(lambda g: replace(spec, t_grid=g), t_min, t_max, ratio, spec.budget_events)


def _resolve_sites(spec, raw):
    if raw != "auto":
        n = _number(raw, "environment.n_sites", int)
        if n < 1:
            raise ConfigurationError("environment.n_sites must be a positive integer")
        return n
    if spec.kind == "localization_trend":
        if not spec.t_grid:
            return 1
        return math.ceil(spec.options["site_factor"] * scale_s(spec.scale, spec.t_grid[-1]))
    if spec.kind == "bound_validation":
        o = spec.options
        n = o["interval_start"] + o["interval_length"] + 1
        if o["hitting_t"] is not None:
            n = max(n, _hitting_target(spec.scale, o["hitting_t"], spec.epsilon) + 1)
        return n
    return 1


def _validate_kind(spec):
    o = spec.options
    if spec.kind in WALK_KINDS + ("lemma_frequency",) and not spec.t_grid:
        raise ConfigurationError("the time grid is empty (budget too small for its first point?)")
    if spec.kind == "localization_trend":
        need = 2.0 * scale_s(spec.scale, spec.t_grid[-1])
        if spec.env_spec.n_sites <= need:
            raise ConfigurationError(f"environment.n_sites must exceed 2 s(t_max) = {need:.1f}")
    elif spec.kind == "bound_validation":
        a, L = int(o["interval_start"]), int(o["interval_length"])
        if a < 1 or L < 2:
            raise ConfigurationError("bound_validation needs interval_start >= 1 and interval_length >= 2")
        if a + L > spec.env_spec.n_sites - 1:
            raise ConfigurationError("interval does not fit inside the environment")
        if not 0.5 < o["confidence"] < 1.0:
            raise ConfigurationError("confidence must lie in (0.5, 1)")
        if not o["n_calibration"] >= 1:
            raise ConfigurationError("n_calibration must be >= 1")
        if spec.t_grid[0] <= 1:
            raise ConfigurationError("escape bound needs t > 1")
    elif spec.kind == "prop0_validation":
        DriftedBMParams(o["sigma"], o["nu"], o["mu"], 0.0)
        if not o["dt"] > 0 or o["n_paths"] < 1:
            raise ConfigurationError("prop0_validation needs dt > 0 and n_paths >= 1")
        if any(a < 0 for a in o["levels"]):
            raise ConfigurationError("levels must be non-negative")
    elif spec.kind == "cor1_convergence":
        if not o["ks"] or any(k <= 0 for k in o["ks"]):
            raise ConfigurationError("ks must be a non-empty list of positive numbers")


def parse_config(path, overrides=None):
    """Read a YAML study description; syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        loc = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigurationError(f"{loc}: {exc.problem or exc.context}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return spec_from_dict(raw if raw is not None else {}, overrides)


# ---------------------------------------------------------------------------
# results


@dataclass
class ExperimentResult:
    columns: tuple
    rows: list
    summary: dict
    provenance: dict

    def csv_text(self):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def summary_json(self):
        doc = {"summary": _jsonable(self.summary), "provenance": _jsonable(self.provenance)}
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return "" if v is None else str(v)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # JSON has no nan/inf
        return x if math.isfinite(x) else str(x)
    return x


def read_csv(path_or_text):
    """Parse an emitted table back into a header and rows of strings."""
    text = Path(path_or_text).read_text(encoding="utf-8") if isinstance(path_or_text, Path) else path_or_text
    rows = list(csv.reader(io.StringIO(text, newline="")))
    return rows[0], rows[1:]


def report_paths(path):
    p = Path(path)
    base = p.with_suffix("") if p.suffix == ".csv" else p
    return base.with_suffix(".csv") if p.suffix != ".csv" else p, Path(str(base) + ".json")


def emit_report(result, path):
    """Write ``<path>.csv`` and ``<path>.json``; returns the two paths."""
    csv_path, json_path = report_paths(path)
    if csv_path.parent and not csv_path.parent.exists():
        csv_path.parent.mkdir(parents=True)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(result.csv_text())
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(result.summary_json())
    return csv_path, json_path


# ---------------------------------------------------------------------------
# studies


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def env_seed(root_seed, role, index):
    return _rng.derive_seed(root_seed, role, index, _rng.TAG_ENV)


def _walk_seed(root_seed, role, index):
    return _rng.derive_seed(root_seed, role, index, _rng.TAG_WALK)


def _ols_slope(x, y):
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def localization_table(spec):
    """Per-environment positions at every grid time; returns medians and the summary."""
    p = spec.scale
    times = spec.t_grid
    s = np.array([scale_s(p, t) for t in times])

    def one(i):
        seed = env_seed(spec.root_seed, ROLE_MAIN, i)
        env = sample_environment(spec.env_spec, seed)
        try:
            pos, events = positions(env, times, spec.n_replicas, _walk_seed(spec.root_seed, ROLE_MAIN, i))
        except CoverageError as exc:
            raise ExperimentError(str(exc), {"env_seed": seed, "t": times[-1]}) from exc
        return seed, pos, events

    out = _map(one, list(range(spec.n_environments)), spec.threads)
    rows = []
    med = np.empty((spec.n_environments, len(times)))
    events = 0
    for i, (seed, pos, ev) in enumerate(out):
        events += ev
        q25, q50, q75 = np.percentile(pos, [25, 50, 75], axis=0)
        med[i] = q50
        for k, t in enumerate(times):
            rows.append((i, seed, t, s[k], q25[k], q50[k], q75[k], q50[k] / s[k]))
    return rows, med, s, events


def _localization_summary(spec, med, s):
    times = np.array(spec.t_grid)
    lt = np.log(times)
    x = np.log(lt / np.log(lt))
    center = np.median(med, axis=0)
    ratio = med / s
    spread = np.percentile(ratio, 75, axis=0) - np.percentile(ratio, 25, axis=0)
    target = 1.0 / spec.env_spec.alpha
    summary = {
        "t": times.tolist(),
        "median_position": center.tolist(),
        "median_ratio": np.median(ratio, axis=0).tolist(),
        "ratio_iqr": spread.tolist(),
        "target_slope": target,
        "slope_band": [0.7 * target, 1.3 * target],
    }
    if len(times) < 2 or np.any(center <= 0):
        summary.update(slope=math.nan, slope_ci=[math.nan, math.nan], slope_in_band=False)
        return summary
    slope = _ols_slope(x, np.log(center))
    gen = _rng.generator(spec.root_seed, _rng.TAG_MISC)
    idx = gen.integers(0, med.shape[0], size=(spec.options["bootstrap"], med.shape[0]))
    boot = np.median(med[idx], axis=1)
    with np.errstate(divide="ignore"):
        ly = np.log(boot)
    xc = x - x.mean()
    slopes = (ly - ly.mean(axis=1, keepdims=True)) @ xc / np.dot(xc, xc)
    lo, hi = np.percentile(slopes[np.isfinite(slopes)], [2.5, 97.5]) if np.isfinite(slopes).any() else (math.nan,) * 2
    summary.update(
        slope=slope,
        slope_ci=[float(lo), float(hi)],
        slope_in_band=bool(0.7 * target <= slope <= 1.3 * target),
        spread_shrinks=bool(spread[-1] < spread[0]),
    )
    return summary


def run_localization(spec):
    rows, med, s, events = localization_table(spec)
    cols = ("env_index", "env_seed", "t", "scale", "q25_position", "median_position", "q75_position", "median_ratio")
    summary = _localization_summary(spec, med, s)
    summary["events"] = events
    return cols, rows, summary


def run_lemma_frequency(spec):
    p = spec.scale
    o = spec.options
    events = tuple(o["events"])
    length = _lemma_length(spec)
    rows = []
    hits = {(e, t): 0 for e in events for t in spec.t_grid}
    for i in range(spec.n_environments):
        seed = _rng.derive_seed(spec.root_seed, ROLE_MAIN, i, _rng.TAG_PATH)
        path = sample_potential_path(p.sigma, p.b, p.alpha, length, o["grid_step"], seed)
        env = coupled_environment(path) if "Gamma" in events else None
        for t in spec.t_grid:
            for e in events:
                ok, stat = _lemma_event(e, path, env, p, t, spec)
                hits[(e, t)] += ok
                rows.append((i, seed, t, e, ok, stat))
    n = spec.n_environments
    freq = {}
    for e in events:
        f = [hits[(e, t)] / n for t in spec.t_grid]
        se = [math.sqrt(v * (1 - v) / n) for v in f]
        freq[e] = {
            "t": list(spec.t_grid),
            "frequency": f,
            "se": se,
            "nondecreasing_2se": all(
                f[k + 1] >= f[k] - 2.0 * math.hypot(se[k], se[k + 1]) for k in range(len(f) - 1)
            ),
        }
    summary = {"events": freq, "n_paths": n, "path_length": length, "delta": spec.delta, "N_partition": spec.N_partition}
    return ("path_index", "path_seed", "t", "event", "occurred", "statistic"), rows, summary


def _lemma_event(name, path, env, p, t, spec):
    eps, delta, N = spec.epsilon, spec.delta, spec.N_partition
    lt = math.log(t)
    if name == "A":
        return check_event_A(path, p, t, eps, delta), event_A_drawup(path, p, t, eps)
    if name == "B":
        s = scale_s(p, t)
        i0, i1 = path.index_range((1 - eps) * s, (1 - eps / 2) * s)
        return check_event_B(path, p, t, eps, delta, N), partition_count(path.values, (1 + delta) * lt, False, N, (i0, i1))
    if name == "C":
        s = scale_s(p, t)
        i0, i1 = path.index_range(s, (1 + eps) * s)
        return check_event_C(path, p, t, eps, delta, N), partition_count(path.values, (1 + delta) * lt, True, N, (i0, i1))
    if name == "G":
        r = lt ** (1.0 / p.alpha)
        _, i1 = path.index_range(0.0, r)
        return check_event_G(path, p, t), float(np.max(np.abs(path.values[: i1 + 1])))
    K = spec.options["gamma_K"]
    return check_gamma_event(env, path, t, K), math.nan


def _upper_limit(k, n, confidence):
    """One-sided Clopper-Pearson upper confidence limit for a binomial proportion."""
    if k >= n:
        return 1.0
    return float(beta_dist.ppf(confidence, k + 1, n - k))


def _bound_measurements(spec, role, index):
    """Empirical confinement/escape frequencies and the bound ingredients for one environment."""
    o = spec.options
    seed = env_seed(spec.root_seed, role, index)
    env = sample_environment(spec.env_spec, seed)
    a = int(o["interval_start"])
    c = a + int(o["interval_length"])
    x = (a + c) // 2
    wseed = _walk_seed(spec.root_seed, role, index)
    try:
        conf, ev1 = exit_survival(env, a, c, x, spec.t_grid, spec.n_replicas, wseed, key=(0,))
        esc, ev2 = hit_frequencies(env, a, [c], spec.t_grid, spec.n_replicas, wseed, key=(1,))
    except CoverageError as exc:
        raise ExperimentError(str(exc), {"env_seed": seed, "t": spec.t_grid[-1]}) from exc
    h = interval_stats(env.U, (a, c)).argmax_index
    log_ratio = reversible_measure_log(env, h).log_value - reversible_measure_log(env, a).log_value
    return {
        "env": env, "seed": seed, "a": a, "c": c, "x": x, "conf": conf, "esc": esc, "events": ev1 + ev2,
        "log_scale": confinement_scale_log(env, a, c, 1.0), "log_ratio": log_ratio,
    }


def _hitting_target(params, t, epsilon):
    return math.ceil((1.0 - epsilon) * scale_s(params, t))


def hitting_time_check(env_spec, t, epsilon, n_environments, n_replicas, root_seed, threads=1):
    """Per-environment frequency of ``tau_target > t`` with target ``ceil((1-eps) s(t))``, from 0."""
    p = ScaleParams(env_spec.alpha, env_spec.b, env_spec.sigma)
    target = _hitting_target(p, t, epsilon)
    spec = replace(env_spec, n_sites=max(env_spec.n_sites, target + 1))

    def one(i):
        seed = env_seed(root_seed, ROLE_HITTING, i)
        env = sample_environment(spec, seed)
        try:
            f, ev = hit_frequencies(env, 0, [target], [t], n_replicas, _walk_seed(root_seed, ROLE_HITTING, i))
        except CoverageError as exc:
            raise ExperimentError(str(exc), {"env_seed": seed, "t": t}) from exc
        return seed, 1.0 - f[0].value, f[0].se, ev

    return target, _map(one, list(range(n_environments)), threads)


def run_bound_validation(spec):
    o = spec.options
    cal = _map(lambda i: _bound_measurements(spec, ROLE_CALIBRATION, i), list(range(o["n_calibration"])), spec.threads)
    val = _map(lambda i: _bound_measurements(spec, ROLE_MAIN, i), list(range(spec.n_environments)), spec.threads)
    conf_level = o["confidence"]
    n = spec.n_replicas
    rec2, rec3 = [], []
    for m in cal:
        for t, fc, fe in zip(spec.t_grid, m["conf"], m["esc"]):
            rec2.append((m["log_scale"], t, _upper_limit(round(fc.value * n), n, conf_level)))
            rec3.append((m["log_ratio"], t, _upper_limit(round(fe.value * n), n, conf_level)))
    K2 = calibrate_K2(rec2)
    K3 = calibrate_K3(rec3)
    # an all-zero calibration set leaves no constraint; keep the constants positive
    params = BoundParams(K1=o["K1"], K2=K2 if K2 > 0 else 1.0, K3=K3 if K3 > 0 else 1.0)

    rows = []
    worst = {"confinement": -math.inf, "escape": -math.inf, "escape_watq": -math.inf}
    violations = {k: 0 for k in worst}
    checked = {k: 0 for k in worst}
    events = sum(m["events"] for m in cal + val)
    for m in val:
        env, a, c, x = m["env"], m["a"], m["c"], m["x"]
        for t, fc, fe in zip(spec.t_grid, m["conf"], m["esc"]):
            items = (
                ("confinement", confinement_bound(env, a, c, x, t, params), fc),
                ("escape", escape_bound(env, a, c, t, params), fe),
                ("escape_watq", escape_bound(env, a, c, t, params, use_watq=True), fe),
            )
            for name, bound, f in items:
                ok = (not bound.applicable) or f.value <= bound.value
                if bound.applicable:
                    checked[name] += 1
                    worst[name] = max(worst[name], f.value - bound.value)
                    violations[name] += not ok
                rows.append((m["seed"], a, c, x, t, name, bound.applicable, bound.value, f.value, f.se, ok))
    summary = {
        "K1": params.K1, "K2": params.K2, "K3": params.K3,
        "calibration_environments": o["n_calibration"], "validation_environments": spec.n_environments,
        "checked": checked, "violations": violations,
        "max_excess": {k: (v if math.isfinite(v) else None) for k, v in worst.items()},
    }
    if o["hitting_t"] is not None:
        t = float(o["hitting_t"])
        target, res = hitting_time_check(spec.env_spec, t, spec.epsilon, spec.n_environments, n, spec.root_seed)
        for seed, f, se, ev in res:
            events += ev
            rows.append((seed, 0, target, 0, t, "hitting_time", True, math.nan, f, se, True))
        freqs = [r[1] for r in res]
        summary["hitting_time"] = {"t": t, "target": target, "mean_frequency": float(np.mean(freqs)),
                                   "max_frequency": float(np.max(freqs))}
    summary["events"] = events
    cols = ("env_seed", "a", "c", "x", "t", "bound", "applicable", "bound_value", "frequency", "se", "holds")
    return cols, rows, summary


def run_prop0_validation(spec):
    o = spec.options
    levels = [float(a) for a in o["levels"]]
    freqs = mc_drawup_survival_levels(o["sigma"], o["nu"], o["mu"], levels, o["dt"], o["n_paths"],
                                      _rng.derive_seed(spec.root_seed, ROLE_MAIN, 0, _rng.TAG_BM), spec.threads)
    rows = []
    within = below = True
    worst = -math.inf
    for a, f in zip(levels, freqs):
        p = DriftedBMParams(o["sigma"], o["nu"], o["mu"], a)
        exact = prop0_survival(p)
        asym = cor1_asymptotic(p) if p.nu < 0 else math.nan
        rows.append((a, p.sigma, p.nu, p.mu, exact, asym, f.value, f.se, o["dt"], o["n_paths"]))
        gap = abs(exact - f.value) - 3 * f.se
        worst = max(worst, gap)
        within &= gap <= o["allowance"]
        below &= f.value <= exact + 3 * f.se
    summary = {"all_within_3se_plus_allowance": within, "one_sided_below": below, "max_excess_over_3se": worst,
               "allowance": o["allowance"]}
    cols = ("a", "sigma", "nu", "mu", "exact", "asymptotic", "mc_estimate", "mc_se", "dt", "n_paths")
    return cols, rows, summary


def cor1_schedule(ks, sigma=1.0):
    """Rows ``(k, a, nu, mu, exact, asymptotic, rel_error)`` along ``a = k, nu = -k, mu = k^3``."""
    rows = []
    for k in ks:
        p = DriftedBMParams(sigma, -float(k), float(k) ** 3, float(k))
        exact = prop0_survival(p)
        asym = cor1_asymptotic(p)
        rows.append((k, p.a, p.nu, p.mu, exact, asym, abs(exact / asym - 1.0)))
    return rows


def run_cor1_convergence(spec):
    o = spec.options
    rows = cor1_schedule(o["ks"], o["sigma"])
    err = [r[-1] for r in rows]
    summary = {
        "rel_error": err,
        "monotone_decreasing": all(b < a for a, b in zip(err, err[1:])),
        "final_within_tolerance": err[-1] <= o["tolerance"],
        "tolerance": o["tolerance"],
    }
    return ("k", "a", "nu", "mu", "exact", "asymptotic", "rel_error"), rows, summary


_RUNNERS = {
    "localization_trend": run_localization,
    "lemma_frequency": run_lemma_frequency,
    "bound_validation": run_bound_validation,
    "prop0_validation": run_prop0_validation,
    "cor1_convergence": run_cor1_convergence,
}


def run_experiment(spec):
    """Run a study; refuses with :class:`BudgetError` when the work estimate exceeds the budget."""
    estimate = estimate_work(spec)
    if estimate > spec.budget_events:
        raise BudgetError(estimate, spec.budget_events)
    cols, rows, summary = _RUNNERS[spec.kind](spec)
    summary = dict(summary)
    summary["no_data"] = not rows
    summary["rows"] = len(rows)
    summary["work_estimate"] = estimate
    provenance = {
        "tool": "rwre",
        "version": __version__,
        "spec": spec.to_dict(),
        "design": "experimental design constructed for this toolkit",
    }
    if spec.kind in WALK_KINDS:
        role = ROLE_MAIN
        provenance["environment_seeds"] = [env_seed(spec.root_seed, role, i) for i in range(spec.n_environments)]
    return ExperimentResult(tuple(cols), rows, summary, provenance)
