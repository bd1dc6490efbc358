"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 budget refusal, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import yaml

from .bmlaw import DriftedBMParams, cor1_asymptotic, mc_drawup_survival_levels, prop0_survival
from .environment import ConfigurationError, CoverageError, EnvSpec, Environment, distribution_from_dict, sample_environment
from .exactsolve import ExpOverflowError, expected_hit, expected_hit_log, ruin_prob
from .experiments import BudgetError, emit_report, parse_config, run_experiment
from .pathfunc import interval_stats
from .simulate import SimConfig, run_replicas

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_RUNTIME = 0, 2, 3, 4


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    return "" if v is None else str(v)


def _write_table(columns, rows, out):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _emit(buf.getvalue(), out)


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _env_spec_from_args(args):
    d = {}
    if args.config:
        try:
            raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        except yaml.MarkedYAMLError as exc:
            m = exc.problem_mark
            raise ConfigurationError(f"{args.config}:{m.line + 1}:{m.column + 1}: {exc.problem}") from None
        d = dict(raw.get("environment", raw))
    for key in ("alpha", "b", "n_sites"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if "alpha" not in d:
        raise ConfigurationError("missing required field 'alpha'")
    dist = distribution_from_dict(d.pop("distribution", {"family": "rademacher", "c": 1.0}))
    d.setdefault("b", 1.0)
    d.setdefault("n_sites", 1000)
    try:
        return EnvSpec(distribution=dist, **d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def _load_env(args):
    if args.env:
        try:
            return Environment.from_json(Path(args.env).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigurationError(f"cannot load environment {args.env}: {exc}") from None
    return sample_environment(_env_spec_from_args(args), args.seed)


def cmd_gen_env(args):
    env = sample_environment(_env_spec_from_args(args), args.seed)
    _emit(env.to_json(include_omega=not args.no_omega) + "\n", args.out)


def cmd_simulate(args):
    env = _load_env(args)
    cfg = SimConfig(tuple(args.t), max_events=args.max_events, seed=args.seed, replicas=args.replicas,
                    targets=tuple(args.target), first_return=args.first_return, start=args.start)
    trajs = run_replicas(env, cfg, threads=args.threads)
    rows = []
    for r, tr in enumerate(trajs):
        for t, x in zip(cfg.t_checkpoints, tr.checkpoint_positions):
            rows.append((env.seed, r, "position", t, int(x), ""))
        for h in tr.hit_records:
            rows.append((env.seed, r, "hit", h.target, "" if h.censored else h.time, h.censored))
    _write_table(("env_seed", "replica", "record", "checkpoint_or_target", "value", "censored"), rows, args.out)


def cmd_hitting(args):
    env = _load_env(args)
    rows = []
    if args.target is not None:
        lv = expected_hit_log(env, args.start, args.target).log_value
        try:
            value = expected_hit(env, args.start, args.target)
        except ExpOverflowError:
            value = math.inf
        rows.append(("expected_hit", args.start, args.target, "", value, lv))
    if args.left is not None and args.right is not None:
        p = ruin_prob(env, args.left, args.start, args.right)
        rows.append(("ruin", args.start, args.right, args.left, p, math.log(p) if p > 0 else -math.inf))
    if not rows:
        raise ConfigurationError("give --target and/or both --left and --right")
    _write_table(("quantity", "start", "target", "left", "value", "log_value"), rows, args.out)


def cmd_drawstats(args):
    env = _load_env(args)
    a = args.left if args.left is not None else 0
    c = args.right if args.right is not None else env.n_sites
    st = interval_stats(env.U, (a, c))
    row = st.as_row()
    _write_table(("env_seed", "a", "c") + tuple(row), [(env.seed, a, c) + tuple(row.values())], args.out)


def cmd_bmlaw(args):
    levels = args.a
    mc = None
    if args.paths:
        mc = mc_drawup_survival_levels(args.sigma, args.nu, args.mu, levels, args.dt, args.paths, args.seed, args.threads)
    rows = []
    for i, a in enumerate(levels):
        p = DriftedBMParams(args.sigma, args.nu, args.mu, a)
        asym = cor1_asymptotic(p) if p.nu < 0 else math.nan
        est, se = (mc[i].value, mc[i].se) if mc else (math.nan, math.nan)
        rows.append((a, p.sigma, p.nu, p.mu, prop0_survival(p), asym, est, se,
                     args.dt if mc else math.nan, args.paths))
    _write_table(("a", "sigma", "nu", "mu", "exact", "asymptotic", "mc_estimate", "mc_se", "dt", "n_paths"),
                 rows, args.out)


def cmd_experiment(args):
    if not args.config:
        raise ConfigurationError("experiment needs --config")
    overrides = {"root_seed": args.seed, "threads": args.threads, "budget_events": args.budget_events}
    spec = parse_config(args.config, overrides)
    out = args.out or spec.output_path
    result = run_experiment(spec)
    if out is None:
        sys.stdout.write(result.csv_text())
        sys.stderr.write(result.summary_json())
    else:
        csv_path, json_path = emit_report(result, out)
        print(f"wrote {csv_path} and {json_path}", file=sys.stderr)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, default=None, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--budget-events", type=float, default=None, dest="budget_events")

    envargs = argparse.ArgumentParser(add_help=False)
    envargs.add_argument("--env", help="environment JSON written by gen-env")
    envargs.add_argument("--alpha", type=float)
    envargs.add_argument("--b", type=float)
    envargs.add_argument("--n-sites", type=int, dest="n_sites")

    parser = argparse.ArgumentParser(prog="rwre", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", parents=[common, envargs], help="sample an environment and write it as JSON")
    p.add_argument("--no-omega", action="store_true", help="store only spec and seed")
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("simulate", parents=[common, envargs], help="simulate trajectories")
    p.add_argument("--t", type=float, nargs="+", required=True, help="checkpoint times")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--target", type=int, nargs="*", default=[])
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--first-return", action="store_true")
    p.add_argument("--max-events", type=int, default=10 ** 9)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hitting", parents=[common, envargs], help="exact expected hitting times and ruin probabilities")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--target", type=int)
    p.add_argument("--left", type=int)
    p.add_argument("--right", type=int)
    p.set_defaults(func=cmd_hitting)

    p = sub.add_parser("drawstats", parents=[common, envargs], help="draw statistics of the potential on an interval")
    p.add_argument("--left", type=int)
    p.add_argument("--right", type=int)
    p.set_defaults(func=cmd_drawstats)

    p = sub.add_parser("bmlaw", parents=[common], help="draw-up survival of drifted Brownian motion")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--a", type=float, nargs="+", required=True)
    p.add_argument("--paths", type=int, default=0, help="Monte Carlo paths (0: formulas only)")
    p.add_argument("--dt", type=float, default=1e-3)
    p.set_defaults(func=cmd_bmlaw)

    p = sub.add_parser("experiment", parents=[common], help="run a batch study from a config file")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "experiment":
        args.seed = 0 if args.seed is None else args.seed
        args.threads = 1 if args.threads is None else args.threads
    try:
        args.func(args)
    except BudgetError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except CoverageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigurationError, ValueError, IndexError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExpOverflowError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
