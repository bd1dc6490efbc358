import json
import math

import pytest
import yaml

from rwre.environment import ConfigurationError
from rwre.experiments import (
    BudgetError,
    ExperimentResult,
    emit_report,
    estimate_work,
    parse_config,
    proof_grid,
    read_csv,
    run_experiment,
    spec_from_dict,
)
from rwre.pathfunc import max_delta_A, max_delta_C


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else yaml.safe_dump(doc), encoding="utf-8")
    return p


LOC = {
    "kind": "localization_trend",
    "environment": {"alpha": 0.4, "b": 1.0},
    "t_grid": [1e3, 1e4],
    "n_environments": 4,
    "n_replicas": 20,
    "seed": 5,
}

BOUND = {
    "kind": "bound_validation",
    "environment": {"alpha": 0.4, "b": 1.0},
    "t_grid": [1e2, 1e3],
    "n_environments": 4,
    "n_replicas": 30,
    "seed": 6,
    "options": {"n_calibration": 4, "interval_start": 5, "interval_length": 12},
}

LEMMA = {
    "kind": "lemma_frequency",
    "environment": {"alpha": 0.4, "b": 1.0},
    "t_grid": [1e4, 1e5],
    "n_environments": 20,
    "seed": 7,
}


# ---------------------------------------------------------------------------
# parsing and guardrails


def test_missing_alpha_names_the_field(tmp_path):
    p = _write(tmp_path, {"kind": "localization_trend", "environment": {"b": 1.0}})
    with pytest.raises(ConfigurationError, match="environment.alpha"):
        parse_config(p)


def test_alpha_one_half_rejected(tmp_path):
    p = _write(tmp_path, {"kind": "localization_trend", "environment": {"alpha": 0.5, "b": 1.0}})
    with pytest.raises(ConfigurationError, match="alpha"):
        parse_config(p)


def test_syntax_error_reports_line_and_column(tmp_path):
    p = _write(tmp_path, "kind: localization_trend\nenvironment:\n  alpha: [0.4\n  b: 1\n")
    with pytest.raises(ConfigurationError) as info:
        parse_config(p)
    assert str(info.value).startswith(f"{p}:")
    line, col = str(info.value)[len(str(p)) + 1:].split(":")[:2]
    assert int(line) >= 3 and int(col) >= 1


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        parse_config(tmp_path / "nope.yaml")


def test_zero_variance_disorder_rejected():
    d = dict(LOC, environment={"alpha": 0.4, "b": 1.0, "distribution": {"family": "rademacher", "c": 0.0}})
    with pytest.raises(ConfigurationError, match="variance"):
        spec_from_dict(d)


@pytest.mark.parametrize("bad", [{"colour": 1}, {"kind": "sweep"}, {"options": {"bogus": 1}},
                                 {"environment": {"alpha": 0.4, "b": 1.0, "beta": 2}},
                                 {"t_grid": [1e4, 1e3]}, {"t_grid": [2.0, 1e3]}, {"seed": -1},
                                 {"threads": 0}, {"n_replicas": 0}])
def test_invalid_fields_rejected(bad):
    with pytest.raises(ConfigurationError):
        spec_from_dict(dict(LOC, **bad))


def test_event_A_guardrail_names_the_constraint():
    d = dict(LEMMA, events={"epsilon": 0.5, "delta": max_delta_A(0.5, 0.4)})
    with pytest.raises(ConfigurationError, match=r"2\*delta < 1-\(1-epsilon\)\^alpha required for event A"):
        spec_from_dict(d)


def test_event_C_guardrail():
    delta = 0.5 * (max_delta_C(0.5, 0.4) + max_delta_A(0.5, 0.4))  # admissible for A, not for C
    d = dict(LEMMA, events={"epsilon": 0.5, "delta": delta})
    with pytest.raises(ConfigurationError, match="event C"):
        spec_from_dict(d)
    d = dict(LEMMA, events={"epsilon": 0.5, "delta": delta}, options={"events": ["A", "G"]})
    assert spec_from_dict(d).delta == delta


@pytest.mark.parametrize("ev", [{"epsilon": 1.0}, {"epsilon": 0.0}, {"delta": 0.0}, {"N": 0}, {"N": 1.5}])
def test_event_parameter_guardrails(ev):
    with pytest.raises(ConfigurationError):
        spec_from_dict(dict(LEMMA, events=ev))


def test_minimal_config_defaults_are_echoed():
    spec = spec_from_dict({"kind": "lemma_frequency", "environment": {"alpha": 0.4, "b": 1.0}})
    assert spec.epsilon == 0.5 and spec.N_partition == 1
    # default delta: half of the tightest admissible bound among the default events (A, B, C, G)
    assert spec.delta == 0.5 * min(max_delta_A(0.5, 0.4), max_delta_C(0.5, 0.4))
    assert spec.t_grid == proof_grid(math.exp(math.e), 1e8)
    echo = spec.to_dict()
    assert echo["options"] == {"events": ["A", "B", "C", "G"], "grid_step": 1.0, "gamma_K": 10.0}
    assert echo["environment"]["distribution"] == {"family": "rademacher", "c": 1.0}
    assert echo["delta"] == spec.delta and echo["root_seed"] == 0


def test_overrides_replace_config_values(tmp_path):
    p = _write(tmp_path, LOC)
    spec = parse_config(p, {"root_seed": 99, "threads": 3, "budget_events": None})
    assert spec.root_seed == 99 and spec.threads == 3


def test_auto_sites_cover_twice_the_scale():
    spec = spec_from_dict(LOC)
    from rwre.pathfunc import scale_s
    assert spec.env_spec.n_sites > 2 * scale_s(spec.scale, 1e4)


# ---------------------------------------------------------------------------
# the time grid


def test_proof_grid_points():
    grid = proof_grid(math.exp(math.e), 1e8, 0.1)
    assert all(b > a for a, b in zip(grid, grid[1:]))
    ll = [math.log(math.log(t)) for t in grid]
    # equally spaced in ln ln t with spacing ln(1.1)
    assert all(abs((b - a) - math.log(1.1)) < 1e-9 for a, b in zip(ll, ll[1:]))
    assert grid[-1] <= 1e8 < math.exp(math.log(grid[-1]) * 1.1)


def test_default_grid_is_capped_by_budget():
    spec = spec_from_dict(dict(LOC, t_grid={"t_max": 1e12}, budget_events=1e8))
    assert spec.t_grid
    assert estimate_work(spec) <= 1e8
    bigger = proof_grid(spec.t_grid[0], 1e12)
    assert len(bigger) > len(spec.t_grid)


# ---------------------------------------------------------------------------
# running


def test_budget_refusal_reports_estimate():
    spec = spec_from_dict(dict(LOC, budget_events=1e3, t_grid=[1e3, 1e4]))
    with pytest.raises(BudgetError) as info:
        run_experiment(spec)
    assert info.value.estimate == estimate_work(spec) > 1e3


@pytest.mark.parametrize("cfg", [LOC, BOUND], ids=["localization", "bounds"])
def test_budget_estimate_is_an_upper_bound(cfg):
    spec = spec_from_dict(cfg)
    res = run_experiment(spec)
    assert res.summary["events"] <= 1.01 * res.summary["work_estimate"]


def test_localization_summary_schema(tmp_path):
    res = run_experiment(spec_from_dict(LOC))
    assert "slope" in res.summary and len(res.summary["slope_ci"]) == 2
    assert res.summary["target_slope"] == pytest.approx(2.5)
    assert len(res.rows) == 4 * 2
    assert len(res.provenance["environment_seeds"]) == 4
    csv_path, json_path = emit_report(res, tmp_path / "loc")
    doc = json.loads(json_path.read_text())
    assert "slope" in doc["summary"]
    assert doc["provenance"]["spec"]["options"]["bootstrap"] == 2000


@pytest.mark.parametrize("cfg", [LOC, BOUND, LEMMA], ids=["localization", "bounds", "lemma"])
def test_csv_is_byte_identical_across_runs_and_threads(cfg):
    a = run_experiment(spec_from_dict(cfg)).csv_text()
    b = run_experiment(spec_from_dict(dict(cfg, threads=4))).csv_text()
    c = run_experiment(spec_from_dict(cfg)).csv_text()
    assert a == b == c


def test_different_seed_changes_output():
    a = run_experiment(spec_from_dict(LOC)).csv_text()
    b = run_experiment(spec_from_dict(dict(LOC, seed=6))).csv_text()
    assert a != b


def test_empty_table_gives_header_only_csv(tmp_path):
    res = run_experiment(spec_from_dict(dict(LEMMA, options={"events": []})))
    assert res.rows == [] and res.summary["no_data"] is True
    csv_path, json_path = emit_report(res, tmp_path / "empty.csv")
    assert csv_path.read_bytes() == b"path_index,path_seed,t,event,occurred,statistic\r\n"
    assert json.loads(json_path.read_text())["summary"]["no_data"] is True


def test_csv_round_trip_at_full_precision(tmp_path):
    vals = [math.pi, 1.0 / 3.0, 2.0 ** -1074, 1e300 * 1.7, -0.1]
    res = ExperimentResult(("name", "x", "flag"), [("a,b", v, i % 2 == 0) for i, v in enumerate(vals)], {}, {})
    csv_path, _ = emit_report(res, tmp_path / "rt")
    header, rows = read_csv(csv_path)
    assert header == ["name", "x", "flag"]
    assert [float(r[1]) for r in rows] == vals
    assert rows[0][0] == "a,b" and rows[0][2] == "true" and rows[1][2] == "false"
    assert csv_path.read_bytes().startswith(b'name,x,flag\r\n"a,b",')


def test_bound_validation_separates_calibration_and_validation():
    res = run_experiment(spec_from_dict(BOUND))
    s = res.summary
    assert s["calibration_environments"] == 4 and s["validation_environments"] == 4
    assert s["K2"] > 0 and s["K3"] > 0
    val_seeds = {r[0] for r in res.rows}
    assert val_seeds == set(res.provenance["environment_seeds"])
    for name in ("confinement", "escape", "escape_watq"):
        assert s["violations"][name] <= s["checked"][name]


def test_lemma_frequency_summary():
    res = run_experiment(spec_from_dict(LEMMA))
    ev = res.summary["events"]
    assert set(ev) == {"A", "B", "C", "G"}
    for e in ev.values():
        assert len(e["frequency"]) == 2 and all(0 <= f <= 1 for f in e["frequency"])
    assert len(res.rows) == 20 * 2 * 4


def test_prop0_validation_small():
    d = {"kind": "prop0_validation", "options": {"n_paths": 3000, "dt": 1e-3, "mu": 5.0, "levels": [0.5, 1.0],
                                                 "allowance": 0.03}}
    res = run_experiment(spec_from_dict(d))
    assert res.columns[:4] == ("a", "sigma", "nu", "mu")
    assert res.summary["all_within_3se_plus_allowance"]


def test_cor1_convergence_kind():
    res = run_experiment(spec_from_dict({"kind": "cor1_convergence"}))
    assert res.summary["monotone_decreasing"] and res.summary["final_within_tolerance"]
    assert [r[0] for r in res.rows] == [2, 4, 8, 16]
