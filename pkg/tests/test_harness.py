import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frqd.graph import construct_redundant, load_edge_list, path_graph, save_edge_list
from frqd.harness.cli import main
from frqd.harness.config import (ConfigError, ExperimentConfig, apply_overrides, load_config,
                                 parse_config)
from frqd.harness.experiment import RunFailure, log_grid, run_experiment, sample_behaviour
from frqd.harness.report import (IncomparableReports, compare_reports, format_table, line_plot_svg,
                                 report_json, table_csv, trace_csv, write_artifacts)
from frqd.mdp import build_task_assignment_mdp

CONFIGS = Path(__import__("frqd.harness", fromlist=["x"]).__file__).parent / "configs"


def small(**over):
    doc = {"horizon": 400, "outputs": {"trace_stride": 7, "curve_points": 10}}
    for key, value in over.items():
        doc = apply_overrides(doc, [f"{key}={json.dumps(value)}"])
    return parse_config(doc)


# --- config ---------------------------------------------------------------------------------


def test_defaults_match_the_reference_scenario():
    cfg = ExperimentConfig()
    p = cfg.schedule.params(cfg.mdp.n)
    assert (p.a, p.b, p.tau1) == (0.1, 0.1, 1.0)
    assert p.tau2 == pytest.approx(0.499925, abs=1e-6)
    assert cfg.attack.f == 1 and cfg.attack.strategy == "extreme-value+falsified-relay"
    assert (cfg.graph.n, cfg.graph.r) == (10, 7)
    assert cfg.mdp.discount == 0.9


def test_bundled_default_equals_schema_defaults():
    bundled = load_config(CONFIGS / "default.json")
    doc = bundled.to_dict()
    doc["outputs"]["dir"] = ExperimentConfig().outputs.dir
    assert doc == ExperimentConfig().to_dict()


@pytest.mark.parametrize("name", ["default.json", "baseline.toml", "equivalence.toml", "quick.toml"])
def test_bundled_configs_parse(name):
    load_config(CONFIGS / name)


def test_round_trip_idempotent():
    cfg = small(**{"attack.strategy": "drop", "schedule.tau2": 0.3, "seeds.attack": 5})
    once = parse_config(json.loads(cfg.to_json()))
    assert once.to_json() == cfg.to_json()
    assert parse_config(json.loads(once.to_json())).to_json() == once.to_json()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10**6), st.sampled_from(["frqd", "qd", "trim_baseline"]),
       st.integers(0, 3), st.floats(0.01, 1.0), st.integers(0, 2**31))
def test_round_trip_property(horizon, algorithm, f, a, seed):
    cfg = parse_config({"horizon": horizon, "algorithm": algorithm, "attack": {"f": f},
                        "schedule": {"a": a}, "seeds": {"master": seed}})
    assert parse_config(json.loads(cfg.to_json())).to_json() == cfg.to_json()


def test_overrides_reach_every_section():
    cfg = load_config(None, ["attack.strategy=none", "horizon=12", "graph.r=3",
                             "outputs.track_pairs=[[2,1,0]]", "assertions.equivalence_check=true"])
    assert cfg.attack.strategy == "none"
    assert cfg.horizon == 12 and cfg.graph.r == 3
    assert cfg.outputs.track_pairs == [(2, 1, 0)]
    assert cfg.assertions.equivalence_check


@pytest.mark.parametrize("override, field", [
    ("horizon=0", "horizon"),
    ("attack.f=-1", "attack.f"),
    ("attack.strategy=sneaky", "attack.strategy"),
    ("schedule.tau2=0.9", "schedule"),
    ("mdp.discount=1.0", "mdp.discount"),
    ("algorithm=sarsa", "algorithm"),
    ("graph.colour=red", "graph.colour"),
])
def test_config_errors_carry_field_path(override, field):
    with pytest.raises(ConfigError) as err:
        load_config(None, [override])
    assert err.value.path.startswith(field.split(".")[0])
    assert field.split(".")[0] in str(err.value)


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        load_config(None, ["horizon"])


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/no/such/config.toml")


def test_toml_and_relative_paths(tmp_path):
    save_edge_list(construct_redundant(10, 7), tmp_path / "g.txt")
    (tmp_path / "c.toml").write_text('horizon = 5\n[graph]\nkind = "edge_list"\npath = "g.txt"\n')
    cfg = load_config(tmp_path / "c.toml")
    assert Path(cfg.graph.path) == tmp_path / "g.txt"
    assert cfg.horizon == 5


def test_named_streams_are_independent():
    a = small(**{"seeds.attack": 11})
    b = small()
    assert a.stream("costs").random() == b.stream("costs").random()
    assert a.stream("attack").random() != b.stream("attack").random()
    assert small(**{"mdp.seed": 3}).stream("costs").random() == np.random.default_rng(3).random()


# --- experiment -------------------------------------------------------------------------------


def test_log_grid():
    g = log_grid(1000, 10, extra=[17, 5000])
    assert g[0] == 1 and g[-1] == 1000
    assert 17 in g and 5000 not in g
    assert g == sorted(set(g))


def test_behaviour_stops_once_pairs_are_visited():
    m = build_task_assignment_mdp(3, 0)  # 6 actions, 36 non-terminal pairs
    traj = sample_behaviour(m, np.random.default_rng(0), 10**6, 5, [1, 5])
    from frqd.mdp import visit_counts
    counts = visit_counts(np.stack([traj.x, traj.u], 1), m.n_states, m.n_actions)
    assert counts[:6].min() == 5
    assert traj.checkpoint_times[5] == len(traj)
    assert traj.checkpoint_times[1] < len(traj)
    short = sample_behaviour(m, np.random.default_rng(0), 10, 5, [5])
    assert len(short) == 10 and short.checkpoint_times == {}


def test_small_run_report_shape():
    res = run_experiment(small())
    rep = res.report
    assert rep["steps"] == 400
    assert rep["algorithm"] == "frqd" and not rep["approximation"]
    assert all(v == 0 for v in rep["violations"].values())
    assert rep["error_curve"][-1]["t"] == 400
    assert len(rep["final"]["q_tables"]) == 10
    assert set(rep["policies"]) == {str(i) for i in range(10)}
    assert rep["graph"]["redundant"] and rep["graph"]["num_edges"] == 42
    assert rep["diagnostics"]["max_corrupted_copies"] <= 3
    assert set(rep["tracked_pairs"]["series"]) == {"x=1,u=(0,1)", "x=1,u=(0,2)"}
    assert len(res.trace_rows) == 10 * len(range(0, 400, 7))
    json.loads(report_json(rep))


def test_baseline_report_is_labelled_approximation():
    rep = run_experiment(small(algorithm="trim_baseline")).report
    assert rep["approximation"] is True
    assert rep["diagnostics"]["max_corrupted_copies"] is None


def test_laplacian_reference_matches_unattacked_frqd():
    a = run_experiment(small(**{"attack.strategy": "none"})).report
    b = run_experiment(small(algorithm="laplacian_reference")).report
    qa, qb = np.array(a["final"]["q_tables"]), np.array(b["final"]["q_tables"])
    assert np.max(np.abs(qa - qb)) <= 1e-12


def test_equivalence_check_runs_in_lockstep():
    rep = run_experiment(small(**{"assertions.equivalence_check": True})).report
    assert rep["diagnostics"]["equivalence_max_diff"] <= 1e-12
    assert rep["violations"]["equivalence_check"] == 0


def test_violation_aborts_with_structured_failure(tmp_path):
    # with r=4 the graph is not (7,0)-redundant: leaf pairs share exactly 4 neighbours,
    # enough for the filter but below the 7-2-hop threshold of the matrix form
    save_edge_list(construct_redundant(10, 4), tmp_path / "p.txt")
    cfg = small(**{"graph.kind": "edge_list", "graph.path": str(tmp_path / "p.txt"),
                   "assertions.equivalence_check": True})
    with pytest.raises(RunFailure) as err:
        run_experiment(cfg)
    assert err.value.violation.name == "equivalence_check"
    assert err.value.report["violations"]["equivalence_check"] == 1


def test_graph_size_mismatch_is_a_config_error():
    with pytest.raises(ConfigError):
        run_experiment(small(**{"graph.n": 8, "graph.r": 5}))


def test_time_varying_schedule(tmp_path):
    for k, r in enumerate((7, 8)):
        save_edge_list(construct_redundant(10, r), tmp_path / f"g{k}.txt")
    cfg = small(**{"graph.kind": "schedule",
                   "graph.paths": [str(tmp_path / "g0.txt"), str(tmp_path / "g1.txt")]})
    rep = run_experiment(cfg).report
    assert rep["graph"]["time_varying"]
    assert all(v == 0 for v in rep["violations"].values())


def test_on_step_hook_sees_every_step():
    seen = []
    run_experiment(small(horizon=25), on_step=lambda rec, states: seen.append(rec.t))
    assert seen == list(range(25))


# --- artifacts --------------------------------------------------------------------------------


def test_artifacts_are_byte_identical(tmp_path):
    cfg = small()
    for name in ("a", "b"):
        write_artifacts(run_experiment(cfg), tmp_path / name)
    for f in ("report.json", "trace.csv", "error_curve.svg", "tracked_pairs.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_trace_columns():
    text = trace_csv([(0, 1, 0, 1, 0, "1.5", 9)])
    assert text.splitlines()[0] == "t,x,u_i,u_j,agent,q_value,p_size"


def test_svg_is_well_formed():
    import xml.etree.ElementTree as ET
    svg = line_plot_svg([("a<b", [1, 10, 100], [5.0, 2.0, 1.0])], "t & q", "x", "y",
                        logx=True, logy=True, hlines=[("ref", 1.5)])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "a&lt;b" in svg


def test_compare_table():
    base = run_experiment(small()).report
    other = run_experiment(small(algorithm="trim_baseline")).report
    rows = compare_reports([base, other])
    assert [r["algorithm"] for r in rows] == ["Oracle", "FRQD", "Baseline (approximation)"]
    assert list(rows[0]["cells"]) == ["1", "2", "3", "4", "5", "6"]
    text = format_table(rows)
    assert text.splitlines()[0].split() == ["algorithm", "x=1", "x=2", "x=3", "x=4", "x=5", "x=6"]
    assert table_csv(rows).count("\n") == 1 + 3 * 6
    single = compare_reports([base])
    assert len(single) == 2


def test_compare_refuses_mismatched_instances():
    a = run_experiment(small(horizon=5)).report
    b = run_experiment(small(horizon=5, **{"seeds.costs": 99})).report
    with pytest.raises(IncomparableReports):
        compare_reports([a, b])


# --- CLI ------------------------------------------------------------------------------------


def test_cli_construct_and_verify(tmp_path, capsys):
    out = tmp_path / "g.txt"
    assert main(["construct", "--n", "10", "--r", "7", "--out", str(out)]) == 0
    assert load_edge_list(out).num_edges == 42
    assert main(["construct", "--n", "4", "--r", "3", "--out", str(tmp_path / "k4.txt")]) == 0
    assert load_edge_list(tmp_path / "k4.txt").num_edges == 6
    assert main(["construct", "--n", "3", "--r", "3"]) == 2
    assert main(["verify", str(out), "--r", "7", "--r-prime", "0"]) == 0
    save_edge_list(path_graph(4), tmp_path / "p.txt")
    capsys.readouterr()
    assert main(["verify", str(tmp_path / "p.txt"), "--r", "2", "--r-prime", "0", "--json"]) == 1
    doc = json.loads(capsys.readouterr().out)
    assert doc["redundant"] is False and len(doc["pair"]) == 2 and doc["count"] == 1
    assert main(["verify", str(out), "--r", "2", "--r-prime", "2"]) == 2
    assert main(["verify", str(tmp_path / "missing.txt"), "--r", "2", "--r-prime", "0"]) == 2


def test_cli_robust(tmp_path):
    out = tmp_path / "g.txt"
    main(["construct", "--n", "10", "--r", "7", "--out", str(out)])
    assert main(["robust", str(out), "--r", "4"]) == 0
    save_edge_list(path_graph(4), tmp_path / "p.txt")
    assert main(["robust", str(tmp_path / "p.txt"), "--r", "2"]) == 1


def test_cli_usage_errors():
    with pytest.raises(SystemExit) as err:
        main(["construct", "--n", "x", "--r", "3"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_cli_run_and_compare(tmp_path, capsys):
    assert main(["run", "/no/such.toml"]) == 2
    common = ["--set", "horizon=300", "--set", "outputs.curve_points=5"]
    assert main(["run", *common, "--out", str(tmp_path / "f")]) == 0
    assert main(["run", *common, "--set", "algorithm=trim_baseline", "--out", str(tmp_path / "b")]) == 0
    assert main(["run", *common, "--set", "attack.strategy=none", "--out", str(tmp_path / "n")]) == 0
    for d in "fbn":
        assert (tmp_path / d / "report.json").is_file()
        assert (tmp_path / d / "trace.csv").is_file()
        assert (tmp_path / d / "error_curve.svg").is_file()
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "f" / "report.json"), str(tmp_path / "b" / "report.json"),
                 "--csv", str(tmp_path / "t.csv")]) == 0
    assert "Oracle" in capsys.readouterr().out
    assert (tmp_path / "t.csv").read_text().startswith("algorithm,state")
    assert main(["run", *common, "--set", "seeds.costs=5", "--out", str(tmp_path / "o")]) == 0
    assert main(["compare", str(tmp_path / "f" / "report.json"), str(tmp_path / "o" / "report.json")]) == 2


def test_cli_run_invariant_violation_exit_code(tmp_path):
    save_edge_list(construct_redundant(10, 4), tmp_path / "p.txt")
    code = main(["run", "--set", "horizon=200", "--set", "graph.kind=edge_list",
                 "--set", f"graph.path={tmp_path / 'p.txt'}",
                 "--set", "assertions.equivalence_check=true", "--out", str(tmp_path / "v")])
    assert code == 3
    failure = json.loads((tmp_path / "v" / "failure.json").read_text())
    assert failure["failure"]["invariant"] == "equivalence_check"


def test_cli_bad_config_value(capsys):
    assert main(["run", "--set", "attack.f=-2"]) == 2
    assert "attack.f" in capsys.readouterr().err


def test_cli_show_config(capsys):
    assert main(["show-config", "--set", "horizon=9"]) == 0
    assert json.loads(capsys.readouterr().out)["horizon"] == 9


def test_log_level_env(monkeypatch, tmp_path):
    monkeypatch.setenv("FRQD_LOG_LEVEL", "nonsense")
    assert main(["construct", "--n", "4", "--r", "2", "--out", str(tmp_path / "g.txt")]) == 0
