"""Acceptance gate: one PASS/FAIL line per criterion, printed in the terminal summary.

The long learning runs (criteria 2 and 3) execute once per session and take
several minutes each on one core.
"""

import itertools
import math
import subprocess
import sys

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from oracles import redundant_by_definition

from frqd.comms import no_attack
from frqd.graph import (construct_redundant, is_connected, is_r_robust_bruteforce, is_rr_redundant,
                        path_graph, random_graph, star_graph, two_hop_graph)
from frqd.harness.config import load_config, parse_config
from frqd.harness.experiment import RunFailure, run_experiment
from frqd.learning import AgentStates, ScheduleParams, frqd_step, qd_step
from frqd.mdp import Transition, build_task_assignment_mdp, sample_trajectory

EQUIVALENCE_TOL = 1e-12
RELATIVE_ERROR_TOL = 0.05
MIN_VISITS = 300
CHECKPOINTS = [30, 100, 300]
NONTERMINAL_LABELS = [str(x) for x in range(1, 7)]


def verdict(tag: str, ok: bool, detail: str) -> None:
    line = f"criterion {tag}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def reference_config(**overrides):
    """The reference scenario: n=10, (7,0)-redundant graph, F=1, both attacks on."""
    doc = {"mdp": {"n": 10, "discount": 0.9}, "graph": {"kind": "construct", "n": 10, "r": 7},
           "attack": {"strategy": "extreme-value+falsified-relay", "f": 1},
           "schedule": {"a": 0.1, "b": 0.1, "tau1": 1.0, "eps1": 1e-4, "eps2": 1e-4},
           "min_visits": MIN_VISITS, "visit_checkpoints": CHECKPOINTS,
           "horizon": 2_000_000, "seeds": {"master": 0},
           "outputs": {"trace": False, "plot": False}}
    cfg = parse_config(doc)
    return cfg.model_copy(update=overrides)


@pytest.fixture(scope="session")
def equivalence_run():
    cfg = parse_config(reference_config().to_dict() | {
        "horizon": 10_000, "stop_at_min_visits": False,
        "assertions": {"equivalence_check": True, "equivalence_tol": EQUIVALENCE_TOL,
                       "corruption_bound": True, "filter_soundness": True, "filter_symmetry": True}})
    try:
        return run_experiment(cfg).report, None
    except RunFailure as failure:
        return failure.report, failure


@pytest.fixture(scope="session")
def convergence_run():
    return run_experiment(reference_config()).report


@pytest.fixture(scope="session")
def baseline_run():
    return run_experiment(reference_config(algorithm="trim_baseline")).report


# --- 1 -------------------------------------------------------------------------------------


def test_criterion_1_equivalence_with_matrix_form(equivalence_run):
    report, failure = equivalence_run
    diff = report["diagnostics"]["equivalence_max_diff"]
    ok = failure is None and report["steps"] == 10_000 and diff <= EQUIVALENCE_TOL
    verdict("1", ok, f"{report['steps']} attacked steps, max |FRQD - matrix form| = {diff:.3e}, "
                     f"tolerance {EQUIVALENCE_TOL:g}")


# --- 2 -------------------------------------------------------------------------------------


def test_criterion_2a_relative_error(convergence_run):
    rep = convergence_run
    rel = rep["final"]["relative_error"]
    visits = rep["error_curve"][-1]["min_visits"]
    verdict("2a", visits >= MIN_VISITS and rel <= RELATIVE_ERROR_TOL,
            f"T={rep['steps']}, min visits {visits}, max_i |Q^i - Q*| / |Q*| = {rel:.4f}, "
            f"target <= {RELATIVE_ERROR_TOL}")


def test_criterion_2b_policy_agreement(convergence_run):
    rep = convergence_run
    bad = sorted({s for i, row in rep["policy_agreement"].items() for s in NONTERMINAL_LABELS
                  if not row[s]}, key=int)
    agreeing = sum(row[s] for row in rep["policy_agreement"].values() for s in NONTERMINAL_LABELS)
    verdict("2b", not bad, f"{agreeing}/60 agent-state greedy sets contain an optimal action; "
                           f"states with disagreement: {bad or 'none'}")


def test_criterion_2c_error_decreases_over_checkpoints(convergence_run):
    cps = convergence_run["checkpoints"]
    errs = [c["max_error"] for c in cps]
    ok = (all(e is not None for e in errs) and [c["visits"] for c in cps] == CHECKPOINTS
          and all(a > b for a, b in zip(errs, errs[1:])))
    shown = ", ".join(f"{c['visits']}: {c['max_error']:.3f}" if c["max_error"] is not None
                      else f"{c['visits']}: not reached" for c in cps)
    verdict("2c", ok, f"max error at visit checkpoints {shown}")


# --- 3 -------------------------------------------------------------------------------------


def test_criterion_3_baseline_disagrees(baseline_run):
    rep = baseline_run
    bad = sorted({s for row in rep["policy_agreement"].values() for s in NONTERMINAL_LABELS
                  if not row[s]}, key=int)
    verdict("3", len(bad) >= 1, f"trimming baseline (approximation): states where some agent "
                                f"misses the optimal action: {bad or 'none'}")


# --- 4 -------------------------------------------------------------------------------------


def test_criterion_4_corruption_bound_and_soundness(equivalence_run, convergence_run):
    bound_hits = soundness = 0
    worst = 0
    for rep in (equivalence_run[0], convergence_run):
        bound_hits += rep["violations"]["corruption_bound"]
        soundness += rep["violations"]["filter_soundness"]
        worst = max(worst, rep["diagnostics"]["max_corrupted_copies"])
    verdict("4", bound_hits == 0 and soundness == 0 and worst <= 3,
            f"bound violations {bound_hits}, corrupted values validated {soundness}, "
            f"most corrupted copies of one index seen {worst} (bound 3F = 3)")


# --- 5 -------------------------------------------------------------------------------------


def test_criterion_5_verifier_matches_definition():
    rng = np.random.default_rng(2024)
    densities = np.linspace(0.1, 0.9, 9)
    graphs = 0
    mismatches = []
    positives = 0
    for k in range(540):
        n = int(rng.integers(2, 26))
        g = random_graph(n, float(densities[k % len(densities)]), rng)
        graphs += 1
        for r, rp in ((1, 0), (3, 1), (7, 0)):
            fast = bool(is_rr_redundant(g, r, rp))
            positives += fast
            if fast != redundant_by_definition(g, r, rp):
                mismatches.append((n, r, rp))
    verdict("5", graphs >= 500 and not mismatches,
            f"{graphs} random graphs x 3 parameter pairs, {positives} redundant verdicts, "
            f"{len(mismatches)} disagreements with the direct evaluation")


# --- 6 -------------------------------------------------------------------------------------


def test_criterion_6_construction_soundness():
    failures = []
    checked = 0
    for r in range(1, 8):
        for n in range(r + 1, r + 9):
            g = construct_redundant(n, r)
            for rp in range(r):
                checked += 1
                if not is_rr_redundant(g, r, rp):
                    failures.append((n, r, rp))
    verdict("6", not failures, f"{checked} (n, r, r') cases, failures: {failures or 'none'}")


# --- 7 -------------------------------------------------------------------------------------


def test_criterion_7_robustness_lower_bound():
    failures = []
    checked = 0
    for r in range(1, 6):
        for n in range(r + 1, 13):
            checked += 1
            if not is_r_robust_bruteforce(construct_redundant(n, r), math.ceil((r + 1) / 2)):
                failures.append((n, r))
    four = is_r_robust_bruteforce(construct_redundant(10, 7), 4)
    verdict("7", not failures and four,
            f"{checked} constructed graphs, failures: {failures or 'none'}; "
            f"(10,7) construction 4-robust: {four}")


# --- 8 -------------------------------------------------------------------------------------


def test_criterion_8_zero_budget_reduces_to_plain_qd():
    model = build_task_assignment_mdp(10, 0)
    params = ScheduleParams.from_epsilons(0.1, 0.1, 1.0, 1e-4, 1e-4)
    rng = np.random.default_rng(8)
    topologies = {"path": path_graph(10), "star": star_graph(10),
                  "construct(10,7)": construct_redundant(10, 7)}
    while len(topologies) < 6:
        g = random_graph(10, float(rng.uniform(0.15, 0.5)), rng)
        if is_connected(g):
            topologies[f"random#{len(topologies)}"] = g
    worst = 0.0
    for name, g in topologies.items():
        hop = two_hop_graph(g, 1)
        assert is_connected(hop)
        a = AgentStates.initialize(model, np.random.default_rng(1))
        b = a.copy()
        log = sample_trajectory(model, 1000, np.random.default_rng(2))
        for t, (x, u, xn) in enumerate(log):
            s = Transition(int(x), int(u), model.local_costs[:, x, u], int(xn))
            ra = frqd_step(a, g, no_attack(1000), s, t, params, 0, 0.9)
            rb = qd_step(b, hop, s, params, 0.9, t)
            worst = max(worst, float(np.max(np.abs(ra.q_after - rb.q_after))))
    verdict("8", worst <= EQUIVALENCE_TOL,
            f"{len(topologies)} connected graphs x 1000 steps, max per-step difference "
            f"{worst:.3e}")


# --- 9 -------------------------------------------------------------------------------------


def _run_cli(config, out):
    subprocess.run([sys.executable, "-m", "frqd.harness.cli", "run", str(config), "--out", str(out)],
                   check=True, capture_output=True)


def test_criterion_9_determinism(tmp_path):
    from pathlib import Path

    import frqd.harness
    configs = Path(frqd.harness.__file__).parent / "configs"
    differing = []
    compared = 0
    for name in ("quick.toml", "equivalence.toml"):
        # same config both times, so the output directory is shared too
        out = tmp_path / name
        _run_cli(configs / name, out)
        first = {a: (out / a).read_bytes() for a in ("report.json", "trace.csv")}
        for a in first:
            (out / a).unlink()
        _run_cli(configs / name, out)
        for artifact, data in first.items():
            compared += 1
            if (out / artifact).read_bytes() != data:
                differing.append(f"{name}/{artifact}")
    verdict("9", not differing, f"{compared} artifacts from two separate executions each, "
                                f"differing: {differing or 'none'}")
