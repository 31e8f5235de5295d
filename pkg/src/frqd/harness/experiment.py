"""Run one configured experiment end to end and collect its report."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..comms import AttackPlan, GraphSchedule, graph_at, make_attack_plan, no_attack
from ..graph import (Graph, construct_redundant, is_connected, is_rr_redundant, laplacian,
                     load_edge_list, two_hop_graph)
from ..learning import (AgentStates, FilterAudit, InvariantViolation, ScheduleParams, StepRecord,
                        alpha_weight, beta_weight, frqd_step, laplacian_step, per_agent_error,
                        qd_step, trim_f_baseline_step)
from ..mdp import MdpModel, Transition, build_task_assignment_mdp, restart_state
from ..oracle import OptimalSolution, greedy_policy, value_iteration
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

REPORT_FORMAT = "frqd-run-report/1"
TRACE_COLUMNS = ("t", "x", "u_i", "u_j", "agent", "q_value", "p_size")


class RunFailure(RuntimeError):
    """A runtime invariant was violated; ``report`` holds the partial run."""

    def __init__(self, violation: InvariantViolation, report: dict):
        super().__init__(str(violation))
        self.violation = violation
        self.report = report


# --- building blocks ----------------------------------------------------------------


def build_model(cfg: ExperimentConfig) -> MdpModel:
    if cfg.mdp.kind == "file":
        from pathlib import Path
        model = MdpModel.from_json(Path(cfg.mdp.path).read_text())
    else:
        model = build_task_assignment_mdp(cfg.mdp.n, cfg.stream("costs"),
                                          discount=cfg.mdp.discount, n_tasks=cfg.mdp.n_tasks)
    return model


def build_graphs(cfg: ExperimentConfig) -> GraphSchedule:
    gspec = cfg.graph
    if gspec.kind == "construct":
        try:
            return construct_redundant(gspec.n, gspec.r)
        except ValueError as exc:
            raise ConfigError(str(exc), "graph") from None
    if gspec.kind == "edge_list":
        return _load(gspec.path, "graph.path")
    return [_load(p, f"graph.paths.{k}") for k, p in enumerate(gspec.paths)]


def _load(path: str, field_path: str) -> Graph:
    try:
        return load_edge_list(path)
    except FileNotFoundError:
        raise ConfigError(f"edge list not found: {path}", field_path) from None
    except ValueError as exc:
        raise ConfigError(str(exc), field_path) from None


@dataclass
class Trajectory:
    """Pre-sampled behaviour trajectory; learning never feeds back into it."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    checkpoint_times: dict  # visit threshold -> first step count reaching it

    def __len__(self) -> int:
        return len(self.x)

    def sample(self, model: MdpModel, t: int) -> Transition:
        x, u = int(self.x[t]), int(self.u[t])
        return Transition(x=x, u=u, costs=model.local_costs[:, x, u], x_next=int(self.x_next[t]))


def sample_behaviour(model: MdpModel, rng: np.random.Generator, horizon: int,
                     min_visits: Optional[int], checkpoints: list[int],
                     restart: str = "exploring") -> Trajectory:
    """Sample under uniform exploration until ``horizon`` or every non-terminal
    pair has ``min_visits`` visits, whichever comes first."""
    nonterm = model.nonterminal_states
    counts = np.zeros((model.n_states, model.n_actions), dtype=np.int64)
    thresholds = sorted(set(checkpoints) | ({min_visits} if min_visits else set()))
    below = {c: len(nonterm) * model.n_actions for c in thresholds}
    reached = {}
    is_nonterm = np.zeros(model.n_states, dtype=bool)
    is_nonterm[nonterm] = True
    xs, us, xn = [], [], []
    state = restart_state(model, restart, rng)
    n_actions = model.n_actions
    for t in range(horizon):
        u = min(int(rng.random() * n_actions), n_actions - 1)
        nxt = model.sample_next(state, u, rng)
        xs.append(state)
        us.append(u)
        xn.append(nxt)
        if is_nonterm[state]:
            counts[state, u] += 1
            c = counts[state, u]
            if c in below:
                below[c] -= 1
                if below[c] == 0:
                    reached[int(c)] = t + 1
        state = restart_state(model, restart, rng) if nxt in model.terminal_states else nxt
        if min_visits and min_visits in reached:
            break
    return Trajectory(np.array(xs, dtype=np.int64), np.array(us, dtype=np.int64),
                      np.array(xn, dtype=np.int64),
                      {c: reached[c] for c in checkpoints if c in reached})


def log_grid(horizon: int, points: int, extra=()) -> list[int]:
    """Roughly log-spaced step counts in ``[1, horizon]`` plus any ``extra`` ones."""
    grid = np.unique(np.round(np.logspace(0, math.log10(horizon), points)).astype(int))
    return sorted(set(int(g) for g in grid) | {int(e) for e in extra if 1 <= e <= horizon}
                  | {horizon})


def action_label(model: MdpModel, a: int):
    act = model.actions[a]
    return list(act) if isinstance(act, tuple) else act


# --- the run ------------------------------------------------------------------------------


@dataclass
class RunResult:
    config: ExperimentConfig
    model: MdpModel
    solution: OptimalSolution
    states: AgentStates
    report: dict
    trace_rows: list = field(default_factory=list)
    wall_clock: float = 0.0


def run_experiment(cfg: ExperimentConfig, on_step=None) -> RunResult:
    """Execute ``cfg``; deterministic given its seeds.

    ``on_step(record, states)`` is called after every step when given.
    Raises ``RunFailure`` if an enabled invariant check fails.
    """
    started = time.perf_counter()
    model = build_model(cfg)
    schedule = build_graphs(cfg)
    n = model.n_agents
    first = graph_at(schedule, 0)
    if first.n != n:
        raise ConfigError(f"graph has {first.n} nodes but the MDP has {n} agents", "graph")
    params = cfg.schedule.params(n)
    gamma = model.discount
    f = cfg.attack.f
    solution = value_iteration(model, tol=cfg.oracle_tol)
    q_star = np.asarray(solution.q_star)
    q_scale = float(np.max(np.abs(q_star)))

    stop_at = cfg.min_visits if cfg.stop_at_min_visits else None
    traj = sample_behaviour(model, cfg.stream("trajectory"), cfg.horizon, stop_at,
                            cfg.visit_checkpoints, cfg.mdp.restart)
    steps = len(traj)
    attacked = cfg.algorithm in ("frqd", "trim_baseline")
    plan = (make_attack_plan(cfg.attack.strategy, f, schedule, steps, cfg.stream("attack"))
            if attacked else no_attack(steps))
    states = AgentStates.initialize(model, cfg.stream("init"), terminal=cfg.mdp.terminal_init)

    redundancy_r = 6 * f + 1
    graphs = [schedule] if isinstance(schedule, Graph) else list(schedule)
    redundant = all(g.n > 1 and redundancy_r <= g.n and is_rr_redundant(g, redundancy_r, 0)
                    for g in graphs)
    hop_graphs = [two_hop_graph(g, redundancy_r) for g in graphs]
    laps = [laplacian(h) for h in hop_graphs]

    audit = None
    a_cfg = cfg.assertions
    if cfg.algorithm == "frqd":
        audit = FilterAudit(
            f=f, corruption_bound=a_cfg.corruption_bound and all(is_connected(g) for g in graphs),
            filter_soundness=a_cfg.filter_soundness and all(is_connected(g) for g in graphs),
            filter_symmetry=a_cfg.filter_symmetry and redundant,
            expected_graph=hop_graphs[0] if redundant else None,
            raise_on_violation=True)
        if a_cfg.filter_symmetry and not redundant:
            log.warning("graph is not (%d,0)-redundant; filter symmetry check disabled",
                        redundancy_r)

    reference = None
    if a_cfg.equivalence_check and cfg.algorithm != "laplacian_reference":
        reference = states.copy()
    equivalence_max = 0.0
    equivalence_failures = 0

    grid = log_grid(steps, cfg.outputs.curve_points, traj.checkpoint_times.values())
    grid_set = set(grid)
    curve = []
    tracked = _tracked_pairs(cfg, model)
    tracked_series = {key: [] for key in tracked}
    trace_rows = []
    amplification_steps = 0
    skipped = 0
    counts = np.zeros((model.n_states, model.n_actions), dtype=np.int64)
    nonterm = model.nonterminal_states

    def snapshot_report(t_done: int) -> dict:
        return _report(cfg, model, solution, schedule, states, curve, traj, t_done, audit,
                       equivalence_max, equivalence_failures, amplification_steps, skipped,
                       tracked_series, redundant, plan)

    for t in range(steps):
        sample = traj.sample(model, t)
        g = graph_at(schedule, t)
        k_visit = int(states.visits[0, sample.x, sample.u])
        try:
            if cfg.algorithm == "frqd":
                if audit is not None and audit.expected_graph is not None and len(hop_graphs) > 1:
                    audit.expected_graph = graph_at(hop_graphs, t)
                rec = frqd_step(states, g, plan, sample, t, params, f, gamma, audit)
            elif cfg.algorithm == "trim_baseline":
                rec = trim_f_baseline_step(states, g, plan, sample, t, params, f, gamma)
                skipped += rec.skipped_consensus
            elif cfg.algorithm == "qd":
                rec = qd_step(states, g, sample, params, gamma, t)
            else:
                rec = laplacian_step(states, graph_at(laps, t), sample, params, gamma, t)
        except InvariantViolation as exc:
            raise RunFailure(exc, snapshot_report(t)) from None

        alpha, beta = alpha_weight(params, k_visit), beta_weight(params, k_visit)
        if beta * max(rec.p_sizes, default=0) > 1.0 - alpha:
            amplification_steps += 1

        if reference is not None:
            ref = laplacian_step(reference, graph_at(laps, t), sample, params, gamma, t)
            diff = float(np.max(np.abs(ref.q_after - rec.q_after)))
            equivalence_max = max(equivalence_max, diff)
            if diff > a_cfg.equivalence_tol:
                equivalence_failures += 1
                exc = InvariantViolation("equivalence_check",
                                         f"t={t} max |difference| {diff:.3e} exceeds "
                                         f"{a_cfg.equivalence_tol:g}")
                raise RunFailure(exc, snapshot_report(t + 1))

        if sample.x in nonterm:
            counts[sample.x, sample.u] += 1
        if on_step is not None:
            on_step(rec, states)
        if cfg.outputs.trace and t % cfg.outputs.trace_stride == 0:
            trace_rows.extend(_trace_rows(model, rec))
        done = t + 1
        if done in grid_set:
            errs = per_agent_error(states, q_star)
            curve.append({"t": done, "min_visits": int(counts[nonterm].min()),
                          "max_error": max(errs),
                          "relative_error": max(errs) / q_scale if q_scale else max(errs),
                          "per_agent": errs})
            for key, (s, a) in tracked.items():
                tracked_series[key].append([done] + states.q[:, s, a].tolist())

    report = snapshot_report(steps)
    if reference is not None:
        report["diagnostics"]["equivalence_final_max_diff"] = float(
            np.max(np.abs(reference.q - states.q)))
    elapsed = time.perf_counter() - started
    return RunResult(cfg, model, solution, states, report, trace_rows, elapsed)


def _tracked_pairs(cfg: ExperimentConfig, model: MdpModel) -> dict:
    out = {}
    for label, i, j in cfg.outputs.track_pairs:
        try:
            s = model.state_index(label)
            a = model.action_index((i, j))
        except ValueError:
            log.warning("tracked pair (x=%s, (%s,%s)) not in the model; skipped", label, i, j)
            continue
        out[f"x={label},u=({i},{j})"] = (s, a)
    return out


def _trace_rows(model: MdpModel, rec: StepRecord) -> list:
    act = model.actions[rec.u]
    ui, uj = act if isinstance(act, tuple) else (act, "")
    x = model.state_labels[rec.x]
    return [(rec.t, x, ui, uj, i, repr(float(q)), rec.p_sizes[i])
            for i, q in enumerate(rec.q_after)]


def _report(cfg, model, solution, schedule, states, curve, traj, steps, audit, eq_max, eq_fail,
            amplification_steps, skipped, tracked_series, redundant, plan) -> dict:
    q_star = np.asarray(solution.q_star)
    pi_star = solution.pi_star
    policies = {}
    agreement = {}
    for i in range(states.n_agents):
        greedy = greedy_policy(states.q[i])
        policies[str(i)] = {str(model.state_labels[s]): [action_label(model, a) for a in sorted(acts)]
                            for s, acts in enumerate(greedy)}
        agreement[str(i)] = {str(model.state_labels[s]): bool(greedy[s] & pi_star[s])
                             for s in model.nonterminal_states}
    errs = per_agent_error(states, q_star)
    q_scale = float(np.max(np.abs(q_star)))
    graphs = [schedule] if isinstance(schedule, Graph) else list(schedule)
    g0 = graphs[0]
    counters = dict(audit.counters) if audit is not None else {}
    if eq_fail:
        counters["equivalence_check"] = eq_fail
    elif cfg.assertions.equivalence_check:
        counters.setdefault("equivalence_check", 0)
    checkpoints = []
    for c in cfg.visit_checkpoints:
        t_c = traj.checkpoint_times.get(c)
        point = next((p for p in curve if p["t"] == t_c), None) if t_c else None
        checkpoints.append({"visits": c, "t": t_c,
                            "max_error": point["max_error"] if point else None,
                            "relative_error": point["relative_error"] if point else None})
    algorithm = cfg.algorithm
    return {
        "format": REPORT_FORMAT,
        "algorithm": algorithm,
        "approximation": algorithm == "trim_baseline",
        "config": cfg.to_dict(),
        "mdp": {"fingerprint": model.fingerprint(), "n_agents": model.n_agents,
                "n_states": model.n_states, "n_actions": model.n_actions,
                "discount": model.discount},
        "graph": {"n": g0.n, "num_edges": g0.num_edges, "time_varying": len(graphs) > 1,
                  "redundancy_r": 6 * cfg.attack.f + 1, "redundant": bool(redundant),
                  "edges": [list(e) for e in g0.edges()]},
        "attack": {"strategy": plan.strategy, "f": plan.f_budget},
        "steps": steps,
        "oracle": solution.to_dict(model),
        "q_star_scale": q_scale,
        "error_curve": curve,
        "checkpoints": checkpoints,
        "final": {"max_error": max(errs), "relative_error": max(errs) / q_scale if q_scale else None,
                  "per_agent_error": errs, "q_tables": states.q.tolist()},
        "policies": policies,
        "policy_agreement": agreement,
        "all_agents_optimal": all(all(v.values()) for v in agreement.values()),
        "violations": counters,
        "diagnostics": {
            "max_corrupted_copies": audit.max_corrupted if audit is not None else None,
            "equivalence_max_diff": eq_max if cfg.assertions.equivalence_check else None,
            "amplification_steps": amplification_steps,
            "skipped_consensus": skipped,
            "first_violation": audit.first_violation if audit is not None else None,
        },
        "tracked_pairs": {"columns": ["t"] + [f"agent_{i}" for i in range(states.n_agents)],
                          "optimal": {k: float(q_star[model.state_index(int(k.split(",")[0][2:])),
                                                      model.action_index(_pair_of(k))])
                                      for k in tracked_series},
                          "series": tracked_series},
    }


def _pair_of(key: str) -> tuple:
    inner = key.split("u=(")[1].rstrip(")")
    i, j = inner.split(",")
    return (int(i), int(j))
