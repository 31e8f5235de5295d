"""Agent-side learning: step-size schedules, the consensus + innovations
update, the two-round redundancy filter, and two comparison dynamics
(trimmed-value filtering and the Laplacian matrix form).

All step functions mutate ``AgentStates`` in place and return a
``StepRecord`` describing what happened.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .comms import AttackPlan, deliver_round
from .graph import Graph
from .mdp import MdpModel, Transition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleParams:
    """Constants of the decaying weights ``a/(k+1)^tau1`` and ``b/(k+1)^tau2``."""

    a: float
    b: float
    tau1: float
    tau2: float
    eps1: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")
        if self.eps1 <= 0:
            raise ValueError("eps1 must be positive")
        if not 0.5 < self.tau1 <= 1.0:
            raise ValueError(f"tau1 must lie in (1/2, 1], got {self.tau1}")
        upper = self.tau1 - 1.0 / (2.0 + self.eps1)
        if not 0.0 < self.tau2 < upper:
            raise ValueError(f"tau2 must lie in (0, {upper:.6g}), got {self.tau2}")

    @classmethod
    def from_epsilons(cls, a: float, b: float, tau1: float, eps1: float,
                      eps2: float) -> "ScheduleParams":
        return cls(a, b, tau1, tau1 - 1.0 / (2.0 + eps1) - eps2, eps1)


def alpha_weight(params: ScheduleParams, k: int) -> float:
    """Innovation weight at the ``(k+1)``-th visit of a pair."""
    return params.a / (k + 1) ** params.tau1


def beta_weight(params: ScheduleParams, k: int) -> float:
    """Consensus weight at the ``(k+1)``-th visit of a pair."""
    return params.b / (k + 1) ** params.tau2


# --- agent tables ------------------------------------------------------------------


@dataclass
class AgentStates:
    """Every agent's Q-table and per-pair visit counters.

    ``q[i, x, u]`` is agent ``i``'s estimate; ``visits[i, x, u]`` counts the
    completed sampling instants of ``(x, u)`` seen by agent ``i``.
    """

    q: np.ndarray
    visits: np.ndarray

    @classmethod
    def initialize(cls, model: MdpModel, rng: np.random.Generator, low: float = 0.0,
                   high: float = 50.0, terminal: str = "zero") -> "AgentStates":
        shape = (model.n_agents, model.n_states, model.n_actions)
        q = rng.uniform(low, high, size=shape)
        if terminal == "zero":
            for s in model.terminal_states:
                q[:, s, :] = 0.0
        elif terminal != "random":
            raise ValueError(f"terminal init must be 'zero' or 'random', got {terminal!r}")
        return cls(q=q, visits=np.zeros(shape, dtype=np.int64))

    @property
    def n_agents(self) -> int:
        return self.q.shape[0]

    def values(self) -> np.ndarray:
        """State values ``V^i_x = min_u Q^i_{x,u}``, shape ``(n, M)``."""
        return self.q.min(axis=2)

    def copy(self) -> "AgentStates":
        return AgentStates(self.q.copy(), self.visits.copy())


@dataclass
class StepRecord:
    t: int
    x: int
    u: int
    x_next: int
    q_before: np.ndarray
    q_after: np.ndarray
    p_sizes: list
    validated: Optional[list] = None  # per agent, list of (q, k)
    skipped_consensus: int = 0


# --- filters ---------------------------------------------------------------------------


def first_filter(received: Iterable[tuple], self_id: int) -> list[tuple]:
    """Keep tuples whose index is not ours and occurs exactly once in the inbox."""
    received = list(received)
    counts = Counter(idx for _, idx in received)
    return [(q, idx) for q, idx in received if idx != self_id and counts[idx] == 1]


def has_unique_indices(relay) -> bool:
    return len({k for _, k in relay}) == len(relay)


def accept_relays(received: Iterable[tuple], own_k: Iterable[tuple]) -> list[tuple]:
    """Merge relayed sets into one multiset, dropping any set with a repeated index.

    ``received`` holds ``(sender, relay_set)`` pairs. The agent's own accepted
    set always joins the pool, so a direct observation counts as one
    corroborating copy alongside the relays.
    """
    pool = list(own_k)
    for _, relay in received:
        if len({k for _, k in relay}) == len(relay):
            pool.extend(relay)
    return pool


def group_by_index(pool: Iterable[tuple]) -> dict:
    """Per index ``k``, the multiset of values tagged ``k`` (as a list)."""
    grouped = defaultdict(list)
    for q, k in pool:
        grouped[k].append(q)
    return grouped


def second_filter(pool: Iterable[tuple], f: int, self_id: Optional[int] = None) -> list[tuple]:
    """Validate values corroborated at least ``3F + 1`` times.

    Returns ``(q, k)`` for every index ``k`` and distinct value ``q`` reaching
    the threshold, ordered by ``k``. The agent's own index is skipped when
    ``self_id`` is given: its own value contributes nothing to the consensus
    residual.
    """
    threshold = 3 * f + 1
    counts = Counter(pool)
    out = [(q, k) for (q, k), c in counts.items() if c >= threshold and k != self_id]
    out.sort(key=lambda item: item[1])
    return out


def qd_update(q_current: float, p_values: Iterable[float], cost: float, min_next: float,
              alpha: float, beta: float, gamma: float) -> float:
    """One consensus + innovations update of a single Q entry."""
    if alpha < 0 or beta < 0:
        raise ValueError("weights must be non-negative")
    residual = sum(q_current - q for q in p_values)
    return q_current - beta * residual + alpha * (cost + gamma * min_next - q_current)


def trim_extremes(values: Iterable[float], f: int) -> Optional[list[float]]:
    """Drop the ``F`` largest and ``F`` smallest values; None if fewer than ``2F+1``."""
    values = sorted(values)
    if len(values) < 2 * f + 1:
        return None
    return values[f:len(values) - f]


# --- audit -------------------------------------------------------------------------------


class InvariantViolation(RuntimeError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"{name}: {detail}")
        self.name = name
        self.detail = detail


@dataclass
class FilterAudit:
    """Runtime checks on the filter pipeline, using simulator-only knowledge.

    ``expected_graph`` (the ``(6F+1)``-2-hop graph) enables the symmetry
    check; leave it None when the topology is not redundant enough for that
    guarantee to apply.
    """

    f: int
    corruption_bound: bool = True
    filter_soundness: bool = True
    filter_symmetry: bool = True
    expected_graph: Optional[Graph] = None
    raise_on_violation: bool = False
    counters: dict = field(default_factory=lambda: {
        "corruption_bound": 0, "filter_soundness": 0, "filter_symmetry": 0,
        "unique_validation": 0, "attack_budget": 0})
    max_corrupted: int = 0
    first_violation: Optional[str] = None

    def _flag(self, name: str, detail: str) -> None:
        self.counters[name] += 1
        if self.first_violation is None:
            self.first_violation = f"{name}: {detail}"
        if self.raise_on_violation:
            raise InvariantViolation(name, detail)

    @property
    def total_violations(self) -> int:
        return sum(self.counters.values())

    def check_budget(self, t: int, round: int, tampered: list) -> None:
        if len(tampered) > 2 * self.f:
            self._flag("attack_budget", f"t={t} round={round}: {len(tampered)} tampered messages")

    def check_agent(self, t: int, i: int, pool: list, validated: list, truth: list) -> None:
        if self.corruption_bound:
            wrong = Counter(k for q, k in pool if k != i and q != truth[k])
            worst = max(wrong.values(), default=0)
            self.max_corrupted = max(self.max_corrupted, worst)
            if worst > 3 * self.f:
                k = max(wrong, key=wrong.get)
                self._flag("corruption_bound", f"t={t} agent {i} holds {worst} corrupted copies "
                                           f"for index {k} (bound {3 * self.f})")
        if self.filter_soundness:
            for q, k in validated:
                if q != truth[k]:
                    self._flag("filter_soundness",
                               f"t={t} agent {i} validated {q!r} for index {k}, true {truth[k]!r}")
        idx = [k for _, k in validated]
        if len(idx) != len(set(idx)):
            self._flag("unique_validation", f"t={t} agent {i} validated an index twice")
        if self.filter_symmetry and self.expected_graph is not None:
            got = set(idx)
            want = set(self.expected_graph.neighbors(i))
            if got != want:
                self._flag("filter_symmetry", f"t={t} agent {i} validated {sorted(got)}, "
                                              f"expected {sorted(want)}")


# --- step dynamics -------------------------------------------------------------------


def _weights(states: AgentStates, x: int, u: int, params: ScheduleParams):
    ks = states.visits[:, x, u]
    return [alpha_weight(params, int(k)) for k in ks], [beta_weight(params, int(k)) for k in ks]


def _apply(states: AgentStates, sample: Transition, params: ScheduleParams, gamma: float,
           p_values: list) -> tuple[np.ndarray, np.ndarray]:
    x, u = sample.x, sample.u
    before = states.q[:, x, u].copy()
    min_next = states.q[:, sample.x_next, :].min(axis=1)
    alphas, betas = _weights(states, x, u, params)
    after = np.array([
        qd_update(float(before[i]), p_values[i], float(sample.costs[i]), float(min_next[i]),
                  alphas[i], betas[i], gamma)
        for i in range(states.n_agents)])
    states.q[:, x, u] = after
    states.visits[:, x, u] += 1
    return before, after


def _check_sizes(states: AgentStates, graph: Graph) -> None:
    if states.n_agents != graph.n:
        raise ValueError(f"graph has {graph.n} nodes but there are {states.n_agents} agents")


def frqd_step(states: AgentStates, graph: Graph, plan: AttackPlan, sample: Transition, t: int,
              params: ScheduleParams, f: int, gamma: float,
              audit: Optional[FilterAudit] = None) -> StepRecord:
    """Run one full step of the resilient two-round protocol for all agents."""
    _check_sizes(states, graph)
    n = graph.n
    x, u = sample.x, sample.u
    current = states.q[:, x, u].tolist()
    nbrs = [graph.neighbors(i) for i in range(n)]

    outbox = {(i, j): (current[i], i) for i in range(n) for j in nbrs[i]}
    round1 = deliver_round(graph, outbox, plan, t, 1)
    accepted = [first_filter([p for _, p in round1.inboxes[i]], i) for i in range(n)]

    outbox = {(i, j): tuple(accepted[i]) for i in range(n) for j in nbrs[i]}
    round2 = deliver_round(graph, outbox, plan, t, 2)

    validated = []
    for i in range(n):
        pool = accept_relays(round2.inboxes[i], accepted[i])
        valid = second_filter(pool, f, self_id=i)
        validated.append(valid)
        if audit is not None:
            audit.check_agent(t, i, pool, valid, current)
    if audit is not None:
        audit.check_budget(t, 1, round1.tampered)
        audit.check_budget(t, 2, round2.tampered)

    p_values = [[q for q, _ in v] for v in validated]
    before, after = _apply(states, sample, params, gamma, p_values)
    return StepRecord(t, x, u, sample.x_next, before, after,
                      [len(v) for v in validated], validated)


def qd_step(states: AgentStates, graph: Graph, sample: Transition, params: ScheduleParams,
            gamma: float, t: int = -1) -> StepRecord:
    """Attack-free consensus + innovations step using every neighbour's true value."""
    _check_sizes(states, graph)
    current = states.q[:, sample.x, sample.u].tolist()
    p_values = [[current[j] for j in graph.neighbors(i)] for i in range(graph.n)]
    before, after = _apply(states, sample, params, gamma, p_values)
    return StepRecord(t, sample.x, sample.u, sample.x_next, before, after,
                      [len(p) for p in p_values])


def trim_f_baseline_step(states: AgentStates, graph: Graph, plan: AttackPlan, sample: Transition,
                         t: int, params: ScheduleParams, f: int, gamma: float) -> StepRecord:
    """Single-round step that trims the ``F`` largest and smallest received values.

    Stands in for resilient QD-learning without event triggering: each agent
    uses whatever survives trimming as its consensus set. Agents that
    received fewer than ``2F + 1`` values skip the consensus term.
    """
    _check_sizes(states, graph)
    n = graph.n
    current = states.q[:, sample.x, sample.u].tolist()
    outbox = {(i, j): (current[i], i) for i in range(n) for j in graph.neighbors(i)}
    round1 = deliver_round(graph, outbox, plan, t, 1)
    p_values = []
    skipped = 0
    for i in range(n):
        kept = trim_extremes((p[0] for _, p in round1.inboxes[i]), f)
        if kept is None:
            log.debug("t=%d agent %d: fewer than 2F+1 values, consensus skipped", t, i)
            skipped += 1
            kept = []
        p_values.append(kept)
    before, after = _apply(states, sample, params, gamma, p_values)
    return StepRecord(t, sample.x, sample.u, sample.x_next, before, after,
                      [len(p) for p in p_values], skipped_consensus=skipped)


def laplacian_reference_step(q: np.ndarray, lap: np.ndarray, alpha: float, beta: float,
                             targets: np.ndarray) -> np.ndarray:
    """Matrix form of one update: ``((1 - alpha) I - beta lap) q + alpha targets``.

    ``targets[i]`` is agent ``i``'s one-step lookahead, its cost plus the
    discounted minimum over next-state actions.
    """
    q = np.asarray(q, dtype=float)
    lap = np.asarray(lap, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = q.shape[0]
    if q.ndim != 1 or lap.shape != (n, n) or targets.shape != (n,):
        raise ValueError(f"dimension mismatch: q {q.shape}, laplacian {lap.shape}, "
                         f"targets {targets.shape}")
    return ((1.0 - alpha) * np.eye(n) - beta * lap) @ q + alpha * targets


def laplacian_step(states: AgentStates, lap: np.ndarray, sample: Transition,
                   params: ScheduleParams, gamma: float, t: int = -1) -> StepRecord:
    """Advance all tables with the matrix form on the sampled column."""
    x, u = sample.x, sample.u
    k = states.visits[:, x, u]
    if np.any(k != k[0]):
        raise ValueError("matrix form needs identical visit counts across agents")
    alpha = alpha_weight(params, int(k[0]))
    beta = beta_weight(params, int(k[0]))
    before = states.q[:, x, u].copy()
    targets = (np.asarray(sample.costs, dtype=float)
               + gamma * states.q[:, sample.x_next, :].min(axis=1))
    after = laplacian_reference_step(before, lap, alpha, beta, targets)
    states.q[:, x, u] = after
    states.visits[:, x, u] += 1
    degrees = np.rint(np.diag(lap)).astype(int).tolist()
    return StepRecord(t, x, u, sample.x_next, before, after, degrees)


def max_error(states: AgentStates, q_star: np.ndarray) -> float:
    """``max_i ||Q^i - Q*||_inf``."""
    return float(np.max(np.abs(states.q - q_star[None, :, :])))


def per_agent_error(states: AgentStates, q_star: np.ndarray) -> list[float]:
    return np.max(np.abs(states.q - q_star[None, :, :]), axis=(1, 2)).tolist()

