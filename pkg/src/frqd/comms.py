"""Synchronous message rounds over a graph with an F-total edge adversary.

The adversary sits on the links, not in the agents: on each round it picks at
most ``F`` undirected edges and corrupts the messages crossing them in both
directions. Agents never see the ``tampered`` flag; it exists so the
simulator can audit the filters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .graph import Graph

EXTREME_VALUE = 10000.0
ROUNDS = (1, 2)

STRATEGIES = ("none", "extreme-value", "falsified-relay", "drop", "duplicate-index-spoof")
DEFAULT_STRATEGY = "extreme-value+falsified-relay"

ValueTuple = tuple  # (q, idx)
RelaySet = tuple  # tuple of ValueTuple


@dataclass(frozen=True)
class MessageEnvelope:
    sender: int
    receiver: int
    round: int
    payload: object
    tampered: bool = False


def parse_strategy(strategy: str) -> dict[int, str]:
    """Map a strategy identifier onto per-round corruption actions.

    ``"a+b"`` applies ``a`` in round 1 and ``b`` in round 2; a single name
    applies to both rounds.
    """
    parts = strategy.split("+")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or any(p not in STRATEGIES for p in parts):
        raise ValueError(f"unknown attack strategy {strategy!r}; "
                         f"use one of {STRATEGIES} or 'round1+round2'")
    return {1: parts[0], 2: parts[1]}


GraphSchedule = Union[Graph, Sequence[Graph]]


def graph_at(schedule: GraphSchedule, t: int) -> Graph:
    if isinstance(schedule, Graph):
        return schedule
    return schedule[min(t, len(schedule) - 1)]


class AttackPlan:
    """Per ``(t, round)`` edge selections plus the corruption actions.

    Plans over a static graph store selections compactly as ``picks``, an
    integer array of shape ``(horizon, 2, k)`` indexing ``edge_list``;
    explicit plans carry a ``{(t, round): edges}`` mapping instead.
    """

    def __init__(self, strategy: str, f_budget: int, horizon: int,
                 selections: Optional[dict] = None, seed: Optional[int] = None,
                 edge_list: Optional[list] = None, picks: Optional[np.ndarray] = None):
        if f_budget < 0:
            raise ValueError("F must be non-negative")
        self.strategy = strategy
        self.actions = parse_strategy(strategy)
        self.f_budget = f_budget
        self.horizon = horizon
        self.seed = seed
        self._selections = selections or {}
        self._edge_list = edge_list
        self._picks = picks

    def edges_at(self, t: int, round: int) -> tuple:
        if self._picks is not None:
            if t >= len(self._picks):
                return ()
            return tuple(self._edge_list[k] for k in self._picks[t, round - 1])
        return self._selections.get((t, round), ())

    def selections(self):
        """Iterate ``((t, round), edges)`` over all non-empty selections."""
        if self._picks is not None:
            for t in range(len(self._picks)):
                for z in ROUNDS:
                    yield (t, z), self.edges_at(t, z)
        else:
            for key in sorted(self._selections):
                if self._selections[key]:
                    yield key, self._selections[key]

    def action(self, round: int) -> str:
        return self.actions[round]

    def to_dict(self, explicit: bool = False) -> dict:
        doc = {"strategy": self.strategy, "f": self.f_budget, "horizon": self.horizon,
               "seed": self.seed}
        if explicit:
            doc["edges"] = [{"t": t, "round": z, "edges": [list(e) for e in edges]}
                            for (t, z), edges in self.selections()]
        return doc

    def to_json(self, explicit: bool = False) -> str:
        return json.dumps(self.to_dict(explicit))

    @classmethod
    def from_dict(cls, doc: dict, schedule: Optional[GraphSchedule] = None) -> "AttackPlan":
        """Rebuild a plan from explicit edges, or regenerate it from its seed."""
        if "edges" in doc:
            selections = {(e["t"], e["round"]): tuple(tuple(x) for x in e["edges"])
                          for e in doc["edges"]}
            plan = cls(doc["strategy"], doc["f"], doc["horizon"], selections, doc.get("seed"))
            plan.validate(schedule)
            return plan
        if doc.get("seed") is None:
            raise ValueError("plan without explicit edges needs a seed to regenerate")
        if schedule is None:
            raise ValueError("regenerating a plan from its seed needs the graph schedule")
        return make_attack_plan(doc["strategy"], doc["f"], schedule, doc["horizon"],
                                np.random.default_rng(doc["seed"]), seed=doc["seed"])

    def validate(self, schedule: Optional[GraphSchedule]) -> None:
        for (t, z), edges in self.selections():
            if len(edges) > self.f_budget:
                raise ValueError(f"plan selects {len(edges)} > F edges at t={t}, round={z}")
            if schedule is not None:
                g = graph_at(schedule, t)
                for i, j in edges:
                    if not g.has_edge(i, j):
                        raise ValueError(f"plan edge ({i},{j}) at t={t} is not in the graph")


def make_attack_plan(strategy: str, f: int, schedule: GraphSchedule, horizon: int,
                     rng: np.random.Generator, seed: Optional[int] = None) -> AttackPlan:
    """Draw ``min(F, |E(t)|)`` edges uniformly, independently for each round."""
    actions = parse_strategy(strategy)
    if f < 0:
        raise ValueError("F must be non-negative")
    if all(a == "none" for a in actions.values()) or f == 0:
        return AttackPlan(strategy, f, horizon, {}, seed)
    if isinstance(schedule, Graph):
        edges = schedule.edges()
        k = min(f, len(edges))
        if k == 0:
            return AttackPlan(strategy, f, horizon, {}, seed)
        picks = np.empty((horizon, 2, k), dtype=np.int32)
        chunk = 4096
        for start in range(0, horizon, chunk):
            stop = min(start + chunk, horizon)
            if k == 1:
                picks[start:stop, :, 0] = rng.integers(len(edges), size=(stop - start, 2))
            else:
                keys = rng.random((stop - start, 2, len(edges)))
                picks[start:stop] = np.argsort(keys, axis=-1)[..., :k]
        return AttackPlan(strategy, f, horizon, seed=seed, edge_list=edges, picks=picks)

    selections = {}
    for t in range(horizon):
        edges = graph_at(schedule, t).edges()
        k = min(f, len(edges))
        for z in ROUNDS:
            chosen = rng.choice(len(edges), size=k, replace=False) if k else []
            selections[(t, z)] = tuple(edges[c] for c in sorted(chosen))
    return AttackPlan(strategy, f, horizon, selections, seed)


def no_attack(horizon: int = 0) -> AttackPlan:
    return AttackPlan("none", 0, horizon, {})


# --- corruption actions ----------------------------------------------------------


def _corrupt(action: str, round: int, sender: int, receiver: int, payload, n: int) -> list:
    """Payloads the receiver gets in place of ``payload`` on an attacked link."""
    if action == "none":
        return [payload]
    if action == "drop":
        return []
    if round == 1:
        q, idx = payload
        if action == "extreme-value":
            return [(EXTREME_VALUE, 0)]
        if action == "falsified-relay":
            return [(EXTREME_VALUE, sender)]
        if action == "duplicate-index-spoof":
            return [payload, (EXTREME_VALUE, idx)]
    else:
        if action == "extreme-value":
            return [tuple((EXTREME_VALUE, idx) for _, idx in payload)]
        if action == "falsified-relay":
            return [tuple((EXTREME_VALUE, i) for i in range(n))]
        if action == "duplicate-index-spoof":
            spoof_idx = payload[0][1] if payload else 0
            extra = ((EXTREME_VALUE, spoof_idx),) * (1 if payload else 2)
            return [tuple(payload) + extra]
    raise ValueError(f"unknown corruption action {action!r}")


@dataclass
class Delivery:
    """Result of one round: what each agent received, plus audit data."""

    inboxes: dict  # receiver -> list of (sender, payload)
    tampered: list  # directed (sender, receiver) links whose message was altered

    def envelopes(self, round: int) -> list[MessageEnvelope]:
        bad = set(self.tampered)
        return [MessageEnvelope(s, r, round, p, (s, r) in bad)
                for r, items in sorted(self.inboxes.items()) for s, p in items]


def deliver_round(graph: Graph, outbox: dict, plan: AttackPlan, t: int, round: int) -> Delivery:
    """Deliver every directed message of one round, applying the plan.

    ``outbox`` maps each directed edge ``(sender, receiver)`` to its payload
    and must cover every directed edge of ``graph``.
    """
    if round not in ROUNDS:
        raise ValueError(f"round must be 1 or 2, got {round}")
    if outbox.keys() != graph.directed_edges():
        missing = sorted(graph.directed_edges() - outbox.keys())
        raise RuntimeError(f"protocol violation: outbox must cover exactly the "
                           f"{2 * graph.num_edges} directed edges (missing {missing[:3]})")
    attacked = set()
    for i, j in plan.edges_at(t, round):
        attacked.add((i, j))
        attacked.add((j, i))
    action = plan.action(round)
    inboxes = {i: [] for i in range(graph.n)}
    tampered = []
    n = graph.n
    for (s, r), payload in outbox.items():
        if (s, r) in attacked and action != "none":
            tampered.append((s, r))
            for p in _corrupt(action, round, s, r, payload, n):
                inboxes[r].append((s, p))
        else:
            inboxes[r].append((s, payload))
    return Delivery(inboxes, tampered)
