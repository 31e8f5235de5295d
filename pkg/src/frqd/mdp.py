"""Networked multi-agent MDP: model container, the task-assignment instance,
and seeded trajectory sampling with episode restarts.

States are addressed by zero-based index internally; ``model.state_labels``
maps them to the 1-based names used in reports (state index 6 is task
completion, label 7).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ROW_SUM_TOL = 1e-12
COST_HIGH = 50.0


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Finite MDP shared by ``n_agents`` agents with private local costs.

    ``transition[s, a, s']`` is the probability of moving from ``s`` to
    ``s'`` under action ``a``; ``local_costs[i, s, a]`` is agent ``i``'s cost.
    """

    transition: np.ndarray
    local_costs: np.ndarray
    discount: float
    actions: tuple
    terminal_states: frozenset = frozenset()
    state_labels: tuple = ()

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        c = np.array(self.local_costs, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (M, A, M), got {p.shape}")
        if c.ndim != 3 or c.shape[1:] != p.shape[:2]:
            raise ValueError(f"local_costs must have shape (n, M, A), got {c.shape}")
        if len(self.actions) != p.shape[1]:
            raise ValueError("action list length does not match transition tensor")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("every transition row must be a probability vector")
        for s in self.terminal_states:
            if np.any(c[:, s, :] != 0):
                raise ValueError(f"terminal state {s} must carry zero cost")
        p.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "local_costs", c)
        object.__setattr__(self, "actions", tuple(tuple(a) if isinstance(a, (list, tuple)) else a
                                                  for a in self.actions))
        object.__setattr__(self, "terminal_states", frozenset(int(s) for s in self.terminal_states))
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(range(1, p.shape[0] + 1)))
        cdf = np.cumsum(p, axis=2)
        cdf[:, :, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def n_agents(self) -> int:
        return self.local_costs.shape[0]

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def nonterminal_states(self) -> list[int]:
        return [s for s in range(self.n_states) if s not in self.terminal_states]

    @property
    def global_cost(self) -> np.ndarray:
        """Network-average cost ``c(x, u) = mean_i c^i(x, u)``."""
        return self.local_costs.mean(axis=0)

    def action_index(self, action) -> int:
        return self.actions.index(tuple(action))

    def state_index(self, label) -> int:
        return self.state_labels.index(label)

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self._cdf[s, a], rng.random(), side="right"))

    def fingerprint(self) -> str:
        """Stable digest of the model contents, used to match runs."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.transition).tobytes())
        h.update(np.ascontiguousarray(self.local_costs).tobytes())
        h.update(repr((self.discount, self.actions, sorted(self.terminal_states))).encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "states": list(self.state_labels),
            "terminal_states": [self.state_labels[s] for s in sorted(self.terminal_states)],
            "actions": [list(a) if isinstance(a, tuple) else a for a in self.actions],
            "discount": self.discount,
            "transition": self.transition.tolist(),
            "local_costs": self.local_costs.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MdpModel":
        labels = tuple(doc["states"])
        return cls(
            transition=np.asarray(doc["transition"], dtype=float),
            local_costs=np.asarray(doc["local_costs"], dtype=float),
            discount=float(doc["discount"]),
            actions=tuple(tuple(a) if isinstance(a, list) else a for a in doc["actions"]),
            terminal_states=frozenset(labels.index(x) for x in doc.get("terminal_states", [])),
            state_labels=labels,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MdpModel":
        return cls.from_dict(json.loads(text))


def build_task_assignment_mdp(n: int, rng: np.random.Generator | int, discount: float = 0.9,
                              n_tasks: int = 6) -> MdpModel:
    """Sequential robot-pair task assignment.

    States ``1..n_tasks`` are the current task, ``n_tasks + 1`` is completion.
    Actions are ordered robot pairs ``(i, j)``. From task ``x`` the pair
    ``(i, j)`` advances with probability ``|i-j| / (|i-j| + x)`` and otherwise
    retries the same task. Only robot ``i`` pays for ``(i, j)``; its cost
    ``delta_ij(x)`` is drawn once from ``U[0, 50]``.
    """
    if n < 2:
        raise ValueError(f"need at least two agents, got n={n}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    actions = tuple((i, j) for i in range(n) for j in range(n) if i != j)
    n_states = n_tasks + 1
    terminal = n_tasks
    p = np.zeros((n_states, len(actions), n_states))
    for s in range(n_tasks):
        x = s + 1
        for a, (i, j) in enumerate(actions):
            gap = abs(i - j)
            p[s, a, s + 1] = gap / (gap + x)
            p[s, a, s] = x / (gap + x)
    p[terminal, :, terminal] = 1.0

    delta = rng.uniform(0.0, COST_HIGH, size=(n_tasks, len(actions)))
    costs = np.zeros((n, n_states, len(actions)))
    for a, (i, _) in enumerate(actions):
        costs[i, :n_tasks, a] = delta[:, a]
    return MdpModel(transition=p, local_costs=costs, discount=discount, actions=actions,
                    terminal_states=frozenset({terminal}))


# --- trajectories ------------------------------------------------------------

Policy = Callable[[MdpModel, int, np.random.Generator], int]


def uniform_policy(model: MdpModel, state: int, rng: np.random.Generator) -> int:
    return min(int(rng.random() * model.n_actions), model.n_actions - 1)


@dataclass
class TrajectoryState:
    current_state: int
    step_index: int = 0
    episode_index: int = 0


@dataclass(frozen=True)
class Transition:
    x: int
    u: int
    costs: np.ndarray = field(repr=False)
    x_next: int


RESTART_MODES = ("exploring", "initial")


def restart_state(model: MdpModel, mode: str, rng: np.random.Generator) -> int:
    if mode == "initial":
        return model.nonterminal_states[0]
    if mode == "exploring":
        candidates = model.nonterminal_states
        return candidates[min(int(rng.random() * len(candidates)), len(candidates) - 1)]
    raise ValueError(f"unknown restart mode {mode!r}; expected one of {RESTART_MODES}")


def start_trajectory(model: MdpModel, rng: np.random.Generator,
                     restart: str = "exploring") -> TrajectoryState:
    return TrajectoryState(current_state=restart_state(model, restart, rng))


def step(model: MdpModel, traj: TrajectoryState, rng: np.random.Generator,
         policy: Policy = uniform_policy, restart: str = "exploring",
         cost_noise: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
         ) -> Transition:
    """Sample one controlled transition and advance ``traj``.

    When the next state is terminal the trajectory is moved to a fresh start
    state (per ``restart``) so the following call begins a new episode; the
    returned transition still reports the terminal ``x_next``.
    """
    x = traj.current_state
    u = policy(model, x, rng)
    x_next = model.sample_next(x, u, rng)
    costs = model.local_costs[:, x, u]
    if cost_noise is not None:
        costs = cost_noise(costs, rng)
    traj.step_index += 1
    if x_next in model.terminal_states:
        traj.episode_index += 1
        traj.current_state = restart_state(model, restart, rng)
    else:
        traj.current_state = x_next
    return Transition(x=x, u=u, costs=costs, x_next=x_next)


def sample_trajectory(model: MdpModel, horizon: int, rng: np.random.Generator,
                      policy: Policy = uniform_policy, restart: str = "exploring") -> np.ndarray:
    """Array of shape ``(horizon, 3)`` with rows ``(x, u, x_next)``."""
    traj = start_trajectory(model, rng, restart)
    out = np.empty((horizon, 3), dtype=np.int64)
    for t in range(horizon):
        tr = step(model, traj, rng, policy, restart)
        out[t] = (tr.x, tr.u, tr.x_next)
    return out


def visit_counts(log, n_states: int, n_actions: int) -> np.ndarray:
    """Per-pair visit counts from a log of ``(x, u, ...)`` rows."""
    counts = np.zeros((n_states, n_actions), dtype=np.int64)
    arr = np.asarray(log, dtype=np.int64).reshape(-1, np.shape(log)[-1] if len(log) else 2)
    if len(arr):
        np.add.at(counts, (arr[:, 0], arr[:, 1]), 1)
    return counts


def visit_times(log, x: int, u: int) -> np.ndarray:
    """Sampling instants of the pair ``(x, u)``: entry ``k`` is its ``(k+1)``-th visit."""
    arr = np.asarray(log, dtype=np.int64)
    if not len(arr):
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero((arr[:, 0] == x) & (arr[:, 1] == u))
