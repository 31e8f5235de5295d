"""Exact optimal values and policies by value iteration on the global-cost MDP."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mdp import MdpModel

TIE_TOL = 1e-9


def bellman_operator(model: MdpModel, q: np.ndarray) -> np.ndarray:
    return model.global_cost + model.discount * model.transition @ q.min(axis=1)


def bellman_residual(model: MdpModel, q: np.ndarray) -> float:
    """Sup-norm distance between ``q`` and its Bellman image."""
    q = np.asarray(q, dtype=float)
    return float(np.max(np.abs(q - bellman_operator(model, q))))


def greedy_policy(q: np.ndarray, tol: float = TIE_TOL) -> list[frozenset]:
    """Per state, every action within ``tol`` of the minimum Q-value."""
    q = np.asarray(q, dtype=float)
    best = q.min(axis=1, keepdims=True)
    return [frozenset(int(a) for a in np.flatnonzero(row <= b + tol))
            for row, b in zip(q, best[:, 0])]


@dataclass(frozen=True, eq=False)
class OptimalSolution:
    q_star: np.ndarray
    v_star: np.ndarray
    pi_star: list
    iterations: int

    def to_dict(self, model: MdpModel) -> dict:
        def label(a):
            act = model.actions[a]
            return list(act) if isinstance(act, tuple) else act

        return {
            "q_star": self.q_star.tolist(),
            "v_star": {str(model.state_labels[s]): float(v) for s, v in enumerate(self.v_star)},
            "pi_star": {str(model.state_labels[s]): [label(a) for a in sorted(acts)]
                        for s, acts in enumerate(self.pi_star)},
            "iterations": self.iterations,
        }

    def to_json(self, model: MdpModel) -> str:
        return json.dumps(self.to_dict(model))


def value_iteration(model: MdpModel, tol: float = 1e-10, max_iter: int = 1_000_000) -> OptimalSolution:
    """Synchronous value iteration on Q from zero.

    Stops once successive iterates differ by less than ``tol (1-g)/g`` in
    sup-norm, which bounds the distance to the fixed point by ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gamma = model.discount
    threshold = tol * (1.0 - gamma) / gamma
    q = np.zeros((model.n_states, model.n_actions))
    for it in range(1, max_iter + 1):
        q_next = bellman_operator(model, q)
        delta = np.max(np.abs(q_next - q))
        q = q_next
        if delta < threshold:
            break
    else:
        raise RuntimeError("value iteration did not converge")
    q.setflags(write=False)
    return OptimalSolution(q_star=q, v_star=q.min(axis=1), pi_star=greedy_policy(q), iterations=it)
