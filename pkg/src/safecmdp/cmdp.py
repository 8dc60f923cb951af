"""
Tabular finite-horizon CMDP: model container, exact policy evaluation,
occupancy measures and episode sampling.

Array conventions used across the package:

    transitions      P[s, a, s']           shape (S, A, S)
    step transitions P[h, s, a, s']        shape (H, S, A, S)
    cost tables      l[s, a]               shape (S, A)   (or (H, S, A))
    policies         pi[h, s, a]           shape (H, S, A)
    occupancies      w[h, s, a]            shape (H, S, A)
    values           V[h, s], h = 0..H     shape (H + 1, S), V[H] = 0

Steps are 0-based in code; step ``h`` here is step ``h + 1`` in the usual
1-based notation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PROB_TOL = 1e-8
ARITH_TOL = 1e-9


class ContractViolation(ValueError):
    """Raised when an input breaks a documented precondition."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularCmdp:
    """Finite-horizon CMDP with a fixed initial state.

    Costs are minimized. Both cost tables live in [0, 1] and the
    constraint requires the expected cumulative constraint cost to stay
    below ``budget``.
    """

    transitions: np.ndarray
    objective_cost: np.ndarray
    constraint_cost: np.ndarray
    horizon: int
    budget: float
    initial_state: int = 0
    name: str = "cmdp"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        P = _frozen(self.transitions)
        r = _frozen(self.objective_cost)
        c = _frozen(self.constraint_cost)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "objective_cost", r)
        object.__setattr__(self, "constraint_cost", c)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "budget", float(self.budget))
        object.__setattr__(self, "initial_state", int(self.initial_state))

        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ContractViolation(f"transitions must be (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if r.shape != (S, A) or c.shape != (S, A):
            raise ContractViolation("cost tables must be shaped (S, A)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > ARITH_TOL:
            raise ContractViolation("transition rows must be nonnegative and sum to 1")
        for name, table in (("objective", r), ("constraint", c)):
            if np.any(table < 0) or np.any(table > 1):
                raise ContractViolation(f"{name} cost must lie in [0, 1]")
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        if not 0 < self.budget <= self.horizon:
            raise ContractViolation(f"budget must lie in (0, H], got {self.budget}")
        if not 0 <= self.initial_state < S:
            raise ContractViolation("initial state out of range")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.num_states, self.num_actions, self.horizon

    def with_budget(self, budget: float) -> "TabularCmdp":
        return TabularCmdp(self.transitions, self.objective_cost, self.constraint_cost,
                           self.horizon, budget, self.initial_state, self.name, dict(self.metadata))

    def with_transitions(self, transitions) -> "TabularCmdp":
        return TabularCmdp(transitions, self.objective_cost, self.constraint_cost,
                           self.horizon, self.budget, self.initial_state, self.name, dict(self.metadata))


@dataclass(frozen=True, eq=False)
class Policy:
    """Non-stationary randomized policy ``probs[h, s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        pi = _frozen(self.probs)
        object.__setattr__(self, "probs", pi)
        if pi.ndim != 3:
            raise ContractViolation(f"policy must be (H, S, A), got {pi.shape}")
        if np.any(pi < -ARITH_TOL) or np.max(np.abs(pi.sum(axis=2) - 1.0)) > ARITH_TOL:
            raise ContractViolation("policy rows must be nonnegative and sum to 1")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "Policy":
        """Build from an integer table ``actions[h, s]``."""
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(num_actions)[actions])

    def allclose(self, other: "Policy", atol: float = PROB_TOL) -> bool:
        return self.shape == other.shape and np.allclose(self.probs, other.probs, atol=atol, rtol=0)


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """State-action occupancy ``w[h, s, a]``: probability of visiting (s, a) at step h."""

    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w))
        if self.w.ndim != 3:
            raise ContractViolation("occupancy must be (H, S, A)")

    def total(self, cost) -> float:
        """Linear value ``sum_{h,s,a} w[h,s,a] * cost[s,a]``."""
        cost = np.asarray(cost, dtype=float)
        return float(np.sum(self.w * cost))


@dataclass(frozen=True, eq=False)
class EpisodeTrace:
    """One sampled episode.

    ``states`` has H + 1 entries: the H visited states followed by the
    successor observed after the last step.
    """

    states: np.ndarray
    actions: np.ndarray
    objective_costs: np.ndarray
    constraint_costs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states, int))
        object.__setattr__(self, "actions", _frozen(self.actions, int))
        object.__setattr__(self, "objective_costs", _frozen(self.objective_costs))
        object.__setattr__(self, "constraint_costs", _frozen(self.constraint_costs))
        if len(self.states) != len(self.actions) + 1:
            raise ContractViolation("trace needs one more state than actions")

    def __len__(self) -> int:
        return len(self.actions)

    def transitions(self):
        """Yield ``(s, a, s')`` for every step."""
        for h in range(len(self)):
            yield int(self.states[h]), int(self.actions[h]), int(self.states[h + 1])


def step_transitions(model: TabularCmdp, transitions=None) -> np.ndarray:
    """Return transitions indexed by step, shape (H, S, A, S).

    ``transitions`` overrides the model's own and may be stationary
    (S, A, S) or step-dependent (H, S, A, S).
    """
    S, A, H = model.dims
    P = model.transitions if transitions is None else np.asarray(transitions, dtype=float)
    if P.shape == (S, A, S):
        return np.broadcast_to(P, (H, S, A, S))
    if P.shape == (H, S, A, S):
        return P
    raise ContractViolation(f"transitions shape {P.shape} does not match model {(S, A, S)}")


def _step_costs(model: TabularCmdp, cost) -> np.ndarray:
    S, A, H = model.dims
    cost = np.asarray(cost, dtype=float)
    if cost.shape == (S, A):
        return np.broadcast_to(cost, (H, S, A))
    if cost.shape == (H, S, A):
        return cost
    raise ContractViolation(f"cost table shape {cost.shape} does not match model {(S, A)}")


def _check_policy(model: TabularCmdp, policy: Policy) -> None:
    if policy.shape != (model.horizon, model.num_states, model.num_actions):
        raise ContractViolation(
            f"policy shape {policy.shape} does not match model "
            f"{(model.horizon, model.num_states, model.num_actions)}")


def evaluate_policy(model: TabularCmdp, policy: Policy, cost, transitions=None) -> np.ndarray:
    """Exact value table ``V[h, s]`` by backward recursion, shape (H + 1, S).

    ``V[0, model.initial_state]`` is the value of the policy.
    """
    _check_policy(model, policy)
    S, A, H = model.dims
    P = step_transitions(model, transitions)
    costs = _step_costs(model, cost)
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q = costs[h] + P[h] @ V[h + 1]
        V[h] = np.sum(policy.probs[h] * Q, axis=1)
    return V


def policy_value(model: TabularCmdp, policy: Policy, cost, transitions=None) -> float:
    return float(evaluate_policy(model, policy, cost, transitions)[0, model.initial_state])


def occupancy_of_policy(model: TabularCmdp, policy: Policy, transitions=None) -> OccupancyMeasure:
    """Forward recursion for the state-action occupancy of ``policy``."""
    _check_policy(model, policy)
    S, A, H = model.dims
    P = step_transitions(model, transitions)
    w = np.zeros((H, S, A))
    state_mass = np.zeros(S)
    state_mass[model.initial_state] = 1.0
    for h in range(H):
        w[h] = state_mass[:, None] * policy.probs[h]
        state_mass = np.einsum("sa,sat->t", w[h], P[h])
    return OccupancyMeasure(w)


def policy_from_occupancy(occupancy: OccupancyMeasure) -> Policy:
    """Normalize each occupancy row; rows with zero mass become uniform."""
    w = np.asarray(occupancy.w if isinstance(occupancy, OccupancyMeasure) else occupancy, dtype=float)
    if np.any(w < -ARITH_TOL):
        raise ContractViolation("occupancy has negative entries")
    w = np.clip(w, 0.0, None)
    A = w.shape[2]
    mass = w.sum(axis=2, keepdims=True)
    visited = mass > 0
    probs = np.where(visited, w / np.where(visited, mass, 1.0), 1.0 / A)
    return Policy(probs)


def occupancy_residual(model: TabularCmdp, w, transitions=None) -> float:
    """Largest violation of the occupancy polytope constraints.

    Covers flow conservation, the initial-state condition and
    nonnegativity. Zero (up to rounding) iff ``w`` is the occupancy of
    some policy under the given transitions.
    """
    w = np.asarray(w.w if isinstance(w, OccupancyMeasure) else w, dtype=float)
    S, A, H = model.dims
    P = step_transitions(model, transitions)
    start = np.zeros(S)
    start[model.initial_state] = 1.0
    worst = np.max(np.abs(w[0].sum(axis=1) - start))
    for h in range(1, H):
        inflow = np.einsum("sa,sat->t", w[h - 1], P[h - 1])
        worst = max(worst, np.max(np.abs(w[h].sum(axis=1) - inflow)))
    return float(max(worst, -np.min(w)))


def backward_induction(model: TabularCmdp, cost, transitions=None) -> tuple[Policy, np.ndarray]:
    """Unconstrained optimal deterministic policy minimizing ``cost``.

    Ties go to the lowest action index.
    """
    S, A, H = model.dims
    P = step_transitions(model, transitions)
    costs = _step_costs(model, cost)
    V = np.zeros((H + 1, S))
    actions = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q = costs[h] + P[h] @ V[h + 1]
        actions[h] = np.argmin(Q, axis=1)
        V[h] = Q[np.arange(S), actions[h]]
    return Policy.deterministic(actions, A), V


def sample_episode(model: TabularCmdp, policy: Policy, rng: np.random.Generator,
                   transitions=None) -> EpisodeTrace:
    """Roll out one episode from the initial state."""
    _check_policy(model, policy)
    S, A, H = model.dims
    P = step_transitions(model, transitions)
    states = np.empty(H + 1, dtype=int)
    actions = np.empty(H, dtype=int)
    states[0] = model.initial_state
    # inverse-CDF sampling keeps exactly two uniforms per step
    u = rng.random((H, 2))
    for h in range(H):
        s = states[h]
        a = _draw(policy.probs[h, s], u[h, 0])
        actions[h] = a
        states[h + 1] = _draw(P[h, s, a], u[h, 1])
    idx = (states[:-1], actions)
    return EpisodeTrace(states, actions, model.objective_cost[idx], model.constraint_cost[idx])


def _draw(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    # guard against u * total landing exactly on the last boundary
    return min(i, len(probs) - 1)


def value_difference_check(model_a: TabularCmdp, model_b: TabularCmdp, policy: Policy, cost,
                           transitions_a=None, transitions_b=None) -> float:
    """Residual of the value-difference identity between two models.

    Computes ``|V(P) - V(P') - E_{pi,P'}[sum_h (P - P')(.|s_h,a_h) . V^{h+1}(.; P)]|``
    with the expectation taken exactly through the occupancy of
    ``policy`` under ``P'`` (model_b).
    """
    P = step_transitions(model_a, transitions_a)
    Q = step_transitions(model_b, transitions_b)
    V_a = evaluate_policy(model_a, policy, cost, transitions_a)
    V_b = evaluate_policy(model_b, policy, cost, transitions_b)
    w_b = occupancy_of_policy(model_b, policy, transitions_b).w
    H = model_a.horizon
    expansion = 0.0
    for h in range(H):
        gap = (P[h] - Q[h]) @ V_a[h + 1]
        expansion += float(np.sum(w_b[h] * gap))
    s1 = model_a.initial_state
    return abs(V_a[0, s1] - V_b[0, s1] - expansion)


def sample_policy(rng: np.random.Generator, horizon: int, num_states: int, num_actions: int,
                  concentration: Optional[float] = None) -> Policy:
    """Random stochastic policy, handy for property tests."""
    alpha = 1.0 if concentration is None else concentration
    probs = rng.dirichlet(np.full(num_actions, alpha), size=(horizon, num_states))
    return Policy(probs)
