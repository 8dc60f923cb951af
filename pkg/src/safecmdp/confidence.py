"""
Visit counts, empirical transition model and empirical-Bernstein
confidence radii, plus the cost transformations built on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cmdp import ContractViolation, EpisodeTrace, Policy, TabularCmdp, occupancy_of_policy


@dataclass(frozen=True, eq=False)
class ConfidenceState:
    """Counts collected before episode ``episode``.

    ``planned_episodes`` and ``delta`` fix the log term
    ``L = log(2 S A H K / delta)``. ``bonus_scale`` multiplies every
    radius; 1.0 is the exact Bernstein radius and anything else is an
    ablation knob.
    """

    counts: np.ndarray              # n(s, a, s')
    horizon: int
    planned_episodes: int
    delta: float
    episode: int = 1
    bonus_scale: float = 1.0

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 3 or counts.shape[0] != counts.shape[2]:
            raise ContractViolation("counts must be (S, A, S)")
        if np.any(counts < 0):
            raise ContractViolation("counts must be nonnegative")
        if not 0 < self.delta < 1:
            raise ContractViolation("delta must lie in (0, 1)")
        if self.planned_episodes < 1 or self.horizon < 1:
            raise ContractViolation("planned episodes and horizon must be positive")
        if self.bonus_scale < 0:
            raise ContractViolation("bonus_scale must be nonnegative")

    @classmethod
    def empty(cls, num_states: int, num_actions: int, horizon: int, planned_episodes: int,
              delta: float, bonus_scale: float = 1.0) -> "ConfidenceState":
        return cls(np.zeros((num_states, num_actions, num_states), dtype=np.int64),
                   horizon, planned_episodes, delta, 1, bonus_scale)

    @property
    def num_states(self) -> int:
        return self.counts.shape[0]

    @property
    def num_actions(self) -> int:
        return self.counts.shape[1]

    @property
    def visits(self) -> np.ndarray:
        """n(s, a)."""
        return self.counts.sum(axis=2)

    @property
    def log_term(self) -> float:
        S, A = self.num_states, self.num_actions
        return math.log(2 * S * A * self.horizon * self.planned_episodes / self.delta)

    def updated(self, trace: EpisodeTrace) -> "ConfidenceState":
        return update(self, trace)


@dataclass(frozen=True, eq=False)
class BonusTable:
    beta: np.ndarray        # beta(s, a, s')
    beta_bar: np.ndarray    # sum_{s'} beta(s, a, s')


def update(state: ConfidenceState, trace: EpisodeTrace) -> ConfidenceState:
    """Add one episode's transitions to the counts."""
    if len(trace) != state.horizon:
        raise ContractViolation(f"trace length {len(trace)} != horizon {state.horizon}")
    counts = np.array(state.counts)
    np.add.at(counts, (trace.states[:-1], trace.actions, trace.states[1:]), 1)
    return replace(state, counts=counts, episode=state.episode + 1)


def empirical_model(state: ConfidenceState) -> np.ndarray:
    """``n(s,a,s') / max(n(s,a), 1)``; unvisited pairs give all-zero rows."""
    n = state.visits
    return state.counts / np.maximum(n, 1)[:, :, None]


def bonuses(state: ConfidenceState) -> BonusTable:
    """Empirical-Bernstein radius for every transition entry.

    ``beta = sqrt(4 p(1-p) L / max(n,1)) + 14 L / (3 max(n,1))`` with
    ``p`` the plug-in estimate.
    """
    L = state.log_term
    n = np.maximum(state.visits, 1)[:, :, None].astype(float)
    p = empirical_model(state)
    beta = np.sqrt(4.0 * p * (1.0 - p) * L / n) + 14.0 * L / (3.0 * n)
    beta = state.bonus_scale * beta
    return BonusTable(beta, beta.sum(axis=2))


def pessimistic_cost(constraint_cost, bonus: BonusTable, horizon: int) -> np.ndarray:
    """``c + H * beta_bar``, not clipped."""
    return np.asarray(constraint_cost, dtype=float) + horizon * bonus.beta_bar


def optimistic_cost(objective_cost, bonus: BonusTable, horizon: int, budget: float,
                    baseline_value: float) -> np.ndarray:
    """``r - H^2 / (budget - baseline_value) * beta_bar``, not clipped."""
    gap = budget - baseline_value
    if gap <= 0:
        raise ContractViolation(f"baseline value {baseline_value} must be strictly below budget {budget}")
    return np.asarray(objective_cost, dtype=float) - horizon ** 2 / gap * bonus.beta_bar


def epsilon_diag(bonus, model: TabularCmdp, policy: Policy, transitions=None) -> float:
    """``H * E[sum_h beta_bar(s_h, a_h)]`` under ``policy`` and ``transitions``."""
    if isinstance(bonus, ConfidenceState):
        bonus = bonuses(bonus)
    w = occupancy_of_policy(model, policy, transitions).w
    return model.horizon * float(np.sum(w * bonus.beta_bar))


def covers(state: ConfidenceState, transitions, bonus: BonusTable | None = None) -> bool:
    """True when every entry of ``transitions`` lies inside the confidence box."""
    bonus = bonuses(state) if bonus is None else bonus
    return bool(np.all(np.abs(np.asarray(transitions) - empirical_model(state)) <= bonus.beta))


def oracle_state(model: TabularCmdp, samples_per_pair: int, planned_episodes: int = 1,
                 delta: float = 0.1, bonus_scale: float = 1.0) -> ConfidenceState:
    """Counts that reproduce ``model.transitions`` exactly after normalization.

    Requires ``samples_per_pair * P`` to be integral (within 1e-6).
    """
    raw = samples_per_pair * model.transitions
    counts = np.rint(raw)
    if np.max(np.abs(counts - raw)) > 1e-6:
        raise ContractViolation("samples_per_pair * P must be integral for oracle counts")
    return ConfidenceState(counts.astype(np.int64), model.horizon, planned_episodes, delta,
                           bonus_scale=bonus_scale)
