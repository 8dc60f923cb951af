"""
Episode-level policy selection.

* ``opsrl_select``   optimistic objective, pessimistic constraint, safe
                     baseline whenever that problem is infeasible
* ``optcmdp_select`` optimistic CMDP over the confidence set (may be unsafe)
* ``ucrl_select``    optimistic unconstrained planning
* fixed baseline     always plays the given policy

Agents only ever see the known parts of the CMDP (costs, horizon, budget,
initial state) through ``KnownTask``; transitions come from the counts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .cmdp import ContractViolation, Policy, TabularCmdp, policy_value
from .confidence import (BonusTable, ConfidenceState, bonuses, empirical_model, optimistic_cost,
                         pessimistic_cost)
from .lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, LpError, extended_value_iteration, plan_cmdp,
                 solve_extended)

log = logging.getLogger(__name__)

OPSRL = "opsrl"
OPTCMDP = "optcmdp"
UCRL = "ucrl"
BASELINE = "baseline"
AGENT_KINDS = (OPSRL, OPTCMDP, UCRL, BASELINE)

SKIPPED = "skipped"
SCREEN_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class KnownTask:
    """What the learner knows up front: everything except the transitions."""

    objective_cost: np.ndarray
    constraint_cost: np.ndarray
    horizon: int
    budget: float
    initial_state: int

    @classmethod
    def from_model(cls, model: TabularCmdp) -> "KnownTask":
        return cls(model.objective_cost, model.constraint_cost, model.horizon, model.budget,
                   model.initial_state)

    @property
    def dims(self) -> tuple[int, int, int]:
        S, A = self.objective_cost.shape
        return S, A, self.horizon


@dataclass(frozen=True, eq=False)
class AgentConfig:
    kind: str
    baseline_policy: Optional[Policy] = None
    baseline_value: Optional[float] = None
    k0: Union[str, int] = "adaptive"
    delta: float = 0.1
    episodes: int = 1000
    bonus_scale: float = 1.0
    lp_method: str = "highs"
    ucrl_solver: str = "evi"
    prescreen: bool = True

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ContractViolation(f"unknown agent kind {self.kind!r}")
        if self.kind in (OPSRL, BASELINE) and self.baseline_policy is None:
            raise ContractViolation(f"{self.kind} needs a baseline policy")
        if self.kind == OPSRL and self.baseline_value is None:
            raise ContractViolation("opsrl needs the baseline's constraint value")
        if not (self.k0 == "adaptive" or (isinstance(self.k0, int) and self.k0 >= 0)):
            raise ContractViolation(f"k0 must be 'adaptive' or a nonnegative int, got {self.k0!r}")


@dataclass(eq=False)
class SelectionOutcome:
    policy: Policy
    used_baseline: bool
    lp_status: str
    value_r: float = float("nan")     # selected objective value under the selected model
    value_c: float = float("nan")     # constraint value V_c under the selected model
    transitions: Optional[np.ndarray] = None
    screened: bool = False
    extras: dict = field(default_factory=dict)


def _baseline_outcome(policy: Policy, status: str, screened: bool = False, **extras) -> SelectionOutcome:
    return SelectionOutcome(policy, True, status, screened=screened, extras=extras)


def opsrl_select(conf: ConfidenceState, task: KnownTask, baseline_policy: Policy, baseline_value: float,
                 k: Optional[int] = None, k0: Union[str, int] = "adaptive", lp_method: str = "highs",
                 prescreen: bool = True, bonus: Optional[BonusTable] = None) -> SelectionOutcome:
    """Pick the episode policy by solving the optimistic-pessimistic problem.

    Falls back to the baseline while that problem is infeasible, and for
    the first ``k0`` episodes when ``k0`` is an integer. With
    ``prescreen`` an exact extended value iteration first checks whether
    the smallest reachable pessimistic constraint value already exceeds
    the budget; if so the LP is not built.
    """
    k = conf.episode if k is None else k
    if k0 != "adaptive" and k <= k0:
        return _baseline_outcome(baseline_policy, SKIPPED)

    S, A, H = task.dims
    bonus = bonuses(conf) if bonus is None else bonus
    c_k = pessimistic_cost(task.constraint_cost, bonus, H)
    r_k = optimistic_cost(task.objective_cost, bonus, H, task.budget, baseline_value)
    center = empirical_model(conf)

    if prescreen:
        floor, _, _ = extended_value_iteration(center, bonus.beta, c_k, H, task.initial_state)
        if floor > task.budget + SCREEN_TOL * max(1.0, task.budget):
            return _baseline_outcome(baseline_policy, INFEASIBLE, screened=True, min_pessimistic_value=floor)

    sol = solve_extended(center, bonus.beta, r_k, c_k, task.budget, (S, A, H), task.initial_state, lp_method)
    if sol.status == INFEASIBLE:
        return _baseline_outcome(baseline_policy, INFEASIBLE)
    if sol.status == UNBOUNDED:
        raise LpError("optimistic-pessimistic LP reported unbounded; its feasible set is bounded")
    return _selected(task, sol, r_k)


def optcmdp_select(conf: ConfidenceState, task: KnownTask, lp_method: str = "highs") -> SelectionOutcome:
    """Optimistic CMDP: best (policy, model) in the confidence set meeting the budget."""
    S, A, H = task.dims
    bonus = bonuses(conf)
    center = empirical_model(conf)
    sol = solve_extended(center, bonus.beta, task.objective_cost, task.constraint_cost, task.budget,
                         (S, A, H), task.initial_state, lp_method, keep_lp=True)
    if sol.status != OPTIMAL:
        raise LpError(f"optimistic CMDP LP returned {sol.status} at episode {conf.episode}; "
                      f"visits per pair:\n{conf.visits}")
    return _selected(task, sol, task.objective_cost)


def ucrl_select(conf: ConfidenceState, task: KnownTask, method: str = "evi",
                lp_method: str = "highs") -> SelectionOutcome:
    """Optimistic planning with the constraint dropped.

    ``method="lp"`` solves the extended LP without its budget row;
    ``method="evi"`` reaches the same optimal value by extended value
    iteration and is much cheaper.
    """
    S, A, H = task.dims
    bonus = bonuses(conf)
    center = empirical_model(conf)
    if method == "evi":
        value, policy, transitions = extended_value_iteration(center, bonus.beta, task.objective_cost, H,
                                                              task.initial_state)
        return _evaluated(task, policy, transitions, value, OPTIMAL)
    if method != "lp":
        raise ValueError(f"unknown ucrl method {method!r}")
    sol = solve_extended(center, bonus.beta, task.objective_cost, task.constraint_cost, None,
                         (S, A, H), task.initial_state, lp_method)
    if sol.status != OPTIMAL:
        raise LpError(f"unconstrained extended LP returned {sol.status}")
    return _selected(task, sol, task.objective_cost)


def _shell(task: KnownTask) -> TabularCmdp:
    # placeholder transitions only satisfy the container's checks; callers pass the real ones explicitly
    S, A, H = task.dims
    return TabularCmdp(np.full((S, A, S), 1.0 / S), task.objective_cost, task.constraint_cost, H,
                       task.budget, task.initial_state)


def _evaluated(task: KnownTask, policy: Policy, transitions: np.ndarray, value_r: float,
               status: str) -> SelectionOutcome:
    shell = _shell(task)
    value_c = policy_value(shell, policy, task.constraint_cost, transitions)
    return SelectionOutcome(policy, False, status, value_r, value_c, transitions)


def _selected(task: KnownTask, sol, objective) -> SelectionOutcome:
    shell = _shell(task)
    value_r = policy_value(shell, sol.policy, objective, sol.transitions)
    value_c = policy_value(shell, sol.policy, task.constraint_cost, sol.transitions)
    out = SelectionOutcome(sol.policy, False, OPTIMAL, value_r, value_c, sol.transitions)
    out.extras["lp_objective"] = sol.objective_value
    return out


def make_baseline(model: TabularCmdp, target: float, method: str = "highs") -> tuple[Policy, float]:
    """Optimal policy under the stricter budget ``target`` and its exact constraint value."""
    if not 0 < target <= model.budget:
        raise ContractViolation(f"baseline target {target} must lie in (0, {model.budget}]")
    policy, _ = plan_cmdp(model, budget=target, method=method)
    return policy, policy_value(model, policy, model.constraint_cost)


class Agent:
    """Stateless dispatcher from an ``AgentConfig`` to the matching selection rule."""

    def __init__(self, config: AgentConfig, task: KnownTask):
        self.config = config
        self.task = task

    def select(self, conf: ConfidenceState) -> SelectionOutcome:
        cfg = self.config
        if cfg.kind == OPSRL:
            return opsrl_select(conf, self.task, cfg.baseline_policy, cfg.baseline_value, conf.episode,
                                cfg.k0, cfg.lp_method, cfg.prescreen)
        if cfg.kind == OPTCMDP:
            return optcmdp_select(conf, self.task, cfg.lp_method)
        if cfg.kind == UCRL:
            return ucrl_select(conf, self.task, cfg.ucrl_solver, cfg.lp_method)
        return _baseline_outcome(cfg.baseline_policy, SKIPPED)
