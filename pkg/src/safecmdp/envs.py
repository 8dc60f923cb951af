"""
Benchmark CMDPs: media streaming control, single-product inventory
control, and a seeded random generator for property tests.
"""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .cmdp import ContractViolation, TabularCmdp

FAST, SLOW = 0, 1


@dataclass(frozen=True)
class MediaParams:
    """Buffer of ``buffer_cap`` packets fed by a fast or slow Bernoulli server.

    ``playback_rate`` has no published value; 0.5 is this package's default.
    """

    buffer_cap: int = 20
    fast_rate: float = 0.9
    slow_rate: float = 0.1
    playback_rate: float = 0.5
    horizon: int = 10
    budget: float | None = None        # defaults to horizon / 2
    initial_state: int = 0

    def __post_init__(self):
        if not 0 <= self.slow_rate < self.fast_rate <= 1:
            raise ContractViolation("need 0 <= slow_rate < fast_rate <= 1")
        if not 0 <= self.playback_rate <= 1:
            raise ContractViolation("playback_rate must lie in [0, 1]")
        if self.buffer_cap < 1:
            raise ContractViolation("buffer_cap must be >= 1")


@dataclass(frozen=True)
class InventoryParams:
    """Weekly single-product inventory with lost sales.

    The published demand weights sum to 0.8 over five values; they are
    renormalized over demands 0..4.
    """

    capacity: int = 6
    horizon: int = 7
    demand_weights: Sequence[float] = (0.3, 0.2, 0.2, 0.05, 0.05)
    revenue_unit: float = 8.0
    purchase_fixed: float = 4.0
    purchase_var: float = 2.0
    holding_coeff: float = 1.0
    budget: float | None = None        # defaults to horizon / 2
    initial_state: int = 0

    def __post_init__(self):
        if self.capacity < 1 or len(self.demand_weights) == 0:
            raise ContractViolation("capacity and demand support must be nonempty")
        if any(w < 0 for w in self.demand_weights) or sum(self.demand_weights) <= 0:
            raise ContractViolation("demand weights must be nonnegative with positive total")

    @property
    def demand_distribution(self) -> np.ndarray:
        w = np.asarray(self.demand_weights, dtype=float)
        return w / w.sum()


def build_media(params: MediaParams = MediaParams()) -> TabularCmdp:
    N = params.buffer_cap
    S, A = N + 1, 2
    P = np.zeros((S, A, S))
    rates = (params.fast_rate, params.slow_rate)
    g = params.playback_rate
    for s in range(S):
        for a in range(A):
            for arrive, p_a in ((1, rates[a]), (0, 1 - rates[a])):
                for leave, p_b in ((1, g), (0, 1 - g)):
                    P[s, a, min(max(0, s + arrive - leave), N)] += p_a * p_b
    r = np.zeros((S, A))
    r[0, :] = 1.0
    c = np.zeros((S, A))
    c[:, FAST] = 1.0
    H = params.horizon
    budget = H / 2 if params.budget is None else params.budget
    return TabularCmdp(P, r, c, H, budget, params.initial_state, "media",
                       metadata={"params": asdict(params), "actions": ["fast", "slow"]})


def legal_action(capacity: int, s: int, a: int) -> int:
    """Illegal orders (overflowing the store) are treated as the largest legal order."""
    return min(a, capacity - s)


def build_inventory(params: InventoryParams = InventoryParams()) -> TabularCmdp:
    N = params.capacity
    S = A = N + 1
    demand = params.demand_distribution
    P = np.zeros((S, A, S))
    revenue = np.zeros((S, A))
    cost = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            b = legal_action(N, s, a)
            stock = s + b
            for d, p in enumerate(demand):
                nxt = max(0, stock - d)
                P[s, a, nxt] += p
                if nxt > 0:
                    revenue[s, a] += p * params.revenue_unit * (stock - nxt)
            cost[s, a] = params.purchase_fixed + params.purchase_var * b + params.holding_coeff * s

    legal = np.array([[a <= N - s for a in range(A)] for s in range(S)])
    r_lo, r_hi = revenue[legal].min(), revenue[legal].max()
    c_lo, c_hi = cost[legal].min(), cost[legal].max()
    r_norm = (revenue - r_lo) / (r_hi - r_lo) if r_hi > r_lo else np.zeros_like(revenue)
    c_norm = (cost - c_lo) / (c_hi - c_lo) if c_hi > c_lo else np.zeros_like(cost)
    H = params.horizon
    budget = H / 2 if params.budget is None else params.budget
    params_dict = asdict(params)
    params_dict["demand_weights"] = list(params.demand_weights)
    meta = {
        "params": params_dict,
        "demand_distribution": demand.tolist(),
        "normalization": {"revenue_min": float(r_lo), "revenue_max": float(r_hi),
                          "cost_min": float(c_lo), "cost_max": float(c_hi),
                          "objective": "1 - (revenue - revenue_min) / (revenue_max - revenue_min)",
                          "constraint": "(cost - cost_min) / (cost_max - cost_min)"},
        "raw_revenue": revenue.tolist(),
        "raw_cost": cost.tolist(),
    }
    return TabularCmdp(P, 1.0 - r_norm, c_norm, H, budget, params.initial_state, "inventory", metadata=meta)


def build_random(seed: int, num_states: int, num_actions: int, horizon: int,
                 budget_frac: float = 0.5, initial_state: int = 0) -> TabularCmdp:
    if min(num_states, num_actions, horizon) < 1:
        raise ContractViolation("dimensions must be positive")
    if not 0 < budget_frac <= 1:
        raise ContractViolation("budget_frac must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    raw = rng.random((num_states, num_actions, num_states)) + 1e-3
    P = raw / raw.sum(axis=2, keepdims=True)
    r = rng.random((num_states, num_actions))
    c = rng.random((num_states, num_actions))
    return TabularCmdp(P, r, c, horizon, budget_frac * horizon, initial_state, f"random-{seed}",
                       metadata={"seed": seed, "budget_frac": budget_frac})


def dump_model(model: TabularCmdp, stream=None) -> str:
    """Plain-text dump: header, then one line per (s, a) with costs and the transition row."""
    out = io.StringIO() if stream is None else stream
    S, A, H = model.dims
    out.write(f"# {model.name} S={S} A={A} H={H} budget={model.budget:.17g} s1={model.initial_state}\n")
    out.write("# s a objective_cost constraint_cost P(0|s,a) ... P(S-1|s,a)\n")
    for s in range(S):
        for a in range(A):
            row = " ".join(f"{p:.17g}" for p in model.transitions[s, a])
            out.write(f"{s} {a} {model.objective_cost[s, a]:.17g} {model.constraint_cost[s, a]:.17g} {row}\n")
    return out.getvalue() if stream is None else ""


ENV_BUILDERS = {
    "media": lambda **kw: build_media(MediaParams(**kw)),
    "inventory": lambda **kw: build_inventory(InventoryParams(**kw)),
    "random": lambda **kw: build_random(**kw),
}


def build_env(name: str, **overrides) -> TabularCmdp:
    try:
        builder = ENV_BUILDERS[name]
    except KeyError:
        raise ContractViolation(f"unknown environment {name!r}; choose from {sorted(ENV_BUILDERS)}") from None
    return builder(**overrides)
