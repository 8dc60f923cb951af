"""
Learning runs with exact regret accounting.

Every episode the agent's policy is evaluated exactly on the true model
(no sampling noise in the regret columns); one trajectory is then sampled
from it to update the counts.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..agents import (AGENT_KINDS, BASELINE, OPSRL, UCRL, Agent, AgentConfig, KnownTask, make_baseline)
from ..cmdp import ContractViolation, TabularCmdp, policy_value, sample_episode
from ..confidence import (ConfidenceState, bonuses, empirical_model, epsilon_diag, optimistic_cost,
                          pessimistic_cost, update)
from ..envs import build_env
from ..lp import InfeasibleCmdpError, build_extended_lp, plan_cmdp, unconstrained_optimum

log = logging.getLogger(__name__)

SAFETY_TOL = 1e-6


@dataclass(frozen=True)
class RunConfig:
    env: str = "media"
    env_overrides: dict = field(default_factory=dict)
    agents: tuple = (OPSRL,)
    episodes: int = 5000
    seeds: tuple = (0, 1, 2, 3, 4)
    delta: float = 0.1
    baseline_frac: float = 0.2
    out_dir: Optional[str] = None
    emit_plots: bool = False
    k0: Union[str, int] = "adaptive"
    dump_lp: bool = False
    bonus_scale: float = 1.0
    ucrl_solver: str = "evi"
    lp_method: str = "highs"
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ContractViolation("episodes must be >= 1")
        if len(self.seeds) == 0:
            raise ContractViolation("at least one seed is required")
        if not 0 < self.delta < 1:
            raise ContractViolation("delta must lie in (0, 1)")
        if not 0 < self.baseline_frac <= 1:
            raise ContractViolation("baseline_frac must lie in (0, 1]")
        for kind in self.agents:
            if kind not in AGENT_KINDS:
                raise ContractViolation(f"unknown agent {kind!r}")

    def build_model(self) -> TabularCmdp:
        return build_env(self.env, **self.env_overrides)


@dataclass(frozen=True)
class RegretRecord:
    episode: int
    opt_gap: float
    cum_opt_regret: float
    cons_excess: float
    cum_cons_regret: float
    used_baseline: bool


@dataclass(eq=False)
class RunResult:
    """Per-episode columns of one seed's run (episode k is row k - 1)."""

    agent: str
    seed: int
    value_r: np.ndarray
    value_c: np.ndarray
    used_baseline: np.ndarray
    lp_status: list
    optimum: float
    unconstrained_optimum: float
    budget: float
    tightened_slack: np.ndarray = None   # C - eps_k - V_c(P_k) at selection, nan when unused

    @property
    def episodes(self) -> int:
        return len(self.value_r)

    @property
    def opt_gap(self) -> np.ndarray:
        return self.value_r - self.optimum

    @property
    def opt_gap_unconstrained(self) -> np.ndarray:
        return self.value_r - self.unconstrained_optimum

    @property
    def cons_excess(self) -> np.ndarray:
        return np.maximum(0.0, self.value_c - self.budget)

    @property
    def cum_opt_regret(self) -> np.ndarray:
        return np.cumsum(self.opt_gap)

    @property
    def cum_cons_regret(self) -> np.ndarray:
        return np.cumsum(self.cons_excess)

    @property
    def switch_episode(self) -> Optional[int]:
        """First episode that did not play the baseline (None if it never switched)."""
        idx = np.flatnonzero(~self.used_baseline)
        return int(idx[0]) + 1 if idx.size else None

    @property
    def first_violation(self) -> Optional[int]:
        idx = np.flatnonzero(self.value_c > self.budget + SAFETY_TOL)
        return int(idx[0]) + 1 if idx.size else None

    def records(self) -> list[RegretRecord]:
        gap, cum_gap = self.opt_gap, self.cum_opt_regret
        exc, cum_exc = self.cons_excess, self.cum_cons_regret
        return [RegretRecord(k + 1, float(gap[k]), float(cum_gap[k]), float(exc[k]), float(cum_exc[k]),
                             bool(self.used_baseline[k])) for k in range(self.episodes)]


@dataclass(eq=False)
class Reference:
    """Quantities computed once from the true model."""

    model: TabularCmdp
    optimal_policy: object
    optimum: float
    unconstrained_policy: object
    unconstrained_optimum: float
    unconstrained_cost: float
    baseline_policy: object
    baseline_value: float
    baseline_objective: float
    baseline_target: float


def reference(model: TabularCmdp, baseline_frac: float, lp_method: str = "highs") -> Reference:
    pi_star, v_star = plan_cmdp(model, method=lp_method)
    pi_unc, v_unc = unconstrained_optimum(model)
    target = baseline_frac * model.budget
    pi_b, c_b = make_baseline(model, target, lp_method)
    return Reference(model, pi_star, v_star, pi_unc, v_unc, policy_value(model, pi_unc, model.constraint_cost),
                     pi_b, c_b, policy_value(model, pi_b, model.objective_cost), target)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Independent stream per (seed, episode); agents share environment randomness."""
    return np.random.default_rng([seed, episode])


def agent_config(kind: str, ref: Reference, config: RunConfig) -> AgentConfig:
    return AgentConfig(kind, ref.baseline_policy, ref.baseline_value, config.k0, config.delta, config.episodes,
                       config.bonus_scale, config.lp_method, config.ucrl_solver)


def run_seed(model: TabularCmdp, ref: Reference, cfg: AgentConfig, seed: int,
             max_episodes: Optional[int] = None, lp_dump_dir: Optional[Path] = None) -> RunResult:
    """One learning run. ``max_episodes`` truncates without changing ``cfg.episodes`` (the log term)."""
    S, A, H = model.dims
    K = cfg.episodes if max_episodes is None else min(max_episodes, cfg.episodes)
    agent = Agent(cfg, KnownTask.from_model(model))
    conf = ConfidenceState.empty(S, A, H, cfg.episodes, cfg.delta, cfg.bonus_scale)
    value_r = np.empty(K)
    value_c = np.empty(K)
    used = np.zeros(K, dtype=bool)
    slack = np.full(K, np.nan)
    status = []
    dumped = False
    for k in range(1, K + 1):
        try:
            out = agent.select(conf)
        except Exception as exc:
            raise RuntimeError(f"{cfg.kind} seed {seed} episode {k}: {exc}") from exc
        value_r[k - 1] = policy_value(model, out.policy, model.objective_cost)
        value_c[k - 1] = policy_value(model, out.policy, model.constraint_cost)
        used[k - 1] = out.used_baseline
        status.append(out.lp_status)
        if cfg.kind == OPSRL and not out.used_baseline:
            eps = epsilon_diag(bonuses(conf), model, out.policy, out.transitions)
            slack[k - 1] = model.budget - eps - out.value_c
        if lp_dump_dir is not None and not dumped and out.transitions is not None:
            _dump_selection_lp(lp_dump_dir, cfg, conf, model, seed, k)
            dumped = True
        conf = update(conf, sample_episode(model, out.policy, episode_rng(seed, k)))
    return RunResult(cfg.kind, seed, value_r, value_c, used, status, ref.optimum, ref.unconstrained_optimum,
                     model.budget, slack)


def _dump_selection_lp(directory: Path, cfg: AgentConfig, conf: ConfidenceState, model: TabularCmdp,
                       seed: int, k: int) -> None:
    S, A, H = model.dims
    b = bonuses(conf)
    r, c, budget = model.objective_cost, model.constraint_cost, model.budget
    if cfg.kind == OPSRL:
        r = optimistic_cost(r, b, H, budget, cfg.baseline_value)
        c = pessimistic_cost(c, b, H)
    elif cfg.kind == UCRL:
        budget = None
    lp = build_extended_lp(empirical_model(conf), b.beta, r, c, budget, (S, A, H), model.initial_state)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{cfg.kind}_seed{seed}_episode{k}.lp", "w") as fh:
        lp.dump(fh)


def _run_job(args):
    model, ref, cfg, seed, max_episodes, dump_dir = args
    return run_seed(model, ref, cfg, seed, max_episodes, dump_dir)


def run_experiment(config: RunConfig, model: Optional[TabularCmdp] = None, ref: Optional[Reference] = None,
                   max_episodes: Optional[int] = None) -> dict[str, list[RunResult]]:
    """Run every configured agent on every seed; returns ``{agent: [RunResult per seed]}``."""
    model = config.build_model() if model is None else model
    ref = reference(model, config.baseline_frac, config.lp_method) if ref is None else ref
    dump_dir = Path(config.out_dir) / "lp" if (config.dump_lp and config.out_dir) else None
    jobs = []
    for kind in config.agents:
        cfg = agent_config(kind, ref, config)
        for i, seed in enumerate(config.seeds):
            jobs.append((model, ref, cfg, seed, max_episodes, dump_dir if i == 0 else None))
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    out: dict[str, list[RunResult]] = {kind: [] for kind in config.agents}
    for res in results:
        out[res.agent].append(res)
    return out


@dataclass(eq=False)
class Aggregate:
    agent: str
    episode: np.ndarray
    opt_mean: np.ndarray
    opt_min: np.ndarray
    opt_max: np.ndarray
    cons_mean: np.ndarray
    cons_min: np.ndarray
    cons_max: np.ndarray
    used_baseline_frac: np.ndarray


def aggregate(runs: Sequence[RunResult], against: str = "constrained") -> Aggregate:
    """Per-episode mean and min/max envelope of the cumulative regret columns.

    ``against="unconstrained"`` measures optimality regret against the
    unconstrained optimum instead.
    """
    if not runs:
        raise ContractViolation("nothing to aggregate")
    lengths = {r.episodes for r in runs}
    if len(lengths) != 1:
        raise ContractViolation(f"runs have different lengths {sorted(lengths)}")
    if against == "constrained":
        opt = np.array([r.cum_opt_regret for r in runs])
    elif against == "unconstrained":
        opt = np.array([np.cumsum(r.opt_gap_unconstrained) for r in runs])
    else:
        raise ValueError(f"unknown reference {against!r}")
    cons = np.array([r.cum_cons_regret for r in runs])
    used = np.array([r.used_baseline for r in runs], dtype=float)
    K = lengths.pop()
    return Aggregate(runs[0].agent, np.arange(1, K + 1), opt.mean(0), opt.min(0), opt.max(0),
                     cons.mean(0), cons.min(0), cons.max(0), used.mean(0))


@dataclass(eq=False)
class SweepResult:
    fraction: float
    runs: Optional[list] = None
    baseline_value: float = math.nan
    warning: str = ""


def baseline_sweep(config: RunConfig, fractions: Sequence[float], model: Optional[TabularCmdp] = None,
                   max_episodes: Optional[int] = None) -> list[SweepResult]:
    """OPSRL once per baseline budget fraction on shared seeds."""
    if not fractions:
        raise ContractViolation("baseline sweep needs at least one fraction")
    for f in fractions:
        if not 0 < f < 1:
            raise ContractViolation(f"baseline fraction {f} must lie in (0, 1)")
    model = config.build_model() if model is None else model
    results = []
    for f in fractions:
        try:
            ref = reference(model, f, config.lp_method)
        except InfeasibleCmdpError as exc:
            log.warning("skipping baseline fraction %s: %s", f, exc)
            results.append(SweepResult(f, warning=str(exc)))
            continue
        sub = RunConfig(**{**config.__dict__, "agents": (OPSRL,), "baseline_frac": f})
        runs = run_experiment(sub, model, ref, max_episodes)[OPSRL]
        results.append(SweepResult(f, runs, ref.baseline_value))
    return results


def windowed_slope_drop(cum_regret: np.ndarray, switch_episode: Optional[int]) -> Optional[bool]:
    """Is the regret increment over the last quarter of episodes smaller than
    over the quarter starting at the switch episode?

    Returns None when there is no switch or the post-switch quarter does
    not fit inside the run.
    """
    if switch_episode is None:
        return None
    K = len(cum_regret)
    q = K // 4
    start = switch_episode - 1
    if q < 1 or start + q > K:
        return None
    base = cum_regret[start - 1] if start > 0 else 0.0
    first = cum_regret[start + q - 1] - base
    last = cum_regret[K - 1] - cum_regret[K - q - 1]
    return bool(last < first)


__all__ = ["RunConfig", "RegretRecord", "RunResult", "Reference", "Aggregate", "SweepResult", "reference",
           "run_seed", "run_experiment", "aggregate", "baseline_sweep", "episode_rng", "windowed_slope_drop",
           "BASELINE"]
