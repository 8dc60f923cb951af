"""Safe exploration in tabular finite-horizon constrained MDPs."""
from .cmdp import (ContractViolation, EpisodeTrace, OccupancyMeasure, Policy, TabularCmdp, backward_induction,
                   evaluate_policy, occupancy_of_policy, policy_from_occupancy, policy_value, sample_episode,
                   value_difference_check)
from .confidence import (BonusTable, ConfidenceState, bonuses, empirical_model, epsilon_diag, optimistic_cost,
                         pessimistic_cost, update)
from .lp import (ExtendedOccupancy, InfeasibleCmdpError, LinearProgram, LpSolution, build_cmdp_lp,
                 build_extended_lp, extended_value_iteration, extract_policy_model, plan_cmdp, solve)
from .agents import (AgentConfig, KnownTask, SelectionOutcome, make_baseline, opsrl_select, optcmdp_select,
                     ucrl_select)
from .envs import InventoryParams, MediaParams, build_inventory, build_media, build_random

__version__ = "0.1.0"
