"""
Occupancy-measure linear programs for CMDP planning.

Two LP families are built here:

* the known-model CMDP LP over ``w[h, s, a]`` (``build_cmdp_lp``), and
* the extended LP over ``z[h, s, a, s']`` whose feasible set couples the
  policy with any transition model inside a per-entry confidence box
  around an empirical model (``build_extended_lp``).

Everything minimizes. ``solve`` dispatches either to HiGHS' dual simplex
(through scipy) or to the small dense two-phase simplex with Bland's rule
implemented in this module; both are deterministic.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .cmdp import (ContractViolation, OccupancyMeasure, Policy, TabularCmdp, backward_induction,
                   policy_from_occupancy, policy_value)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class InfeasibleCmdpError(RuntimeError):
    """The constrained planning problem has no feasible policy."""


class LpError(RuntimeError):
    """The solver failed for reasons other than infeasibility/unboundedness."""


@dataclass(eq=False)
class LinearProgram:
    """``min c.x  s.t.  A_ub x <= b_ub,  A_eq x == b_eq,  x >= lower``.

    Constraint matrices are stored sparse (CSR). ``lower`` defaults to 0
    for every variable.
    """

    objective: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lower: Optional[np.ndarray] = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        self.A_ub = sp.csr_matrix(self.A_ub, shape=(len(self.b_ub), n)) if len(self.b_ub) else sp.csr_matrix((0, n))
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(len(self.b_eq), n)) if len(self.b_eq) else sp.csr_matrix((0, n))
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        if self.lower.shape != (n,):
            raise ContractViolation("lower bounds must have one entry per variable")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @classmethod
    def from_rows(cls, num_vars: int, objective: Sequence[float],
                  constraints: Iterable[tuple[dict, str, float]], lower=None) -> "LinearProgram":
        """Build from ``({var: coeff}, "<=" | "=" | ">=", rhs)`` triples."""
        ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
        for coeffs, rel, rhs in constraints:
            for j in coeffs:
                if not 0 <= j < num_vars:
                    raise ContractViolation(f"constraint references variable {j} outside 0..{num_vars - 1}")
            if rel == "<=":
                ub_rows.append(coeffs)
                ub_rhs.append(rhs)
            elif rel == ">=":
                ub_rows.append({j: -v for j, v in coeffs.items()})
                ub_rhs.append(-rhs)
            elif rel in ("=", "=="):
                eq_rows.append(coeffs)
                eq_rhs.append(rhs)
            else:
                raise ContractViolation(f"unknown relation {rel!r}")
        return cls(np.asarray(objective, dtype=float), _rows_to_csr(ub_rows, num_vars), ub_rhs,
                   _rows_to_csr(eq_rows, num_vars), eq_rhs, lower)

    def constraints(self):
        """Iterate ``(pairs, relation, rhs)`` with ``pairs`` a list of (var, coeff)."""
        for mat, rhs, rel in ((self.A_ub, self.b_ub, "<="), (self.A_eq, self.b_eq, "=")):
            for i in range(mat.shape[0]):
                lo, hi = mat.indptr[i], mat.indptr[i + 1]
                yield list(zip(mat.indices[lo:hi].tolist(), mat.data[lo:hi].tolist())), rel, float(rhs[i])

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        worst = float(np.max(self.lower - x, initial=0.0))
        if self.A_ub.shape[0]:
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if self.A_eq.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        return worst

    def dump(self, stream=None) -> str:
        """Plain-text listing, one constraint per line, for external solvers."""
        out = io.StringIO() if stream is None else stream
        out.write("min: " + _fmt_terms(enumerate(self.objective.tolist())) + "\n")
        for k, (pairs, rel, rhs) in enumerate(self.constraints()):
            out.write(f"c{k}: {_fmt_terms(pairs)} {rel} {rhs:.17g}\n")
        if np.any(self.lower != 0):
            for j, lb in enumerate(self.lower):
                out.write(f"x{j} >= {lb:.17g}\n")
        return out.getvalue() if stream is None else ""


def _fmt_terms(pairs) -> str:
    terms = [f"{v:+.17g}*x{j}" for j, v in pairs if v != 0]
    return " ".join(terms) if terms else "0"


def _rows_to_csr(rows: list[dict], n: int) -> sp.csr_matrix:
    r, c, v = [], [], []
    for i, coeffs in enumerate(rows):
        for j, val in coeffs.items():
            r.append(i)
            c.append(j)
            v.append(val)
    return sp.csr_matrix((v, (r, c)), shape=(len(rows), n))


@dataclass(eq=False)
class LpSolution:
    status: str
    values: Optional[np.ndarray] = None
    objective_value: float = float("nan")
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve(lp: LinearProgram, method: str = "highs") -> LpSolution:
    """Solve ``lp``; infeasibility and unboundedness are reported via ``status``.

    ``method`` is ``"highs"`` (HiGHS dual simplex) or ``"simplex"`` (dense
    Bland's-rule tableau, for small problems and cross-checks).
    """
    if method == "simplex":
        return simplex(lp)
    if method != "highs":
        raise ValueError(f"unknown LP method {method!r}")
    kwargs = dict(A_ub=lp.A_ub if lp.A_ub.shape[0] else None, b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
                  A_eq=lp.A_eq if lp.A_eq.shape[0] else None, b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
                  bounds=np.column_stack([lp.lower, np.full(lp.num_vars, np.inf)]))
    res = linprog(lp.objective, method="highs-ds", **kwargs)
    if res.status == 4:
        # numerical trouble in dual simplex; the IPM+crossover path is also deterministic
        res = linprog(lp.objective, method="highs-ipm", **kwargs)
    if res.status == 0:
        return LpSolution(OPTIMAL, np.asarray(res.x), float(res.fun), res.message)
    if res.status == 2:
        return LpSolution(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(UNBOUNDED, message=res.message)
    raise LpError(f"HiGHS failed (status {res.status}): {res.message}")


def simplex(lp: LinearProgram, tol: float = 1e-10, max_iter: int = 50_000) -> LpSolution:
    """Two-phase tableau simplex with Bland's rule.

    Variables are shifted by their lower bounds so that ``x >= 0``. Ties
    in the ratio test go to the lowest basic-variable index, which with
    Bland's entering rule rules out cycling.
    """
    n = lp.num_vars
    A_ub = lp.A_ub.toarray()
    A_eq = lp.A_eq.toarray()
    b_ub = lp.b_ub - A_ub @ lp.lower
    b_eq = lp.b_eq - A_eq @ lp.lower
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq

    # columns: [x (n) | slacks (m_ub) | artificials (m)] | rhs
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    ncols = n + m_ub + m
    T = np.zeros((m + 1, ncols + 1))
    T[:m, :n + m_ub] = A
    T[:m, n + m_ub:ncols] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(n + m_ub, ncols)

    # phase 1: minimize the sum of artificials
    art = np.arange(n + m_ub, ncols)
    T[-1, :] = 0.0
    T[-1, art] = 1.0
    T[-1] -= T[:m].sum(axis=0)
    status = _pivot_loop(T, basis, ncols, tol, max_iter)
    if status != OPTIMAL:
        raise LpError("phase 1 did not terminate")
    if -T[-1, -1] > FEAS_TOL:
        return LpSolution(INFEASIBLE, message=f"phase-1 residual {-T[-1, -1]:.3g}")

    # drive remaining artificials out of the basis, drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= n + m_ub:
            row = T[i, :n + m_ub]
            candidates = np.flatnonzero(np.abs(row) > 1e-9)
            if candidates.size == 0:
                continue
            _pivot(T, i, int(candidates[0]))
            basis[i] = candidates[0]
        keep.append(i)
    T = np.vstack([T[keep], T[-1:]])
    basis = basis[keep]
    T = np.delete(T, art, axis=1)
    m = len(keep)
    ncols = n + m_ub

    # phase 2
    T[-1, :] = 0.0
    T[-1, :n] = lp.objective
    for i, j in enumerate(basis):
        if T[-1, j] != 0:
            T[-1] -= T[-1, j] * T[i]
    status = _pivot_loop(T, basis, ncols, tol, max_iter)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, message="unbounded ray found")
    x = np.zeros(ncols)
    x[basis] = T[:m, -1]
    values = x[:n] + lp.lower
    return LpSolution(OPTIMAL, values, float(lp.objective @ values), "bland simplex")


def _pivot_loop(T: np.ndarray, basis: np.ndarray, ncols: int, tol: float, max_iter: int) -> str:
    m = T.shape[0] - 1
    for _ in range(max_iter):
        reduced = T[-1, :ncols]
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            return OPTIMAL
        j = int(entering[0])
        col = T[:m, j]
        pos = col > tol
        if not np.any(pos):
            return UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        i = int(ties[np.argmin(basis[ties])])
        _pivot(T, i, j)
        basis[i] = j
    raise LpError("simplex iteration limit reached")


def _pivot(T: np.ndarray, i: int, j: int) -> None:
    T[i] /= T[i, j]
    col = T[:, j].copy()
    col[i] = 0.0
    T -= np.outer(col, T[i])


# ----------------------------------------------------------------------------
# Known-model CMDP LP

def _w_index(S: int, A: int, H: int) -> np.ndarray:
    return np.arange(H * S * A).reshape(H, S, A)


def build_cmdp_lp(model: TabularCmdp, objective, constraint_cost=None,
                  budget: Optional[float] = None) -> LinearProgram:
    """Occupancy LP over ``w[h, s, a]`` (variable index ``(h*S + s)*A + a``).

    With ``budget=None`` the cost constraint is omitted.
    """
    S, A, H = model.dims
    P = model.transitions
    idx = _w_index(S, A, H)
    objective = np.asarray(objective, dtype=float)

    rows, cols, vals = [], [], []
    # initial step: sum_a w[0, s, a] = 1{s = s1}
    for s in range(S):
        rows.append(np.full(A, s))
        cols.append(idx[0, s])
        vals.append(np.ones(A))
    b_eq = [float(s == model.initial_state) for s in range(S)]
    # flow: sum_a w[h, s, a] - sum_{s',a'} P(s|s',a') w[h-1, s', a'] = 0
    row = S
    for h in range(1, H):
        for s in range(S):
            rows.append(np.full(A + S * A, row))
            cols.append(np.concatenate([idx[h, s], idx[h - 1].ravel()]))
            vals.append(np.concatenate([np.ones(A), -P[:, :, s].ravel()]))
            b_eq.append(0.0)
            row += 1
    A_eq = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(row, H * S * A))
    A_eq.eliminate_zeros()

    if budget is None:
        A_ub, b_ub = sp.csr_matrix((0, H * S * A)), []
    else:
        if budget <= 0:
            raise ContractViolation("budget must be positive")
        cc = np.broadcast_to(np.asarray(constraint_cost, dtype=float), (H, S, A)).ravel()
        A_ub, b_ub = sp.csr_matrix(cc[None, :]), [float(budget)]
    obj = np.broadcast_to(objective, (H, S, A)).ravel()
    return LinearProgram(obj, A_ub, b_ub, A_eq, b_eq, tags={"kind": "cmdp", "dims": (S, A, H)})


def plan_cmdp(model: TabularCmdp, budget: Optional[float] = None, objective=None, constraint_cost=None,
              method: str = "highs") -> tuple[Policy, float]:
    """Optimal policy of the known-model CMDP and its objective value.

    Defaults to the model's own costs and budget. Raises
    ``InfeasibleCmdpError`` when no policy meets the budget.
    """
    budget = model.budget if budget is None else budget
    r = model.objective_cost if objective is None else objective
    c = model.constraint_cost if constraint_cost is None else constraint_cost
    lp = build_cmdp_lp(model, r, c, budget)
    sol = solve(lp, method)
    if sol.status == INFEASIBLE:
        raise InfeasibleCmdpError(f"no policy of {model.name} meets budget {budget}")
    if not sol.optimal:
        raise LpError(f"CMDP LP returned {sol.status}")
    S, A, H = model.dims
    w = np.clip(sol.values.reshape(H, S, A), 0.0, None)
    policy = policy_from_occupancy(OccupancyMeasure(w))
    return policy, policy_value(model, policy, r)


# ----------------------------------------------------------------------------
# Extended LP over state-action-state occupancies

def confidence_box(center, radii) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry bounds ``[P_hat - beta, P_hat + beta]`` clipped to [0, 1]."""
    center = np.asarray(center, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii < 0):
        raise ContractViolation("confidence radii must be nonnegative")
    return np.clip(center - radii, 0.0, 1.0), np.clip(center + radii, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class ExtendedOccupancy:
    """State-action-state occupancy ``z[h, s, a, s']``."""

    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float, copy=True)
        if z.ndim != 4 or z.shape[1] != z.shape[3]:
            raise ContractViolation(f"extended occupancy must be (H, S, A, S), got {z.shape}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_policy(cls, model: TabularCmdp, policy: Policy, transitions=None) -> "ExtendedOccupancy":
        from .cmdp import occupancy_of_policy, step_transitions
        w = occupancy_of_policy(model, policy, transitions).w
        P = step_transitions(model, transitions)
        return cls(w[..., None] * P)

    @property
    def state_action(self) -> np.ndarray:
        return self.z.sum(axis=3)


def build_extended_lp(center, radii, objective, constraint_cost, budget: Optional[float],
                      dims: tuple[int, int, int], initial_state: int) -> LinearProgram:
    """Extended LP over ``z[h, s, a, s']`` (index ``((h*S + s)*A + a)*S + s'``).

    Box rows whose bound is vacuous (upper bound 1 or lower bound 0) are
    left out; they are implied by ``z >= 0``. ``budget=None`` drops the
    cost constraint.
    """
    S, A, H = dims
    lo, hi = confidence_box(center, radii)
    n = H * S * A * S
    idx = np.arange(n).reshape(H, S, A, S)

    ub_r, ub_c, ub_v, b_ub = [], [], [], []
    nrow = 0
    if budget is not None:
        cc = np.broadcast_to(np.asarray(constraint_cost, dtype=float)[None, :, :, None], (H, S, A, S)).ravel()
        ub_r.append(np.zeros(n, dtype=int))
        ub_c.append(np.arange(n))
        ub_v.append(cc)
        b_ub.append(float(budget))
        nrow = 1

    for bound, sign in ((hi, 1.0), (lo, -1.0)):
        # upper: z[t] - hi[t] * sum_y z[y] <= 0 ; lower: -z[t] + lo[t] * sum_y z[y] <= 0
        active = np.argwhere(bound < 1.0) if sign > 0 else np.argwhere(bound > 0.0)
        if active.size == 0:
            continue
        s_a, a_a, t_a = active.T
        k = len(active)
        for h in range(H):
            rows = nrow + np.arange(k)
            cols = idx[h, s_a, a_a, :]                      # (k, S)
            vals = -sign * np.repeat(bound[s_a, a_a, t_a][:, None], S, axis=1)
            vals[np.arange(k), t_a] += sign
            ub_r.append(np.repeat(rows, S))
            ub_c.append(cols.ravel())
            ub_v.append(vals.ravel())
            b_ub.extend([0.0] * k)
            nrow += k
    if nrow:
        A_ub = sp.csr_matrix((np.concatenate(ub_v), (np.concatenate(ub_r), np.concatenate(ub_c))), shape=(nrow, n))
    else:
        A_ub = sp.csr_matrix((0, n))

    # initial step and flow conservation
    eq_r, eq_c, eq_v = [], [], []
    out_cols = idx.reshape(H, S, A * S)                       # sum_{a,s'} z[h, s, a, s']
    in_cols = np.moveaxis(idx, 3, 1).reshape(H, S, S * A)     # sum_{s',a'} z[h, s', a', s]
    for s in range(S):
        eq_r.append(np.full(A * S, s))
        eq_c.append(out_cols[0, s])
        eq_v.append(np.ones(A * S))
    b_eq = [float(s == initial_state) for s in range(S)]
    row = S
    for h in range(1, H):
        for s in range(S):
            eq_r.append(np.full(2 * A * S, row))
            eq_c.append(np.concatenate([out_cols[h, s], in_cols[h - 1, s]]))
            eq_v.append(np.concatenate([np.ones(A * S), -np.ones(S * A)]))
            b_eq.append(0.0)
            row += 1
    A_eq = sp.csr_matrix((np.concatenate(eq_v), (np.concatenate(eq_r), np.concatenate(eq_c))), shape=(row, n))

    obj = np.broadcast_to(np.asarray(objective, dtype=float)[None, :, :, None], (H, S, A, S)).ravel()
    return LinearProgram(obj, A_ub, b_ub, A_eq, b_eq, tags={"kind": "extended", "dims": (S, A, H)})


def extract_policy_model(z) -> tuple[Policy, np.ndarray]:
    """Recover the policy and step-dependent transitions from ``z``.

    Returns ``(policy, transitions)`` with ``transitions`` shaped
    (H, S, A, S). Zero-mass rows become uniform. Negative entries within
    the solver's feasibility tolerance are clipped to zero.
    """
    z = np.asarray(z.z if isinstance(z, ExtendedOccupancy) else z, dtype=float)
    if np.any(z < -FEAS_TOL):
        raise ContractViolation("extended occupancy has negative entries")
    z = np.clip(z, 0.0, None)
    S = z.shape[3]
    mass = z.sum(axis=3, keepdims=True)
    visited = mass > 0
    transitions = np.where(visited, z / np.where(visited, mass, 1.0), 1.0 / S)
    policy = policy_from_occupancy(OccupancyMeasure(mass[..., 0]))
    return policy, transitions


def aggregate_transitions(z) -> np.ndarray:
    """Single (S, A, S) model pooling ``z`` over steps; reporting only."""
    z = np.asarray(z.z if isinstance(z, ExtendedOccupancy) else z, dtype=float)
    pooled = np.clip(z, 0.0, None).sum(axis=0)
    mass = pooled.sum(axis=2, keepdims=True)
    return np.where(mass > 0, pooled / np.where(mass > 0, mass, 1.0), 1.0 / z.shape[3])


@dataclass(eq=False)
class ExtendedSolution:
    status: str
    policy: Optional[Policy] = None
    transitions: Optional[np.ndarray] = None
    objective_value: float = float("nan")
    lp: Optional[LinearProgram] = None


def solve_extended(center, radii, objective, constraint_cost, budget, dims, initial_state,
                   method: str = "highs", keep_lp: bool = False) -> ExtendedSolution:
    lp = build_extended_lp(center, radii, objective, constraint_cost, budget, dims, initial_state)
    sol = solve(lp, method)
    if not sol.optimal:
        return ExtendedSolution(sol.status, lp=lp if keep_lp else None)
    S, A, H = dims
    policy, transitions = extract_policy_model(sol.values.reshape(H, S, A, S))
    return ExtendedSolution(OPTIMAL, policy, transitions, sol.objective_value, lp if keep_lp else None)


def extended_value_iteration(center, radii, cost, horizon: int, initial_state: int):
    """Minimize ``V_cost`` jointly over policies and models in the confidence box.

    Backward induction where each (s, a) picks the successor distribution
    in box-intersect-simplex that minimizes the expected next value: start
    from the lower bounds and pour the remaining mass into successors in
    increasing order of value. Pairs whose box misses the simplex get
    value +inf.

    Returns ``(value, policy, transitions)``; ``transitions`` is (H, S, A, S).
    """
    lo, hi = confidence_box(center, radii)
    S, A = lo.shape[:2]
    H = horizon
    cost = np.asarray(cost, dtype=float)
    room = hi - lo
    base = 1.0 - lo.sum(axis=2)
    empty = (base < -1e-12) | (hi.sum(axis=2) < 1.0 - 1e-12)

    V = np.zeros(S)
    actions = np.zeros((H, S), dtype=int)
    transitions = np.empty((H, S, A, S))
    for h in range(H - 1, -1, -1):
        p = lo.copy()
        remaining = np.clip(base, 0.0, None)
        for t in np.argsort(V, kind="stable"):
            add = np.minimum(room[:, :, t], remaining)
            p[:, :, t] += add
            remaining = remaining - add
        Q = cost + p @ V
        Q[empty] = np.inf
        actions[h] = np.argmin(Q, axis=1)
        V = Q[np.arange(S), actions[h]]
        transitions[h] = p
    policy = Policy.deterministic(actions, A)
    return float(V[initial_state]), policy, transitions


def unconstrained_optimum(model: TabularCmdp, cost=None) -> tuple[Policy, float]:
    """Backward-induction optimum ignoring the budget."""
    cost = model.objective_cost if cost is None else cost
    policy, V = backward_induction(model, cost)
    return policy, float(V[0, model.initial_state])
