import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safecmdp.cmdp import (Policy, TabularCmdp, backward_induction, occupancy_of_policy, policy_value,
                           sample_policy)
from safecmdp.envs import build_media, build_random
from safecmdp.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, ExtendedOccupancy, InfeasibleCmdpError,
                         LinearProgram, build_cmdp_lp, build_extended_lp, extended_value_iteration,
                         extract_policy_model, plan_cmdp, solve, solve_extended)


def lp_1d(constraints):
    return LinearProgram.from_rows(1, [1.0], constraints)


class TestSolve:
    @pytest.mark.parametrize("method", ["highs", "simplex"])
    def test_lower_bound(self, method):
        sol = solve(lp_1d([({0: -1.0}, "<=", -3.0)]), method)
        assert sol.status == OPTIMAL
        assert sol.values[0] == pytest.approx(3.0, abs=1e-9)

    @pytest.mark.parametrize("method", ["highs", "simplex"])
    def test_contradiction(self, method):
        sol = solve(lp_1d([({0: 1.0}, "<=", 1.0), ({0: -1.0}, "<=", -2.0)]), method)
        assert sol.status == INFEASIBLE

    @pytest.mark.parametrize("method", ["highs", "simplex"])
    def test_unbounded(self, method):
        lp = LinearProgram.from_rows(2, [-1.0, 0.0], [({0: 1.0, 1: -1.0}, "<=", 1.0)])
        assert solve(lp, method).status == UNBOUNDED

    def test_rejects_bad_variable_index(self):
        with pytest.raises(ValueError):
            LinearProgram.from_rows(1, [1.0], [({3: 1.0}, "<=", 1.0)])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_bland_simplex_agrees_with_highs(self, seed):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(2, 6), rng.integers(1, 5)
        rows = [(dict(enumerate(rng.normal(size=n))), "<=", float(rng.random() * 3)) for _ in range(m)]
        rows.append((dict(enumerate(np.ones(n))), "<=", 5.0))
        rows.append((dict(enumerate(rng.random(n))), "=", float(rng.random())))
        lp = LinearProgram.from_rows(n, rng.normal(size=n), rows)
        a, b = solve(lp, "highs"), solve(lp, "simplex")
        assert a.status == b.status
        if a.optimal:
            assert a.objective_value == pytest.approx(b.objective_value, abs=1e-7)
            assert lp.max_violation(b.values) < 1e-7

    def test_degenerate_problem_terminates(self):
        # classic cycling example (Beale); Bland's rule must terminate
        c = [-0.75, 150, -0.02, 6]
        rows = [({0: 0.25, 1: -60, 2: -0.04, 3: 9}, "<=", 0.0),
                ({0: 0.5, 1: -90, 2: -0.02, 3: 3}, "<=", 0.0),
                ({2: 1.0}, "<=", 1.0)]
        sol = solve(LinearProgram.from_rows(4, c, rows), "simplex")
        assert sol.status == OPTIMAL
        assert sol.objective_value == pytest.approx(-0.05, abs=1e-9)

    def test_deterministic(self):
        model = build_random(3, 3, 2, 3)
        lp = build_cmdp_lp(model, model.objective_cost, model.constraint_cost, model.budget)
        a, b = solve(lp), solve(lp)
        assert np.array_equal(a.values, b.values)

    def test_beats_random_policy_grid(self):
        model = build_random(21, 3, 2, 3, budget_frac=0.4)
        sol = solve(build_cmdp_lp(model, model.objective_cost, model.constraint_cost, model.budget))
        rng = np.random.default_rng(0)
        grid = np.linspace(0, 1, 100)
        checked = 0
        for _ in range(2000):
            p = rng.choice(grid, size=(3, 3))
            pi = Policy(np.stack([p, 1 - p], axis=-1))
            if policy_value(model, pi, model.constraint_cost) <= model.budget:
                checked += 1
                assert sol.objective_value <= policy_value(model, pi, model.objective_cost) + 1e-9
        assert checked > 50

    def test_dump_format(self):
        lp = LinearProgram.from_rows(2, [1.0, 2.0], [({0: 1.0, 1: -1.0}, "<=", 3.0), ({1: 1.0}, "=", 1.0)])
        lines = lp.dump().splitlines()
        assert lines[0] == "min: +1*x0 +2*x1"
        assert lines[1] == "c0: +1*x0 -1*x1 <= 3"
        assert lines[2] == "c1: +1*x1 = 1"


class TestCmdpLp:
    def test_degenerate_chain(self):
        model = TabularCmdp(np.ones((1, 1, 1)), [[0.3]], [[0.2]], horizon=2, budget=1.0)
        lp = build_cmdp_lp(model, model.objective_cost, model.constraint_cost, model.budget)
        assert lp.num_vars == 2
        sol = solve(lp)
        np.testing.assert_allclose(sol.values, [1.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_vacuous_budget_matches_backward_induction(self, seed):
        model = build_random(seed, 4, 3, 3, budget_frac=1.0)
        _, value = plan_cmdp(model)
        _, V = backward_induction(model, model.objective_cost)
        assert value == pytest.approx(V[0, 0], abs=1e-9)

    def test_infeasible_budget(self):
        P = np.array([[[0.5, 0.5], [0.1, 0.9]], [[0.3, 0.7], [0.6, 0.4]]])
        c = np.array([[0.8, 0.6], [0.9, 0.7]])
        model = TabularCmdp(P, np.zeros((2, 2)), c, horizon=2, budget=1.0)
        min_cost = min(policy_value(model, Policy.deterministic(np.array(acts).reshape(2, 2), 2), c)
                       for acts in itertools.product(range(2), repeat=4))
        assert min_cost > 1.0
        lp = build_cmdp_lp(model, model.objective_cost, c, 1.0)
        assert solve(lp).status == INFEASIBLE
        assert solve(lp, "simplex").status == INFEASIBLE
        with pytest.raises(InfeasibleCmdpError):
            plan_cmdp(model)

    def test_zero_constraint_cost(self):
        model = build_random(2, 3, 2, 4)
        model = TabularCmdp(model.transitions, model.objective_cost, np.zeros((3, 2)), 4, 1.0)
        _, value = plan_cmdp(model)
        _, V = backward_induction(model, model.objective_cost)
        assert value == pytest.approx(V[0, 0], abs=1e-9)

    def test_media_policy_meets_budget(self):
        model = build_media()
        pi, _ = plan_cmdp(model)
        assert policy_value(model, pi, model.constraint_cost) <= model.horizon / 2 + 1e-6

    def test_two_state_grid_search(self):
        model = build_random(31, 2, 2, 2, budget_frac=0.35)
        _, value = plan_cmdp(model)
        grid = np.round(np.arange(0, 1.0001, 0.02), 10)
        best = np.inf
        # step-0 only matters at the initial state
        for p0 in grid:
            for p10, p11 in itertools.product(grid, grid):
                pi = Policy(np.array([[[p0, 1 - p0], [0.5, 0.5]], [[p10, 1 - p10], [p11, 1 - p11]]]))
                if policy_value(model, pi, model.constraint_cost) <= model.budget:
                    best = min(best, policy_value(model, pi, model.objective_cost))
        assert value <= best + 1e-9
        assert best - value <= 0.02

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_extracted_policy_reproduces_lp(self, seed):
        model = build_random(seed, 3, 2, 3, budget_frac=0.6)
        lp = build_cmdp_lp(model, model.objective_cost, model.constraint_cost, model.budget)
        sol = solve(lp)
        if sol.status == INFEASIBLE:
            with pytest.raises(InfeasibleCmdpError):
                plan_cmdp(model)
            return
        pi, value = plan_cmdp(model)
        assert value == pytest.approx(sol.objective_value, abs=1e-6)
        cons = float((lp.A_ub @ sol.values)[0])
        assert policy_value(model, pi, model.constraint_cost) == pytest.approx(cons, abs=1e-6)


def random_counts_center(model, n, seed):
    rng = np.random.default_rng(seed)
    S, A, _ = model.dims
    counts = np.array([[rng.multinomial(n, model.transitions[s, a]) for a in range(A)] for s in range(S)])
    return counts / n


class TestExtendedLp:
    def test_zero_radii_equals_planning_on_center(self):
        model = build_random(5, 3, 2, 3, budget_frac=0.6)
        sol = solve_extended(model.transitions, np.zeros((3, 2, 3)), model.objective_cost,
                             model.constraint_cost, model.budget, model.dims, 0)
        _, value = plan_cmdp(model)
        assert sol.objective_value == pytest.approx(value, abs=1e-7)

    @pytest.mark.parametrize("seed", range(3))
    def test_wide_box_is_optimistic_for_any_model(self, seed):
        base = build_random(100, 3, 2, 3, budget_frac=0.6)
        sol = solve_extended(base.transitions, np.ones((3, 2, 3)), base.objective_cost,
                             base.constraint_cost, base.budget, base.dims, 0)
        other = build_random(200 + seed, 3, 2, 3, budget_frac=0.6)
        other = base.with_transitions(other.transitions)
        _, value = plan_cmdp(other)
        assert sol.objective_value <= value + 1e-9

    def test_unvisited_pair_keeps_lp_feasible(self):
        L = np.log(2 * 2 * 2 * 2 * 10 / 0.1)
        center = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.3, 0.7], [0.5, 0.5]]])
        radii = np.full((2, 2, 2), 0.05)
        radii[0, 1] = 14 * L / 3
        lp = build_extended_lp(center, radii, np.ones((2, 2)), np.zeros((2, 2)), 1.0, (2, 2, 2), 0)
        assert solve(lp).status == OPTIMAL

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_true_occupancy_feasible_when_model_in_box(self, seed):
        model, pi = build_random(seed, 3, 2, 3, budget_frac=1.0), None
        pi = sample_policy(np.random.default_rng(seed), 3, 3, 2)
        center = random_counts_center(model, 50, seed)
        radii = np.abs(model.transitions - center) + 1e-3
        lp = build_extended_lp(center, radii, model.objective_cost, model.constraint_cost, model.budget,
                               model.dims, 0)
        z = ExtendedOccupancy.from_policy(model, pi).z
        assert lp.max_violation(z.ravel()) < 1e-9

    def test_shrinking_radii_never_lowers_optimum(self):
        model = build_random(9, 3, 2, 3, budget_frac=0.9)
        center = random_counts_center(model, 40, 1)
        values = []
        for scale in (0.4, 0.2, 0.1, 0.05, 0.0):
            sol = solve_extended(center, np.full((3, 2, 3), scale), model.objective_cost, model.constraint_cost,
                                 model.budget, model.dims, 0)
            assert sol.status == OPTIMAL
            values.append(sol.objective_value)
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))

    def test_extraction_inverts_construction(self):
        model = build_random(13, 3, 2, 3)
        pi = sample_policy(np.random.default_rng(1), 3, 3, 2)
        z = ExtendedOccupancy.from_policy(model, pi)
        pi_back, P_back = extract_policy_model(z)
        reach = occupancy_of_policy(model, pi).w.sum(axis=2) > 0
        assert np.allclose(pi_back.probs[reach], pi.probs[reach], atol=1e-8)
        for h, s in zip(*np.nonzero(reach)):
            np.testing.assert_allclose(P_back[h, s], model.transitions[s], atol=1e-8)

    def test_zero_rows_become_uniform(self):
        z = np.zeros((1, 2, 2, 2))
        z[0, 0, 0] = [0.25, 0.75]
        pi, P = extract_policy_model(z)
        np.testing.assert_allclose(pi.probs[0, 1], [0.5, 0.5])
        np.testing.assert_allclose(P[0, 0, 1], [0.5, 0.5])
        np.testing.assert_allclose(P[0, 0, 0], [0.25, 0.75])

    def test_solver_noise_is_clipped(self):
        z = np.zeros((1, 1, 1, 2))
        z[0, 0, 0] = [1.0, -5e-8]
        _, P = extract_policy_model(z)
        np.testing.assert_array_equal(P[0, 0, 0], [1.0, 0.0])
        z[0, 0, 0, 1] = -1e-3
        with pytest.raises(ValueError):
            extract_policy_model(z)

    @pytest.mark.parametrize("seed", range(4))
    def test_objective_round_trip(self, seed):
        model = build_random(seed, 3, 2, 4, budget_frac=0.9)
        center = random_counts_center(model, 30, seed)
        sol = solve_extended(center, np.full((3, 2, 3), 0.1), model.objective_cost, model.constraint_cost,
                             model.budget, model.dims, 0)
        assert sol.status == OPTIMAL
        v = policy_value(model, sol.policy, model.objective_cost, sol.transitions)
        c = policy_value(model, sol.policy, model.constraint_cost, sol.transitions)
        assert v == pytest.approx(sol.objective_value, abs=1e-6)
        assert c <= model.budget + 1e-6

    @pytest.mark.parametrize("seed", range(6))
    def test_evi_matches_unconstrained_extended_lp(self, seed):
        model = build_random(seed, 4, 2, 3)
        center = random_counts_center(model, 20, seed)
        radii = np.random.default_rng(seed).random((4, 2, 4)) * 0.3
        sol = solve_extended(center, radii, model.objective_cost, model.constraint_cost, None, model.dims, 0)
        value, policy, transitions = extended_value_iteration(center, radii, model.objective_cost, 3, 0)
        assert value == pytest.approx(sol.objective_value, abs=1e-7)
        assert policy_value(model, policy, model.objective_cost, transitions) == pytest.approx(value, abs=1e-9)
