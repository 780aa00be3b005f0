from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from apiselect.core import CostTable
from apiselect.selector import (
    DELTA_MIN,
    InfeasibleBudget,
    OnlinePolicy,
    OnlineSelector,
    SelectionInstance,
    brute_force_ilp,
    delta_candidates,
    estimate_p_hat,
    objective_of,
    offline_strategy,
    run_online,
    select_sp,
    select_sp_batch,
    solve_dual_price,
    spend_curve,
    tune_delta,
)

from conftest import random_instance_parts


def oracle_select(row, p, hatted):
    """Plain-Python argmax with cheapest-then-lowest-index tie-break."""
    vals = [a - p * c for a, c in zip(row, hatted)]
    top = max(vals)
    return min((c, k) for k, (v, c) in enumerate(zip(vals, hatted)) if v >= top - 1e-9)[1]


def exact_addon_spend(assign, costs):
    return sum((Fraction(costs.hatted_cost(int(k))) for k in assign), Fraction(0))


def lp_oracle(inst):
    """Generic LP solve of the relaxation with scipy's HiGHS."""
    n, k = inst.acc.shape
    h = inst.costs.hatted_costs()
    res = linprog(
        -inst.acc.ravel() / n,
        A_ub=[np.tile(h, n) / n],
        b_ub=[inst.hatted_budget],
        A_eq=np.kron(np.eye(n), np.ones(k)),
        b_eq=np.ones(n),
        bounds=(0, 1),
        method="highs",
    )
    assert res.success
    return -res.fun


TWO_ROWS = np.array([[0.2, 0.9], [0.2, 0.3]])
TWO_COSTS = CostTable((0.0, 1.0), base=0)


class TestSelectSp:
    def test_zero_price_is_argmax(self):
        assert select_sp([0.5, 0.7, 0.9], 0.0, CostTable((0, 1, 5), 0)) == 2

    def test_large_price_is_base(self):
        costs = CostTable((0.0, 2.0, 4.0), base=0)
        assert select_sp([0.1, 0.9, 1.0], 1 / 2.0 + 1e-3, costs) == 0

    def test_hand_evaluation(self):
        # values 0.5, 0.7 - 0.06, 0.9 - 0.3 = 0.5, 0.64, 0.60
        assert select_sp([0.5, 0.7, 0.9], 0.06, CostTable((0, 1, 5), 0)) == 1

    def test_tie_goes_to_cheapest(self):
        costs = CostTable((0.0, 1.0, 2.0), base=0)
        # At p = 0.1 the API 1 and API 2 values are both 0.5.
        assert select_sp([0.2, 0.6, 0.7], 0.1, costs) == 1

    def test_cost_tie_goes_to_lower_index(self):
        assert select_sp([0.1, 0.8, 0.8], 0.1, CostTable((0.0, 1.0, 1.0), 0)) == 1

    def test_negative_price(self):
        with pytest.raises(ValueError):
            select_sp([0.1, 0.2], -1.0, TWO_COSTS)

    @given(
        st.lists(st.floats(0, 0.9), min_size=3, max_size=3),
        st.floats(0, 2),
        st.floats(0, 0.1),
    )
    def test_shift_invariance(self, row, p, shift):
        costs = CostTable((0.0, 0.5, 1.5), base=0)
        assert select_sp(row, p, costs) == select_sp([a + shift for a in row], p, costs)

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.floats(0, 3))
    def test_batch_matches_oracle(self, seed, p):
        rng = np.random.default_rng(seed)
        acc = rng.uniform(size=(20, 4))
        costs = CostTable(tuple(np.round(rng.uniform(0, 3, 4), 1)), int(rng.integers(4)))
        h = costs.hatted_costs()
        got = select_sp_batch(acc, p, h)
        assert got.tolist() == [oracle_select(r, p, h) for r in acc]
        assert got.tolist() == [select_sp(r, p, costs) for r in acc]


class TestSpendCurve:
    def test_large_price(self):
        inst = SelectionInstance(TWO_ROWS, TWO_COSTS, 1.0)
        assert spend_curve(inst, 100.0) == 0.0

    def test_zero_price_costliest(self):
        inst = SelectionInstance(np.array([[0.1, 0.2, 0.9], [0.0, 0.5, 0.6]]), CostTable((0, 1, 3), 0), 3.0)
        assert spend_curve(inst, 0.0) == 3.0

    def test_hand_example(self):
        inst = SelectionInstance(np.array([[0.5, 0.7, 0.9]]), CostTable((0, 1, 5), 0), 5.0)
        assert spend_curve(inst, 0.06) == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        acc, costs, b = random_instance_parts(rng)
        inst = SelectionInstance(acc, costs, b)
        ps = np.sort(rng.uniform(0, 2, size=30))
        spends = [spend_curve(inst, p) for p in ps]
        assert all(a >= b for a, b in zip(spends, spends[1:]))


class TestSolveDualPrice:
    def test_slack_budget(self):
        inst = SelectionInstance(TWO_ROWS, TWO_COSTS, 1.0)
        assert solve_dual_price(inst, 1.0) == 0.0

    def test_two_row_example(self):
        inst = SelectionInstance(TWO_ROWS, TWO_COSTS, 0.5)
        # breakpoints 0.7 and 0.1; spend is 1 below 0.1, 0.5 on [0.1, 0.7), 0 from 0.7.
        p = solve_dual_price(inst, 0.5)
        assert p == pytest.approx(0.1, abs=1e-15)
        assert spend_curve(inst, p) == 0.5
        assign, obj = brute_force_ilp(inst)
        assert assign.tolist() == [1, 0] and obj == pytest.approx(0.55)
        assert objective_of(TWO_ROWS, select_sp_batch(TWO_ROWS, p, TWO_COSTS.hatted_costs())) == pytest.approx(0.55)

    def test_zero_budget_forces_base(self):
        acc = np.array([[0.1, 0.5, 0.6], [0.3, 0.4, 0.9], [0.5, 0.2, 0.7]])
        costs = CostTable((0.0, 1.0, 2.0), base=0)
        h = costs.hatted_costs()
        # Oracle: scan every pairwise tie price and keep the smallest one where all rows pick the base.
        cands = sorted(
            {(acc[n, i] - acc[n, j]) / (h[i] - h[j]) for n in range(3) for i in range(3) for j in range(3) if h[i] != h[j]}
        )
        expected = min(p for p in cands if p >= 0 and all(oracle_select(r, p, h) == 0 for r in acc))
        assert expected == pytest.approx(0.4)
        got = solve_dual_price(SelectionInstance(acc, costs, 0.0), 0.0)
        assert got == pytest.approx(expected, abs=1e-15)

    def test_negative_budget(self):
        with pytest.raises(ValueError):
            solve_dual_price(SelectionInstance(TWO_ROWS, TWO_COSTS, 0.0), -0.1)

    def test_all_free(self):
        inst = SelectionInstance(TWO_ROWS, CostTable((0.0, 0.0), 0), 0.0)
        assert solve_dual_price(inst, 0.0) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_feasible_and_minimal(self, seed):
        rng = np.random.default_rng(seed)
        acc, costs, b = random_instance_parts(rng)
        inst = SelectionInstance(acc, costs, b)
        h = costs.hatted_costs()
        p = solve_dual_price(inst, inst.hatted_budget)
        limit = Fraction(inst.hatted_budget) * inst.n
        assert exact_addon_spend(select_sp_batch(acc, p, h), costs) <= limit
        # No smaller candidate price is feasible.
        smaller = [q for q in np.unique([(acc[:, i] - acc[:, j]) / (h[i] - h[j])
                                         for i in range(h.size) for j in range(h.size) if h[i] > h[j]]) if 0 <= q < p]
        for q in [0.0, *smaller]:
            if q < p:
                assert exact_addon_spend(select_sp_batch(acc, q, h), costs) > limit

    def test_bisection_path_agrees(self, monkeypatch):
        import apiselect.selector as sel

        rng = np.random.default_rng(5)
        acc, costs, b = rng.uniform(size=(300, 4)), CostTable((0, 1, 2, 4), 0), 1.2
        inst = SelectionInstance(acc, costs, b)
        exact = solve_dual_price(inst, inst.hatted_budget)
        monkeypatch.setattr(sel, "EXACT_BREAKPOINT_LIMIT", 0)
        approx = solve_dual_price(inst, inst.hatted_budget)
        assert approx == pytest.approx(exact, abs=2e-9)
        assert spend_curve(inst, approx) <= inst.hatted_budget


class TestOffline:
    def test_ample_budget(self, rng):
        acc = rng.uniform(size=(10, 3))
        costs = CostTable((0.5, 1.0, 2.0), base=0)
        assign, lp = offline_strategy(SelectionInstance(acc, costs, 0.5 + 2.0))
        assert assign.tolist() == np.argmax(acc, axis=1).tolist()
        assert lp.fractional_rows == []

    def test_base_only_budget(self, rng):
        acc = rng.uniform(size=(10, 3))
        costs = CostTable((0.5, 1.0, 2.0), base=1)
        assign, _ = offline_strategy(SelectionInstance(acc, costs, 1.0))
        assert set(assign.tolist()) == {1}

    def test_infeasible(self):
        with pytest.raises(InfeasibleBudget, match="infeasible"):
            SelectionInstance(TWO_ROWS, CostTable((1.0, 2.0), 0), 0.5)

    def test_random_8x3_against_oracles(self, rng):
        for _ in range(20):
            acc = rng.uniform(size=(8, 3))
            costs = CostTable(tuple(np.round(rng.uniform(0, 5, 3), 2)), 0)
            b = costs.base_cost + rng.uniform(0, costs.hatted_costs().max())
            inst = SelectionInstance(acc, costs, b)
            assign, lp = offline_strategy(inst)
            _, opt = brute_force_ilp(inst)
            assert objective_of(acc, assign) >= opt - 1 / 8
            assert exact_addon_spend(assign, costs) <= Fraction(inst.hatted_budget) * 8
            assert lp.objective == pytest.approx(lp_oracle(inst), abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 100_000))
    def test_lp_is_optimal_sparse_and_feasible(self, seed):
        rng = np.random.default_rng(seed)
        acc, costs, b = random_instance_parts(rng)
        inst = SelectionInstance(acc, costs, b)
        _, lp = offline_strategy(inst)
        np.testing.assert_allclose(lp.z.sum(axis=1), 1.0, atol=1e-12)
        assert (lp.z * costs.hatted_costs()).sum() / inst.n <= inst.hatted_budget + 1e-9
        assert len(lp.fractional_rows) <= 1
        assert (np.count_nonzero(lp.z > 0, axis=1) > 1).sum() <= 1
        assert lp.objective == pytest.approx(lp_oracle(inst), abs=1e-9)


class TestBruteForce:
    def test_single_row(self):
        inst = SelectionInstance(np.array([[0.3, 0.8, 0.5]]), CostTable((0, 1, 1), 0), 5.0)
        assign, obj = brute_force_ilp(inst)
        assert assign.tolist() == [1] and obj == 0.8

    def test_dp_and_exhaustive_agree(self, rng):
        for _ in range(50):
            acc, costs, b = random_instance_parts(rng, n_range=(1, 7))
            inst = SelectionInstance(acc, costs, b)
            a1, o1 = brute_force_ilp(inst, "exhaustive")
            a2, o2 = brute_force_ilp(inst, "dp")
            assert o1 == pytest.approx(o2, abs=1e-12)
            assert objective_of(acc, a2) == pytest.approx(o2, abs=1e-12)
            assert exact_addon_spend(a2, costs) <= Fraction(inst.hatted_budget) * inst.n + Fraction(1, 10**9)

    def test_too_large(self, rng):
        acc = rng.uniform(size=(40, 4))
        inst = SelectionInstance(acc, CostTable((0, 1 / 3, 0.5, 1.0), 0), 0.5)
        with pytest.raises(ValueError, match="too large"):
            brute_force_ilp(inst)


class TestEstimatePHat:
    def test_effective_budget(self):
        inst = SelectionInstance(TWO_ROWS, TWO_COSTS, 6.0)
        assert (1 - 0.01) * (inst.budget - TWO_COSTS.base_cost) == pytest.approx(5.94)

    def test_monotone_in_delta(self, rng):
        acc = rng.uniform(size=(200, 4))
        inst = SelectionInstance(acc, CostTable((0, 1, 2, 3), 0), 1.0)
        ps = [estimate_p_hat(inst, 1.0, d) for d in (0.0, 0.01, 0.05, 0.2, 0.5, 0.9)]
        assert ps == sorted(ps)

    def test_zero_buffer_matches_offline(self, rng):
        acc = rng.uniform(size=(50, 3))
        inst = SelectionInstance(acc, CostTable((0.2, 1, 2), 0), 1.0)
        _, lp = offline_strategy(inst)
        assert estimate_p_hat(inst, 1.0, 0.0) == lp.dual_price

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            estimate_p_hat(SelectionInstance(TWO_ROWS, TWO_COSTS, 1.0), 1.0, 1.0)


class TestOnline:
    def test_huge_price_all_base(self, rng):
        acc = rng.uniform(size=(30, 3))
        costs = CostTable((0.0, 1.0, 2.0), 0)
        policy = OnlinePolicy(1e9, 0.01, 0)
        assign = run_online(acc, policy, 30, 1.0, costs)
        assert set(assign.tolist()) == {0}
        assert policy.residual_budget == 30.0

    def test_exhausted_budget_falls_back(self):
        acc = np.tile([0.1, 0.9], (6, 1))
        costs = CostTable((0.0, 1.0), 0)
        assign = run_online(acc, OnlinePolicy(0.0, 0.01, 0), 6, 0.5, costs)
        assert assign.tolist() == [1, 1, 1, 0, 0, 0]

    def test_cheaper_item_after_rejection(self):
        costs = CostTable((0.0, 1.0, 3.0), 0)
        acc = np.array([[0, 0, 1], [0, 0, 1], [0, 1, 0], [1, 0, 0]], dtype=float)
        assign = run_online(acc, OnlinePolicy(0.0, 0.01, 0), 4, 1.0, costs)
        # Budget 4: first takes 3, second (3) is refused, third (1) fits exactly.
        assert assign.tolist() == [2, 0, 1, 0]

    def test_stream_length_checked(self, rng):
        acc = rng.uniform(size=(5, 2))
        with pytest.raises(ValueError):
            run_online(acc, OnlinePolicy(0.0, 0.01, 0), 6, 1.0, TWO_COSTS)
        with pytest.raises(ValueError):
            run_online(iter(acc), OnlinePolicy(0.0, 0.01, 0), 4, 1.0, TWO_COSTS)
        with pytest.raises(ValueError):
            run_online(iter(acc), OnlinePolicy(0.0, 0.01, 0), 6, 1.0, TWO_COSTS)

    def test_iterable_matches_batch(self, rng):
        acc = rng.uniform(size=(200, 4))
        costs = CostTable((0.1, 0.7, 1.3, 2.9), 1)
        kw = dict(n_items=200, budget=1.1, costs=costs)
        batch = run_online(acc, OnlinePolicy(0.05, 0.01, 1), **kw)
        stream = run_online(((f"id{i}", row) for i, row in enumerate(acc)), OnlinePolicy(0.05, 0.01, 1), **kw)
        assert batch.tolist() == stream.tolist()

    def test_step_api(self):
        sel = OnlineSelector(OnlinePolicy(0.0, 0.01, 0), TWO_COSTS, 2, 0.5)
        assert sel.step([0.1, 0.9]) == 1
        assert sel.step([0.1, 0.9]) == 0
        assert sel.residual_budget == 0.0
        with pytest.raises(ValueError):
            sel.step([0.1, 0.9])

    @settings(max_examples=100, deadline=None)
    @given(
        st.integers(0, 100_000),
        st.floats(0, 1),
        st.sampled_from(["asc", "desc", "random"]),
    )
    def test_never_overspends(self, seed, p_hat, order):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 80))
        costs = CostTable(tuple(rng.uniform(0, 3, 4)), int(rng.integers(4)))
        acc = rng.uniform(size=(n, 4))
        b = costs.base_cost + float(rng.uniform(0, 2))
        cand_cost = costs.hatted_costs()[select_sp_batch(acc, p_hat, costs.hatted_costs())]
        if order != "random":
            idx = np.argsort(cand_cost, kind="stable")
            acc = acc[idx[::-1] if order == "desc" else idx]
        assign = run_online(acc, OnlinePolicy(p_hat, 0.01, costs.base), n, b, costs)
        assert exact_addon_spend(assign, costs) <= n * (Fraction(b) - Fraction(costs.base_cost))


class TestTuneDelta:
    def test_candidates(self):
        cands = delta_candidates(200)
        assert len(cands) == 21
        assert cands[0] == DELTA_MIN and cands[10] == DELTA_MIN
        assert cands[-1] == pytest.approx(10 * np.log(200) / 200)
        assert delta_candidates(200, alphas=[0]) == [DELTA_MIN]

    def test_unbinding_budget_picks_largest(self, rng):
        costs = CostTable((0.0, 1.0, 2.0), 0)
        train = SelectionInstance(rng.uniform(size=(100, 3)), costs, 5.0)
        val = SelectionInstance(rng.uniform(size=(100, 3)), costs, 5.0)
        assert tune_delta(train, val, 5.0) == max(delta_candidates(100))

    def test_alpha_zero(self, rng):
        costs = CostTable((0.0, 1.0), 0)
        train = SelectionInstance(rng.uniform(size=(50, 2)), costs, 0.3)
        val = SelectionInstance(rng.uniform(size=(50, 2)), costs, 0.3)
        assert tune_delta(train, val, 0.3, alphas=[0]) == DELTA_MIN

    def test_early_overspend_prefers_buffer(self, rng):
        costs = CostTable((0.0, 1.0), 0)
        n = 200
        gains = rng.uniform(0, 1, n)
        train = SelectionInstance(np.column_stack([np.zeros(n), gains]), costs, 0.5)
        # Mediocre gains arrive first and would drain the budget before the valuable tail.
        val_gain = np.concatenate([rng.uniform(0.5, 0.6, n // 2), rng.uniform(0.9, 1.0, n // 2)])
        val = SelectionInstance(np.column_stack([np.zeros(n), val_gain]), costs, 0.5)
        small = estimate_p_hat(train, 0.5, DELTA_MIN)
        acc_small = objective_of(val.acc, run_online(val.acc, OnlinePolicy(small, DELTA_MIN, 0), n, 0.5, costs))
        delta = tune_delta(train, val, 0.5)
        p = estimate_p_hat(train, 0.5, delta)
        acc_tuned = objective_of(val.acc, run_online(val.acc, OnlinePolicy(p, delta, 0), n, 0.5, costs))
        assert delta > DELTA_MIN
        assert acc_tuned > acc_small
