import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etana.errors import ConfigError, GridTooLarge
from etana.estimation import FeatureOrder, LikelihoodTable
from etana.probability import CostModel, bayes_risk
from etana.solver import (
    build_simplex_grid,
    cost_to_go,
    default_resolution,
    etana_decide,
    grid_size,
    project_to_grid,
    solve_dp,
)

import oracles


def identity_order(K):
    return FeatureOrder(np.arange(K), np.zeros(K))


def brute_nearest(grid, pi):
    d = np.abs(grid.points - pi).sum(axis=1)
    best = np.flatnonzero(d <= d.min() + 1e-12)
    return int(best[0])  # points are in lexicographic order


class TestGrid:
    def test_two_classes_resolution_two(self):
        g = build_simplex_grid(2, 2)
        np.testing.assert_array_equal(g.points, [[0, 1], [0.5, 0.5], [1, 0]])

    def test_corners_only(self):
        g = build_simplex_grid(3, 1)
        assert g.size == 3
        assert sorted(map(tuple, g.points)) == sorted(map(tuple, np.eye(3)))

    @pytest.mark.parametrize("N,G,d", [(3, 10, 66), (2, 100, 101), (4, 7, 120), (5, 3, 35)])
    def test_sizes(self, N, G, d):
        g = build_simplex_grid(N, G)
        assert g.size == d == grid_size(N, G)
        assert len({tuple(p) for p in g.counts}) == d
        np.testing.assert_array_equal(g.counts.sum(axis=1), G)
        assert [tuple(r) for r in g.counts] == sorted(tuple(r) for r in g.counts)

    @pytest.mark.parametrize("N,G", [(2, 9), (3, 10), (4, 7), (5, 4)])
    def test_rank_is_position(self, N, G):
        g = build_simplex_grid(N, G)
        np.testing.assert_array_equal(g.rank(g.counts), np.arange(g.size))

    def test_too_large(self):
        with pytest.raises(GridTooLarge, match="F-ETANA"):
            build_simplex_grid(10, 30)
        with pytest.raises(GridTooLarge):
            build_simplex_grid(3, 10, max_points=50)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            build_simplex_grid(1, 5)
        with pytest.raises(ConfigError):
            build_simplex_grid(3, 0)

    def test_default_resolution(self):
        assert default_resolution(2) == 100
        assert default_resolution(3) == 30
        G = default_resolution(8)
        assert grid_size(8, G) <= 2_000_000 < grid_size(8, G + 1)


class TestProjection:
    def test_exact_point(self):
        g = build_simplex_grid(3, 4)
        for i, p in enumerate(g.points):
            assert project_to_grid(p, g) == i

    def test_nearest(self):
        g = build_simplex_grid(2, 2)
        assert project_to_grid([0.6, 0.4], g) == 1

    def test_tie_prefers_lexicographically_smallest(self):
        g = build_simplex_grid(2, 2)
        # [0.5, 0.5] and [1, 0] are both at L1 distance 0.5
        assert project_to_grid([0.75, 0.25], g) == 1

    @settings(max_examples=200)
    @given(st.integers(2, 4), st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, N, G, seed):
        g = build_simplex_grid(N, G)
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.ones(N) * rng.choice([0.3, 1.0, 5.0]))
        j = project_to_grid(pi, g)
        d = np.abs(g.points - pi).sum(axis=1)
        assert d[j] <= d.min() + 1e-12
        assert j == brute_nearest(g, pi)

    def test_ties_on_half_steps(self):
        g = build_simplex_grid(3, 4)
        for counts in itertools.product(range(9), repeat=3):
            if sum(counts) != 8:
                continue
            pi = np.array(counts) / 8.0
            assert project_to_grid(pi, g) == brute_nearest(g, pi)


class TestCostToGo:
    def test_hand_instance(self):
        lik = LikelihoodTable(np.array([[[0.8, 0.2], [0.2, 0.8]]]))
        cm = CostModel(np.array([0.1]), 1 - np.eye(2))
        vt = solve_dp(lik, cm, order=identity_order(1), grid=build_simplex_grid(2, 10))
        # each bin has predictive probability 0.5 and leaves Bayes risk 0.2
        assert cost_to_go([0.5, 0.5], 0, vt, lik, cm, identity_order(1)) == pytest.approx(0.3)
        assert etana_decide([0.5, 0.5], 0, vt, lik, cm, identity_order(1)).stop is False
        assert vt.values[0, 5] == pytest.approx(0.3)

    def test_uninformative_stage(self):
        K = 3
        lik = LikelihoodTable(np.full((K, 2, 3), 0.5))
        cm = CostModel(np.full(K, 0.02), 1 - np.eye(3))
        grid = build_simplex_grid(3, 10)
        vt = solve_dp(lik, cm, order=identity_order(K), grid=grid)
        pi = grid.points[17]
        for k in range(K):
            assert cost_to_go(pi, k, vt, lik, cm, identity_order(K)) == pytest.approx(0.02 + vt.values[k + 1, 17])

    def test_last_stage_uses_risk(self):
        rng = np.random.default_rng(0)
        lik = LikelihoodTable(rng.dirichlet(np.ones(3), size=(2, 2)).transpose(0, 2, 1))
        cm = CostModel(np.array([0.01, 0.03]), 1 - np.eye(2))
        grid = build_simplex_grid(2, 50)
        vt = solve_dp(lik, cm, order=identity_order(2), grid=grid)
        pi = np.array([0.3, 0.7])
        expect = 0.03
        for v in range(3):
            col = lik.table[1, v]
            pred = col @ pi
            expect += pred * bayes_risk(grid.points[project_to_grid(col * pi / pred, grid)], cm.misclass)
        assert cost_to_go(pi, 1, vt, lik, cm, identity_order(2)) == pytest.approx(expect, abs=1e-14)

    def test_stage_out_of_range(self):
        lik = LikelihoodTable(np.full((1, 2, 2), 0.5))
        cm = CostModel.uniform(1, 2)
        vt = solve_dp(lik, cm, order=identity_order(1), grid=build_simplex_grid(2, 4))
        with pytest.raises(ConfigError):
            cost_to_go([0.5, 0.5], 1, vt, lik, cm, identity_order(1))


class TestSolveDP:
    def test_no_features(self):
        grid = build_simplex_grid(3, 6)
        lik = LikelihoodTable(np.zeros((0, 2, 3)))
        vt = solve_dp(lik, CostModel(np.zeros(0), 1 - np.eye(3)), order=identity_order(0), grid=grid)
        assert vt.values.shape == (1, grid.size)
        np.testing.assert_array_equal(vt.values[0], [bayes_risk(p, 1 - np.eye(3)) for p in grid.points])

    def test_expensive_features_mean_always_stop(self):
        rng = np.random.default_rng(1)
        K = 4
        lik = LikelihoodTable(rng.dirichlet(np.ones(2), size=(K, 3)).transpose(0, 2, 1))
        cm = CostModel(np.full(K, 10.0), 1 - np.eye(3))
        vt = solve_dp(lik, cm, order=identity_order(K), grid=build_simplex_grid(3, 8))
        for k in range(K + 1):
            np.testing.assert_array_equal(vt.values[k], vt.values[K])

    def test_table_invariants(self):
        rng = np.random.default_rng(2)
        K, V, N = 5, 3, 3
        lik = LikelihoodTable(rng.dirichlet(np.ones(V), size=(K, N)).transpose(0, 2, 1))
        cm = CostModel(rng.uniform(0.005, 0.05, K), 1 - np.eye(N))
        grid = build_simplex_grid(N, 12)
        order = FeatureOrder(rng.permutation(K), np.zeros(K))
        vt = solve_dp(lik, cm, order=order, grid=grid)
        g = np.array([bayes_risk(p, cm.misclass) for p in grid.points])
        np.testing.assert_array_equal(vt.values[K], g)
        assert np.all(vt.values <= g + 1e-15)
        assert np.all(vt.values >= 0)
        with pytest.raises(ValueError):
            vt.values[0, 0] = 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        lik = LikelihoodTable(rng.dirichlet(np.ones(2), size=(3, 2)).transpose(0, 2, 1))
        cm = CostModel.uniform(3, 2)
        a = solve_dp(lik, cm, order=identity_order(3), grid=build_simplex_grid(2, 40))
        b = solve_dp(lik, cm, order=identity_order(3), grid=build_simplex_grid(2, 40))
        assert a.values.tobytes() == b.values.tobytes()

    def test_dimension_checks(self):
        lik = LikelihoodTable(np.full((2, 2, 2), 0.5))
        with pytest.raises(ConfigError):
            solve_dp(lik, CostModel.uniform(3, 2), order=identity_order(2), grid=build_simplex_grid(2, 4))
        with pytest.raises(ConfigError):
            solve_dp(lik, CostModel.uniform(2, 2), order=identity_order(2), grid=build_simplex_grid(3, 4))

    def test_value_table_too_large(self, monkeypatch):
        import etana.solver as solver

        monkeypatch.setattr(solver, "MAX_TABLE_ENTRIES", 100)
        lik = LikelihoodTable(np.full((20, 2, 2), 0.5))
        with pytest.raises(GridTooLarge):
            solve_dp(lik, CostModel.uniform(20, 2), order=identity_order(20), grid=build_simplex_grid(2, 10))


class TestDecide:
    def test_final_stage_always_stops(self):
        lik = LikelihoodTable(np.array([[[0.9, 0.1], [0.1, 0.9]]]))
        cm = CostModel(np.array([0.0]), 1 - np.eye(2))
        vt = solve_dp(lik, cm, order=identity_order(1), grid=build_simplex_grid(2, 10))
        d = etana_decide([0.5, 0.5], 1, vt, lik, cm, identity_order(1))
        assert d.stop and d.label == 0

    def test_equality_stops_when_free_features_are_useless(self):
        K = 2
        lik = LikelihoodTable(np.full((K, 3, 2), 1 / 3))
        cm = CostModel(np.zeros(K), 1 - np.eye(2))
        grid = build_simplex_grid(2, 10)
        vt = solve_dp(lik, cm, order=identity_order(K), grid=grid)
        for p in grid.points:
            assert cost_to_go(p, 0, vt, lik, cm, identity_order(K)) == pytest.approx(bayes_risk(p, cm.misclass))
            assert etana_decide(p, 0, vt, lik, cm, identity_order(K)).stop

    @pytest.mark.parametrize("N", [2, 3])
    def test_corners_stop(self, N):
        rng = np.random.default_rng(N)
        for _ in range(20):
            K = int(rng.integers(1, 11))
            V = int(rng.integers(2, 5))
            lik = LikelihoodTable(rng.dirichlet(np.ones(V), size=(K, N)).transpose(0, 2, 1))
            cm = CostModel(rng.uniform(1e-4, 0.1, K), 1 - np.eye(N))
            order = FeatureOrder(rng.permutation(K), np.zeros(K))
            vt = solve_dp(lik, cm, order=order, grid=build_simplex_grid(N, 100 if N == 2 else 20))
            for k in range(K):
                for i in range(N):
                    d = etana_decide(np.eye(N)[i], k, vt, lik, cm, order)
                    assert d.stop and d.label == i


class TestExactInstances:
    def test_value_equals_brute_force_minimum(self):
        rng = np.random.default_rng(11)
        for _ in range(15):
            inst = oracles.random_micro_instance(rng, max_k=2)
            grid = build_simplex_grid(2, inst.exact_resolution())
            vt = solve_dp(inst.table, inst.cost_model, order=inst.order, grid=grid)
            best = float(min(oracles.policy_costs(inst)))
            j0 = project_to_grid(inst.priors, grid)
            assert vt.values[0, j0] == pytest.approx(best, abs=1e-9)

            def decide(pi, k):
                return etana_decide(pi, k, vt, inst.table, inst.cost_model, inst.order)

            etana_cost = oracles.policy_tree_cost(inst, decide)
            assert etana_cost == pytest.approx(best, abs=1e-9)
            assert all(etana_cost <= float(c) + 1e-9 for c in oracles.fixed_stage_costs(inst))

    @pytest.mark.parametrize("N", [2, 3])
    def test_layers_midpoint_concave(self, N):
        rng = np.random.default_rng(100 + N)
        for _ in range(5):
            K = int(rng.integers(1, 4))
            lik, cm = oracles.closed_instance(rng, N, K)
            grid = build_simplex_grid(N, 8)
            vt = solve_dp(lik, cm, order=identity_order(K), grid=grid)
            counts = grid.counts
            for a, b in itertools.combinations(range(grid.size), 2):
                s = counts[a] + counts[b]
                if np.any(s % 2):
                    continue
                m = int(grid.rank(s // 2))
                for k in range(K + 1):
                    assert vt.values[k, m] >= 0.5 * (vt.values[k, a] + vt.values[k, b]) - 1e-9
