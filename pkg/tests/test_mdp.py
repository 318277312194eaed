import json

import numpy as np
import pytest

from robustq import (
    Policy,
    build_tabular_mdp,
    canonical_features,
    greedy_policy,
    load_mdp,
    sample_step,
    save_mdp,
    solve_optimal_q,
    stream,
    stationary_distribution,
    uniform_policy,
)
from robustq.errors import (
    BadDiscount,
    NonFiniteInput,
    NotConverged,
    RowNotStochastic,
    ShapeMismatch,
)
from robustq.mdp import (
    bellman_backup,
    feature_map_from_dict,
    feature_map_to_dict,
    sample_initial_state,
    sample_policy_action,
    solve_q_table,
)
from robustq.environments import BairdSpec, build_baird

from conftest import random_mdp


class TestBuildTabularMDP:
    def test_minimal_valid(self):
        mdp = build_tabular_mdp([[1.0]], [1.0], 0.5, [1.0])
        assert mdp.num_states == 1 and mdp.num_actions == 1
        assert mdp.reward[0] == 1.0

    def test_non_stochastic_row(self):
        with pytest.raises(RowNotStochastic):
            build_tabular_mdp([[0.5, 0.6], [0.5, 0.5]], [0.0, 0.0], 0.5, [0.5, 0.5])

    def test_negative_entry(self):
        with pytest.raises(RowNotStochastic):
            build_tabular_mdp([[1.5, -0.5], [0.5, 0.5]], [0.0, 0.0], 0.5, [0.5, 0.5])

    def test_boundary_discount(self):
        with pytest.raises(BadDiscount):
            build_tabular_mdp([[1.0]], [1.0], 1.0, [1.0])
        with pytest.raises(BadDiscount):
            build_tabular_mdp([[1.0]], [1.0], 0.0, [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            build_tabular_mdp([[1.0]], [1.0, 2.0], 0.5, [1.0])
        with pytest.raises(ShapeMismatch):
            build_tabular_mdp([[1.0]], [1.0], 0.5, [0.5, 0.5])

    def test_bad_initial_dist(self):
        with pytest.raises(RowNotStochastic):
            build_tabular_mdp([[0.5, 0.5], [0.5, 0.5]], [0.0, 0.0], 0.5, [0.7, 0.7])

    def test_immutable(self):
        mdp = random_mdp(0)
        with pytest.raises(ValueError):
            mdp.kernel[0, 0] = 2.0


class TestSolveOptimalQ:
    def test_zero_discount_returns_reward(self):
        rng = np.random.default_rng(1)
        kernel = rng.dirichlet(np.ones(3), size=6)
        reward = rng.random(6)
        q = solve_q_table(kernel, reward, 0.0, 1e-10)
        np.testing.assert_array_equal(q, reward)

    def test_single_state_geometric_series(self):
        mdp = build_tabular_mdp([[1.0]], [1.0], 0.5, [1.0])
        q = solve_optimal_q(mdp, tol=1e-12)
        assert q[0] == pytest.approx(2.0, abs=1e-10)

    def test_matches_policy_iteration(self):
        # oracle: policy iteration with exact linear solves
        mdp = random_mdp(7, num_states=3, num_actions=2, discount=0.9)
        s, a = mdp.num_states, mdp.num_actions
        policy = np.zeros(s, dtype=int)
        for _ in range(50):
            # exact policy evaluation: V = (I - g P_pi)^{-1} r_pi
            rows = np.arange(s) * a + policy
            p_pi = mdp.kernel[rows]
            r_pi = mdp.reward[rows]
            v = np.linalg.solve(np.eye(s) - mdp.discount * p_pi, r_pi)
            q_pi = mdp.reward + mdp.discount * (mdp.kernel @ v)
            improved = q_pi.reshape(s, a).argmax(axis=1)
            if np.array_equal(improved, policy):
                break
            policy = improved
        q_star = solve_optimal_q(mdp, tol=1e-12)
        np.testing.assert_allclose(q_star, q_pi, atol=1e-8)

    def test_residual_contract(self):
        for seed in range(5):
            mdp = random_mdp(seed, num_states=5, num_actions=3, discount=0.95)
            tol = 1e-9
            q = solve_optimal_q(mdp, tol=tol)
            tq = bellman_backup(mdp.kernel, mdp.reward, mdp.discount, q)
            assert np.abs(tq - q).max() <= tol

    def test_contraction_property(self):
        mdp = random_mdp(3, num_states=4, num_actions=2, discount=0.9)
        rng = np.random.default_rng(12)
        for _ in range(1000):
            q1 = rng.normal(size=8) * 10
            q2 = rng.normal(size=8) * 10
            t1 = bellman_backup(mdp.kernel, mdp.reward, mdp.discount, q1)
            t2 = bellman_backup(mdp.kernel, mdp.reward, mdp.discount, q2)
            assert (
                np.abs(t1 - t2).max() <= mdp.discount * np.abs(q1 - q2).max() + 1e-12
            )


class TestGreedyPolicy:
    def test_strict_max(self):
        pol = greedy_policy(np.array([1.0, 3.0]), num_actions=2)
        assert pol.actions[0] == 1

    def test_tie_lowest_index(self):
        pol = greedy_policy(np.array([2.0, 2.0]), num_actions=2)
        assert pol.actions[0] == 0

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            greedy_policy(np.array([np.nan, 1.0]), num_actions=2)

    def test_beats_all_deterministic_policies(self):
        # brute force over all A^S deterministic policies of a 5-state MDP
        mdp = random_mdp(21, num_states=5, num_actions=2, discount=0.9)
        s, a = mdp.num_states, mdp.num_actions
        q_star = solve_optimal_q(mdp, tol=1e-12)
        greedy = greedy_policy(q_star, a).actions

        def value_of(policy):
            rows = np.arange(s) * a + policy
            v = np.linalg.solve(
                np.eye(s) - mdp.discount * mdp.kernel[rows], mdp.reward[rows]
            )
            return mdp.initial_dist @ v

        best = max(
            value_of(np.array([(code // a**i) % a for i in range(s)]))
            for code in range(a**s)
        )
        assert value_of(np.asarray(greedy)) == pytest.approx(best, abs=1e-8)


class TestSampleStep:
    def test_point_mass(self):
        kernel = np.zeros((2, 2))
        kernel[:, 1] = 1.0
        mdp = build_tabular_mdp(kernel, [0.0, 0.0], 0.5, [1.0, 0.0], num_actions=1)
        rng = stream(5, "env")
        for _ in range(50):
            t = sample_step(mdp, 0, 0, rng)
            assert t.next_state == 1

    def test_uniform_frequencies(self):
        kernel = np.full((6, 6), 1.0 / 6.0)
        mdp = build_tabular_mdp(
            kernel, np.zeros(6), 0.5, np.full(6, 1.0 / 6.0), num_actions=1
        )
        rng = stream(6, "env")
        draws = 600_000
        u = rng.random(draws)
        counts = np.bincount(
            np.minimum(np.searchsorted(mdp.kernel_cdf[0], u, side="right"), 5),
            minlength=6,
        )
        freqs = counts / draws
        assert np.abs(freqs - 1 / 6).max() < 0.01 * (1 / 6)
        from scipy.stats import chisquare

        assert chisquare(counts).pvalue > 0.001

    def test_same_seed_same_sequence(self):
        mdp = random_mdp(9)
        r1, r2 = stream(11, "env"), stream(11, "env")
        t1 = [sample_step(mdp, i % 4, i % 2, r1) for i in range(200)]
        t2 = [sample_step(mdp, i % 4, i % 2, r2) for i in range(200)]
        assert t1 == t2

    def test_reward_lookup(self):
        mdp = random_mdp(2)
        t = sample_step(mdp, 1, 1, stream(0, "env"))
        assert t.reward == mdp.reward[1 * mdp.num_actions + 1]

    def test_block_draws_match_scalar_draws(self):
        # chunked pre-generation must reproduce the one-at-a-time stream
        blocks = stream(3, "x").random(64)
        gen = stream(3, "x")
        singles = np.array([gen.random() for _ in range(64)])
        np.testing.assert_array_equal(blocks, singles)


class TestStationaryDistribution:
    def test_iid_chain(self):
        nu = np.array([0.2, 0.3, 0.5])
        kernel = np.tile(nu, (3, 1))
        mdp = build_tabular_mdp(kernel, np.zeros(3), 0.5, nu, num_actions=1)
        mu = stationary_distribution(mdp, uniform_policy(3, 1))
        np.testing.assert_allclose(mu, nu, atol=1e-9)

    def test_periodic_chain_not_converged(self):
        kernel = np.array([[0.0, 1.0], [1.0, 0.0]])
        mdp = build_tabular_mdp(kernel, np.zeros(2), 0.5, [1.0, 0.0], num_actions=1)
        with pytest.raises(NotConverged):
            stationary_distribution(mdp, uniform_policy(2, 1), max_iter=10_000)

    def test_baird_matches_eigenvector(self):
        mdp, _ = build_baird(BairdSpec(seed=3))
        behavior = uniform_policy(6, 2)
        mu = stationary_distribution(mdp, behavior, tol=1e-13)
        from robustq.mdp import behavior_chain

        chain = behavior_chain(mdp, behavior)
        vals, vecs = np.linalg.eig(chain.T)
        idx = np.argmin(np.abs(vals - 1.0))
        v = np.real(vecs[:, idx])
        v = v / v.sum()
        np.testing.assert_allclose(mu, v, atol=1e-9)
        assert mu.min() > 0

    def test_strictly_positive_on_ergodic(self):
        mdp = random_mdp(14)
        mu = stationary_distribution(mdp, uniform_policy(4, 2))
        assert mu.min() > 0
        assert mu.sum() == pytest.approx(1.0, abs=1e-12)


class TestCanonicalFeatures:
    def test_identity_matrix(self):
        feats = canonical_features(2, 2)
        np.testing.assert_array_equal(feats.matrix, np.eye(4))

    def test_unit_norms(self):
        feats = canonical_features(3, 2)
        np.testing.assert_array_equal(feats.column_norms, np.ones(6))

    def test_norm_cache_matches_recompute(self):
        rng = np.random.default_rng(8)
        from robustq import FeatureMap

        mat = rng.normal(size=(5, 8))
        feats = FeatureMap(mat, 4, 2)
        np.testing.assert_allclose(
            feats.column_norms, np.linalg.norm(mat, axis=0), atol=1e-12
        )


class TestSerialization:
    def test_mdp_round_trip(self, tmp_path):
        mdp = random_mdp(4)
        path = tmp_path / "mdp.json"
        save_mdp(mdp, path)
        loaded = load_mdp(path)
        np.testing.assert_array_equal(loaded.kernel, mdp.kernel)
        np.testing.assert_array_equal(loaded.reward, mdp.reward)
        np.testing.assert_array_equal(loaded.initial_dist, mdp.initial_dist)
        assert loaded.discount == mdp.discount

    def test_feature_map_round_trip(self):
        rng = np.random.default_rng(5)
        from robustq import FeatureMap

        feats = FeatureMap(rng.normal(size=(3, 8)), 4, 2)
        again = feature_map_from_dict(json.loads(json.dumps(feature_map_to_dict(feats))))
        np.testing.assert_array_equal(again.matrix, feats.matrix)

    def test_canonical_round_trip(self):
        feats = canonical_features(3, 2)
        again = feature_map_from_dict(feature_map_to_dict(feats))
        assert again.is_canonical and again.dim == 6


def test_policy_validation():
    with pytest.raises(RowNotStochastic):
        Policy(np.array([[0.6, 0.6]]))
    with pytest.raises(RowNotStochastic):
        Policy(np.array([[1.5, -0.5]]))


def test_sampling_helpers_deterministic(ref_mdp, ref_behavior):
    s1 = [
        sample_initial_state(ref_mdp, stream(77, k, "env")) for k in range(20)
    ]
    s2 = [
        sample_initial_state(ref_mdp, stream(77, k, "env")) for k in range(20)
    ]
    assert s1 == s2
    rng = stream(4, "env")
    actions = [sample_policy_action(ref_behavior, 0, rng) for _ in range(100)]
    assert set(actions) <= {0, 1}
