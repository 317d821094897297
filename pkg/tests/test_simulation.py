import numpy as np
import pytest

from dcim import (
    LOAD_STATES,
    ConfigurationError,
    ConstraintRule,
    InfluenceModel,
    build_constraint_matrix,
    build_effective_influence,
    build_total_influence,
    expected_state,
    get_policy,
    node_marginals,
    one_hot,
    run_trajectory,
    sample_next,
    step_marginal,
    step_sample,
)
from dcim.simulation import draw_uniforms, marginal_from_constraints, node_stream
from oracles import block_expansion, original_im_step, random_model

ALWAYS = ConstraintRule.always()
NEVER = ConstraintRule.never()


def test_single_node_identity_chain():
    model = InfluenceModel.build(LOAD_STATES, [[1.0]], np.eye(3))
    assert np.array_equal(step_marginal(np.array([1]), model, ALWAYS), [0.0, 1.0, 0.0])


def test_all_ones_matches_original_im_on_pair(pair):
    for state in np.ndindex(3, 3):
        p = step_marginal(np.array(state), pair, ALWAYS).reshape(2, 3)
        assert np.array_equal(p, original_im_step(state, pair))


def test_three_node_policy1_matches_block_expansion(three_node):
    rule = get_policy("P1")
    for state in np.ndindex(3, 3, 3):
        state = np.array(state)
        c = build_constraint_matrix(rule, state, three_node)
        p = step_marginal(state, three_node, rule).reshape(3, 3)
        assert np.allclose(p, block_expansion(state, three_node, c), atol=1e-12, rtol=0)


def test_identity_constraints_keep_own_chain_exactly(rng):
    for _ in range(50):
        model = random_model(rng, int(rng.integers(1, 7)), dyadic=True)
        state = rng.integers(3, size=model.n)
        p = step_marginal(state, model, NEVER).reshape(model.n, 3)
        assert np.array_equal(p, model.a_self[np.arange(model.n), state])
        # the per-edge selection form rounds each folded term separately
        assert np.allclose(node_marginals(state, model, np.eye(model.n)), p, atol=1e-15, rtol=0)


def test_node_marginals_agree_with_matrix_product(rng):
    for _ in range(100):
        model = random_model(rng, int(rng.integers(1, 8)))
        state = rng.integers(3, size=model.n)
        c = (rng.random((model.n, model.n)) < 0.5).astype(np.int8)
        np.fill_diagonal(c, 1)
        full = marginal_from_constraints(state, model, c).reshape(model.n, 3)
        assert np.allclose(node_marginals(state, model, c), full, atol=1e-15, rtol=0)
        assert np.allclose(full, block_expansion(state, model, c), atol=1e-12, rtol=0)
        assert np.all(np.abs(full.sum(axis=1) - 1) < 1e-10) and np.all(full >= 0)


def test_column_restricted_marginals(rng):
    model = random_model(rng, 6)
    states = rng.integers(3, size=(10, 6))
    c = build_constraint_matrix(get_policy("P5"), states, model)
    full = node_marginals(states, model, c)
    for k in range(3):
        assert np.array_equal(node_marginals(states, model, c, column=k), full[..., k])


def test_state_shape_is_checked(pair):
    with pytest.raises(ConfigurationError):
        step_marginal(np.array([0, 1, 2]), pair, ALWAYS)


class TestSampling:
    def test_identity_e_with_deterministic_chains(self):
        succ = np.eye(3)[[1, 2, 0]]
        model = InfluenceModel.build(LOAD_STATES, np.eye(3), succ)
        state = np.array([0, 1, 2])
        nxt = step_sample(state, model, ALWAYS, np.random.default_rng(0))
        assert nxt.tolist() == [1, 2, 0]

    def test_empirical_frequencies_match_marginal(self, three_node):
        rule = get_policy("P3")
        state = np.array([2, 1, 0])
        c = build_constraint_matrix(rule, state, three_node)
        u = np.random.default_rng(7).random((100_000, 3, 2))
        draws = sample_next(np.broadcast_to(state, (len(u), 3)), three_node, c, u)
        freq = np.stack([np.bincount(draws[:, i], minlength=3) / len(u) for i in range(3)])
        exact = step_marginal(state, three_node, rule).reshape(3, 3)
        assert np.abs(freq - exact).max() <= 0.01

    def test_never_draws_zero_probability_states(self, pair):
        u = np.random.default_rng(1).random((20_000, 2, 2))
        state = np.array([0, 1])
        c = build_constraint_matrix(ALWAYS, state, pair)
        draws = sample_next(np.broadcast_to(state, (len(u), 2)), pair, c, u)
        p = step_marginal(state, pair, ALWAYS).reshape(2, 3)
        assert np.all(p[np.arange(2), draws] > 0)

    def test_per_node_generators(self, three_node):
        state = np.array([0, 1, 2])
        a = step_sample(state, three_node, ALWAYS, [node_stream(5, 0, i) for i in range(3)])
        b = step_sample(state, three_node, ALWAYS, [node_stream(5, 0, i) for i in range(3)])
        assert np.array_equal(a, b)


class TestTrajectory:
    def test_horizon_one(self, pair):
        traj = run_trajectory(np.array([0, 2]), pair, ALWAYS, 1, seed=3)
        assert traj.states.shape == (2, 2) and traj.step_probs.shape == (1, 6)

    def test_horizon_zero_is_rejected(self, pair):
        with pytest.raises(ConfigurationError):
            run_trajectory(np.array([0, 2]), pair, ALWAYS, 0, seed=3)

    def test_same_seed_same_path(self, lb30):
        start = np.zeros(30, dtype=int)
        a = run_trajectory(start, lb30, get_policy("P3"), 30, seed=11, run_id=4)
        b = run_trajectory(start, lb30, get_policy("P3"), 30, seed=11, run_id=4)
        c = run_trajectory(start, lb30, get_policy("P3"), 30, seed=12, run_id=4)
        assert np.array_equal(a.states, b.states) and np.array_equal(a.step_probs, b.step_probs)
        assert not np.array_equal(a.states, c.states)

    def test_batched_engine_reproduces_single_runs(self, lb30):
        rule = get_policy("P4")
        horizon, runs = 15, 3
        starts = np.random.default_rng(2).integers(3, size=(runs, 30))
        u = draw_uniforms(9, range(runs), 30, horizon)
        s = starts.copy()
        for t in range(horizon):
            s = sample_next(s, lb30, build_constraint_matrix(rule, s, lb30), u[:, :, t])
        for r in range(runs):
            single = run_trajectory(starts[r], lb30, rule, horizon, seed=9, run_id=r)
            assert np.array_equal(single.states[-1], s[r])

    def test_absorbing_fixture_stays_normal(self):
        at_n = np.tile([0.0, 1.0, 0.0], (3, 1))
        d = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
        model = InfluenceModel.build(LOAD_STATES, d, at_n, default_cross=at_n).validated()
        traj = run_trajectory(np.array([0, 2, 0]), model, NEVER, 20, seed=0)
        assert np.all(traj.states[1:] == 1)
        assert np.array_equal(traj.step_probs, np.tile(one_hot([1, 1, 1], 3), (20, 1)))

    def test_long_run_blocks_stay_normalised(self, lb30):
        traj = run_trajectory(np.full(30, 2), lb30, get_policy("P3"), 1000, seed=1)
        blocks = traj.step_probs.reshape(1000, 30, 3)
        assert np.abs(blocks.sum(axis=-1) - 1).max() < 1e-10
        for t in range(1000):
            assert np.all(blocks[t, np.arange(30), traj.states[t + 1]] > 0)

    def test_rows_layout(self, pair):
        traj = run_trajectory(np.array([0, 2]), pair, ALWAYS, 2, seed=3, run_id=7)
        rows = list(traj.rows())
        assert len(rows) == 3 * 2
        assert rows[0] == (7, 0, 0, "O", 1.0, 0.0, 0.0)
        assert rows[2][:3] == (7, 1, 0)


class TestExpectedState:
    def test_empty_sequence(self):
        s0 = one_hot([0, 2], 3)
        assert np.array_equal(expected_state(s0, []), s0)

    def test_single_step_equals_marginal(self, pair):
        state = np.array([2, 0])
        c = build_constraint_matrix(get_policy("P1"), state, pair)
        h = build_total_influence(build_effective_influence(pair.d, c), pair, c)
        assert np.array_equal(expected_state(one_hot(state, 3), [h]), step_marginal(state, pair, get_policy("P1")))

    def test_repeated_marginals_equal_power(self, pair):
        c = np.ones((2, 2))
        h = build_total_influence(pair.d, pair, c)
        p = one_hot([1, 2], 3)
        chained = p
        for _ in range(12):
            chained = chained @ h
        assert np.allclose(expected_state(p, [h] * 12), chained, atol=1e-10)
        assert np.allclose(expected_state(p, [h] * 12), p @ np.linalg.matrix_power(h, 12), atol=1e-10)

    def test_ergodic_limit(self):
        a = np.array([[0.9, 0.1], [0.2, 0.8]])
        p = expected_state([1.0, 0.0], [a] * 10_000)
        assert np.abs(p - [2 / 3, 1 / 3]).max() < 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            expected_state([1.0, 0.0], [np.eye(3)])
