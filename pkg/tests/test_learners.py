"""回放缓冲区、联合动作Q、演员-评论家更新与动作选择"""

import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import make_transition
from src.config import HEAD_AUTO, LearnerConfig
from src.climb_games import reward_one_step
from src.learners import (
    ActionMode, FactoredQLearner, JointQLearner, MaddpgLearner, ReplayBuffer, actor_critic_update,
    actor_gradients, factored_q_update, joint_action_from_index, joint_action_index, linear_epsilon,
    make_learner, q_update, select_action,
)
from src.networks import SgdOptimizer, init_mlp, mlp_predict, zeros_like_mlp
from src.exceptions import InvalidArgumentError, InvalidConfigError


class TestReplayBuffer:

    @given(capacity=st.integers(1, 20), n=st.integers(0, 60))
    @settings(max_examples=60, deadline=None)
    def test_keeps_most_recent_in_order(self, capacity, n):
        buf = ReplayBuffer(capacity)
        buf.extend(range(n))
        assert len(buf) == min(n, capacity)
        assert buf.transitions() == list(range(max(0, n - capacity), n))

    def test_sample_from_empty(self):
        with pytest.raises(InvalidArgumentError):
            ReplayBuffer(4).sample(2, np.random.default_rng(0))

    def test_zero_capacity(self):
        with pytest.raises(InvalidArgumentError):
            ReplayBuffer(0)


class TestJointActions:

    def test_mixed_radix_index(self):
        assert joint_action_index(np.array([2, 1]), 3)[0] == 7
        assert joint_action_from_index(7, 2, 3).tolist() == [2, 1]

    def test_index_is_bijective(self):
        seen = set()
        for a in itertools.product(range(3), repeat=3):
            idx = int(joint_action_index(np.array(a), 3)[0])
            assert joint_action_from_index(idx, 3, 3).tolist() == list(a)
            seen.add(idx)
        assert seen == set(range(27))

    def test_joint_space_too_large(self):
        with pytest.raises(InvalidConfigError) as info:
            JointQLearner(1, 4, 10, LearnerConfig(), np.random.default_rng(0))
        assert info.value.details['value'] == 10 ** 4


def _reward_with_penalty(action, delta):
    """k=2 的两智能体爬山回报: (0,0) 得 1，单边 0 得 0，其余 1-δ"""
    a = tuple(action)
    if a == (0, 0):
        return 1.0
    return 0.0 if 0 in a else 1.0 - delta


class TestFactoredHead:

    def _fit(self, counts, delta=0.25, steps=2000):
        cfg = LearnerConfig(HIDDEN_SIZES=(16,), CRITIC_LR=0.05)
        state = np.array([1.0])
        batch = []
        for a in itertools.product(range(3), repeat=2):
            batch += [make_transition(state, a, _reward_with_penalty(a, delta))] * counts.get(a, 1)
        q = init_mlp([1, 16, 6], np.random.default_rng(0))
        optimizer = SgdOptimizer(cfg.CRITIC_LR, cfg.GRAD_CLIP)
        for _ in range(steps):
            q, _ = factored_q_update(q, q, batch, cfg, 2, 3, optimizer)
        learner = FactoredQLearner(1, 2, 3, cfg, np.random.default_rng(1))
        learner.load_networks({'q': q})
        return learner.greedy_action(state)

    def test_greedy_is_per_agent_argmax(self):
        learner = FactoredQLearner(1, 2, 3, LearnerConfig(HIDDEN_SIZES=(8,)), np.random.default_rng(0))
        learner.q.weights[-1][...] = 0.0
        learner.q.biases[-1][...] = np.array([0.1, 0.9, 0.2, 0.5, 0.0, 0.7])
        state = np.array([1.0])
        assert learner.greedy_action(state).tolist() == [1, 2]
        q = learner.q_values(state)
        assert q.shape == (9,)
        assert q[5] == pytest.approx(1.6)
        assert joint_action_from_index(int(np.argmax(q)), 2, 3).tolist() == [1, 2]

    def test_uniform_data_settles_on_penalty_block(self):
        # 加性模型下动作0的边际均值 1/3 低于动作1、2的 1/2
        greedy = self._fit({})
        assert 0 not in greedy.tolist()

    def test_concentrated_data_finds_optimum(self):
        greedy = self._fit({(0, 0): 11})
        assert greedy.tolist() == [0, 0]

    def test_zero_discount_targets_are_rewards(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(4,), GAMMA=0.0)
        rng = np.random.default_rng(0)
        q = zeros_like_mlp(init_mlp([1, 4, 6], rng))
        q_target = init_mlp([1, 4, 6], rng)
        batch = [make_transition([1.0], [0, 2], 1.0, done=False),
                 make_transition([1.0], [1, 1], 2.0, done=False)]
        _, loss = factored_q_update(q, q_target, batch, cfg, 2, 3)
        assert loss == pytest.approx(2.5)

    def test_auto_head_follows_joint_space_size(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(8,), VALUE_HEAD=HEAD_AUTO)
        small = SimpleNamespace(discrete=True, state_dim=1, n_agents=2, n_actions=3)
        large = SimpleNamespace(discrete=True, state_dim=1, n_agents=4, n_actions=10)
        assert type(make_learner(small, cfg, np.random.default_rng(0))) is JointQLearner
        assert isinstance(make_learner(large, cfg, np.random.default_rng(0)), FactoredQLearner)

    def test_default_head_is_factored(self):
        env = SimpleNamespace(discrete=True, state_dim=1, n_agents=2, n_actions=3)
        learner = make_learner(env, LearnerConfig(HIDDEN_SIZES=(8,)), np.random.default_rng(0))
        assert isinstance(learner, FactoredQLearner)
        assert learner.q.out_dim == 6

    def test_unknown_head(self):
        env = SimpleNamespace(discrete=True, state_dim=1, n_agents=2, n_actions=3)
        with pytest.raises(InvalidConfigError):
            make_learner(env, LearnerConfig(VALUE_HEAD='mixer'), np.random.default_rng(0))


class TestQUpdate:

    def test_loss_with_zero_network(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(8,))
        q = zeros_like_mlp(init_mlp([2, 8, 4], np.random.default_rng(0)))
        batch = [make_transition([0.0, 1.0], [1, 0], 1.0) for _ in range(5)]
        _, loss = q_update(q, q.copy(), batch, cfg, 2)
        assert loss == pytest.approx(1.0)

    def test_learns_optimal_joint_action(self, one_step_spec):
        cfg = LearnerConfig(HIDDEN_SIZES=(16,), CRITIC_LR=0.05)
        state = np.array([1.0])
        batch = [make_transition(state, a, reward_one_step(one_step_spec, a))
                 for a in itertools.product(range(3), repeat=2)]
        q = init_mlp([1, 16, 9], np.random.default_rng(0))
        optimizer = SgdOptimizer(cfg.CRITIC_LR, cfg.GRAD_CLIP)
        for _ in range(2000):
            q, loss = q_update(q, q, batch, cfg, 3, optimizer)
        assert loss < 1e-3
        learner = JointQLearner(1, 2, 3, cfg, np.random.default_rng(1))
        learner.load_networks({'q': q})
        assert learner.greedy_action(state).tolist() == [0, 0]

    def test_shaped_reward_is_used_when_requested(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(4,))
        q = zeros_like_mlp(init_mlp([1, 4, 4], np.random.default_rng(0)))
        batch = [make_transition([0.0], [0, 1], 0.0, shaped_reward=2.0)]
        _, plain = q_update(q, q, batch, cfg, 2)
        _, shaped = q_update(q, q, batch, cfg, 2, shaped=True)
        assert plain == pytest.approx(0.0)
        assert shaped == pytest.approx(4.0)

    def test_zero_discount_targets_are_rewards(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(4,), GAMMA=0.0)
        rng = np.random.default_rng(0)
        q = zeros_like_mlp(init_mlp([1, 4, 9], rng))
        q_target = init_mlp([1, 4, 9], rng)
        batch = [make_transition([1.0], [0, 0], 1.0, done=False),
                 make_transition([1.0], [1, 1], 2.0, done=False)]
        _, loss = q_update(q, q_target, batch, cfg, 3)
        assert loss == pytest.approx(2.5)

    def test_empty_batch(self):
        q = init_mlp([1, 4, 4], np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            q_update(q, q, [], LearnerConfig(), 2)


class TestActorCritic:

    def test_actor_climbs_quadratic_critic(self):
        rng = np.random.default_rng(0)
        actor = init_mlp([3, 8, 1], rng, output_activation='tanh', output_scale=0.1)
        obs = rng.normal(size=(4, 3))
        optimizer = SgdOptimizer(0.1)
        for _ in range(500):
            grads, _ = actor_gradients(actor, obs, lambda a: -2.0 * (a - 0.3))
            actor = optimizer.step(actor, grads)
        np.testing.assert_allclose(mlp_predict(actor, obs).ravel(), 0.3, atol=0.01)

    def test_constant_critic_leaves_actors_unchanged(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(8,))
        rng = np.random.default_rng(2)
        actors = [init_mlp([4, 8, 2], rng, output_activation='tanh') for _ in range(2)]
        critic = zeros_like_mlp(init_mlp([4 + 4, 8, 1], rng))
        targets = ([a.copy() for a in actors], critic.copy())
        batch = [make_transition(rng.normal(size=4), rng.uniform(-1, 1, size=(2, 2)), 0.0, done=False)
                 for _ in range(6)]
        new_actors, new_critic, _, losses = actor_critic_update(actors, critic, targets, batch, cfg)
        assert losses['critic'] == pytest.approx(0.0)
        for new, old in zip(new_actors, actors):
            for a, b in zip(new.arrays(), old.arrays()):
                np.testing.assert_array_equal(a, b)

    def test_targets_follow_soft_update(self):
        cfg = LearnerConfig(HIDDEN_SIZES=(8,), TAU=0.01)
        rng = np.random.default_rng(0)
        actors = [init_mlp([4, 8, 2], rng, output_activation='tanh') for _ in range(2)]
        critic = init_mlp([4 + 4, 8, 1], rng)
        targets = ([init_mlp([4, 8, 2], rng, output_activation='tanh') for _ in range(2)],
                   init_mlp([8, 8, 1], rng))
        batch = [make_transition(rng.normal(size=4), rng.uniform(-1, 1, size=(2, 2)), float(rng.random()),
                                 done=False)
                 for _ in range(6)]
        new_actors, new_critic, new_targets, losses = actor_critic_update(actors, critic, targets, batch, cfg)
        assert set(losses) == {'critic', 'actor'}
        for new, old, online in zip(new_targets[1].arrays(), targets[1].arrays(), new_critic.arrays()):
            np.testing.assert_allclose(new, 0.99 * old + 0.01 * online)
        for i in range(2):
            for new, old, online in zip(new_targets[0][i].arrays(), targets[0][i].arrays(),
                                        new_actors[i].arrays()):
                np.testing.assert_allclose(new, 0.99 * old + 0.01 * online)


class TestActionSelection:

    @pytest.fixture
    def learner(self):
        return JointQLearner(1, 2, 3, LearnerConfig(HIDDEN_SIZES=(8,)), np.random.default_rng(0))

    def test_full_epsilon_is_uniform(self, learner):
        rng = np.random.default_rng(5)
        draws = [select_action(learner, np.array([1.0]), None, ActionMode.eps_greedy(1.0), rng)
                 for _ in range(9000)]
        counts = np.bincount(joint_action_index(np.stack(draws), 3), minlength=9)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_zero_epsilon_is_greedy(self, learner):
        rng = np.random.default_rng(6)
        state = np.array([1.0])
        greedy = learner.greedy_action(state)
        for _ in range(20):
            chosen = select_action(learner, state, None, ActionMode.eps_greedy(0.0), rng)
            assert chosen.tolist() == greedy.tolist()

    def test_noisy_mode_needs_continuous_policy(self, learner):
        with pytest.raises(InvalidArgumentError):
            select_action(learner, np.array([1.0]), None, ActionMode.noisy(0.1), np.random.default_rng(0))

    def test_zero_noise_returns_actor_output(self):
        rng = np.random.default_rng(3)
        policy = MaddpgLearner(4, 4, 2, 2, LearnerConfig(HIDDEN_SIZES=(8,)), rng)
        obs = [rng.normal(size=4), rng.normal(size=4)]
        chosen = select_action(policy, None, obs, ActionMode.noisy(0.0), rng)
        np.testing.assert_allclose(chosen, policy.greedy_action(None, obs))

    def test_linear_epsilon(self):
        assert linear_epsilon(0, 1.0, 0.05, 100) == 1.0
        assert linear_epsilon(50, 1.0, 0.05, 100) == pytest.approx(0.525)
        assert linear_epsilon(500, 1.0, 0.05, 100) == pytest.approx(0.05)
