"""元训练与元测试: 退火、收敛判定、策略集存取与完整流程"""

from dataclasses import replace

import numpy as np
import pytest

from src.climb_games import ClimbGameEnv, sample_tasks
from src.config import AnnealSchedule, LearnerConfig, MetaTrainConfig, SubspaceConfig
from src.learners import ActionMode, make_learner
from src.models import ClusterHash, CountScope, PseudoCounts, Trajectory, ValuableSet
from src.meta import (
    ExplorationPolicySet, anneal_probability, convergence_check, env_dims, episode_score,
    harvest, make_env, measure_gated_visits, meta_test, meta_train, rollout, train_exploration_policy,
)
from src.subspace import update_global_counts
from src.exceptions import ArtifactError, HarvestFailureError, InvalidArgumentError

from conftest import make_transition


class TestSchedule:

    def test_linear_anneal(self):
        schedule = AnnealSchedule(P_START=0.5, T_END=100)
        assert anneal_probability(schedule, 0) == 0.5
        assert anneal_probability(schedule, 50) == pytest.approx(0.25)
        assert anneal_probability(schedule, 100) == 0.0
        assert anneal_probability(schedule, 10_000) == 0.0

    def test_step_anneal(self):
        schedule = AnnealSchedule(P_START=0.3, T_END=10, SHAPE='step')
        assert [anneal_probability(schedule, t) for t in (0, 9, 10)] == [0.3, 0.3, 0.0]

    def test_monotone_non_increasing(self):
        schedule = AnnealSchedule(P_START=0.8, T_END=37)
        values = [anneal_probability(schedule, t) for t in range(60)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_negative_step(self):
        with pytest.raises(InvalidArgumentError):
            anneal_probability(AnnealSchedule(), -1)

    def test_convergence_check(self):
        assert not convergence_check([1.0] * 5, 3, 0.02)
        assert convergence_check([1.0] * 6, 3, 0.02)
        assert not convergence_check([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 3, 0.02)


class TestRollout:

    def test_one_step_episode(self, one_step_spec, small_learner_cfg):
        env = make_env(one_step_spec)
        rng = np.random.default_rng(0)
        learner = make_learner(env, small_learner_cfg, rng)
        traj = rollout(env, learner, ActionMode.uniform(), rng, task_id=2)
        assert len(traj) == 1 and traj.transitions[0].done
        assert traj.transitions[0].task_id == 2

    def test_multi_stage_length(self, multi_stage_spec, small_learner_cfg):
        env = make_env(multi_stage_spec)
        rng = np.random.default_rng(0)
        learner = make_learner(env, small_learner_cfg, rng)
        assert len(rollout(env, learner, ActionMode.uniform(), rng)) == 2

    def test_discrete_score_is_mean_reward(self, multi_stage_spec):
        env = ClimbGameEnv(multi_stage_spec)
        traj = Trajectory([make_transition([0.0], [0, 0], 1.0, done=False),
                           make_transition([0.0], [0, 0], 0.0)])
        assert episode_score(traj, env) == pytest.approx(0.5)
        assert episode_score(Trajectory(), env) == 0.0


def _policy_set(env, cfg, n=2):
    rng = np.random.default_rng(11)
    policies = [make_learner(env, cfg, rng) for _ in range(n)]
    return ExplorationPolicySet(
        policies=policies,
        histograms=[np.zeros(2, dtype=np.int64) for _ in range(n)],
        cluster_hash=ClusterHash(np.zeros((2, env.state_dim + env.action_dim))),
        global_counts=PseudoCounts.zeros(2, CountScope.GLOBAL),
        learner_cfg=cfg,
        env_dims=env_dims(env),
        variant='one_step',
    )


class TestMetaTest:

    def test_zero_probability_matches_vanilla(self, tiny_config, one_step_spec):
        cfg = replace(tiny_config, SCHEDULE=AnnealSchedule(P_START=0.0, T_END=150))
        policies = _policy_set(make_env(one_step_spec), cfg.LEARNER)
        _, vanilla = meta_test(one_step_spec, None, cfg.SCHEDULE, cfg, rng_seed=3)
        _, gated = meta_test(one_step_spec, policies, cfg.SCHEDULE, cfg, rng_seed=3)
        assert vanilla == gated

    def test_curve_covers_budget(self, tiny_config, one_step_spec):
        recorded = []
        _, curve = meta_test(one_step_spec, None, tiny_config.SCHEDULE, tiny_config, rng_seed=0,
                             record=lambda *row: recorded.append(row))
        assert [s for s, _ in curve] == [100, 200, 300]
        assert all(0.0 <= v <= 1.0 for _, v in curve)
        assert [r[0] for r in recorded] == ['meta-test'] * 3

    def test_buffer_keeps_true_rewards(self, tiny_config, one_step_spec):
        cfg = replace(tiny_config, SCHEDULE=AnnealSchedule(P_START=1.0, T_END=300))
        policies = _policy_set(make_env(one_step_spec), cfg.LEARNER)
        learner, _ = meta_test(one_step_spec, policies, cfg.SCHEDULE, cfg, rng_seed=1)
        sources = {tr.source for tr in learner.buffer.transitions()}
        assert sources <= {'explorer0', 'explorer1', 'learner'}
        assert all(tr.shaped_reward == 0.0 for tr in learner.buffer.transitions())

    def test_interface_mismatch(self, tiny_config, one_step_spec, multi_stage_spec):
        policies = _policy_set(make_env(multi_stage_spec), tiny_config.LEARNER)
        with pytest.raises(InvalidArgumentError):
            meta_test(one_step_spec, policies, tiny_config.SCHEDULE, tiny_config, rng_seed=0)


class TestMetaTrain:

    @pytest.fixture
    def trained(self, tiny_config):
        train, _ = sample_tasks(tiny_config.TASK_SPACE, 3, 2, rng_seed=0)
        return train, meta_train(train, tiny_config.META_TRAIN, rng_seed=0)

    def test_policy_set_shape(self, trained, tiny_config):
        _, (policy_set, mstar, cluster_hash, global_counts) = trained
        assert len(policy_set) == tiny_config.META_TRAIN.N_POLICIES
        assert len(mstar) > 0
        assert np.all(mstar.rewards >= tiny_config.META_TRAIN.SUBSPACE.R_STAR)
        assert cluster_hash.C <= tiny_config.META_TRAIN.SUBSPACE.N_CLUSTERS
        assert int(global_counts.counts.sum()) == sum(int(h.sum()) for h in policy_set.histograms)

    def test_save_then_load_keeps_greedy_actions(self, trained, tmp_path):
        train, (policy_set, _, _, _) = trained
        manifest = policy_set.save(str(tmp_path / 'policies'))
        loaded = ExplorationPolicySet.load(manifest)
        state, _ = make_env(train[0]).reset(np.random.default_rng(0))
        for a, b in zip(policy_set.policies, loaded.policies):
            assert a.greedy_action(state).tolist() == b.greedy_action(state).tolist()
        np.testing.assert_array_equal(loaded.cluster_hash.centroids, policy_set.cluster_hash.centroids)
        assert loaded.env_dims == policy_set.env_dims

    def test_gated_visit_measurement(self, trained, tiny_config):
        train, (policy_set, mstar, _, _) = trained
        envs = [make_env(spec) for spec in train]
        visits = measure_gated_visits(policy_set, envs, mstar, tiny_config.META_TRAIN.SUBSPACE, 6, rng_seed=0)
        assert set(visits) == {'explorer0', 'explorer1', 'uniform'}
        assert all(len(v) == 6 and all(x in (0.0, 1.0) for x in v) for v in visits.values())

    def test_unreachable_threshold(self, tiny_config):
        train, _ = sample_tasks(tiny_config.TASK_SPACE, 2, 1, rng_seed=0)
        cfg = tiny_config.META_TRAIN
        cfg = replace(cfg, COLLECTION_STEPS=30, SUBSPACE=replace(cfg.SUBSPACE, R_STAR=1.5))
        with pytest.raises(HarvestFailureError) as info:
            harvest(train, cfg, rng_seed=0)
        assert len(info.value.details['task_stats']) == 2

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ArtifactError):
            ExplorationPolicySet.load(str(tmp_path))


class TestExplorationDiversity:
    """两个高回报格子: (0,0) 的 r̂=1.0，(1,1) 的 r̂=0.8"""

    @pytest.fixture
    def setup(self, one_step_spec):
        env = make_env(one_step_spec)
        state, _ = env.reset(np.random.default_rng(0))
        points = np.vstack([env.embed(state, [0, 0]), env.embed(state, [1, 1])])
        mstar = ValuableSet(points=points, rewards=np.array([1.0, 0.8]),
                            source_task=np.zeros(2, dtype=int), r_star=0.8)
        cfg = MetaTrainConfig(
            TRAINING_STEPS=600, HORIZON=1, CONVERGENCE_WINDOW=1000,
            LEARNER=LearnerConfig(HIDDEN_SIZES=(16,), BATCH_SIZE=8, CRITIC_LR=0.05, BUFFER_CAPACITY=1000),
            SUBSPACE=SubspaceConfig(F_D_EXPONENT=0.5, DIST_EPS=0.1),
        )
        return env, state, mstar, ClusterHash(points.copy()), cfg

    def test_single_task_explorer_finds_best_cell(self, setup):
        env, state, mstar, cluster_hash, cfg = setup
        policy, hist, _ = train_exploration_policy(mstar, cluster_hash, PseudoCounts.zeros(2), [env], cfg,
                                                   rng_seed=0)
        assert policy.greedy_action(state).tolist() == [0, 0]
        assert int(np.argmax(hist)) == 0

    def test_second_policy_moves_to_less_visited_cluster(self, setup):
        env, state, mstar, cluster_hash, cfg = setup
        zeros = PseudoCounts.zeros(2)
        _, h0, g0 = train_exploration_policy(mstar, cluster_hash, zeros, [env], cfg, rng_seed=0)
        saturated = int(np.argmax(h0))
        counts = update_global_counts(zeros, g0, cluster_hash)
        assert counts.counts.tolist() == h0.tolist()

        policy1, h1, _ = train_exploration_policy(mstar, cluster_hash, counts, [env], cfg, rng_seed=1)
        assert h1[saturated] < h0[saturated]
        assert np.all(h0 + h1 > 0)
        assert policy1.greedy_action(state).tolist() == [1, 1]
