"""爬山博弈: 回报、多阶段转移、任务采样与均衡分类"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.climb_games import (
    ClimbGameEnv, classify_equilibria, encode_observation, multi_stage_step,
    observation_length, reward_one_step, sample_tasks, task_space_size,
)
from src.config import TaskSpaceConfig
from src.models import ClimbTaskSpec, GameState, Variant
from src.exceptions import InvalidArgumentError, InvalidStateError, ValidationError


class TestOneStepReward:

    def test_all_agents_on_target_is_optimal(self, one_step_spec):
        assert reward_one_step(one_step_spec, (0, 0)) == 1.0

    def test_avoiding_target_is_suboptimal(self, one_step_spec):
        assert reward_one_step(one_step_spec, (1, 2)) == 0.5

    def test_miscoordination_is_zero(self, one_step_spec):
        assert reward_one_step(one_step_spec, (0, 1)) == 0.0

    def test_k_equals_one(self):
        spec = ClimbTaskSpec(variant=Variant.ONE_STEP, n=2, U=3, delta=0.25, stages=((1, 0),))
        assert reward_one_step(spec, (0, 2)) == 1.0
        assert reward_one_step(spec, (0, 0)) == 0.0
        assert reward_one_step(spec, (1, 1)) == 0.75

    def test_rejects_out_of_range_action(self, one_step_spec):
        with pytest.raises(InvalidArgumentError):
            reward_one_step(one_step_spec, (0, 3))

    def test_rejects_wrong_arity(self, one_step_spec):
        with pytest.raises(InvalidArgumentError):
            reward_one_step(one_step_spec, (0, 0, 0))

    def test_rejects_multi_stage_spec(self, multi_stage_spec):
        with pytest.raises(InvalidArgumentError):
            reward_one_step(multi_stage_spec, (0, 0))


class TestMultiStage:

    def test_two_stage_episode(self, multi_stage_spec):
        s = GameState()
        s, r, done, obs = multi_stage_step(multi_stage_spec, s, (0, 0))
        assert (r, done, s.stage) == (1.0, False, 1)
        assert len(obs) == 2
        s, r, done, _ = multi_stage_step(multi_stage_spec, s, (1, 2))
        assert (r, done) == (1.0, True)
        assert s.history == ((0, 0), (1, 2))

    def test_step_after_end_raises(self, multi_stage_spec):
        s = GameState(stage=2, history=((0, 0), (0, 0)))
        with pytest.raises(InvalidStateError):
            multi_stage_step(multi_stage_spec, s, (0, 0))

    def test_observation_is_zero_padded(self, multi_stage_spec):
        assert observation_length(multi_stage_spec) == 2 * 2 * 3 + 1
        obs = encode_observation(multi_stage_spec, GameState(stage=1, history=((2, 1),)))
        assert obs[0] == pytest.approx(0.5)
        assert obs[1 + 2] == 1.0 and obs[1 + 3 + 1] == 1.0
        assert obs[7:].sum() == 0.0

    def test_env_episode_length_equals_stage_count(self, multi_stage_spec):
        env = ClimbGameEnv(multi_stage_spec)
        env.reset()
        done, steps = False, 0
        while not done:
            _, _, _, done = env.step(np.array([1, 1]))
            steps += 1
        assert steps == env.horizon == 2


class TestTaskSampling:

    def test_train_and_test_are_disjoint(self):
        space = TaskSpaceConfig(VARIANT='one_step', N_AGENTS=2, N_ACTIONS=10)
        train, test = sample_tasks(space, 10, 3, rng_seed=7)
        assert len(train) == 10 and len(test) == 3
        keys = [t.key for t in train + test]
        assert len(set(keys)) == 13

    def test_same_seed_same_tasks(self):
        space = TaskSpaceConfig(VARIANT='multi_stage', N_AGENTS=2, N_ACTIONS=4, N_STAGES=3)
        assert sample_tasks(space, 4, 2, 11) == sample_tasks(space, 4, 2, 11)

    def test_task_space_too_small(self):
        space = TaskSpaceConfig(VARIANT='one_step', N_AGENTS=2, N_ACTIONS=3)
        assert task_space_size(space) == 6
        with pytest.raises(InvalidArgumentError):
            sample_tasks(space, 5, 2, 0)

    def test_invalid_spec_rejected_by_env(self):
        spec = ClimbTaskSpec(variant=Variant.ONE_STEP, n=2, U=3, delta=0.5, stages=((3, 0),))
        with pytest.raises(ValidationError):
            ClimbGameEnv(spec)


def _brute_force_equilibria(spec):
    payoff = {}
    for a in itertools.product(range(spec.U), repeat=spec.n):
        count = sum(1 for x in a if x == spec.u)
        payoff[a] = 1.0 if count == spec.k else (1.0 - spec.delta if count == 0 else 0.0)
    best = max(payoff.values())
    nash = set()
    for a, v in payoff.items():
        stable = all(
            payoff[a[:i] + (alt,) + a[i + 1:]] <= v
            for i in range(spec.n) for alt in range(spec.U)
        )
        if stable:
            nash.add(a)
    return {
        'optimal': {a for a in nash if payoff[a] == best},
        'suboptimal_ne': {a for a in nash if 0 < payoff[a] < best},
        'zero_ne': {a for a in nash if payoff[a] == 0},
    }


class TestEquilibria:

    def test_two_agent_climb(self, one_step_spec):
        result = classify_equilibria(one_step_spec)
        assert result['optimal'] == {(0, 0)}
        assert result['suboptimal_ne'] == {(1, 1), (1, 2), (2, 1), (2, 2)}
        assert result['zero_ne'] == set()

    @given(
        n=st.integers(2, 3),
        U=st.integers(2, 4),
        data=st.data(),
        delta=st.floats(0.05, 0.95),
    )
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force(self, n, U, data, delta):
        k = data.draw(st.integers(1, n))
        u = data.draw(st.integers(0, U - 1))
        spec = ClimbTaskSpec(variant=Variant.ONE_STEP, n=n, U=U, delta=delta, stages=((k, u),))
        assert classify_equilibria(spec) == _brute_force_equilibria(spec)
