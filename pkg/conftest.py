import numpy as np
import pytest

from src.config import LearnerConfig
from src.models import ClimbTaskSpec, Transition, Variant
from src.validators import validate_run_config


TINY_CONFIG = {
    'EXPERIMENT': 'tiny',
    'TASK_SPACE': {'VARIANT': 'one_step', 'N_AGENTS': 2, 'N_ACTIONS': 3, 'DELTA': 0.5,
                   'COUNT_TRAIN': 3, 'COUNT_TEST': 2},
    'LEARNER': {'HIDDEN_SIZES': [16], 'BATCH_SIZE': 8, 'WARMUP_STEPS': 20, 'EPS_DECAY_STEPS': 200,
                'BUFFER_CAPACITY': 2000, 'CRITIC_LR': 0.05},
    'SUBSPACE': {'N_CLUSTERS': 4},
    'META_TRAIN': {'N_POLICIES': 2, 'COLLECTION_STEPS': 200, 'TRAINING_STEPS': 200,
                   'CONVERGENCE_WINDOW': 20},
    'SCHEDULE': {'P_START': 0.5, 'T_END': 150},
    'SEEDS': [0, 1],
    'META_TEST_STEPS': 300,
    'EVAL_INTERVAL': 100,
    'EVAL_EPISODES': 3,
}


def make_transition(state, action, reward, done=True, shaped_reward=0.0, obs=None, next_state=None):
    state = np.asarray(state, dtype=float)
    obs = obs if obs is not None else [state.copy(), state.copy()]
    return Transition(
        state=state,
        obs=obs,
        action=np.asarray(action),
        reward=float(reward),
        next_state=state.copy() if next_state is None else np.asarray(next_state, dtype=float),
        next_obs=[o.copy() for o in obs],
        done=done,
        shaped_reward=shaped_reward,
    )


@pytest.fixture
def one_step_spec():
    return ClimbTaskSpec(variant=Variant.ONE_STEP, n=2, U=3, delta=0.5, stages=((2, 0),))


@pytest.fixture
def multi_stage_spec():
    return ClimbTaskSpec(variant=Variant.MULTI_STAGE, n=2, U=3, delta=0.5, stages=((2, 0), (1, 1)))


@pytest.fixture
def particle_spec():
    return ClimbTaskSpec(variant=Variant.PARTICLE, n=2, U=3, delta=0.5, stages=((2, 0),),
                         landmarks=((0.0, 0.0), (0.6, 0.0), (0.0, 0.6)))


@pytest.fixture
def small_learner_cfg():
    return LearnerConfig(HIDDEN_SIZES=(16,), BATCH_SIZE=8, WARMUP_STEPS=0, EPS_DECAY_STEPS=200,
                         BUFFER_CAPACITY=1000, CRITIC_LR=0.05)


@pytest.fixture
def tiny_config_dict():
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY_CONFIG.items()}


@pytest.fixture
def tiny_config(tiny_config_dict):
    return validate_run_config(tiny_config_dict)


@pytest.fixture
def run_dir(tmp_path):
    path = tmp_path / 'runs'
    path.mkdir()
    return str(path)
