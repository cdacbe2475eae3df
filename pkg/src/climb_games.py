from typing import Dict, List, Optional, Sequence, Set, Tuple
import itertools

import numpy as np

from .config import TaskSpaceConfig, ParticleConfig
from .models import ClimbTaskSpec, GameState, Variant
from .exceptions import InvalidArgumentError, InvalidStateError
from .validators import validate_joint_action, validate_task_spec
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)


def _stage_reward(k: int, u: int, delta: float, a: Sequence[int]) -> float:
    """单阶段爬山博弈: #u = k 得 1，#u = 0 得 1-δ，否则 0"""
    count_u = sum(1 for ai in a if ai == u)
    if count_u == k:
        return 1.0
    if count_u == 0:
        return 1.0 - delta
    return 0.0


def reward_one_step(spec: ClimbTaskSpec, a: Sequence[int]) -> float:
    """单步爬山博弈 G(n, k, u, U) 的回报"""
    if spec.variant != Variant.ONE_STEP:
        raise InvalidArgumentError(
            "reward_one_step 只接受单步任务",
            field='variant', value=spec.variant.value, requirement='one_step'
        )
    validate_joint_action(a, spec.n, spec.U)
    return _stage_reward(spec.k, spec.u, spec.delta, a)


def observation_length(spec: ClimbTaskSpec) -> int:
    return spec.num_stages * spec.n * spec.U + 1


def encode_observation(spec: ClimbTaskSpec, s: GameState) -> np.ndarray:
    """[t, 历史联合动作的one-hot]，零填充到 S·n·U + 1"""
    obs = np.zeros(observation_length(spec))
    obs[0] = s.stage / spec.num_stages
    block = spec.n * spec.U
    for t, joint in enumerate(s.history):
        for i, ai in enumerate(joint):
            obs[1 + t * block + i * spec.U + ai] = 1.0
    return obs


def multi_stage_step(spec: ClimbTaskSpec,
                     s: GameState,
                     a: Sequence[int]) -> Tuple[GameState, float, bool, List[np.ndarray]]:
    """
    多阶段爬山博弈的一步

    Args:
        spec: 任务参数
        s: 当前博弈状态
        a: 联合动作

    Returns:
        (新状态, 阶段回报, 是否结束, 每个智能体的观测)
    """
    if s.stage >= spec.num_stages:
        raise InvalidStateError(
            "博弈已经结束，不能继续执行",
            phase='multi_stage_step',
            state={'stage': s.stage, 'num_stages': spec.num_stages}
        )
    validate_joint_action(a, spec.n, spec.U)

    k_t, u_t = spec.stages[s.stage]
    r = _stage_reward(k_t, u_t, spec.delta, a)
    next_state = GameState(stage=s.stage + 1, history=s.history + (tuple(int(x) for x in a),))
    done = next_state.stage == spec.num_stages
    obs = encode_observation(spec, next_state)
    logger.debug(f"阶段 {s.stage} 动作 {tuple(a)} 回报 {r}")
    return next_state, r, done, [obs.copy() for _ in range(spec.n)]


class ClimbGameEnv:
    """离散爬山博弈环境 (单步任务视为只有一个阶段)"""
    discrete = True

    def __init__(self, spec: ClimbTaskSpec):
        validate_task_spec(spec)
        if spec.variant == Variant.PARTICLE:
            raise InvalidArgumentError(
                "粒子任务请使用 ParticleClimbEnv",
                field='variant', value=spec.variant.value, requirement='one_step|multi_stage'
            )
        self.spec = spec
        self.n_agents = spec.n
        self.n_actions = spec.U
        self.horizon = spec.num_stages
        self.obs_dim = observation_length(spec)
        self.state_dim = self.obs_dim
        self.action_dim = spec.n * spec.U
        self._state = GameState()

    def reset(self, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, List[np.ndarray]]:
        self._state = GameState()
        obs = encode_observation(self.spec, self._state)
        return obs.copy(), [obs.copy() for _ in range(self.n_agents)]

    @property
    def game_state(self) -> GameState:
        return self._state

    def step(self, action) -> Tuple[np.ndarray, List[np.ndarray], float, bool]:
        joint = [int(x) for x in np.asarray(action).ravel()]
        self._state, r, done, obs = multi_stage_step(self.spec, self._state, joint)
        return obs[0].copy(), obs, r, done

    def action_embedding(self, action) -> np.ndarray:
        """联合动作的one-hot拼接"""
        emb = np.zeros(self.action_dim)
        for i, ai in enumerate(np.asarray(action).ravel()):
            emb[i * self.n_actions + int(ai)] = 1.0
        return emb

    def embed(self, state: np.ndarray, action) -> np.ndarray:
        return np.concatenate([state, self.action_embedding(action)])


def task_space_size(space: TaskSpaceConfig) -> int:
    per_stage = space.N_AGENTS * space.N_ACTIONS
    if space.VARIANT == Variant.ONE_STEP.value:
        return per_stage
    if space.VARIANT == Variant.MULTI_STAGE.value:
        return per_stage ** space.N_STAGES
    # 粒子任务的地标布局连续取值
    return np.iinfo(np.int64).max


def _decode_task(space: TaskSpaceConfig, index: int) -> ClimbTaskSpec:
    """混合进制下标 → (k_t, u_t) 序列"""
    per_stage = space.N_AGENTS * space.N_ACTIONS
    n_stages = 1 if space.VARIANT == Variant.ONE_STEP.value else space.N_STAGES
    stages = []
    for _ in range(n_stages):
        index, digit = divmod(index, per_stage)
        k_minus_1, u = divmod(digit, space.N_ACTIONS)
        stages.append((k_minus_1 + 1, u))
    return ClimbTaskSpec(
        variant=Variant(space.VARIANT),
        n=space.N_AGENTS,
        U=space.N_ACTIONS,
        delta=space.DELTA,
        stages=tuple(stages),
    )


def sample_tasks(space: TaskSpaceConfig,
                 count_train: int,
                 count_test: int,
                 rng_seed: int,
                 particle: ParticleConfig = None) -> Tuple[List[ClimbTaskSpec], List[ClimbTaskSpec]]:
    """
    无放回均匀采样训练/测试任务

    Args:
        space: 任务空间描述
        count_train: 训练任务数
        count_test: 测试任务数
        rng_seed: 随机种子
        particle: 粒子任务的物理常数

    Returns:
        (训练任务列表, 测试任务列表)，两者不相交
    """
    total = count_train + count_test
    if count_train < 0 or count_test < 0:
        raise InvalidArgumentError("任务数量不能为负", field='count', value=(count_train, count_test))
    rng = np.random.default_rng(rng_seed)

    if space.VARIANT == Variant.PARTICLE.value:
        from .particle_climb import sample_particle_tasks
        tasks = sample_particle_tasks(space, total, rng, particle or ParticleConfig())
    else:
        size = task_space_size(space)
        if total > size:
            raise InvalidArgumentError(
                "任务空间太小，无法无放回采样",
                field='count_train+count_test', value=total, requirement=f"<= {size}"
            )
        indices = rng.choice(size, size=total, replace=False)
        tasks = [_decode_task(space, int(idx)) for idx in indices]

    logger.info(f"采样任务完成: 训练 {count_train} 个, 测试 {count_test} 个 (seed={rng_seed})")
    return tasks[:count_train], tasks[count_train:]


def _all_joint_actions(spec: ClimbTaskSpec):
    return itertools.product(range(spec.U), repeat=spec.n)


def is_nash_equilibrium(spec: ClimbTaskSpec, a: Tuple[int, ...], payoff: Dict[tuple, float]) -> bool:
    """任一智能体单方面偏离都不能严格提高回报"""
    value = payoff[a]
    for i in range(spec.n):
        for alt in range(spec.U):
            if alt == a[i]:
                continue
            deviated = a[:i] + (alt,) + a[i + 1:]
            if payoff[deviated] > value:
                return False
    return True


def classify_equilibria(spec: ClimbTaskSpec) -> Dict[str, Set[Tuple[int, ...]]]:
    """
    穷举纯策略联合动作并对纳什均衡分类

    Returns:
        {'optimal': 帕累托最优NE, 'suboptimal_ne': 正回报的次优NE, 'zero_ne': 零回报NE}
    """
    if spec.variant != Variant.ONE_STEP:
        raise InvalidArgumentError(
            "均衡分类只支持单步任务",
            field='variant', value=spec.variant.value, requirement='one_step'
        )
    payoff = {a: _stage_reward(spec.k, spec.u, spec.delta, a) for a in _all_joint_actions(spec)}
    best = max(payoff.values())

    result = {'optimal': set(), 'suboptimal_ne': set(), 'zero_ne': set()}
    for a, value in payoff.items():
        if not is_nash_equilibrium(spec, a, payoff):
            continue
        # 共同回报下，帕累托最优即全局最大
        if value == best:
            result['optimal'].add(a)
        elif value > 0:
            result['suboptimal_ne'].add(a)
        else:
            result['zero_ne'].add(a)

    logger.debug(f"均衡分类: 最优 {len(result['optimal'])}, 次优 {len(result['suboptimal_ne'])}, "
                 f"零回报 {len(result['zero_ne'])}")
    return result
