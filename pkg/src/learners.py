from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import copy

import numpy as np

from .config import HEAD_AUTO, HEAD_FACTORED, HEAD_JOINT, LearnerConfig
from .models import Transition
from .networks import (
    MlpParams, MlpGrads, init_mlp, mlp_forward, mlp_backward, mlp_predict,
    soft_update, make_optimizer,
)
from .exceptions import InvalidArgumentError, InvalidConfigError, TrainingDivergedError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

GREEDY = 'greedy'
EPS_GREEDY = 'eps_greedy'
UNIFORM = 'uniform'
NOISY = 'noisy_deterministic'


@dataclass(frozen=True)
class ActionMode:
    kind: str = GREEDY
    epsilon: float = 0.0
    sigma: float = 0.0

    @classmethod
    def greedy(cls) -> 'ActionMode':
        return cls(GREEDY)

    @classmethod
    def eps_greedy(cls, epsilon: float) -> 'ActionMode':
        return cls(EPS_GREEDY, epsilon=epsilon)

    @classmethod
    def uniform(cls) -> 'ActionMode':
        return cls(UNIFORM)

    @classmethod
    def noisy(cls, sigma: float) -> 'ActionMode':
        return cls(NOISY, sigma=sigma)


class ReplayBuffer:
    """定长环形缓冲区，满了之后按先进先出覆盖"""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgumentError("缓冲区容量至少为1", field='capacity', value=capacity, requirement='>= 1')
        self.capacity = capacity
        self._storage: List[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._storage)

    def add(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def extend(self, transitions: Sequence[Transition]) -> None:
        for tr in transitions:
            self.add(tr)

    def transitions(self) -> List[Transition]:
        """按插入顺序返回 (最旧的在前)"""
        if len(self._storage) < self.capacity:
            return list(self._storage)
        return self._storage[self._cursor:] + self._storage[:self._cursor]

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        if not self._storage:
            raise InvalidArgumentError("缓冲区为空，无法采样", field='batch_size', value=batch_size)
        idx = rng.integers(len(self._storage), size=batch_size)
        return [self._storage[i] for i in idx]


def linear_epsilon(step: int, start: float, end: float, decay_steps: int) -> float:
    frac = min(max(step, 0) / max(decay_steps, 1), 1.0)
    return start + (end - start) * frac


def _batch_rewards(batch: Sequence[Transition], shaped: bool) -> np.ndarray:
    if shaped:
        return np.array([tr.shaped_reward for tr in batch], dtype=float)
    return np.array([tr.reward for tr in batch], dtype=float)


def _check_finite(phase: str, losses: Dict[str, float], *params: MlpParams) -> None:
    if not all(np.isfinite(v) for v in losses.values()) or not all(p.is_finite() for p in params):
        logger.error(f"{phase} 出现非有限值: {losses}")
        raise TrainingDivergedError("训练发散 (NaN/Inf)", phase=phase, losses=losses)


def joint_action_index(actions: np.ndarray, n_actions: int) -> np.ndarray:
    """联合动作 (B, n) → 混合进制下标 Σ a_i U^(n-1-i)"""
    actions = np.atleast_2d(np.asarray(actions, dtype=int))
    n = actions.shape[1]
    radix = n_actions ** np.arange(n - 1, -1, -1)
    return actions @ radix


def joint_action_from_index(index: int, n_agents: int, n_actions: int) -> np.ndarray:
    digits = []
    for _ in range(n_agents):
        index, d = divmod(int(index), n_actions)
        digits.append(d)
    return np.array(digits[::-1], dtype=int)


def q_update(q: MlpParams,
             q_target: MlpParams,
             batch: Sequence[Transition],
             cfg: LearnerConfig,
             n_actions: int,
             optimizer=None,
             shaped: bool = False) -> Tuple[MlpParams, float]:
    """
    联合动作Q的一步TD更新

    Returns:
        (更新后的参数, 更新前的均方TD误差)
    """
    if not batch:
        raise InvalidArgumentError("批次为空", field='batch', value=0, requirement='>= 1')
    optimizer = optimizer or make_optimizer(cfg.OPTIMIZER, cfg.CRITIC_LR, cfg.GRAD_CLIP)

    states = np.stack([tr.state for tr in batch])
    next_states = np.stack([tr.next_state for tr in batch])
    actions = joint_action_index(np.stack([tr.action for tr in batch]), n_actions)
    rewards = _batch_rewards(batch, shaped)
    dones = np.array([tr.done for tr in batch], dtype=float)

    next_q = mlp_predict(q_target, next_states).max(axis=1)
    targets = rewards + cfg.GAMMA * (1.0 - dones) * next_q

    out, cache = mlp_forward(q, states)
    rows = np.arange(len(batch))
    td = out[rows, actions] - targets
    loss = float(np.mean(td ** 2))

    cotangent = np.zeros_like(out)
    cotangent[rows, actions] = 2.0 * td / len(batch)
    grads = mlp_backward(q, cache, cotangent)
    return optimizer.step(q, grads), loss


def factored_q_update(q: MlpParams,
                      q_target: MlpParams,
                      batch: Sequence[Transition],
                      cfg: LearnerConfig,
                      n_agents: int,
                      n_actions: int,
                      optimizer=None,
                      shaped: bool = False) -> Tuple[MlpParams, float]:
    """
    分解值头的一步TD更新: Q(s,a) = Σ_i Q_i(s,a_i)，目标取 Σ_i max Q_i(s',·)

    Returns:
        (更新后的参数, 更新前的均方TD误差)
    """
    if not batch:
        raise InvalidArgumentError("批次为空", field='batch', value=0, requirement='>= 1')
    optimizer = optimizer or make_optimizer(cfg.OPTIMIZER, cfg.CRITIC_LR, cfg.GRAD_CLIP)
    B = len(batch)

    states = np.stack([tr.state for tr in batch])
    next_states = np.stack([tr.next_state for tr in batch])
    actions = np.stack([np.asarray(tr.action, dtype=int).reshape(n_agents) for tr in batch])
    rewards = _batch_rewards(batch, shaped)
    dones = np.array([tr.done for tr in batch], dtype=float)

    next_q = mlp_predict(q_target, next_states).reshape(B, n_agents, n_actions).max(axis=2).sum(axis=1)
    targets = rewards + cfg.GAMMA * (1.0 - dones) * next_q

    out, cache = mlp_forward(q, states)
    # 第 i 个智能体的第 a_i 个输出位于 i·U + a_i
    columns = np.arange(n_agents) * n_actions + actions
    rows = np.arange(B)[:, None]
    td = out[rows, columns].sum(axis=1) - targets
    loss = float(np.mean(td ** 2))

    cotangent = np.zeros_like(out)
    cotangent[rows, columns] = (2.0 * td / B)[:, None]
    grads = mlp_backward(q, cache, cotangent)
    return optimizer.step(q, grads), loss


def actor_gradients(actor: MlpParams,
                    obs: np.ndarray,
                    dq_da: Callable[[np.ndarray], np.ndarray]) -> Tuple[MlpGrads, np.ndarray]:
    """确定性策略梯度: 沿 -∂Q/∂a 反传到演员参数 (最小化 -Q)"""
    actions, cache = mlp_forward(actor, obs)
    cotangent = -np.asarray(dq_da(actions), dtype=float) / actions.shape[0]
    return mlp_backward(actor, cache, cotangent), actions


def actor_critic_update(actors: List[MlpParams],
                        critic: MlpParams,
                        targets: Tuple[List[MlpParams], MlpParams],
                        batch: Sequence[Transition],
                        cfg: LearnerConfig,
                        optimizers: Optional[Dict[str, object]] = None,
                        shaped: bool = False) -> Tuple[List[MlpParams], MlpParams,
                                                       Tuple[List[MlpParams], MlpParams], Dict[str, float]]:
    """
    MADDPG 式更新: 评论家看全局状态与全部动作，演员只看自身观测

    Returns:
        (新演员, 新评论家, 新目标网络, 损失)
    """
    if not batch:
        raise InvalidArgumentError("批次为空", field='batch', value=0, requirement='>= 1')
    n = len(actors)
    if optimizers is None:
        optimizers = {'critic': make_optimizer(cfg.OPTIMIZER, cfg.CRITIC_LR, cfg.GRAD_CLIP)}
        optimizers.update({f'actor{i}': make_optimizer(cfg.OPTIMIZER, cfg.ACTOR_LR, cfg.GRAD_CLIP)
                           for i in range(n)})
    target_actors, target_critic = targets
    B = len(batch)

    states = np.stack([tr.state for tr in batch])
    next_states = np.stack([tr.next_state for tr in batch])
    actions = np.stack([np.asarray(tr.action, dtype=float).reshape(n, -1) for tr in batch])
    rewards = _batch_rewards(batch, shaped)
    dones = np.array([tr.done for tr in batch], dtype=float)
    obs = [np.stack([tr.obs[i] for tr in batch]) for i in range(n)]
    next_obs = [np.stack([tr.next_obs[i] for tr in batch]) for i in range(n)]
    state_dim = states.shape[1]
    act_dim = actions.shape[2]

    # 评论家
    next_actions = np.concatenate([mlp_predict(target_actors[i], next_obs[i]) for i in range(n)], axis=1)
    next_q = mlp_predict(target_critic, np.hstack([next_states, next_actions]))[:, 0]
    y = rewards + cfg.GAMMA * (1.0 - dones) * next_q
    q, cache = mlp_forward(critic, np.hstack([states, actions.reshape(B, -1)]))
    td = q[:, 0] - y
    critic_loss = float(np.mean(td ** 2))
    critic_grads = mlp_backward(critic, cache, (2.0 * td / B)[:, None])
    new_critic = optimizers['critic'].step(critic, critic_grads)

    # 演员: 其他智能体沿用批次中的动作
    new_actors = []
    actor_losses = []
    for i in range(n):
        offset = state_dim + i * act_dim

        def dq_da(own_actions, i=i, offset=offset):
            joint = actions.copy()
            joint[:, i, :] = own_actions
            q_in = np.hstack([states, joint.reshape(B, -1)])
            out, c_cache = mlp_forward(new_critic, q_in)
            actor_losses.append(-float(out.mean()))
            g = mlp_backward(new_critic, c_cache, np.ones_like(out))
            return g.inputs[:, offset:offset + act_dim]

        grads, _ = actor_gradients(actors[i], obs[i], dq_da)
        new_actors.append(optimizers[f'actor{i}'].step(actors[i], grads))

    losses = {'critic': critic_loss, 'actor': float(np.mean(actor_losses))}
    _check_finite('actor_critic_update', losses, new_critic, *new_actors)

    new_targets = (
        [soft_update(a, t, cfg.TAU) for a, t in zip(new_actors, target_actors)],
        soft_update(new_critic, target_critic, cfg.TAU),
    )
    return new_actors, new_critic, new_targets, losses


class JointQLearner:
    """离散博弈的中心化联合动作Q学习器"""
    discrete = True

    def __init__(self, state_dim: int, n_agents: int, n_actions: int,
                 cfg: LearnerConfig, rng: np.random.Generator, shaped: bool = False):
        n_joint = n_actions ** n_agents
        if n_joint > cfg.MAX_JOINT_ACTIONS:
            raise InvalidConfigError(
                "联合动作空间过大，联合Q头无法表示",
                field='MAX_JOINT_ACTIONS', value=n_joint,
                constraints={'n_agents': n_agents, 'n_actions': n_actions, 'max': cfg.MAX_JOINT_ACTIONS}
            )
        self._build(state_dim, n_agents, n_actions, n_joint, cfg, rng, shaped)

    def _build(self, state_dim: int, n_agents: int, n_actions: int, n_outputs: int,
               cfg: LearnerConfig, rng: np.random.Generator, shaped: bool) -> None:
        self.cfg = cfg
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.shaped = shaped
        self.q = init_mlp([state_dim, *cfg.HIDDEN_SIZES, n_outputs], rng)
        self.q_target = self.q.copy()
        self.optimizer = make_optimizer(cfg.OPTIMIZER, cfg.CRITIC_LR, cfg.GRAD_CLIP)
        self.buffer = ReplayBuffer(cfg.BUFFER_CAPACITY)

    def q_values(self, state: np.ndarray) -> np.ndarray:
        return mlp_predict(self.q, state)

    def greedy_action(self, state: np.ndarray, obs=None) -> np.ndarray:
        index = int(np.argmax(self.q_values(state)))
        return joint_action_from_index(index, self.n_agents, self.n_actions)

    def random_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(self.n_actions, size=self.n_agents)

    def exploration_mode(self, step: int) -> ActionMode:
        eps = linear_epsilon(step, self.cfg.EPS_START, self.cfg.EPS_END, self.cfg.EPS_DECAY_STEPS)
        return ActionMode.eps_greedy(eps)

    def update(self, rng: np.random.Generator) -> Dict[str, float]:
        batch = self.buffer.sample(self.cfg.BATCH_SIZE, rng)
        self.q, loss = q_update(self.q, self.q_target, batch, self.cfg, self.n_actions,
                                self.optimizer, self.shaped)
        _check_finite('q_update', {'q': loss}, self.q)
        self.q_target = soft_update(self.q, self.q_target, self.cfg.TAU)
        return {'q': loss}

    def networks(self) -> Dict[str, MlpParams]:
        return {'q': self.q, 'q_target': self.q_target}

    def load_networks(self, networks: Dict[str, MlpParams]) -> None:
        self.q = networks['q']
        self.q_target = networks.get('q_target', networks['q'].copy())

    def clone(self) -> 'JointQLearner':
        return copy.deepcopy(self)


class FactoredQLearner(JointQLearner):
    """逐智能体分解的值头，贪心动作是各智能体各自的 argmax"""

    def __init__(self, state_dim: int, n_agents: int, n_actions: int,
                 cfg: LearnerConfig, rng: np.random.Generator, shaped: bool = False):
        self._build(state_dim, n_agents, n_actions, n_agents * n_actions, cfg, rng, shaped)

    def agent_values(self, state: np.ndarray) -> np.ndarray:
        """(n, U) 的逐智能体值表"""
        return np.asarray(mlp_predict(self.q, state)).reshape(self.n_agents, self.n_actions)

    def q_values(self, state: np.ndarray) -> np.ndarray:
        """全部联合动作的值，仅用于小空间的检查"""
        values = self.agent_values(state)
        total = values[0]
        for v in values[1:]:
            total = (total[:, None] + v[None, :]).ravel()
        return total

    def greedy_action(self, state: np.ndarray, obs=None) -> np.ndarray:
        return np.argmax(self.agent_values(state), axis=1)

    def update(self, rng: np.random.Generator) -> Dict[str, float]:
        batch = self.buffer.sample(self.cfg.BATCH_SIZE, rng)
        self.q, loss = factored_q_update(self.q, self.q_target, batch, self.cfg, self.n_agents,
                                         self.n_actions, self.optimizer, self.shaped)
        _check_finite('factored_q_update', {'q': loss}, self.q)
        self.q_target = soft_update(self.q, self.q_target, self.cfg.TAU)
        return {'q': loss}


class MaddpgLearner:
    """连续动作的确定性演员-评论家学习器"""
    discrete = False

    def __init__(self, state_dim: int, obs_dim: int, n_agents: int, act_dim: int,
                 cfg: LearnerConfig, rng: np.random.Generator, shaped: bool = False):
        self.cfg = cfg
        self.n_agents = n_agents
        self.act_dim = act_dim
        self.shaped = shaped
        self.actors = [init_mlp([obs_dim, *cfg.HIDDEN_SIZES, act_dim], rng, output_activation='tanh',
                                output_scale=0.1)
                       for _ in range(n_agents)]
        self.critic = init_mlp([state_dim + n_agents * act_dim, *cfg.HIDDEN_SIZES, 1], rng)
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critic = self.critic.copy()
        self.optimizers = {'critic': make_optimizer(cfg.OPTIMIZER, cfg.CRITIC_LR, cfg.GRAD_CLIP)}
        self.optimizers.update({f'actor{i}': make_optimizer(cfg.OPTIMIZER, cfg.ACTOR_LR, cfg.GRAD_CLIP)
                                for i in range(n_agents)})
        self.buffer = ReplayBuffer(cfg.BUFFER_CAPACITY)

    def greedy_action(self, state=None, obs: Sequence[np.ndarray] = None) -> np.ndarray:
        return np.stack([mlp_predict(actor, o) for actor, o in zip(self.actors, obs)])

    def random_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(self.n_agents, self.act_dim))

    def exploration_mode(self, step: int) -> ActionMode:
        return ActionMode.noisy(self.cfg.NOISE_SCALE)

    def update(self, rng: np.random.Generator) -> Dict[str, float]:
        batch = self.buffer.sample(self.cfg.BATCH_SIZE, rng)
        self.actors, self.critic, targets, losses = actor_critic_update(
            self.actors, self.critic, (self.target_actors, self.target_critic),
            batch, self.cfg, self.optimizers, self.shaped
        )
        self.target_actors, self.target_critic = targets
        return losses

    def networks(self) -> Dict[str, MlpParams]:
        nets = {'critic': self.critic, 'critic_target': self.target_critic}
        for i, (a, t) in enumerate(zip(self.actors, self.target_actors)):
            nets[f'actor{i}'] = a
            nets[f'actor{i}_target'] = t
        return nets

    def load_networks(self, networks: Dict[str, MlpParams]) -> None:
        self.critic = networks['critic']
        self.target_critic = networks.get('critic_target', self.critic.copy())
        self.actors = [networks[f'actor{i}'] for i in range(self.n_agents)]
        self.target_actors = [networks.get(f'actor{i}_target', a.copy()) for i, a in enumerate(self.actors)]

    def clone(self) -> 'MaddpgLearner':
        return copy.deepcopy(self)


def value_head(cfg: LearnerConfig, n_agents: int, n_actions: int) -> str:
    """auto: 联合空间不超过 MAX_JOINT_ACTIONS 时用联合头，否则分解头"""
    if cfg.VALUE_HEAD == HEAD_AUTO:
        return HEAD_JOINT if n_actions ** n_agents <= cfg.MAX_JOINT_ACTIONS else HEAD_FACTORED
    if cfg.VALUE_HEAD not in (HEAD_JOINT, HEAD_FACTORED):
        raise InvalidConfigError("未知的值头", field='VALUE_HEAD', value=cfg.VALUE_HEAD,
                                 constraints={'choices': [HEAD_AUTO, HEAD_JOINT, HEAD_FACTORED]})
    return cfg.VALUE_HEAD


def make_learner(env, cfg: LearnerConfig, rng: np.random.Generator, shaped: bool = False):
    if env.discrete:
        if value_head(cfg, env.n_agents, env.n_actions) == HEAD_FACTORED:
            return FactoredQLearner(env.state_dim, env.n_agents, env.n_actions, cfg, rng, shaped)
        return JointQLearner(env.state_dim, env.n_agents, env.n_actions, cfg, rng, shaped)
    return MaddpgLearner(env.state_dim, env.obs_dim, env.n_agents, env.n_actions, cfg, rng, shaped)


def select_action(policy, state, obs, mode: ActionMode, rng: np.random.Generator) -> np.ndarray:
    """
    按模式选择联合动作 (离散) 或力矩阵 (连续)

    Uniform 模式忽略策略；NoisyDeterministic 在确定性输出上加高斯噪声并截断到 [-1, 1]。
    """
    if mode.kind == UNIFORM:
        return policy.random_action(rng)
    if mode.kind == GREEDY:
        return policy.greedy_action(state, obs)
    if mode.kind == EPS_GREEDY:
        if rng.random() < mode.epsilon:
            return policy.random_action(rng)
        return policy.greedy_action(state, obs)
    if mode.kind == NOISY:
        if policy.discrete:
            raise InvalidArgumentError("离散动作空间不支持高斯噪声探索", field='mode', value=mode.kind,
                                       requirement='greedy | eps_greedy | uniform')
        action = policy.greedy_action(state, obs)
        if mode.sigma > 0:
            action = action + rng.normal(0.0, mode.sigma, size=action.shape)
        return np.clip(action, -1.0, 1.0)
    raise InvalidArgumentError("未知的动作选择模式", field='mode', value=mode.kind)
