from dataclasses import asdict, dataclass, replace
from types import SimpleNamespace
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import hashlib
import json
import os

import numpy as np

from .config import (
    HEAD_AUTO, AnnealSchedule, LearnerConfig, MetaTrainConfig, ParticleConfig, RunConfig, SubspaceConfig,
)
from .models import (
    ClimbTaskSpec, ClusterHash, CountScope, PseudoCounts, Trajectory, Transition, ValuableSet, Variant,
)
from .climb_games import ClimbGameEnv
from .particle_climb import ParticleClimbEnv
from .learners import ActionMode, make_learner, select_action
from .networks import save_params, load_params
from .subspace import (
    collect_valuable, fit_clusters, merge_valuable,
    shaped_reward, update_global_counts, visit_histogram,
)
from .exceptions import (
    ArtifactError, HarvestFailureError, InvalidArgumentError, TrainingDivergedError,
)
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

MANIFEST_VERSION = 1
MANIFEST_NAME = 'manifest.json'

# (phase, step, metric, value)
Recorder = Callable[[str, int, str, float], None]


def _no_record(phase: str, step: int, metric: str, value: float) -> None:
    pass


def make_env(spec: ClimbTaskSpec, particle: ParticleConfig = None):
    if spec.variant == Variant.PARTICLE:
        return ParticleClimbEnv(spec, particle or ParticleConfig())
    return ClimbGameEnv(spec)


def anneal_probability(schedule: AnnealSchedule, t: int) -> float:
    """探索策略被选中的概率 p_e(t)，关于t单调不增"""
    if t < 0:
        raise InvalidArgumentError("步数不能为负", field='t', value=t, requirement='>= 0')
    if t >= schedule.T_END:
        return 0.0
    if schedule.SHAPE == 'step':
        return schedule.P_START
    return schedule.P_START * max(0.0, 1.0 - t / schedule.T_END)


def convergence_check(returns: Sequence[float], window: int, tol: float) -> bool:
    """最近两个窗口的滑动平均相对变化不超过 tol；不足两个窗口时不判定"""
    if len(returns) < 2 * window:
        return False
    recent = float(np.mean(returns[-window:]))
    previous = float(np.mean(returns[-2 * window:-window]))
    return abs(recent - previous) <= tol * max(abs(previous), 1e-12)


class ShapedRewardTracker:
    """轨迹级伪计数: 每条轨迹开始时从全局计数复制"""

    def __init__(self, mstar: ValuableSet, cluster_hash: ClusterHash,
                 global_counts: PseudoCounts, cfg: SubspaceConfig):
        self.mstar = mstar
        self.cluster_hash = cluster_hash
        self.global_counts = global_counts
        self.cfg = cfg
        self.counts = global_counts.copy(CountScope.TRAJECTORY)
        self.gated: List[np.ndarray] = []

    def reset(self) -> None:
        self.counts = self.global_counts.copy(CountScope.TRAJECTORY)

    def __call__(self, point: np.ndarray) -> float:
        r, counts = shaped_reward(point, None, self.cluster_hash, self.counts, self.mstar,
                                  self.cfg.DIST_EPS, self.cfg.F_D_EXPONENT)
        if counts is not self.counts:
            self.gated.append(point)
            self.counts = counts
        return r

    def gated_points(self) -> np.ndarray:
        if not self.gated:
            return np.zeros((0, self.mstar.dim))
        return np.vstack(self.gated)


def rollout(env, policy, mode: ActionMode, rng: np.random.Generator,
            shaper: Optional[ShapedRewardTracker] = None,
            max_steps: Optional[int] = None,
            source: str = 'learner',
            task_id: int = -1) -> Trajectory:
    """跑一条轨迹；给定 shaper 时在 shaped_reward 槽位写入塑形回报"""
    state, obs = env.reset(rng)
    if shaper is not None:
        shaper.reset()
    traj = Trajectory(task_id=task_id)
    done = False
    while not done:
        action = select_action(policy, state, obs, mode, rng)
        next_state, next_obs, r, done = env.step(action)
        shaped = shaper(env.embed(state, action)) if shaper is not None else 0.0
        traj.transitions.append(Transition(
            state=state, obs=obs, action=np.asarray(action), reward=r,
            next_state=next_state, next_obs=next_obs, done=done,
            shaped_reward=shaped, source=source, task_id=task_id,
        ))
        state, obs = next_state, next_obs
        if max_steps is not None and len(traj) >= max_steps:
            break
    return traj


def learn_from(learner, traj: Trajectory, step: int, rng: np.random.Generator) -> Dict[str, float]:
    learner.buffer.extend(traj.transitions)
    losses = {}
    if step >= learner.cfg.WARMUP_STEPS and len(learner.buffer) >= learner.cfg.BATCH_SIZE:
        for _ in range(learner.cfg.UPDATES_PER_EPISODE):
            losses = learner.update(rng)
    return losses


def _collection_config(cfg: MetaTrainConfig) -> LearnerConfig:
    # 收集策略: ε 在收集预算内从 1 退火到 0.05，不做随机预热
    return replace(cfg.LEARNER, EPS_START=1.0, EPS_END=0.05,
                   EPS_DECAY_STEPS=cfg.COLLECTION_STEPS, WARMUP_STEPS=0, VALUE_HEAD=HEAD_AUTO)


def explorer_config(cfg: MetaTrainConfig) -> LearnerConfig:
    """探索策略的学习器配置: 联合空间放得下时用联合头"""
    return replace(cfg.LEARNER, WARMUP_STEPS=0, EPS_DECAY_STEPS=max(1, cfg.TRAINING_STEPS // 2),
                   VALUE_HEAD=HEAD_AUTO)


def harvest(tasks: Sequence[ClimbTaskSpec],
            cfg: MetaTrainConfig,
            rng_seed: int,
            particle: ParticleConfig = None,
            record: Recorder = _no_record) -> Tuple[ValuableSet, List[dict]]:
    """
    第一阶段: 每个训练任务训练一个一次性策略并记录全部轨迹，收集 𝓜*

    Returns:
        (𝓜*, 每个任务的回报统计)
    """
    learner_cfg = _collection_config(cfg)
    sets, stats = [], []
    for task_id, spec in enumerate(tasks):
        rng = np.random.default_rng([rng_seed, 0, task_id])
        env = make_env(spec, particle)
        learner = make_learner(env, learner_cfg, rng)
        trajectories = []
        step = 0
        while step < cfg.COLLECTION_STEPS:
            mode = learner.exploration_mode(step)
            traj = rollout(env, learner, mode, rng, max_steps=cfg.HORIZON, task_id=task_id)
            step += len(traj)
            trajectories.append(traj)
            learn_from(learner, traj, step, rng)

        found = collect_valuable(trajectories, cfg.SUBSPACE.R_STAR, cfg.SUBSPACE.RELABEL_GAMMA, env.embed)
        rewards = np.concatenate([t.rewards for t in trajectories])
        record('harvest', step, f'task{task_id}_mean_return',
               float(np.mean([t.episode_return for t in trajectories])))
        stats.append({
            'task': task_id,
            'episodes': len(trajectories),
            'max_reward': float(rewards.max()),
            'mean_return': float(np.mean([t.episode_return for t in trajectories])),
            'valuable_points': len(found),
        })
        logger.info(f"任务 {task_id} 收集完成: {len(trajectories)} 条轨迹, {len(found)} 个高回报点")
        sets.append(found)

    mstar = merge_valuable(sets, cfg.SUBSPACE.R_STAR)
    if len(mstar) == 0:
        logger.error(f"未收集到任何高回报点: {stats}")
        raise HarvestFailureError("𝓜* 为空，无法继续元训练", task_stats=stats)
    return mstar, stats


def train_exploration_policy(mstar: ValuableSet,
                             cluster_hash: ClusterHash,
                             global_counts: PseudoCounts,
                             envs: Sequence,
                             cfg: MetaTrainConfig,
                             rng_seed,
                             record: Recorder = _no_record,
                             metric: str = 'shaped_return') -> Tuple[object, np.ndarray, np.ndarray]:
    """
    用塑形回报训练一个探索策略，轮流使用各训练任务的环境

    发散时换新初始化重启，最多 MAX_RESTARTS 次。

    Returns:
        (策略, 门控访问的簇直方图, 门控访问点)
    """
    last_error = None
    for attempt in range(cfg.MAX_RESTARTS):
        rng = np.random.default_rng([int(s) for s in np.atleast_1d(rng_seed)] + [attempt])
        try:
            return _train_exploration_once(mstar, cluster_hash, global_counts, envs, cfg, rng, record, metric)
        except TrainingDivergedError as e:
            last_error = e
            logger.warning(f"探索策略训练发散，第 {attempt + 1} 次重启: {e}")
    logger.error(f"探索策略训练在 {cfg.MAX_RESTARTS} 次尝试后仍然发散")
    raise last_error


def _train_exploration_once(mstar, cluster_hash, global_counts, envs, cfg: MetaTrainConfig,
                            rng: np.random.Generator, record: Recorder, metric: str):
    learner = make_learner(envs[0], explorer_config(cfg), rng, shaped=True)
    tracker = ShapedRewardTracker(mstar, cluster_hash, global_counts, cfg.SUBSPACE)
    returns = []
    step = 0
    episode = 0
    while step < cfg.TRAINING_STEPS:
        env = envs[episode % len(envs)]
        traj = rollout(env, learner, learner.exploration_mode(step), rng,
                       shaper=tracker, max_steps=cfg.HORIZON, source='explorer', task_id=episode % len(envs))
        step += len(traj)
        episode += 1
        shaped_return = float(sum(tr.shaped_reward for tr in traj.transitions))
        returns.append(shaped_return)
        if episode % cfg.CONVERGENCE_WINDOW == 0:
            record('explore-train', step, metric, float(np.mean(returns[-cfg.CONVERGENCE_WINDOW:])))
        learn_from(learner, traj, step, rng)
        if convergence_check(returns, cfg.CONVERGENCE_WINDOW, cfg.CONVERGENCE_TOL):
            logger.info(f"{metric}: 第 {step} 步收敛")
            break

    gated = tracker.gated_points()
    return learner, visit_histogram(gated, cluster_hash), gated


@dataclass
class ExplorationPolicySet:
    policies: List[object]
    histograms: List[np.ndarray]
    cluster_hash: ClusterHash
    global_counts: PseudoCounts
    learner_cfg: LearnerConfig
    env_dims: Dict[str, object]
    variant: str
    fingerprint: str = ''

    def __len__(self) -> int:
        return len(self.policies)

    def clusters_covered(self, i: int) -> List[int]:
        return [int(c) for c in np.nonzero(self.histograms[i])[0]]

    def save(self, directory: str) -> str:
        """目录结构: policy_{i}.npz/.json + manifest.json"""
        os.makedirs(directory, exist_ok=True)
        entries = []
        for i, (policy, hist) in enumerate(zip(self.policies, self.histograms)):
            name = f"policy_{i}"
            save_params(os.path.join(directory, name), policy.networks(), {'index': i})
            entries.append({
                'file': f"{name}.npz",
                'histogram': [int(x) for x in hist],
                'clusters_covered': self.clusters_covered(i),
            })
        learner_cfg = asdict(self.learner_cfg)
        learner_cfg['HIDDEN_SIZES'] = list(learner_cfg['HIDDEN_SIZES'])
        manifest = {
            'MANIFEST_VERSION': MANIFEST_VERSION,
            'variant': self.variant,
            'env_dims': self.env_dims,
            'learner': learner_cfg,
            'centroids': self.cluster_hash.centroids.tolist(),
            'global_counts': [int(x) for x in self.global_counts.counts],
            'config_fingerprint': self.fingerprint,
            'policies': entries,
        }
        path = os.path.join(directory, MANIFEST_NAME)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
        logger.info(f"探索策略集已保存: {path}")
        return path

    @classmethod
    def load(cls, path: str) -> 'ExplorationPolicySet':
        manifest_path = os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path
        if not os.path.isfile(manifest_path):
            raise ArtifactError("清单文件不存在", path=manifest_path, reason='missing')
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        if manifest.get('MANIFEST_VERSION') != MANIFEST_VERSION:
            raise ArtifactError("清单版本不兼容", path=manifest_path,
                                reason=f"version={manifest.get('MANIFEST_VERSION')}")

        directory = os.path.dirname(manifest_path)
        learner_data = dict(manifest['learner'])
        learner_data['HIDDEN_SIZES'] = tuple(learner_data['HIDDEN_SIZES'])
        learner_cfg = LearnerConfig(**learner_data)
        dims = SimpleNamespace(**manifest['env_dims'])
        rng = np.random.default_rng(0)

        policies, histograms = [], []
        for entry in manifest['policies']:
            networks, _ = load_params(os.path.join(directory, entry['file']))
            policy = make_learner(dims, learner_cfg, rng)
            policy.load_networks(networks)
            policies.append(policy)
            histograms.append(np.asarray(entry['histogram'], dtype=np.int64))

        return cls(
            policies=policies,
            histograms=histograms,
            cluster_hash=ClusterHash(np.asarray(manifest['centroids'], dtype=float)),
            global_counts=PseudoCounts(np.asarray(manifest['global_counts'], dtype=np.int64), CountScope.GLOBAL),
            learner_cfg=learner_cfg,
            env_dims=manifest['env_dims'],
            variant=manifest['variant'],
            fingerprint=manifest.get('config_fingerprint', ''),
        )


def env_dims(env) -> Dict[str, object]:
    return {
        'discrete': bool(env.discrete),
        'state_dim': int(env.state_dim),
        'obs_dim': int(env.obs_dim),
        'n_agents': int(env.n_agents),
        'n_actions': int(env.n_actions),
    }


def config_fingerprint(config_dict: dict) -> str:
    payload = json.dumps(config_dict, sort_keys=True, ensure_ascii=False).encode('utf-8')
    return hashlib.sha256(payload).hexdigest()


def meta_train(tasks: Sequence[ClimbTaskSpec],
               cfg: MetaTrainConfig,
               rng_seed: int,
               particle: ParticleConfig = None,
               record: Recorder = _no_record) -> Tuple[ExplorationPolicySet, ValuableSet, ClusterHash, PseudoCounts]:
    """
    元训练: 收集 𝓜* → 聚类 → 依次训练 E 个探索策略

    每个探索策略收敛后用它的门控访问更新全局计数，使后续策略避开已覆盖的簇。
    """
    if not tasks:
        raise InvalidArgumentError("训练任务为空", field='tasks', value=0, requirement='>= 1')
    logger.info(f"元训练开始: {len(tasks)} 个任务, E={cfg.N_POLICIES}, seed={rng_seed}")

    mstar, _ = harvest(tasks, cfg, rng_seed, particle, record)

    distinct = np.unique(mstar.points, axis=0).shape[0]
    C = min(cfg.SUBSPACE.N_CLUSTERS, distinct)
    if C < cfg.SUBSPACE.N_CLUSTERS:
        logger.warning(f"𝓜* 只有 {distinct} 个不同点，聚类数降为 {C}")
    cluster_hash = fit_clusters(mstar.points, C, rng_seed, cfg.SUBSPACE.KMEANS_MAX_ITERS)

    envs = [make_env(spec, particle) for spec in tasks]
    global_counts = PseudoCounts.zeros(C, CountScope.GLOBAL)
    policies, histograms = [], []
    for i in range(cfg.N_POLICIES):
        logger.info(f"训练探索策略 {i + 1}/{cfg.N_POLICIES}")
        policy, hist, gated = train_exploration_policy(
            mstar, cluster_hash, global_counts, envs, cfg, [rng_seed, 100 + i],
            record, metric=f'policy{i}_shaped_return'
        )
        global_counts = update_global_counts(global_counts, gated, cluster_hash)
        policies.append(policy)
        histograms.append(hist)
        logger.info(f"探索策略 {i + 1} 门控访问 {int(hist.sum())} 次, 覆盖簇 {np.nonzero(hist)[0].tolist()}")

    policy_set = ExplorationPolicySet(
        policies=policies,
        histograms=histograms,
        cluster_hash=cluster_hash,
        global_counts=global_counts,
        learner_cfg=explorer_config(cfg),
        env_dims=env_dims(envs[0]),
        variant=tasks[0].variant.value,
    )
    return policy_set, mstar, cluster_hash, global_counts


def deploy_mode(policy, cfg: LearnerConfig) -> ActionMode:
    """探索策略部署时的动作模式 (不再微调)"""
    if policy.discrete:
        return ActionMode.eps_greedy(cfg.EPS_END)
    return ActionMode.noisy(cfg.NOISE_SCALE)


def episode_score(traj: Trajectory, env) -> float:
    """离散博弈取每步平均回报；粒子博弈取终止时刻的回报"""
    if len(traj) == 0:
        return 0.0
    if env.discrete:
        return traj.episode_return / env.horizon
    return float(traj.transitions[-1].reward)


def evaluate_greedy(env, learner, episodes: int, rng: np.random.Generator) -> float:
    scores = [episode_score(rollout(env, learner, ActionMode.greedy(), rng), env) for _ in range(episodes)]
    return float(np.mean(scores))


def meta_test(task: ClimbTaskSpec,
              policies: Optional[ExplorationPolicySet],
              schedule: AnnealSchedule,
              cfg: RunConfig,
              rng_seed: int,
              warm_start=None,
              buffer_init: Sequence[Transition] = (),
              record: Recorder = _no_record) -> Tuple[object, List[Tuple[int, float]]]:
    """
    元测试: 每条轨迹以 p_e(t) 的概率由随机选中的探索策略执行，否则由学习器执行

    缓冲区只保存真实回报。policies 为 None 时即普通学习器基线。

    Returns:
        (训练后的学习器, 学习曲线 [(步数, 贪心得分)])
    """
    env = make_env(task, cfg.PARTICLE)
    if policies is not None and policies.env_dims != env_dims(env):
        raise InvalidArgumentError("探索策略与测试任务的接口不一致", field='policies',
                                   value=policies.env_dims, requirement=str(env_dims(env)))
    rng = np.random.default_rng([rng_seed, 1])
    eval_rng = np.random.default_rng([rng_seed, 2])
    if warm_start is not None:
        learner = warm_start.clone()
        learner.buffer = type(learner.buffer)(cfg.LEARNER.BUFFER_CAPACITY)
    else:
        learner = make_learner(env, cfg.LEARNER, rng)
    for tr in buffer_init:
        learner.buffer.add(replace(tr, source='mstar', shaped_reward=0.0))

    curve = []
    step = 0
    next_eval = cfg.EVAL_INTERVAL
    while step < cfg.META_TEST_STEPS:
        p = anneal_probability(schedule, step)
        if policies is not None and len(policies) and p > 0 and rng.random() < p:
            i = int(rng.integers(len(policies)))
            explorer = policies.policies[i]
            traj = rollout(env, explorer, deploy_mode(explorer, policies.learner_cfg), rng,
                           source=f'explorer{i}')
        else:
            if step < cfg.LEARNER.WARMUP_STEPS:
                mode = ActionMode.uniform()
            else:
                mode = learner.exploration_mode(step)
            traj = rollout(env, learner, mode, rng, source='learner')
        step += len(traj)
        learn_from(learner, traj, step, rng)

        if step >= next_eval or step >= cfg.META_TEST_STEPS:
            score = evaluate_greedy(env, learner, cfg.EVAL_EPISODES, eval_rng)
            curve.append((step, score))
            record('meta-test', step, 'greedy_return', score)
            logger.debug(f"meta-test 第 {step} 步: 贪心得分 {score:.4f}")
            while next_eval <= step:
                next_eval += cfg.EVAL_INTERVAL

    logger.info(f"元测试完成: 最终贪心得分 {curve[-1][1]:.4f}")
    return learner, curve


def measure_gated_visits(policies: ExplorationPolicySet,
                         envs: Sequence,
                         mstar: ValuableSet,
                         cfg: SubspaceConfig,
                         episodes: int,
                         rng_seed: int) -> Dict[str, List[float]]:
    """每条轨迹进入高回报子空间的次数: 各探索策略 vs 均匀随机策略"""
    result = {}
    zero = PseudoCounts.zeros(policies.cluster_hash.C, CountScope.GLOBAL)
    runners = [(f'explorer{i}', p, deploy_mode(p, policies.learner_cfg)) for i, p in enumerate(policies.policies)]
    runners.append(('uniform', policies.policies[0], ActionMode.uniform()))
    for name, policy, mode in runners:
        rng = np.random.default_rng([rng_seed, 3])
        visits = []
        for e in range(episodes):
            tracker = ShapedRewardTracker(mstar, policies.cluster_hash, zero, cfg)
            rollout(envs[e % len(envs)], policy, mode, rng, shaper=tracker)
            visits.append(float(len(tracker.gated)))
        result[name] = visits
    return result
