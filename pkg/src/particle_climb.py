from dataclasses import dataclass, replace
from typing import List, Optional, Tuple, Union

import numpy as np

from .config import ParticleConfig, TaskSpaceConfig
from .models import ClimbTaskSpec, Variant
from .exceptions import InfeasibleGeometryError, InvalidArgumentError, InvalidStateError
from .validators import validate_task_spec
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)


@dataclass(frozen=True)
class ParticleWorld:
    positions: np.ndarray
    velocities: np.ndarray
    spec: ClimbTaskSpec
    t: int = 0
    horizon: int = 60

    @property
    def landmarks(self) -> np.ndarray:
        return np.asarray(self.spec.landmarks, dtype=float)


def _as_rng(rng_seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_landmarks(U: int,
                     arena_halfwidth: float,
                     min_sep: float,
                     rng_seed: Union[int, np.random.Generator],
                     max_attempts: int = 10_000) -> List[Tuple[float, float]]:
    """
    在 [-h, h]² 内均匀拒绝采样 U 个互不重叠的地标

    Raises:
        InfeasibleGeometryError: 几何上放不下或拒绝预算耗尽
    """
    if U < 1:
        raise InvalidArgumentError("地标数量至少为1", field='U', value=U, requirement='>= 1')
    constraints = {'U': U, 'arena_halfwidth': arena_halfwidth, 'min_sep': min_sep}

    # 面积上限: U 个半径 min_sep/2 的圆必须放得进扩展后的正方形
    disk_area = U * np.pi * (min_sep / 2.0) ** 2
    if U > 1 and disk_area > (2.0 * arena_halfwidth + min_sep) ** 2:
        logger.error(f"地标几何不可行: {constraints}")
        raise InfeasibleGeometryError("地标无法在场地内互不重叠地放置", attempts=0, constraints=constraints)

    rng = _as_rng(rng_seed)
    iu = np.triu_indices(U, k=1)
    for attempt in range(1, max_attempts + 1):
        points = rng.uniform(-arena_halfwidth, arena_halfwidth, size=(U, 2))
        if U == 1:
            return [tuple(points[0])]
        dists = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)[iu]
        if dists.min() > min_sep:
            logger.debug(f"地标采样成功，尝试 {attempt} 次")
            return [tuple(p) for p in points]

    raise InfeasibleGeometryError("拒绝采样预算耗尽", attempts=max_attempts, constraints=constraints)


def observe(w: ParticleWorld) -> List[np.ndarray]:
    """每个智能体: 自身速度, 所有地标相对位置, 其余智能体相对位置"""
    n = w.positions.shape[0]
    landmarks = w.landmarks
    obs = []
    for i in range(n):
        rel_landmarks = (landmarks - w.positions[i]).ravel()
        others = np.delete(w.positions, i, axis=0) - w.positions[i]
        obs.append(np.concatenate([w.velocities[i], rel_landmarks, others.ravel()]))
    return obs


def occupancy(w: ParticleWorld, landmark_radius: float) -> np.ndarray:
    """f_j: 位于第j个地标上的智能体数 (每个智能体只计入最近的地标)"""
    landmarks = w.landmarks
    dists = np.linalg.norm(w.positions[:, None, :] - landmarks[None, :, :], axis=-1)
    nearest = np.argmin(dists, axis=1)
    on_landmark = dists[np.arange(len(nearest)), nearest] < landmark_radius
    return np.bincount(nearest[on_landmark], minlength=landmarks.shape[0])


def reward_particle(w: ParticleWorld, landmark_radius: float = 0.1) -> float:
    f = occupancy(w, landmark_radius)
    n = w.positions.shape[0]
    if f.sum() != n:
        return 0.0
    f_u = f[w.spec.u]
    if f_u == w.spec.k:
        return 1.0
    if f_u == 0:
        return 1.0 - w.spec.delta
    return 0.0


def particle_step(w: ParticleWorld,
                  forces: np.ndarray,
                  cfg: ParticleConfig = None) -> Tuple[ParticleWorld, float, bool, List[np.ndarray]]:
    """
    双积分器动力学: 先阻尼再加力，按 v_max 截断速度

    Returns:
        (新世界, 回报, 是否结束, 观测)
    """
    cfg = cfg or ParticleConfig()
    forces = np.asarray(forces, dtype=float)
    if forces.shape != w.positions.shape:
        raise InvalidArgumentError(
            "力矩阵维度无效",
            field='forces', value=list(forces.shape), requirement=f"shape == {w.positions.shape}"
        )
    if not np.all(np.isfinite(forces)) or np.any(np.abs(forces) > 1.0):
        raise InvalidArgumentError(
            "力分量超出 [-1, 1]",
            field='forces', value=forces.tolist(), requirement='each component in [-1, 1]'
        )
    if w.t >= w.horizon:
        raise InvalidStateError("回合已经结束", phase='particle_step', state={'t': w.t, 'horizon': w.horizon})

    velocities = (1.0 - cfg.DAMPING) * w.velocities + forces * cfg.DT
    speed = np.linalg.norm(velocities, axis=1, keepdims=True)
    scale = np.where(speed > cfg.V_MAX, cfg.V_MAX / np.maximum(speed, 1e-12), 1.0)
    velocities = velocities * scale
    positions = w.positions + velocities * cfg.DT

    next_world = replace(w, positions=positions, velocities=velocities, t=w.t + 1)
    r = reward_particle(next_world, cfg.LANDMARK_RADIUS)
    done = next_world.t == w.horizon
    return next_world, r, done, observe(next_world)


class ParticleClimbEnv:
    """二维粒子世界中的爬山博弈"""
    discrete = False

    def __init__(self, spec: ClimbTaskSpec, cfg: ParticleConfig = None):
        self.cfg = cfg or ParticleConfig()
        validate_task_spec(spec, min_separation=self.cfg.MIN_SEPARATION)
        if spec.variant != Variant.PARTICLE:
            raise InvalidArgumentError(
                "ParticleClimbEnv 只接受粒子任务",
                field='variant', value=spec.variant.value, requirement='particle'
            )
        self.spec = spec
        self.n_agents = spec.n
        self.n_actions = 2
        self.horizon = self.cfg.HORIZON
        self.obs_dim = 2 + 2 * spec.U + 2 * (spec.n - 1)
        self.state_dim = 4 * spec.n + 2 * spec.U
        self.action_dim = 2 * spec.n
        self.world: Optional[ParticleWorld] = None

    def state_embedding(self, w: ParticleWorld) -> np.ndarray:
        h = self.cfg.ARENA_HALFWIDTH
        return np.concatenate([
            w.positions.ravel() / h,
            w.velocities.ravel() / self.cfg.V_MAX,
            w.landmarks.ravel() / h,
        ])

    def reset(self, rng: np.random.Generator) -> Tuple[np.ndarray, List[np.ndarray]]:
        h = self.cfg.ARENA_HALFWIDTH
        self.world = ParticleWorld(
            positions=rng.uniform(-h, h, size=(self.n_agents, 2)),
            velocities=np.zeros((self.n_agents, 2)),
            spec=self.spec,
            t=0,
            horizon=self.horizon,
        )
        return self.state_embedding(self.world), observe(self.world)

    def step(self, action) -> Tuple[np.ndarray, List[np.ndarray], float, bool]:
        if self.world is None:
            raise InvalidStateError("环境尚未 reset", phase='step')
        forces = np.asarray(action, dtype=float).reshape(self.n_agents, 2)
        self.world, r, done, obs = particle_step(self.world, forces, self.cfg)
        return self.state_embedding(self.world), obs, r, done

    def action_embedding(self, action) -> np.ndarray:
        return np.asarray(action, dtype=float).ravel()

    def embed(self, state: np.ndarray, action) -> np.ndarray:
        return np.concatenate([state, self.action_embedding(action)])


def sample_particle_tasks(space: TaskSpaceConfig,
                          count: int,
                          rng: np.random.Generator,
                          cfg: ParticleConfig) -> List[ClimbTaskSpec]:
    """每个任务独立采样地标布局与目标地标u，k固定"""
    tasks = []
    seen = set()
    while len(tasks) < count:
        landmarks = sample_landmarks(
            space.N_ACTIONS, cfg.ARENA_HALFWIDTH, cfg.MIN_SEPARATION,
            rng, max_attempts=cfg.MAX_REJECTION_ATTEMPTS
        )
        spec = ClimbTaskSpec(
            variant=Variant.PARTICLE,
            n=space.N_AGENTS,
            U=space.N_ACTIONS,
            delta=space.DELTA,
            stages=((space.K_FIXED, int(rng.integers(space.N_ACTIONS))),),
            landmarks=tuple(landmarks),
        )
        if spec.key in seen:
            continue
        seen.add(spec.key)
        tasks.append(spec)
    return tasks
