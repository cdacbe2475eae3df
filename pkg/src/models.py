from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np


class Variant(str, Enum):
    ONE_STEP = 'one_step'
    MULTI_STAGE = 'multi_stage'
    PARTICLE = 'particle'


class CountScope(str, Enum):
    TRAJECTORY = 'trajectory'
    GLOBAL = 'global'


@dataclass(frozen=True)
class ClimbTaskSpec:
    variant: Variant
    n: int
    U: int
    delta: float
    stages: Tuple[Tuple[int, int], ...]
    landmarks: Tuple[Tuple[float, float], ...] = ()

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def k(self) -> int:
        return self.stages[0][0]

    @property
    def u(self) -> int:
        return self.stages[0][1]

    @property
    def key(self) -> tuple:
        """任务在任务空间中的身份：(k,u)序列，粒子任务附带地标"""
        return (self.variant.value, self.stages, self.landmarks)


@dataclass(frozen=True)
class GameState:
    stage: int = 0
    history: Tuple[Tuple[int, ...], ...] = ()


@dataclass
class Transition:
    state: np.ndarray
    obs: List[np.ndarray]
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    next_obs: List[np.ndarray]
    done: bool
    shaped_reward: float = 0.0
    source: str = 'learner'
    task_id: int = -1


@dataclass
class Trajectory:
    transitions: List[Transition] = field(default_factory=list)
    task_id: int = -1

    @property
    def rewards(self) -> np.ndarray:
        return np.array([tr.reward for tr in self.transitions], dtype=float)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class ExplorationProfile:
    f0: float
    f1: float
    f2: float
    m: int
    lam: float
    U: int
    T: int
    sigma_w: float = 1.0
    sigma_e: float = 1.0

    @property
    def degenerate(self) -> bool:
        return min(self.f0, self.f1, self.f2) <= 0.0


@dataclass
class ReducedQParams:
    W0: float
    W1: float
    W2: float
    B: float
    C: float
    D: float
    K0: float
    K1: float
    K2: float

    def q_matrix(self, U: int) -> np.ndarray:
        """按对称结构展开为 U×U 的联合Q矩阵"""
        q = np.full((U, U), self.W2 + 2 * self.C + self.D)
        q[0, 1:] = self.W1 + self.B + self.C + self.D
        q[1:, 0] = self.W1 + self.B + self.C + self.D
        q[0, 0] = self.W0 + 2 * self.B + self.D
        return q


@dataclass
class FullQParams:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    unique: bool = True

    def q_matrix(self) -> np.ndarray:
        return self.W + self.b[:, None] + self.c[None, :] + self.d


@dataclass
class PfailEstimate:
    mc: float
    integral: float
    bound: float
    kl: float
    entropy: float


@dataclass
class ValuableSet:
    points: np.ndarray
    rewards: np.ndarray
    source_task: np.ndarray
    r_star: float
    transitions: List[Transition] = field(default_factory=list)
    _index: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1]) if self.points.ndim == 2 else 0

    def index(self) -> Tuple[np.ndarray, np.ndarray]:
        """去重后的点及每个点的最大 r̂"""
        if self._index is None:
            unique, inverse = np.unique(self.points, axis=0, return_inverse=True)
            best = np.zeros(unique.shape[0])
            np.maximum.at(best, np.ravel(inverse), self.rewards)
            self._index = (unique, best)
        return self._index


@dataclass
class ClusterHash:
    centroids: np.ndarray

    @property
    def C(self) -> int:
        return int(self.centroids.shape[0])

    def assign(self, points: np.ndarray) -> np.ndarray:
        """最近质心 (L2)，距离相同取最小下标"""
        points = np.atleast_2d(points)
        d2 = ((points[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(d2, axis=1)


@dataclass
class PseudoCounts:
    counts: np.ndarray
    scope: CountScope = CountScope.GLOBAL

    @classmethod
    def zeros(cls, C: int, scope: CountScope = CountScope.GLOBAL) -> 'PseudoCounts':
        return cls(np.zeros(C, dtype=np.int64), scope)

    def copy(self, scope: Optional[CountScope] = None) -> 'PseudoCounts':
        return PseudoCounts(self.counts.copy(), scope or self.scope)


@dataclass
class MetricsRow:
    run_id: str
    seed: int
    phase: str
    step: int
    metric: str
    value: float

    def as_list(self) -> list:
        return [self.run_id, self.seed, self.phase, self.step, self.metric, repr(float(self.value))]


METRICS_COLUMNS = ['run_id', 'seed', 'phase', 'step', 'metric', 'value']
