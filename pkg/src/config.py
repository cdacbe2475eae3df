from dataclasses import dataclass, field
from typing import List, Optional, Tuple

VARIANT_ONE_STEP = 'one_step'
VARIANT_MULTI_STAGE = 'multi_stage'
VARIANT_PARTICLE = 'particle'
VARIANTS = (VARIANT_ONE_STEP, VARIANT_MULTI_STAGE, VARIANT_PARTICLE)

# 多阶段博弈的阶段数上限，任务空间大小为 (nU)^S
MAX_STAGES = 16

# 离散值头: 联合动作头输出 U^n 个值；分解头输出 n·U 个值，Q(s,a) = Σ_i Q_i(s,a_i)
HEAD_JOINT = 'joint'
HEAD_FACTORED = 'factored'
HEAD_AUTO = 'auto'
VALUE_HEADS = (HEAD_AUTO, HEAD_JOINT, HEAD_FACTORED)

# 各任务族的默认预算 (元训练总步数, 元测试步数, 收集步数/任务, 随机预热步数, 聚类数)
VARIANT_BUDGETS = {
    VARIANT_ONE_STEP: (50_000, 50_000, 3_000, 3_000, 16),
    VARIANT_MULTI_STAGE: (100_000, 100_000, 3_000, 3_000, 16),
    VARIANT_PARTICLE: (300_000, 300_000, 50_000, 50_000, 64),
}


@dataclass
class TaskSpaceConfig:
    VARIANT: str = VARIANT_ONE_STEP
    N_AGENTS: int = 2
    N_ACTIONS: int = 10
    N_STAGES: int = 1
    DELTA: float = 0.5
    # 粒子任务固定k
    K_FIXED: int = 2
    COUNT_TRAIN: int = 10
    COUNT_TEST: int = 3


@dataclass
class ParticleConfig:
    DT: float = 0.1
    DAMPING: float = 0.25
    V_MAX: float = 1.0
    ARENA_HALFWIDTH: float = 1.0
    LANDMARK_RADIUS: float = 0.1
    # 地标最小间距 = 3 × 半径
    MIN_SEPARATION: float = 0.3
    HORIZON: int = 60
    MAX_REJECTION_ATTEMPTS: int = 10_000


@dataclass
class LearnerConfig:
    CRITIC_LR: float = 5e-3
    ACTOR_LR: float = 1e-4
    GAMMA: float = 0.95
    TAU: float = 0.01
    BATCH_SIZE: int = 32
    GRAD_CLIP: float = 10.0
    OPTIMIZER: str = 'sgd'
    HIDDEN_SIZES: Tuple[int, ...] = (64, 64)
    BUFFER_CAPACITY: int = 100_000
    EPS_START: float = 1.0
    EPS_END: float = 0.05
    EPS_DECAY_STEPS: int = 20_000
    NOISE_SCALE: float = 0.1
    WARMUP_STEPS: int = 3_000
    UPDATES_PER_EPISODE: int = 1
    MAX_JOINT_ACTIONS: int = 1024
    # 测试任务上的学习器默认用分解头；auto 在联合空间不超过 MAX_JOINT_ACTIONS 时用联合头
    VALUE_HEAD: str = HEAD_FACTORED


@dataclass
class SubspaceConfig:
    R_STAR: float = 1.0
    RELABEL_GAMMA: float = 0.05
    DIST_EPS: float = 0.1
    F_D_EXPONENT: float = 5.0
    N_CLUSTERS: int = 16
    KMEANS_MAX_ITERS: int = 100


@dataclass
class MetaTrainConfig:
    N_POLICIES: int = 4
    COLLECTION_STEPS: int = 3_000
    TRAINING_STEPS: int = 12_500
    HORIZON: int = 1
    CONVERGENCE_WINDOW: int = 50
    CONVERGENCE_TOL: float = 0.02
    MAX_RESTARTS: int = 3
    LEARNER: LearnerConfig = field(default_factory=LearnerConfig)
    SUBSPACE: SubspaceConfig = field(default_factory=SubspaceConfig)


@dataclass
class AnnealSchedule:
    P_START: float = 0.5
    T_END: int = 20_000
    SHAPE: str = 'linear'


@dataclass
class RunConfig:
    EXPERIMENT: str = 'mesa'
    TASK_SPACE: TaskSpaceConfig = field(default_factory=TaskSpaceConfig)
    LEARNER: LearnerConfig = field(default_factory=LearnerConfig)
    META_TRAIN: MetaTrainConfig = field(default_factory=MetaTrainConfig)
    SCHEDULE: AnnealSchedule = field(default_factory=AnnealSchedule)
    PARTICLE: ParticleConfig = field(default_factory=ParticleConfig)
    SEEDS: List[int] = field(default_factory=lambda: [0, 1, 2])
    META_TEST_STEPS: int = 50_000
    EVAL_INTERVAL: int = 1_000
    EVAL_EPISODES: int = 5
    OUTPUT_DIR: str = 'results'
    MANIFEST: Optional[str] = None
