from dataclasses import asdict
from typing import Any, Dict, Sequence
import json
import os

import numpy as np

from .config import (
    MAX_STAGES, VALUE_HEADS, VARIANTS, VARIANT_BUDGETS, VARIANT_ONE_STEP, VARIANT_PARTICLE,
    AnnealSchedule, LearnerConfig, MetaTrainConfig, ParticleConfig,
    RunConfig, SubspaceConfig, TaskSpaceConfig,
)
from .models import ClimbTaskSpec, Variant
from .exceptions import InvalidArgumentError, ValidationError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

# 规则: (类型, 下界, 上界, 下界开区间, 上界开区间) 或 ('choice', 可选值)
_RULES = {
    'TASK_SPACE': {
        'VARIANT': ('choice', VARIANTS),
        'N_AGENTS': (int, 2, 4, False, False),
        'N_ACTIONS': (int, 2, 32, False, False),
        'N_STAGES': (int, 1, MAX_STAGES, False, False),
        'DELTA': (float, 0.0, 1.0, True, True),
        'K_FIXED': (int, 1, 4, False, False),
        'COUNT_TRAIN': (int, 1, None, False, False),
        'COUNT_TEST': (int, 1, None, False, False),
    },
    'PARTICLE': {
        'DT': (float, 0.0, None, True, False),
        'DAMPING': (float, 0.0, 1.0, False, True),
        'V_MAX': (float, 0.0, None, True, False),
        'ARENA_HALFWIDTH': (float, 0.0, None, True, False),
        'LANDMARK_RADIUS': (float, 0.0, None, True, False),
        'MIN_SEPARATION': (float, 0.0, None, True, False),
        'HORIZON': (int, 1, None, False, False),
        'MAX_REJECTION_ATTEMPTS': (int, 1, None, False, False),
    },
    'LEARNER': {
        'CRITIC_LR': (float, 0.0, None, True, False),
        'ACTOR_LR': (float, 0.0, None, True, False),
        'GAMMA': (float, 0.0, 1.0, True, True),
        'TAU': (float, 0.0, 1.0, True, False),
        'BATCH_SIZE': (int, 1, None, False, False),
        'GRAD_CLIP': (float, 0.0, None, True, False),
        'OPTIMIZER': ('choice', ('sgd', 'adam')),
        'HIDDEN_SIZES': ('sizes',),
        'BUFFER_CAPACITY': (int, 1, None, False, False),
        'EPS_START': (float, 0.0, 1.0, False, False),
        'EPS_END': (float, 0.0, 1.0, False, False),
        'EPS_DECAY_STEPS': (int, 1, None, False, False),
        'NOISE_SCALE': (float, 0.0, None, False, False),
        'WARMUP_STEPS': (int, 0, None, False, False),
        'UPDATES_PER_EPISODE': (int, 1, None, False, False),
        'MAX_JOINT_ACTIONS': (int, 1, None, False, False),
        'VALUE_HEAD': ('choice', VALUE_HEADS),
    },
    'SUBSPACE': {
        'R_STAR': (float, 0.0, None, True, False),
        'RELABEL_GAMMA': (float, 0.0, 1.0, True, True),
        'DIST_EPS': (float, 0.0, None, True, False),
        'F_D_EXPONENT': (float, 0.0, None, True, False),
        'N_CLUSTERS': (int, 1, None, False, False),
        'KMEANS_MAX_ITERS': (int, 1, None, False, False),
    },
    'META_TRAIN': {
        'N_POLICIES': (int, 1, None, False, False),
        'COLLECTION_STEPS': (int, 1, None, False, False),
        'TRAINING_STEPS': (int, 1, None, False, False),
        'HORIZON': (int, 1, None, False, False),
        'CONVERGENCE_WINDOW': (int, 1, None, False, False),
        'CONVERGENCE_TOL': (float, 0.0, None, True, False),
        'MAX_RESTARTS': (int, 1, None, False, False),
    },
    'SCHEDULE': {
        'P_START': (float, 0.0, 1.0, False, False),
        'T_END': (int, 0, None, False, False),
        'SHAPE': ('choice', ('linear', 'step')),
    },
    'TOP': {
        'EXPERIMENT': (str,),
        'SEEDS': ('seeds',),
        'META_TEST_STEPS': (int, 1, None, False, False),
        'EVAL_INTERVAL': (int, 1, None, False, False),
        'EVAL_EPISODES': (int, 1, None, False, False),
        'OUTPUT_DIR': (str,),
        'MANIFEST': ('optional_str',),
    },
}

_SECTION_CLASSES = {
    'TASK_SPACE': TaskSpaceConfig,
    'PARTICLE': ParticleConfig,
    'LEARNER': LearnerConfig,
    'SUBSPACE': SubspaceConfig,
    'META_TRAIN': MetaTrainConfig,
    'SCHEDULE': AnnealSchedule,
}

REQUIRED_TOP_LEVEL = {'TASK_SPACE'}


def _check_value(section: str, key: str, value: Any, rule: tuple) -> Any:
    """按规则检查单个取值并做类型归一"""
    field_name = f"{section}.{key}" if section != 'TOP' else key
    kind = rule[0]

    if kind == 'choice':
        if value not in rule[1]:
            raise ValidationError(
                message=f"{field_name} 取值无效",
                field=field_name, value=value, constraints={'choices': list(rule[1])}
            )
        return value

    if kind == 'sizes':
        if (not isinstance(value, (list, tuple)) or not value
                or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in value)):
            raise ValidationError(
                message=f"{field_name} 必须是正整数列表",
                field=field_name, value=value, constraints={'type': 'list[int>=1]'}
            )
        return tuple(value)

    if kind == 'seeds':
        if (not isinstance(value, (list, tuple)) or not value
                or any(isinstance(v, bool) or not isinstance(v, int) for v in value)):
            raise ValidationError(
                message="SEEDS 必须是非空整数列表",
                field=field_name, value=value, constraints={'type': 'list[int]', 'min_length': 1}
            )
        return list(value)

    if kind == 'optional_str':
        if value is not None and not isinstance(value, str):
            raise ValidationError(message=f"{field_name} 必须是字符串", field=field_name, value=value)
        return value

    if kind is str:
        if not isinstance(value, str) or not value:
            raise ValidationError(message=f"{field_name} 必须是非空字符串", field=field_name, value=value)
        return value

    # 数值规则
    _, low, high, low_open, high_open = rule
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(
            message=f"{field_name} 类型无效",
            field=field_name, value=value, constraints={'type': kind.__name__}
        )
    if kind is int and not float(value).is_integer():
        raise ValidationError(
            message=f"{field_name} 必须是整数",
            field=field_name, value=value, constraints={'type': 'int'}
        )
    value = kind(value)
    if not np.isfinite(value):
        raise ValidationError(message=f"{field_name} 必须是有限值", field=field_name, value=value)
    too_low = low is not None and (value <= low if low_open else value < low)
    too_high = high is not None and (value >= high if high_open else value > high)
    if too_low or too_high:
        raise ValidationError(
            message=f"{field_name} 超出取值范围",
            field=field_name, value=value,
            constraints={'min': low, 'max': high, 'min_open': low_open, 'max_open': high_open}
        )
    return value


def _validate_section(section: str, data: Any) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ValidationError(
            message=f"{section} 必须是对象",
            field=section, value=data, constraints={'type': 'object'}
        )
    rules = _RULES[section]
    unknown = sorted(set(data) - set(rules))
    if unknown:
        logger.error(f"配置段 {section} 含有未知字段: {unknown}")
        raise ValidationError(
            message=f"未知配置字段: {', '.join(unknown)}",
            field=unknown[0] if section == 'TOP' else f"{section}.{unknown[0]}",
            value=data[unknown[0]],
            constraints={'allowed': sorted(rules)}
        )
    return {key: _check_value(section, key, value, rules[key]) for key, value in data.items()}


def validate_run_config(config_data: Dict[str, Any]) -> RunConfig:
    """
    验证并转换实验配置

    Args:
        config_data: 已解析的JSON对象

    Returns:
        填充了默认值的 RunConfig

    Raises:
        ValidationError: 缺少字段、未知字段或取值越界时
    """
    logger.debug(f"开始验证实验配置: {config_data}")

    try:
        if not isinstance(config_data, dict):
            raise ValidationError(message="配置必须是JSON对象", field=None, value=config_data)

        missing = REQUIRED_TOP_LEVEL - set(config_data)
        if missing:
            raise ValidationError(
                message="配置缺少必要字段",
                field=sorted(missing)[0],
                constraints={'required_fields': sorted(REQUIRED_TOP_LEVEL)}
            )

        top = {k: v for k, v in config_data.items() if k not in _SECTION_CLASSES}
        top = _validate_section('TOP', top)
        sections = {
            name: _validate_section(name, config_data.get(name, {}))
            for name in _SECTION_CLASSES
        }

        task_space = TaskSpaceConfig(**sections['TASK_SPACE'])
        if task_space.VARIANT == VARIANT_ONE_STEP and task_space.N_STAGES != 1:
            raise ValidationError(
                message="单步任务只能有一个阶段",
                field='TASK_SPACE.N_STAGES', value=task_space.N_STAGES, constraints={'equals': 1}
            )
        if task_space.K_FIXED > task_space.N_AGENTS:
            raise ValidationError(
                message="K_FIXED 不能超过智能体数",
                field='TASK_SPACE.K_FIXED', value=task_space.K_FIXED,
                constraints={'max': task_space.N_AGENTS}
            )

        particle = ParticleConfig(**sections['PARTICLE'])
        meta_budget, test_budget, collect, warmup, clusters = VARIANT_BUDGETS[task_space.VARIANT]

        learner_data = dict(sections['LEARNER'])
        learner_data.setdefault('WARMUP_STEPS', warmup)
        learner = LearnerConfig(**learner_data)
        if learner.EPS_END > learner.EPS_START:
            raise ValidationError(
                message="EPS_END 不能大于 EPS_START",
                field='LEARNER.EPS_END', value=learner.EPS_END, constraints={'max': learner.EPS_START}
            )

        subspace_data = dict(sections['SUBSPACE'])
        subspace_data.setdefault('N_CLUSTERS', clusters)
        subspace = SubspaceConfig(**subspace_data)

        meta_data = dict(sections['META_TRAIN'])
        n_policies = meta_data.get('N_POLICIES', MetaTrainConfig.N_POLICIES)
        meta_data.setdefault('COLLECTION_STEPS', collect)
        meta_data.setdefault('TRAINING_STEPS', max(1, meta_budget // n_policies))
        if task_space.VARIANT == VARIANT_PARTICLE:
            meta_data.setdefault('HORIZON', particle.HORIZON)
        else:
            meta_data.setdefault('HORIZON', task_space.N_STAGES)
        meta_train = MetaTrainConfig(LEARNER=learner, SUBSPACE=subspace, **meta_data)

        top.setdefault('META_TEST_STEPS', test_budget)
        schedule_data = dict(sections['SCHEDULE'])
        schedule_data.setdefault('T_END', int(0.4 * top['META_TEST_STEPS']))
        schedule = AnnealSchedule(**schedule_data)

        config = RunConfig(
            TASK_SPACE=task_space,
            LEARNER=learner,
            META_TRAIN=meta_train,
            SCHEDULE=schedule,
            PARTICLE=particle,
            **top
        )
        logger.debug("实验配置验证通过")
        return config

    except ValidationError:
        raise
    except Exception as e:
        logger.error(f"配置验证过程发生未预期错误: {str(e)}", exc_info=True)
        raise ValidationError(
            message=f"配置验证失败: {str(e)}",
            field=None,
            value=config_data
        )


def parse_config(path: str) -> RunConfig:
    """读取并验证JSON配置文件"""
    if not os.path.isfile(path):
        raise ValidationError(message="配置文件不存在", field='path', value=path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            config_data = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"JSON解析失败: {e}")
        raise ValidationError(message=f"JSON解析错误: {str(e)}", field='path', value=path)
    return validate_run_config(config_data)


def run_config_to_dict(config: RunConfig) -> Dict[str, Any]:
    """RunConfig → 与配置文件同结构的字典 (可被 validate_run_config 重新读回)"""
    meta = asdict(config.META_TRAIN)
    meta.pop('LEARNER')
    subspace = meta.pop('SUBSPACE')
    learner = asdict(config.LEARNER)
    learner['HIDDEN_SIZES'] = list(learner['HIDDEN_SIZES'])
    return {
        'EXPERIMENT': config.EXPERIMENT,
        'TASK_SPACE': asdict(config.TASK_SPACE),
        'LEARNER': learner,
        'SUBSPACE': subspace,
        'META_TRAIN': meta,
        'SCHEDULE': asdict(config.SCHEDULE),
        'PARTICLE': asdict(config.PARTICLE),
        'SEEDS': list(config.SEEDS),
        'META_TEST_STEPS': config.META_TEST_STEPS,
        'EVAL_INTERVAL': config.EVAL_INTERVAL,
        'EVAL_EPISODES': config.EVAL_EPISODES,
        'OUTPUT_DIR': config.OUTPUT_DIR,
        'MANIFEST': config.MANIFEST,
    }


def validate_joint_action(a: Sequence[int], n: int, U: int) -> None:
    """联合动作长度为n，且每个分量在 [0, U)"""
    a = np.asarray(a)
    if a.ndim != 1 or a.shape[0] != n:
        raise InvalidArgumentError(
            "联合动作维度与任务不匹配",
            field='joint_action', value=a.tolist(), requirement=f"length == {n}"
        )
    if not np.issubdtype(a.dtype, np.integer) or np.any(a < 0) or np.any(a >= U):
        raise InvalidArgumentError(
            "联合动作分量越界",
            field='joint_action', value=a.tolist(), requirement=f"integers in [0, {U})"
        )


def validate_task_spec(spec: ClimbTaskSpec, min_separation: float = None) -> None:
    """检查 ClimbTaskSpec 的全部不变量"""
    if spec.n < 2 or spec.U < 2:
        raise ValidationError(
            message="智能体数和动作数至少为2",
            field='n/U', value=(spec.n, spec.U), constraints={'min': 2}
        )
    if not 0.0 < spec.delta < 1.0:
        raise ValidationError(
            message="δ 必须在 (0, 1) 内",
            field='delta', value=spec.delta, constraints={'min_open': 0.0, 'max_open': 1.0}
        )
    if not spec.stages:
        raise ValidationError(message="阶段列表为空", field='stages', value=spec.stages)
    if len(spec.stages) > MAX_STAGES:
        raise ValidationError(
            message="阶段数超过上限",
            field='stages', value=len(spec.stages), constraints={'max_length': MAX_STAGES}
        )
    for t, (k_t, u_t) in enumerate(spec.stages):
        if not 1 <= k_t <= spec.n or not 0 <= u_t < spec.U:
            raise ValidationError(
                message="阶段参数越界",
                field='stages', value=(t, k_t, u_t),
                constraints={'k': [1, spec.n], 'u': [0, spec.U - 1]}
            )
    if spec.variant in (Variant.ONE_STEP, Variant.PARTICLE) and len(spec.stages) != 1:
        raise ValidationError(
            message="单步/粒子任务只能有一个阶段",
            field='stages', value=len(spec.stages), constraints={'length': 1}
        )
    if spec.variant == Variant.PARTICLE:
        if len(spec.landmarks) != spec.U:
            raise ValidationError(
                message="地标数量必须等于 U",
                field='landmarks', value=len(spec.landmarks), constraints={'length': spec.U}
            )
        if min_separation is not None and spec.U > 1:
            pts = np.asarray(spec.landmarks, dtype=float)
            dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            closest = dists[np.triu_indices(spec.U, k=1)].min()
            if closest <= min_separation:
                raise ValidationError(
                    message="地标间距不足",
                    field='landmarks', value=float(closest), constraints={'min_separation': min_separation}
                )
    elif spec.landmarks:
        raise ValidationError(
            message="离散任务不应包含地标",
            field='landmarks', value=len(spec.landmarks), constraints={'length': 0}
        )


def task_spec_to_dict(spec: ClimbTaskSpec) -> Dict[str, Any]:
    return {
        'VARIANT': spec.variant.value,
        'N': spec.n,
        'U': spec.U,
        'DELTA': spec.delta,
        'STAGES': [[int(k), int(u)] for k, u in spec.stages],
        'LANDMARKS': [[float(x), float(y)] for x, y in spec.landmarks],
    }


def task_spec_from_dict(data: Dict[str, Any]) -> ClimbTaskSpec:
    """JSON对象 → ClimbTaskSpec，并检查不变量"""
    required = {'VARIANT', 'N', 'U', 'DELTA', 'STAGES'}
    missing = required - set(data)
    if missing:
        raise ValidationError(
            message="任务数据缺少必要字段",
            field=sorted(missing)[0], constraints={'required_fields': sorted(required)}
        )
    unknown = set(data) - required - {'LANDMARKS'}
    if unknown:
        raise ValidationError(message="任务数据含未知字段", field=sorted(unknown)[0])
    try:
        spec = ClimbTaskSpec(
            variant=Variant(data['VARIANT']),
            n=int(data['N']),
            U=int(data['U']),
            delta=float(data['DELTA']),
            stages=tuple((int(k), int(u)) for k, u in data['STAGES']),
            landmarks=tuple((float(x), float(y)) for x, y in data.get('LANDMARKS', [])),
        )
    except (TypeError, ValueError) as e:
        raise ValidationError(message=f"任务数据转换失败: {str(e)}", value=data)
    validate_task_spec(spec)
    return spec
