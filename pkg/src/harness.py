from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple
import json
import os

import numpy as np

from .config import RunConfig
from .models import MetricsRow
from .climb_games import sample_tasks
from .learners import make_learner
from .meta import (
    ExplorationPolicySet, config_fingerprint, deploy_mode, make_env, measure_gated_visits,
    meta_test, meta_train, rollout, learn_from,
)
from .theory_lab import ExplorationStrategy, phase_diagram, threshold_table
from .subspace import export_valuable_csv
from .artifacts import (
    METRICS_FILE, emit_artifacts, export_trajectory_csv, write_metrics_csv, write_rows_csv,
)
from .validators import run_config_to_dict, validate_run_config
from .exceptions import InvalidArgumentError, MesaError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

SUBCOMMANDS = ('theory', 'meta-train', 'meta-test', 'reproduce', 'ablate')
ARMS = ('vanilla', 'buffer-init', 'mesa', 'pretrain')
DEFAULT_ARMS = {
    'meta-test': ('mesa',),
    'reproduce': ('vanilla', 'mesa'),
    'ablate': ('vanilla', 'buffer-init', 'mesa'),
}

# 复现目标 → 最小配置，其余字段由 validate_run_config 按任务族填充
REPRODUCE_TARGETS = {
    'one-step-climb': {
        'TASK_SPACE': {'VARIANT': 'one_step', 'N_AGENTS': 2, 'N_ACTIONS': 10, 'N_STAGES': 1,
                       'DELTA': 0.5, 'COUNT_TRAIN': 10, 'COUNT_TEST': 3},
    },
    'multi-stage-climb': {
        'TASK_SPACE': {'VARIANT': 'multi_stage', 'N_AGENTS': 2, 'N_ACTIONS': 10, 'N_STAGES': 5,
                       'DELTA': 0.5, 'COUNT_TRAIN': 10, 'COUNT_TEST': 3},
    },
    'particle-climb': {
        'TASK_SPACE': {'VARIANT': 'particle', 'N_AGENTS': 2, 'N_ACTIONS': 3, 'K_FIXED': 2,
                       'DELTA': 0.5, 'COUNT_TRAIN': 10, 'COUNT_TEST': 3},
        'LEARNER': {'OPTIMIZER': 'adam'},
    },
}

# theory 子命令的网格
THEORY_U_VALUES = (3, 4, 5, 6)
THEORY_DELTAS = (1 / 6, 1 / 12, 1 / 24, 1 / 48)
THEORY_LAMBDAS = tuple(float(x) for x in np.geomspace(1.0, 1000.0, 13))
THEORY_EPSILONS = (0.5, 0.25, 0.125)
THEORY_DECAY_DELTAS = (0.4, 0.35, 0.3)


def worker_count() -> int:
    """MESA_WORKERS 覆盖并行进程数，默认1 (进程内顺序执行)"""
    raw = os.getenv('MESA_WORKERS', '1')
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"MESA_WORKERS 取值无效: {raw}，按1处理")
        return 1


def run_directory(cfg: RunConfig, subcommand: str, out_dir: Optional[str] = None) -> str:
    return os.path.join(out_dir or cfg.OUTPUT_DIR, f"{cfg.EXPERIMENT}-{subcommand}")


def write_config_snapshot(cfg: RunConfig, run_dir: str) -> str:
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, 'config.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(run_config_to_dict(cfg), f, ensure_ascii=False, indent=2, sort_keys=True)
    return path


def target_config(target: str, base: RunConfig) -> RunConfig:
    """复现目标的配置: 继承种子与输出目录，预算按任务族默认值"""
    if target not in REPRODUCE_TARGETS:
        raise InvalidArgumentError("未知的复现目标", field='target', value=target,
                                   requirement=f"one of {sorted(REPRODUCE_TARGETS)}")
    data = json.loads(json.dumps(REPRODUCE_TARGETS[target]))
    data.update({'EXPERIMENT': target, 'SEEDS': list(base.SEEDS), 'OUTPUT_DIR': base.OUTPUT_DIR})
    return validate_run_config(data)


def _run_jobs(fn, jobs: Sequence[tuple]) -> list:
    workers = worker_count()
    if workers == 1 or len(jobs) <= 1:
        return [fn(*args) for args in jobs]
    logger.info(f"使用 {workers} 个工作进程运行 {len(jobs)} 个任务")
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(fn, *args) for args in jobs]
        return [future.result() for future in futures]


def _recorder(rows: List[MetricsRow], run_id: str, seed: int):
    def record(phase: str, step: int, metric: str, value: float) -> None:
        rows.append(MetricsRow(run_id, seed, phase, int(step), metric, float(value)))
    return record


def pretrain_learner(tasks, cfg: RunConfig, rng_seed: int):
    """朴素元训练基线: 用真实回报在全部训练任务上轮流训练一个学习器"""
    envs = [make_env(spec, cfg.PARTICLE) for spec in tasks]
    rng = np.random.default_rng([rng_seed, 4])
    learner = make_learner(envs[0], cfg.LEARNER, rng)
    budget = cfg.META_TRAIN.N_POLICIES * cfg.META_TRAIN.TRAINING_STEPS
    step, episode = 0, 0
    while step < budget:
        env = envs[episode % len(envs)]
        traj = rollout(env, learner, learner.exploration_mode(step), rng, task_id=episode % len(envs))
        step += len(traj)
        episode += 1
        learn_from(learner, traj, step, rng)
    logger.info(f"预训练基线完成: {step} 步, {episode} 条轨迹")
    return learner


def _average_curves(curves: Sequence[List[Tuple[int, float]]]) -> List[Tuple[int, float]]:
    length = min(len(c) for c in curves)
    return [(curves[0][i][0], float(np.mean([c[i][1] for c in curves]))) for i in range(length)]


def _export_explorer_trajectories(policy_set: ExplorationPolicySet, envs, directory: str, seed: int) -> None:
    rng = np.random.default_rng([seed, 5])
    for i, policy in enumerate(policy_set.policies):
        traj = rollout(envs[0], policy, deploy_mode(policy, policy_set.learner_cfg), rng, source=f'explorer{i}')
        export_trajectory_csv(os.path.join(directory, f"explorer{i}.csv"), traj, envs[0])


def _meta_train_seed(cfg: RunConfig, seed: int, seed_dir: str, rows: List[MetricsRow], train_tasks):
    policy_set, mstar, _, _ = meta_train(train_tasks, cfg.META_TRAIN, seed, cfg.PARTICLE,
                                         _recorder(rows, 'mesa', seed))
    policy_set.fingerprint = config_fingerprint(run_config_to_dict(cfg))
    policy_set.save(os.path.join(seed_dir, 'policies'))
    export_valuable_csv(mstar, os.path.join(seed_dir, 'mstar.csv'))
    envs = [make_env(spec, cfg.PARTICLE) for spec in train_tasks]
    _export_explorer_trajectories(policy_set, envs, os.path.join(seed_dir, 'trajectories'), seed)
    return policy_set, mstar


def seed_job(config_dict: dict, seed: int, subcommand: str, arms: Tuple[str, ...], run_dir: str) -> List[MetricsRow]:
    """
    单个种子的完整流水线，可在子进程中运行

    各臂共享同一组训练/测试任务与种子。
    """
    cfg = validate_run_config(config_dict)
    seed_dir = os.path.join(run_dir, f"seed{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    rows: List[MetricsRow] = []
    space = cfg.TASK_SPACE
    train_tasks, test_tasks = sample_tasks(space, space.COUNT_TRAIN, space.COUNT_TEST, seed, cfg.PARTICLE)

    phase = 'meta-train'
    try:
        if subcommand == 'meta-train':
            _meta_train_seed(cfg, seed, seed_dir, rows, train_tasks)
            return rows

        loaded = ExplorationPolicySet.load(cfg.MANIFEST) if ('mesa' in arms and cfg.MANIFEST) else None
        policy_set, mstar = loaded, None
        if ('mesa' in arms and loaded is None) or 'buffer-init' in arms:
            trained, mstar = _meta_train_seed(cfg, seed, seed_dir, rows, train_tasks)
            policy_set = loaded if loaded is not None else trained

        if 'mesa' in arms and loaded is None:
            test_envs = [make_env(spec, cfg.PARTICLE) for spec in test_tasks]
            visits = measure_gated_visits(policy_set, test_envs, mstar, cfg.META_TRAIN.SUBSPACE,
                                          cfg.EVAL_EPISODES, seed)
            for name, values in visits.items():
                rows.append(MetricsRow('mesa', seed, 'explore-train', 0, f'{name}_gated_visits',
                                       float(np.mean(values))))

        warm_start = pretrain_learner(train_tasks, cfg, seed) if 'pretrain' in arms else None

        for arm in arms:
            phase = f'meta-test/{arm}'
            curves = []
            for j, task in enumerate(test_tasks):
                kwargs = {'policies': policy_set if arm == 'mesa' else None}
                if arm == 'buffer-init':
                    kwargs['buffer_init'] = mstar.transitions
                if arm == 'pretrain':
                    kwargs['warm_start'] = warm_start
                _, curve = meta_test(task, schedule=cfg.SCHEDULE, cfg=cfg, rng_seed=seed * 1000 + j, **kwargs)
                curves.append(curve)
            for step, value in _average_curves(curves):
                rows.append(MetricsRow(arm, seed, 'meta-test', step, 'greedy_return', value))
            logger.info(f"seed {seed} / {arm}: 最终贪心得分 {rows[-1].value:.4f}")
    except MesaError as e:
        logger.error(f"seed {seed} 在阶段 {phase} 失败: {e}", exc_info=True)
        e.details.setdefault('phase', phase)
        e.details['seed'] = seed
        raise
    return rows


def run_theory(run_dir: str) -> Dict[str, object]:
    """相图与最少探索步数表"""
    diagram = phase_diagram(THEORY_U_VALUES, THEORY_DELTAS, THEORY_LAMBDAS)
    write_rows_csv(os.path.join(run_dir, 'phase_diagram.csv'), diagram,
                   ['U', 'delta', 'lambda', 'criterion', 'oracle_optimal'])

    rows = threshold_table([ExplorationStrategy.uniform(), ExplorationStrategy.structured()],
                           THEORY_U_VALUES, THEORY_DELTAS)
    # ε-greedy 与均匀探索在同一 (U, δ) 上对比
    rows += threshold_table([ExplorationStrategy.uniform()] + [ExplorationStrategy.eps_fixed(e) for e in THEORY_EPSILONS],
                            (4,), (1 / 32,))
    rows += threshold_table([ExplorationStrategy.eps_decay()], (3,), THEORY_DECAY_DELTAS)
    write_rows_csv(os.path.join(run_dir, 'thresholds.csv'), rows,
                   ['strategy', 'U', 'delta', 't_star', 'unbounded', 'closed_form'])

    agreement = sum(1 for r in diagram if r['criterion'] == r['oracle_optimal']) / len(diagram)
    summary = {'points': len(diagram), 'agreement': agreement, 'thresholds': len(rows)}
    with open(os.path.join(run_dir, 'summary.json'), 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def run_experiment(cfg: RunConfig,
                   subcommand: str,
                   out_dir: Optional[str] = None,
                   seed: Optional[int] = None,
                   target: Optional[str] = None,
                   arms: Optional[Sequence[str]] = None) -> Dict[str, object]:
    """
    执行一个子命令并写出产物

    Args:
        cfg: 已验证的实验配置
        subcommand: theory / meta-train / meta-test / reproduce / ablate
        out_dir: 输出根目录，默认 cfg.OUTPUT_DIR
        seed: 只跑这一个种子
        target: reproduce 的复现目标
        arms: 覆盖默认对比臂

    Returns:
        汇总信息，包含 run_dir
    """
    if subcommand not in SUBCOMMANDS:
        raise InvalidArgumentError("未知的子命令", field='subcommand', value=subcommand,
                                   requirement=f"one of {SUBCOMMANDS}")
    if subcommand == 'reproduce' and target:
        cfg = target_config(target, cfg)

    run_dir = run_directory(cfg, subcommand, out_dir)
    write_config_snapshot(cfg, run_dir)
    logger.info(f"开始运行 {subcommand}: {run_dir}")

    if subcommand == 'theory':
        summary = run_theory(run_dir)
        summary['run_dir'] = run_dir
        return summary

    arms = tuple(arms) if arms else DEFAULT_ARMS.get(subcommand, ())
    unknown = [a for a in arms if a not in ARMS]
    if unknown:
        raise InvalidArgumentError("未知的对比臂", field='arms', value=unknown, requirement=f"subset of {ARMS}")

    seeds = [seed] if seed is not None else list(cfg.SEEDS)
    config_dict = run_config_to_dict(cfg)
    jobs = [(config_dict, s, subcommand, arms, run_dir) for s in seeds]
    rows = [row for result in _run_jobs(seed_job, jobs) for row in result]
    write_metrics_csv(os.path.join(run_dir, METRICS_FILE), rows)

    if subcommand == 'meta-train':
        return {'run_dir': run_dir, 'seeds': seeds,
                'manifests': [os.path.join(run_dir, f"seed{s}", 'policies') for s in seeds]}

    summary = emit_artifacts(run_dir, title=cfg.EXPERIMENT)
    return {'run_dir': run_dir, 'seeds': seeds, 'arms': list(arms), 'summary': summary}

