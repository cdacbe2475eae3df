from typing import Dict, List, Sequence, Tuple
import csv
import json
import os

import numpy as np
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from .models import MetricsRow, METRICS_COLUMNS, Trajectory
from .exceptions import ArtifactError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

METRICS_FILE = 'metrics.csv'
SUMMARY_TEXT = 'summary.txt'
SUMMARY_JSON = 'summary.json'
CURVE_PLOT = 'learning_curves.svg'
FINAL_METRIC = 'greedy_return'
# 次优回报与最优回报参考线
REFERENCE_LINES = (0.5, 1.0)
PHASE_ORDER = {'harvest': 0, 'explore-train': 1, 'meta-test': 2}


def write_metrics_csv(path: str, rows: Sequence[MetricsRow]) -> str:
    """按 (run_id, seed, phase, step, metric) 排序后写出"""
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (r.run_id, r.seed, PHASE_ORDER.get(r.phase, 9), r.step, r.metric))
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in ordered:
            writer.writerow(row.as_list())
    return path


def read_metrics_csv(path: str) -> List[MetricsRow]:
    if not os.path.isfile(path):
        raise ArtifactError("指标文件不存在", path=path, reason='missing')
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != METRICS_COLUMNS:
            raise ArtifactError("指标文件表头无效", path=path, reason=f"header={header}")
        try:
            return [MetricsRow(r[0], int(r[1]), r[2], int(r[3]), r[4], float(r[5])) for r in reader]
        except (ValueError, IndexError) as e:
            raise ArtifactError("指标文件内容无效", path=path, reason=str(e))


def final_returns(rows: Sequence[MetricsRow]) -> Dict[str, Dict[int, float]]:
    """每个 (run_id, seed) 在 meta-test 最后一步的贪心回报"""
    last: Dict[Tuple[str, int], Tuple[int, float]] = {}
    for row in rows:
        if row.phase != 'meta-test' or row.metric != FINAL_METRIC:
            continue
        key = (row.run_id, row.seed)
        if key not in last or row.step >= last[key][0]:
            last[key] = (row.step, row.value)
    result: Dict[str, Dict[int, float]] = {}
    for (run_id, seed), (_, value) in sorted(last.items()):
        result.setdefault(run_id, {})[seed] = value
    return result


def summarize(rows: Sequence[MetricsRow]) -> Dict[str, dict]:
    """最终贪心回报跨种子的均值与标准差 (总体标准差)"""
    summary = {}
    for run_id, per_seed in final_returns(rows).items():
        values = np.array([per_seed[s] for s in sorted(per_seed)])
        summary[run_id] = {
            'seeds': sorted(per_seed),
            'mean': float(values.mean()),
            'std': float(values.std()),
            'values': [float(v) for v in values],
        }
    return summary


def format_summary(summary: Dict[str, dict]) -> str:
    lines = [f"{'arm':<16}{'seeds':>6}{'mean':>10}{'std':>10}"]
    for run_id in sorted(summary):
        s = summary[run_id]
        lines.append(f"{run_id:<16}{len(s['seeds']):>6}{s['mean']:>10.4f}{s['std']:>10.4f}")
    return "\n".join(lines) + "\n"


def _curves(rows: Sequence[MetricsRow]) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    grouped: Dict[str, Dict[int, List[float]]] = {}
    for row in rows:
        if row.phase == 'meta-test' and row.metric == FINAL_METRIC:
            grouped.setdefault(row.run_id, {}).setdefault(row.step, []).append(row.value)
    curves = {}
    for run_id in sorted(grouped):
        steps = np.array(sorted(grouped[run_id]))
        values = [np.array(grouped[run_id][s]) for s in steps]
        curves[run_id] = (steps, np.array([v.mean() for v in values]), np.array([v.std() for v in values]))
    return curves


def plot_learning_curves(rows: Sequence[MetricsRow], path: str, title: str = '') -> str:
    """均值曲线 ± 标准差带，另画 0.5 与 1.0 两条参考线；固定 hashsalt 且不写日期，保证字节稳定"""
    curves = _curves(rows)
    if not curves:
        raise ArtifactError("没有可绘制的学习曲线", path=path, reason='no meta-test rows')
    with plt.rc_context({'svg.hashsalt': 'mesa', 'svg.fonttype': 'none'}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for run_id, (steps, mean, std) in curves.items():
            ax.plot(steps, mean, label=run_id)
            ax.fill_between(steps, mean - std, mean + std, alpha=0.2)
        for y in REFERENCE_LINES:
            ax.axhline(y, linestyle=':', color='gray', linewidth=1)
        ax.set_xlabel('environment steps')
        ax.set_ylabel('greedy return')
        if title:
            ax.set_title(title)
        ax.legend(loc='lower right')
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return path


def emit_artifacts(run_dir: str, title: str = '') -> Dict[str, dict]:
    """
    根据 metrics.csv 生成学习曲线SVG和汇总表

    Raises:
        ArtifactError: 指标文件缺失或为空
    """
    rows = read_metrics_csv(os.path.join(run_dir, METRICS_FILE))
    if not rows:
        raise ArtifactError("指标文件为空", path=os.path.join(run_dir, METRICS_FILE), reason='empty')
    summary = summarize(rows)
    if not summary:
        raise ArtifactError("指标文件中没有元测试结果", path=run_dir, reason='no meta-test rows')

    plot_learning_curves(rows, os.path.join(run_dir, CURVE_PLOT), title)
    with open(os.path.join(run_dir, SUMMARY_TEXT), 'w', encoding='utf-8') as f:
        f.write(format_summary(summary))
    with open(os.path.join(run_dir, SUMMARY_JSON), 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    logger.info(f"产物已生成: {run_dir}")
    return summary


def write_rows_csv(path: str, rows: Sequence[dict], columns: Sequence[str]) -> str:
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def export_trajectory_csv(path: str, trajectory: Trajectory, env) -> str:
    """
    轨迹导出

    离散博弈: t, a0..a{n-1}, reward, shaped_reward, source
    粒子博弈: t, 每个智能体的 px, py, vx, vy, fx, fy, reward, shaped_reward, source
    """
    n = env.n_agents
    if env.discrete:
        columns = ['t'] + [f"a{i}" for i in range(n)]
    else:
        columns = ['t']
        for i in range(n):
            columns += [f"p{i}x", f"p{i}y", f"v{i}x", f"v{i}y", f"f{i}x", f"f{i}y"]
    columns += ['reward', 'shaped_reward', 'source']

    rows = []
    for t, tr in enumerate(trajectory.transitions):
        row = {'t': t, 'reward': repr(float(tr.reward)),
               'shaped_reward': repr(float(tr.shaped_reward)), 'source': tr.source}
        action = np.asarray(tr.action)
        if env.discrete:
            row.update({f"a{i}": int(a) for i, a in enumerate(action.ravel())})
        else:
            h, v_max = env.cfg.ARENA_HALFWIDTH, env.cfg.V_MAX
            positions = tr.state[:2 * n].reshape(n, 2) * h
            velocities = tr.state[2 * n:4 * n].reshape(n, 2) * v_max
            forces = action.reshape(n, 2)
            for i in range(n):
                row.update({
                    f"p{i}x": repr(float(positions[i, 0])), f"p{i}y": repr(float(positions[i, 1])),
                    f"v{i}x": repr(float(velocities[i, 0])), f"v{i}y": repr(float(velocities[i, 1])),
                    f"f{i}x": repr(float(forces[i, 0])), f"f{i}y": repr(float(forces[i, 1])),
                })
        rows.append(row)
    return write_rows_csv(path, rows, columns)
