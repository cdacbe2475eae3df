from typing import Callable, Optional, Sequence, Tuple
import csv
import os

import numpy as np

from .models import ClusterHash, CountScope, PseudoCounts, Trajectory, ValuableSet
from .exceptions import ArtifactError, InvalidArgumentError, InvalidStateError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

EmbedFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def densify_trajectory(rewards: Sequence[float], relabel_gamma: float) -> np.ndarray:
    """
    稀疏回报稠密化: 零回报处取最近的未来正回报按 γ^(t'-t) 折扣

    一次反向扫描完成。
    """
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    carry = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if rewards[t] > 0:
            carry = rewards[t]
            out[t] = carry
        else:
            carry *= relabel_gamma
            out[t] = carry
    return out


def collect_valuable(trajectories: Sequence[Trajectory],
                     r_star: float,
                     relabel_gamma: float,
                     embed: EmbedFn) -> ValuableSet:
    """
    从轨迹中收集高回报联合状态-动作点 𝓜*

    低于 R* 的回报先置零再稠密化，之后保存 r̂ > 0 的全部点。

    Args:
        trajectories: 带真实回报的轨迹
        r_star: 阈值 R*
        relabel_gamma: 稠密化折扣
        embed: (状态, 联合动作) → 嵌入向量
    """
    if not 0.0 < relabel_gamma < 1.0:
        raise InvalidArgumentError("relabel_gamma 必须在 (0, 1) 内", field='relabel_gamma',
                                   value=relabel_gamma, requirement='0 < γ < 1')
    points, rewards, sources, kept = [], [], [], []
    for traj in trajectories:
        raw = traj.rewards
        valuable = np.where(raw >= r_star, raw, 0.0)
        dense = densify_trajectory(valuable, relabel_gamma)
        for tr, r_hat in zip(traj.transitions, dense):
            if r_hat > 0:
                points.append(embed(tr.state, tr.action))
                rewards.append(r_hat)
                sources.append(traj.task_id)
                kept.append(tr)

    if not points:
        return ValuableSet(points=np.zeros((0, 0)), rewards=np.zeros(0),
                           source_task=np.zeros(0, dtype=int), r_star=r_star)
    return ValuableSet(
        points=np.vstack(points),
        rewards=np.asarray(rewards, dtype=float),
        source_task=np.asarray(sources, dtype=int),
        r_star=r_star,
        transitions=kept,
    )


def merge_valuable(sets: Sequence[ValuableSet], r_star: float) -> ValuableSet:
    non_empty = [s for s in sets if len(s)]
    if not non_empty:
        return ValuableSet(points=np.zeros((0, 0)), rewards=np.zeros(0),
                           source_task=np.zeros(0, dtype=int), r_star=r_star)
    return ValuableSet(
        points=np.vstack([s.points for s in non_empty]),
        rewards=np.concatenate([s.rewards for s in non_empty]),
        source_task=np.concatenate([s.source_task for s in non_empty]),
        r_star=r_star,
        transitions=[tr for s in non_empty for tr in s.transitions],
    )


def kmeans_objective(points: np.ndarray, cluster_hash: ClusterHash) -> float:
    labels = cluster_hash.assign(points)
    return float(((points - cluster_hash.centroids[labels]) ** 2).sum())


def fit_clusters(points: np.ndarray, C: int, rng_seed: int, max_iters: int = 100) -> ClusterHash:
    """
    Lloyd 迭代 + 最远点初始化

    Raises:
        InvalidArgumentError: C 超过不同点的个数
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    distinct = np.unique(points, axis=0)
    if C < 1 or C > distinct.shape[0]:
        raise InvalidArgumentError("聚类数超过不同点的个数", field='C', value=C,
                                   requirement=f"1 <= C <= {distinct.shape[0]}")

    rng = np.random.default_rng(rng_seed)
    centroids = [distinct[rng.integers(distinct.shape[0])]]
    closest = ((distinct - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, C):
        nxt = distinct[int(np.argmax(closest))]
        centroids.append(nxt)
        closest = np.minimum(closest, ((distinct - nxt) ** 2).sum(axis=1))
    cluster_hash = ClusterHash(np.array(centroids))

    labels = cluster_hash.assign(points)
    for it in range(max_iters):
        centroids = cluster_hash.centroids.copy()
        for c in range(C):
            members = points[labels == c]
            # 空簇保留原质心
            if len(members):
                centroids[c] = members.mean(axis=0)
        cluster_hash = ClusterHash(centroids)
        new_labels = cluster_hash.assign(points)
        if np.array_equal(new_labels, labels):
            logger.debug(f"KMeans 在第 {it + 1} 轮收敛")
            break
        labels = new_labels

    logger.info(f"聚类完成: C={C}, 点数={len(points)}, 目标值={kmeans_objective(points, cluster_hash):.6g}")
    return cluster_hash


def min_distance(point: np.ndarray, mstar: ValuableSet) -> float:
    """到 𝓜* 的最小L2距离 (精确扫描)"""
    if len(mstar) == 0:
        raise InvalidStateError("𝓜* 为空", phase='min_distance')
    unique, _ = mstar.index()
    return float(np.sqrt(((unique - point) ** 2).sum(axis=1).min()))


def nearest_valuable(point: np.ndarray, mstar: ValuableSet) -> Tuple[float, float]:
    """(最小距离, 最近点的 r̂)"""
    if len(mstar) == 0:
        raise InvalidStateError("𝓜* 为空", phase='nearest_valuable')
    unique, best = mstar.index()
    d2 = ((unique - point) ** 2).sum(axis=1)
    j = int(np.argmin(d2))
    return float(np.sqrt(d2[j])), float(best[j])


def shaped_reward(point: np.ndarray,
                  r_hat: Optional[float],
                  cluster_hash: ClusterHash,
                  counts: PseudoCounts,
                  mstar: ValuableSet,
                  dist_eps: float,
                  f_d_exponent: float = 5.0) -> Tuple[float, PseudoCounts]:
    """
    探索策略的塑形回报 r̃ = r̂ · f_d(N) · 𝟙[min_d ‖x - d‖ < ε]

    f_d(N) = N^(-exponent)，N 取本次访问计数之后的值。r_hat 为 None 时取最近 𝓜* 点的 r̂。
    """
    if dist_eps <= 0:
        raise InvalidArgumentError("dist_eps 必须为正", field='dist_eps', value=dist_eps, requirement='> 0')
    if counts.scope != CountScope.TRAJECTORY:
        raise InvalidArgumentError("塑形回报需要轨迹级计数", field='counts.scope',
                                   value=counts.scope.value, requirement='trajectory')
    dist, nearest_r = nearest_valuable(point, mstar)
    if dist >= dist_eps:
        return 0.0, counts

    if r_hat is None:
        r_hat = nearest_r
    updated = counts.copy()
    cluster = int(cluster_hash.assign(point)[0])
    updated.counts[cluster] += 1
    return float(r_hat) / float(updated.counts[cluster]) ** f_d_exponent, updated


def gate_points(points: np.ndarray, mstar: ValuableSet, dist_eps: float) -> np.ndarray:
    """筛出距离 𝓜* 小于 ε 的点"""
    points = np.asarray(points, dtype=float)
    if points.size == 0 or len(mstar) == 0:
        return np.zeros((0, mstar.dim))
    points = np.atleast_2d(points)
    unique, _ = mstar.index()
    keep = [float(((unique - p) ** 2).sum(axis=1).min()) < dist_eps ** 2 for p in points]
    return points[np.asarray(keep, dtype=bool)]


def visit_histogram(points: np.ndarray, cluster_hash: ClusterHash) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        return np.zeros(cluster_hash.C, dtype=np.int64)
    return np.bincount(cluster_hash.assign(points), minlength=cluster_hash.C).astype(np.int64)


def update_global_counts(global_counts: PseudoCounts,
                         episode_points: np.ndarray,
                         cluster_hash: ClusterHash) -> PseudoCounts:
    """N̂ 累加已通过门控的访问点的簇计数"""
    if global_counts.scope != CountScope.GLOBAL:
        raise InvalidArgumentError("全局计数的作用域必须为 global", field='global.scope',
                                   value=global_counts.scope.value, requirement='global')
    updated = global_counts.copy()
    updated.counts += visit_histogram(episode_points, cluster_hash)
    return updated


def export_valuable_csv(mstar: ValuableSet, path: str) -> str:
    """列: e0..e{d-1}, reward, task_id"""
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow([f"e{i}" for i in range(mstar.dim)] + ['reward', 'task_id'])
        for point, r, task in zip(mstar.points, mstar.rewards, mstar.source_task):
            writer.writerow([repr(float(x)) for x in point] + [repr(float(r)), int(task)])
    logger.info(f"𝓜* 已导出: {path} ({len(mstar)} 个点)")
    return path


def import_valuable_csv(path: str, r_star: float) -> ValuableSet:
    if not os.path.isfile(path):
        raise ArtifactError("𝓜* 文件不存在", path=path, reason='missing')
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[-2:] != ['reward', 'task_id']:
            raise ArtifactError("𝓜* 文件表头无效", path=path, reason=f"header={header}")
        rows = list(reader)
    dim = len(header) - 2
    if not rows:
        return ValuableSet(points=np.zeros((0, dim)), rewards=np.zeros(0),
                           source_task=np.zeros(0, dtype=int), r_star=r_star)
    try:
        points = np.array([[float(x) for x in row[:dim]] for row in rows])
        rewards = np.array([float(row[dim]) for row in rows])
        sources = np.array([int(row[dim + 1]) for row in rows])
    except (ValueError, IndexError) as e:
        raise ArtifactError("𝓜* 文件内容无效", path=path, reason=str(e))
    return ValuableSet(points=points, rewards=rewards, source_task=sources, r_star=r_star)
