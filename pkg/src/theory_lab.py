from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import math

import numpy as np
from scipy import linalg, special

from .models import ExplorationProfile, ReducedQParams, FullQParams, PfailEstimate
from .exceptions import InvalidArgumentError, InvalidStateError, DegenerateProfileError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

UNIFORM = 'uniform'
STRUCTURED = 'structured'
EPS_FIXED = 'eps_fixed'
EPS_DECAY = 'eps_decay'
STRATEGY_KINDS = (UNIFORM, STRUCTURED, EPS_FIXED, EPS_DECAY)

# 临界步数搜索上限
T_CAP = 10 ** 9
# 结构化探索只能用oracle判定，搜索上限较小
ORACLE_T_CAP = 2 ** 20


@dataclass(frozen=True)
class ExplorationStrategy:
    kind: str = UNIFORM
    epsilon: Optional[float] = None
    greedy: Tuple[int, int] = (1, 1)

    @classmethod
    def uniform(cls) -> 'ExplorationStrategy':
        return cls(UNIFORM)

    @classmethod
    def structured(cls) -> 'ExplorationStrategy':
        return cls(STRUCTURED)

    @classmethod
    def eps_fixed(cls, epsilon: float, greedy: Tuple[int, int] = (1, 1)) -> 'ExplorationStrategy':
        return cls(EPS_FIXED, epsilon, tuple(greedy))

    @classmethod
    def eps_decay(cls, greedy: Tuple[int, int] = (1, 1)) -> 'ExplorationStrategy':
        return cls(EPS_DECAY, None, tuple(greedy))

    @property
    def label(self) -> str:
        if self.kind == EPS_FIXED:
            return f"{self.kind}({self.epsilon:g})"
        return self.kind


def _check_strategy(strategy: ExplorationStrategy, U: int, T: int) -> None:
    if strategy.kind not in STRATEGY_KINDS:
        raise InvalidArgumentError("未知的探索策略", field='strategy', value=strategy.kind,
                                   requirement=f"one of {STRATEGY_KINDS}")
    if U < 2:
        raise InvalidArgumentError("动作数至少为2", field='U', value=U, requirement='>= 2')
    if T < 1:
        raise InvalidArgumentError("步数至少为1", field='T', value=T, requirement='>= 1')
    if strategy.kind in (EPS_FIXED, EPS_DECAY):
        gi, gj = strategy.greedy
        if not (0 < gi < U and 0 < gj < U):
            raise InvalidArgumentError(
                "贪心动作必须落在次优块内 (两个坐标均不为0)",
                field='greedy', value=list(strategy.greedy), requirement=f"1 <= a_i < {U}"
            )
    if strategy.kind == EPS_FIXED:
        eps = strategy.epsilon
        if eps is None or not (0.0 < eps <= 1.0):
            raise InvalidArgumentError("ε 必须在 (0, 1] 内", field='epsilon', value=eps, requirement='0 < ε <= 1')


def harmonic_number(T: int) -> float:
    """H_T = ψ(T+1) + γ"""
    return float(special.digamma(T + 1.0) + np.euler_gamma)


def exploration_profile(strategy: ExplorationStrategy,
                        U: int,
                        T: int,
                        sigma_w: float = 1.0,
                        sigma_e: float = 1.0) -> ExplorationProfile:
    """
    计算T步平均的访问频率 (f0, f1, f2)

    ε-greedy 的第一步为均匀探索，之后每格 ε/U² 加上贪心格 (1-ε)；
    衰减版本取 ε(t) = 1/t。
    """
    _check_strategy(strategy, U, T)
    m = U - 1
    if strategy.kind == UNIFORM:
        f0 = 1.0 / U ** 2
        f1 = 2.0 * m / U ** 2
    elif strategy.kind == STRUCTURED:
        f0 = 1.0 / U
        f1 = 0.0
    elif strategy.kind == EPS_FIXED:
        f0 = (1.0 + (T - 1) * strategy.epsilon) / (T * U ** 2)
        f1 = 2.0 * m * f0
    else:
        f0 = harmonic_number(T) / (T * U ** 2)
        f1 = 2.0 * m * f0
    f2 = 1.0 - f0 - f1
    lam = T * sigma_w ** 2 / sigma_e ** 2
    return ExplorationProfile(f0=f0, f1=f1, f2=f2, m=m, lam=lam, U=U, T=T,
                              sigma_w=sigma_w, sigma_e=sigma_e)


def exploration_matrices(strategy: ExplorationStrategy, U: int, T: int) -> List[np.ndarray]:
    """逐步的联合探索分布 p_e^(t)，每个都是 U×U 概率矩阵"""
    _check_strategy(strategy, U, T)
    uniform = np.full((U, U), 1.0 / U ** 2)
    if strategy.kind == UNIFORM:
        return [uniform] * T
    if strategy.kind == STRUCTURED:
        return [np.eye(U) / U] * T

    greedy = np.zeros((U, U))
    greedy[strategy.greedy] = 1.0
    result = []
    for t in range(1, T + 1):
        if t == 1:
            result.append(uniform)
            continue
        eps = strategy.epsilon if strategy.kind == EPS_FIXED else 1.0 / t
        result.append(eps * uniform + (1.0 - eps) * greedy)
    return result


def symmetric_matrix(profile: ExplorationProfile) -> np.ndarray:
    """按群对称性把 (f0, f1, f2) 摊到每个格子上"""
    U, m = profile.U, profile.m
    pe = np.full((U, U), profile.f2 / m ** 2)
    pe[0, 1:] = profile.f1 / (2 * m)
    pe[1:, 0] = profile.f1 / (2 * m)
    pe[0, 0] = profile.f0
    return pe


def reward_matrix(U: int, r: float, delta: float) -> np.ndarray:
    """两智能体爬山博弈 (k=2, u=0) 的回报矩阵"""
    R = np.full((U, U), r * (1.0 - delta))
    R[0, :] = 0.0
    R[:, 0] = 0.0
    R[0, 0] = r
    return R


def _check_game(r: float, delta: float) -> None:
    if not r > 0:
        raise InvalidArgumentError("回报 r 必须为正", field='r', value=r, requirement='> 0')
    if not (0.0 < delta <= 1.0):
        raise InvalidArgumentError("δ 必须在 (0, 1] 内", field='delta', value=delta, requirement='0 < δ <= 1')


def _require_nondegenerate(profile: ExplorationProfile) -> None:
    if profile.degenerate:
        raise DegenerateProfileError(
            "访问频率存在零项，闭式解不适用，请改用 solve_mle_oracle",
            profile={'f0': profile.f0, 'f1': profile.f1, 'f2': profile.f2, 'U': profile.U}
        )
    if profile.lam <= 0:
        raise InvalidArgumentError("λ 必须为正", field='lam', value=profile.lam, requirement='> 0')


def _criterion_denominator(profile: ExplorationProfile) -> float:
    f0, f1, f2, m, lam = profile.f0, profile.f1, profile.f2, profile.m, profile.lam
    return (1.0
            + 2.0 * f2 * (f1 * lam + 2 * m) * m / (f1 * (f2 * lam + m ** 2))
            + f2 * (f0 * lam + 1.0) * m ** 2 / (f0 * (f2 * lam + m ** 2)))


def solve_mle_reduced(profile: ExplorationProfile, r: float, delta: float) -> ReducedQParams:
    """
    对称二次Q模型的闭式最大似然解

    K2 = -r(2-δ)/Den (负号由恒等式 K0+K2 = 2K1 - r(2-δ) 决定)，
    K0、K1 由比例方程得到，W_i = -(f_iλ/(f_iλ+deg_i))·K_i。
    B、C、D 只在一个规范方向上确定，取 (b, c, d) 范数最小者。
    """
    _require_nondegenerate(profile)
    _check_game(r, delta)
    f = (profile.f0, profile.f1, profile.f2)
    m, lam = profile.m, profile.lam
    deg = (1.0, 2.0 * m, float(m ** 2))
    a = [deg[i] / (f[i] * lam + deg[i]) for i in range(3)]

    K2 = -r * (2.0 - delta) / _criterion_denominator(profile)
    K0 = (f[2] * a[2] / (f[0] * a[0])) * K2
    K1 = -(2.0 * f[2] * a[2] / (f[1] * a[1])) * K2
    K = (K0, K1, K2)
    W0, W1, W2 = (-(f[i] * lam / (f[i] * lam + deg[i])) * K[i] for i in range(3))

    alpha = K0 + r
    gamma = K2 + r * (1.0 - delta)
    D = (alpha + m * gamma) / (m + 3.0)
    B = (alpha - D) / 2.0
    C = (gamma - D) / 2.0

    logger.debug(f"闭式解: K=({K0:.6g}, {K1:.6g}, {K2:.6g}), W=({W0:.6g}, {W1:.6g}, {W2:.6g})")
    return ReducedQParams(W0=W0, W1=W1, W2=W2, B=B, C=C, D=D, K0=K0, K1=K1, K2=K2)


def _design_matrix(U: int) -> np.ndarray:
    """每个格子 (i,j) 一行，参数顺序 [vec(W), b, c, d]"""
    n_params = U * U + 2 * U + 1
    X = np.zeros((U * U, n_params))
    for i in range(U):
        for j in range(U):
            row = i * U + j
            X[row, row] = 1.0
            X[row, U * U + i] = 1.0
            X[row, U * U + U + j] = 1.0
            X[row, -1] = 1.0
    return X


def _solve_weighted(freq: np.ndarray, lam: float, r: float, delta: float) -> FullQParams:
    U = freq.shape[0]
    X = _design_matrix(U)
    R = reward_matrix(U, r, delta).ravel()
    sqrt_f = np.sqrt(freq.ravel())

    # 增广最小二乘: Σ f (q - R)² + ||W||²/λ
    prior = np.zeros((U * U, X.shape[1]))
    prior[:, :U * U] = np.eye(U * U) / math.sqrt(lam)
    A = np.vstack([sqrt_f[:, None] * X, prior])
    y = np.concatenate([sqrt_f * R, np.zeros(U * U)])

    theta, _, rank, _ = linalg.lstsq(A, y, cond=1e-12)
    null = linalg.null_space(A, rcond=1e-10)
    # b, c, d 总有平移自由度，只要q矩阵被唯一确定就视为唯一解
    unique = null.size == 0 or float(np.abs(X @ null).max()) < 1e-8
    if not unique:
        logger.debug(f"正规方程奇异 (rank={rank})，返回最小范数解")

    W = theta[:U * U].reshape(U, U)
    b = theta[U * U:U * U + U]
    c = theta[U * U + U:U * U + 2 * U]
    return FullQParams(W=W, b=b, c=c, d=float(theta[-1]), unique=unique)


def solve_mle_oracle(pe: Sequence[np.ndarray],
                     r: float,
                     delta: float,
                     sigma_w: float = 1.0,
                     sigma_e: float = 1.0) -> FullQParams:
    """
    精确求解完整二次Q模型的最大后验估计 (W 上的高斯先验)

    Args:
        pe: 长度为T的探索分布序列，每个都是U×U概率矩阵
        r: 最优回报
        delta: 惩罚系数
        sigma_w: 先验标准差
        sigma_e: 观测噪声标准差
    """
    _check_game(r, delta)
    if len(pe) == 0:
        raise InvalidArgumentError("探索分布序列为空", field='pe', value=0, requirement='T >= 1')
    mats = [np.asarray(p, dtype=float) for p in pe]
    U = mats[0].shape[0]
    for t, p in enumerate(mats):
        if p.shape != (U, U) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
            raise InvalidArgumentError(
                "探索分布必须是合法的U×U概率矩阵",
                field=f'pe[{t}]', value=list(p.shape), requirement='nonnegative, sums to 1'
            )
    T = len(mats)
    lam = T * sigma_w ** 2 / sigma_e ** 2
    return _solve_weighted(np.mean(mats, axis=0), lam, r, delta)


def solve_mle_oracle_profile(profile: ExplorationProfile, r: float, delta: float) -> FullQParams:
    """用群对称的平均分布代替逐步序列 (结果与T份相同矩阵一致)"""
    _check_game(r, delta)
    return _solve_weighted(symmetric_matrix(profile), profile.lam, r, delta)


def is_equivalently_optimal(params: FullQParams, tol: float = 1e-8) -> bool:
    """q矩阵的argmax落在(0,0)，平局算最优"""
    q = params.q_matrix()
    return bool(q[0, 0] >= q.max() - tol)


def criterion_holds(profile: ExplorationProfile, r: float = 1.0, delta: float = 0.5) -> bool:
    _require_nondegenerate(profile)
    _check_game(r, delta)
    f0, f2, m, lam = profile.f0, profile.f2, profile.m, profile.lam
    lhs = r * delta
    rhs = ((f2 / f0 - 1.0) * (m ** 2 / (f2 * lam + m ** 2))
           * r * (2.0 - delta) / _criterion_denominator(profile))
    # 边界上取等号视为成立
    return lhs >= rhs or math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-15)


def uniform_lambda_threshold(U: int, delta: float) -> float:
    """均匀探索下判据成立的最小λ"""
    m = U - 1
    return U ** 2 * ((m ** 2 - 1) * (2.0 - delta) / ((m + 1) ** 2 * delta) - 1.0)


def _holds_at(strategy: ExplorationStrategy, U: int, T: int, delta: float,
              sigma_w: float, sigma_e: float, r: float) -> bool:
    if strategy.kind == STRUCTURED:
        profile = exploration_profile(strategy, U, T, sigma_w, sigma_e)
        pe = np.eye(U) / U
        return is_equivalently_optimal(_solve_weighted(pe, profile.lam, r, delta))
    profile = exploration_profile(strategy, U, T, sigma_w, sigma_e)
    return criterion_holds(profile, r, delta)


def min_exploration_steps(strategy: ExplorationStrategy,
                          U: int,
                          delta: float,
                          sigma_w: float = 1.0,
                          sigma_e: float = 1.0,
                          r: float = 1.0,
                          t_cap: int = T_CAP) -> Optional[int]:
    """
    判据成立的最小步数 T*

    先在倍增网格 1, 2, 4, ..., t_cap 上检查判据关于 T 单调 (一旦成立之后不再失效)，
    再在首个成立点与其前一个网格点之间二分；返回 None 表示在 t_cap 内始终不成立。

    Raises:
        InvalidStateError: 网格上判据先成立后失效
    """
    _check_game(r, delta)
    if strategy.kind == STRUCTURED:
        t_cap = min(t_cap, ORACLE_T_CAP)

    def holds(T: int) -> bool:
        return _holds_at(strategy, U, T, delta, sigma_w, sigma_e, r)

    grid = [1]
    while grid[-1] < t_cap:
        grid.append(min(grid[-1] * 2, t_cap))
    results = [holds(T) for T in grid]

    if not any(results):
        logger.warning(f"{strategy.label} U={U} δ={delta:g}: T <= {t_cap} 内判据不成立")
        return None
    first = results.index(True)
    if not all(results[first:]):
        failed = [T for T, ok in zip(grid[first:], results[first:]) if not ok]
        logger.error(f"{strategy.label} U={U} δ={delta:g}: 判据在 T={grid[first]} 成立但在 {failed} 失效")
        raise InvalidStateError("判据关于 T 不单调，临界步数无定义", phase='min_exploration_steps',
                                state={'strategy': strategy.label, 'U': U, 'delta': delta,
                                       'holds_from': grid[first], 'fails_at': failed})
    if first == 0:
        return 1

    lo, hi = grid[first - 1], grid[first]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid

    if holds(hi - 1):
        raise InvalidStateError("二分搜索结果不一致", phase='min_exploration_steps',
                                state={'T_star': hi, 'strategy': strategy.label})

    logger.debug(f"{strategy.label} U={U} δ={delta:g}: T* = {hi}")
    return hi


def lemma_inequality_holds(k: float, x: float) -> bool:
    """e^{-kx} <= log(1/x)/(½log k) + x/(½log k) + x/k，要求 k > 16"""
    if not k > 16:
        raise InvalidArgumentError("引理要求 k > 16", field='k', value=k, requirement='> 16')
    if not x > 0:
        raise InvalidArgumentError("x 必须为正", field='x', value=x, requirement='> 0')
    half_log_k = 0.5 * math.log(k)
    rhs = math.log(1.0 / x) / half_log_k + x / half_log_k + x / k
    return math.exp(-k * x) <= rhs + 1e-15


def lemma_grid_check(k_values: Iterable[float],
                     x_values: Iterable[float]) -> Tuple[bool, List[Tuple[float, float]]]:
    x_values = list(x_values)
    violations = [(k, x) for k in k_values for x in x_values if not lemma_inequality_holds(k, x)]
    if violations:
        logger.warning(f"引理在 {len(violations)} 个网格点上不成立")
    return not violations, violations


def _as_mass(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("密度必须非负且有限", field=name, value=arr.size, requirement='>= 0')
    if not math.isclose(arr.sum(), 1.0, abs_tol=1e-9):
        raise InvalidArgumentError("密度必须归一化", field=name, value=float(arr.sum()), requirement='sum == 1')
    return arr


def pfail_estimate(goal_density_p,
                   sample_density_q,
                   epsilon: float,
                   N: int,
                   mc_samples: int = 10_000,
                   rng_seed: int = 0) -> PfailEstimate:
    """
    测试目标在N步内未被探索到的概率

    mc 为蒙特卡洛估计，integral 为网格精确求和，bound 为逐点引理给出的上界；
    同时给出 Σ p·log(1/q) = KL(p‖q) + H(p) 的分解。
    """
    p = _as_mass('goal_density_p', goal_density_p)
    q = _as_mass('sample_density_q', sample_density_q)
    if p.shape != q.shape:
        raise InvalidArgumentError("两个密度必须定义在同一网格上", field='sample_density_q',
                                   value=q.size, requirement=f"size == {p.size}")
    if not (0.0 < epsilon <= 1.0) or N < 1:
        raise InvalidArgumentError("ε 与 N 取值无效", field='epsilon', value=(epsilon, N),
                                   requirement='0 < ε <= 1, N >= 1')
    if np.any(epsilon * q > 1.0):
        raise InvalidArgumentError("ε·q(x) 超过1，不再是概率", field='sample_density_q',
                                   value=float((epsilon * q).max()), requirement='ε·q <= 1')

    miss = (1.0 - epsilon * q) ** N
    integral = float(np.sum(p * miss))

    rng = np.random.default_rng(rng_seed)
    draws = miss[rng.choice(p.size, size=mc_samples, p=p)]
    mc = float(draws.mean())
    stderr = float(draws.std(ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else 0.0
    if abs(mc - integral) > 6.0 * stderr + 1e-12:
        logger.warning(f"蒙特卡洛估计 {mc:.6g} 与网格积分 {integral:.6g} 偏差过大")

    support = p > 0
    with np.errstate(divide='ignore'):
        log_inv_q = -np.log(q[support])
        entropy = float(-np.sum(p[support] * np.log(p[support])))
    kl = float(np.sum(p[support] * (np.log(p[support]) + log_inv_q)))

    k = epsilon * N
    if k <= 16:
        logger.warning(f"εN = {k:g} <= 16，上界不适用")
        bound = math.inf
    else:
        bound = float(np.sum(p[support] * (log_inv_q + 2.0 * q[support] + 16.0)) / (0.5 * math.log(k)))

    return PfailEstimate(mc=mc, integral=integral, bound=bound, kl=kl, entropy=entropy)


def phase_diagram(U_values: Sequence[int],
                  deltas: Sequence[float],
                  lambdas: Sequence[float],
                  r: float = 1.0) -> List[Dict]:
    """均匀探索下的 (U, δ, λ) 相图: 判据与oracle argmax 对照"""
    rows = []
    for U in U_values:
        for delta in deltas:
            for lam in lambdas:
                profile = exploration_profile(ExplorationStrategy.uniform(), U, 1, sigma_w=math.sqrt(lam))
                oracle = solve_mle_oracle_profile(profile, r, delta)
                rows.append({
                    'U': U,
                    'delta': delta,
                    'lambda': lam,
                    'criterion': criterion_holds(profile, r, delta),
                    'oracle_optimal': is_equivalently_optimal(oracle),
                })
    agree = sum(1 for row in rows if row['criterion'] == row['oracle_optimal'])
    logger.info(f"相图完成: {len(rows)} 个点, 判据与oracle一致 {agree} 个")
    return rows


def threshold_table(strategies: Sequence[ExplorationStrategy],
                    U_values: Sequence[int],
                    deltas: Sequence[float],
                    sigma_w: float = 1.0,
                    sigma_e: float = 1.0) -> List[Dict]:
    rows = []
    for strategy in strategies:
        for U in U_values:
            for delta in deltas:
                t_star = min_exploration_steps(strategy, U, delta, sigma_w, sigma_e)
                closed_form = None
                if strategy.kind == UNIFORM:
                    closed_form = uniform_lambda_threshold(U, delta) * sigma_e ** 2 / sigma_w ** 2
                rows.append({
                    'strategy': strategy.label,
                    'U': U,
                    'delta': delta,
                    't_star': t_star,
                    'unbounded': t_star is None,
                    'closed_form': closed_form,
                })
    return rows
