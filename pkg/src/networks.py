from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import json
import os

import numpy as np

from .exceptions import InvalidArgumentError, ArtifactError
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

ACTIVATIONS = ('linear', 'tanh')


@dataclass
class MlpParams:
    """全连接网络参数: 隐藏层tanh，输出层线性或tanh"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output_activation: str = 'linear'

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> 'MlpParams':
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output_activation)

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class MlpGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    # 对输入的梯度，演员-评论家更新需要
    inputs: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.arrays())))

    def scaled(self, factor: float) -> 'MlpGrads':
        return MlpGrads([g * factor for g in self.weights], [g * factor for g in self.biases], self.inputs)


def init_mlp(sizes: Sequence[int],
             rng: np.random.Generator,
             output_activation: str = 'linear',
             output_scale: float = 1.0) -> MlpParams:
    """按 1/sqrt(fan_in) 初始化权重，偏置置零"""
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise InvalidArgumentError("网络层尺寸无效", field='sizes', value=list(sizes), requirement='>= 2 layers, each >= 1')
    if output_activation not in ACTIVATIONS:
        raise InvalidArgumentError("输出激活函数无效", field='output_activation',
                                   value=output_activation, requirement=f"one of {ACTIVATIONS}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = 1.0 / np.sqrt(fan_in)
        if i == len(sizes) - 2:
            scale *= output_scale
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, output_activation)


def zeros_like_mlp(p: MlpParams) -> MlpParams:
    return MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases], p.output_activation)


def mlp_forward(p: MlpParams, inputs: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    批量前向传播

    Args:
        p: 网络参数
        inputs: (B, in_dim) 输入

    Returns:
        (输出 (B, out_dim), 各层激活值缓存)
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != p.in_dim:
        raise InvalidArgumentError("输入维度与网络不匹配", field='input',
                                   value=x.shape[1], requirement=f"== {p.in_dim}")
    activations = [x]
    last = len(p.weights) - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = activations[-1] @ W.T + b
        if i < last or p.output_activation == 'tanh':
            z = np.tanh(z)
        activations.append(z)
    return activations[-1], activations


def mlp_backward(p: MlpParams, activations: List[np.ndarray], cotangent: np.ndarray) -> MlpGrads:
    """⟨输出, cotangent⟩ 对参数和输入的反向梯度 (批次内求和)"""
    delta = np.atleast_2d(np.asarray(cotangent, dtype=float))
    if delta.shape != activations[-1].shape:
        raise InvalidArgumentError("cotangent 维度与输出不匹配", field='output_cotangent',
                                   value=list(delta.shape), requirement=f"== {list(activations[-1].shape)}")
    n_layers = len(p.weights)
    grad_w: List[np.ndarray] = [None] * n_layers
    grad_b: List[np.ndarray] = [None] * n_layers
    for i in reversed(range(n_layers)):
        out = activations[i + 1]
        if i < n_layers - 1 or p.output_activation == 'tanh':
            # tanh'(z) = 1 - tanh²(z)
            delta = delta * (1.0 - out ** 2)
        grad_w[i] = delta.T @ activations[i]
        grad_b[i] = delta.sum(axis=0)
        delta = delta @ p.weights[i]
    return MlpGrads(grad_w, grad_b, delta)


def mlp_eval_grad(p: MlpParams, inputs: np.ndarray, output_cotangent: np.ndarray) -> Tuple[np.ndarray, MlpGrads]:
    single = np.asarray(inputs).ndim == 1
    out, cache = mlp_forward(p, inputs)
    grads = mlp_backward(p, cache, np.reshape(output_cotangent, out.shape))
    if single:
        grads.inputs = grads.inputs[0]
        return out[0], grads
    return out, grads


def mlp_predict(p: MlpParams, inputs: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward(p, inputs)
    return out[0] if np.asarray(inputs).ndim == 1 else out


def _check_same_shapes(a: MlpParams, b: MlpParams) -> None:
    if len(a.weights) != len(b.weights) or any(
            x.shape != y.shape for x, y in zip(a.arrays(), b.arrays())):
        raise InvalidArgumentError("网络结构不一致", field='params', value=a.sizes, requirement=f"== {b.sizes}")


def soft_update(online: MlpParams, target: MlpParams, tau: float) -> MlpParams:
    """θ⁻ ← (1-τ)θ⁻ + τθ"""
    if not (0.0 < tau <= 1.0):
        raise InvalidArgumentError("τ 必须在 (0, 1] 内", field='tau', value=tau, requirement='0 < τ <= 1')
    _check_same_shapes(online, target)
    if tau == 1.0:
        return online.copy()
    return MlpParams(
        [(1.0 - tau) * t + tau * o for o, t in zip(online.weights, target.weights)],
        [(1.0 - tau) * t + tau * o for o, t in zip(online.biases, target.biases)],
        target.output_activation,
    )


def clip_by_global_norm(grads: MlpGrads, max_norm: float) -> Tuple[MlpGrads, float]:
    norm = grads.global_norm()
    if max_norm > 0 and norm > max_norm:
        return grads.scaled(max_norm / norm), norm
    return grads, norm


class SgdOptimizer:
    """梯度下降 + 全局范数裁剪"""

    def __init__(self, lr: float, grad_clip: float = 0.0):
        self.lr = lr
        self.grad_clip = grad_clip

    def step(self, params: MlpParams, grads: MlpGrads) -> MlpParams:
        grads, _ = clip_by_global_norm(grads, self.grad_clip)
        return MlpParams(
            [w - self.lr * g for w, g in zip(params.weights, grads.weights)],
            [b - self.lr * g for b, g in zip(params.biases, grads.biases)],
            params.output_activation,
        )


class AdamOptimizer:
    def __init__(self, lr: float, grad_clip: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.grad_clip = grad_clip
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None

    def step(self, params: MlpParams, grads: MlpGrads) -> MlpParams:
        grads, _ = clip_by_global_norm(grads, self.grad_clip)
        flat = grads.arrays()
        if self._m is None:
            self._m = [np.zeros_like(g) for g in flat]
            self._v = [np.zeros_like(g) for g in flat]
        self.t += 1
        updated = []
        for i, (theta, g) in enumerate(zip(params.arrays(), flat)):
            self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * g * g
            m_hat = self._m[i] / (1 - self.beta1 ** self.t)
            v_hat = self._v[i] / (1 - self.beta2 ** self.t)
            updated.append(theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        n = len(params.weights)
        return MlpParams(updated[:n], updated[n:], params.output_activation)


def make_optimizer(name: str, lr: float, grad_clip: float):
    if name == 'sgd':
        return SgdOptimizer(lr, grad_clip)
    if name == 'adam':
        return AdamOptimizer(lr, grad_clip)
    raise InvalidArgumentError("未知的优化器", field='OPTIMIZER', value=name, requirement="'sgd' | 'adam'")


def save_params(path: str, networks: Dict[str, MlpParams], meta: Optional[dict] = None) -> str:
    """
    保存网络参数: npz 存数组，同名 .json 存结构与元数据

    Returns:
        npz 文件路径
    """
    if not path.endswith('.npz'):
        path = path + '.npz'
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)

    arrays = {}
    layout = {}
    for name, p in networks.items():
        for i, (W, b) in enumerate(zip(p.weights, p.biases)):
            arrays[f"{name}__W{i}"] = W
            arrays[f"{name}__b{i}"] = b
        layout[name] = {'sizes': p.sizes, 'output_activation': p.output_activation}
    np.savez(path, **arrays)

    sidecar = {'networks': layout, 'meta': meta or {}}
    with open(path[:-4] + '.json', 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, ensure_ascii=False, indent=2, sort_keys=True)
    logger.debug(f"网络参数已保存: {path}")
    return path


def load_params(path: str) -> Tuple[Dict[str, MlpParams], dict]:
    if not path.endswith('.npz'):
        path = path + '.npz'
    sidecar_path = path[:-4] + '.json'
    if not (os.path.exists(path) and os.path.exists(sidecar_path)):
        raise ArtifactError("检查点文件缺失", path=path, reason='missing npz or json sidecar')
    try:
        with open(sidecar_path, 'r', encoding='utf-8') as f:
            sidecar = json.load(f)
        networks = {}
        with np.load(path) as data:
            for name, layout in sidecar['networks'].items():
                n_layers = len(layout['sizes']) - 1
                networks[name] = MlpParams(
                    [data[f"{name}__W{i}"] for i in range(n_layers)],
                    [data[f"{name}__b{i}"] for i in range(n_layers)],
                    layout['output_activation'],
                )
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise ArtifactError("检查点文件损坏", path=path, reason=str(e))
    return networks, sidecar.get('meta', {})
