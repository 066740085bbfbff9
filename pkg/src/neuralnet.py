"""
Многослойный перцептрон предсказателя следующего положения.

tanh на скрытых слоях, тождественная функция на выходе. Градиенты считаются
обратным проходом, произведение гессиана на вектор — R-оператором
(прямой проход поверх обратного), мета-градиент — через развёрнутые
внутренние шаги градиентного спуска.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import RecoveryError

logger = logging.getLogger(__name__)

ACTIVATION = "tanh"


class DatasetError(RecoveryError, ValueError):
    """Пустой или некорректный набор обучающих пар."""

    code = "empty dataset"


@dataclass
class MlpParams:
    """
    Веса и смещения сети.

    weights[l] имеет форму (вход, выход), biases[l] — (выход,).
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "MlpParams":
        return cls(
            weights=[np.zeros((n_in, n_out)) for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])],
            biases=[np.zeros(n_out) for n_out in layer_sizes[1:]],
        )

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], seed: int = 0) -> "MlpParams":
        """
        Веса U(−1/√fan_in, 1/√fan_in) из генератора с зерном, смещения нулевые.

        При нулевых смещениях f_θ(0) = 0: необученная сеть предсказывает
        малые перемещения, а не произвольный сдвиг.
        """
        if len(layer_sizes) < 2 or any(int(n) < 1 for n in layer_sizes):
            raise ValueError(f"Некорректная топология сети: {layer_sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights=weights, biases=biases)

    def flat(self) -> np.ndarray:
        """Все параметры одним вектором: W0, b0, W1, b1, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, layer_sizes: Sequence[int], vector) -> "MlpParams":
        vector = np.asarray(vector, dtype=float)
        expected = sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))
        if vector.size != expected:
            raise ValueError(f"Ожидалось {expected} параметров, получено {vector.size}")
        weights, biases, offset = [], [], 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(vector[offset:offset + n_in * n_out].reshape(n_in, n_out).copy())
            offset += n_in * n_out
            biases.append(vector[offset:offset + n_out].copy())
            offset += n_out
        return cls(weights=weights, biases=biases)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def axpy(self, a: float, other: "MlpParams") -> "MlpParams":
        """self + a·other (новый объект)."""
        return MlpParams(
            weights=[w + a * ow for w, ow in zip(self.weights, other.weights)],
            biases=[b + a * ob for b, ob in zip(self.biases, other.biases)],
        )

    def scale(self, a: float) -> "MlpParams":
        return MlpParams([a * w for w in self.weights], [a * b for b in self.biases])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b))
                   for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class TaskDataset:
    """Набор пар одной задачи (одного отказа): inputs (M, d), targets (M, 3)."""

    inputs: np.ndarray
    targets: np.ndarray
    fault_id: str = ""

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if inputs.shape[0] != targets.shape[0]:
            raise DatasetError(f"Число входов ({inputs.shape[0]}) не совпадает с числом целей ({targets.shape[0]})")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise DatasetError("Набор содержит нечисловые значения", fault_id=self.fault_id)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self):
        return int(self.inputs.shape[0]) if self.inputs.size else 0

    def subset(self, indices) -> "TaskDataset":
        indices = np.asarray(indices, dtype=int)
        return TaskDataset(self.inputs[indices], self.targets[indices], self.fault_id)

    def concat(self, other: "TaskDataset") -> "TaskDataset":
        if len(self) == 0:
            return TaskDataset(other.inputs, other.targets, self.fault_id or other.fault_id)
        if len(other) == 0:
            return self
        return TaskDataset(np.vstack([self.inputs, other.inputs]),
                           np.vstack([self.targets, other.targets]), self.fault_id)


def _require(data: TaskDataset):
    if len(data) == 0:
        raise DatasetError("Пустой набор данных", fault_id=data.fault_id)


def _activations(params: MlpParams, X: np.ndarray) -> List[np.ndarray]:
    """Прямой проход: [a0 = X, a1, ..., aL]."""
    acts = [X]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if l == last else np.tanh(z))
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    """
    Выход сети для одного входа (d,) или пакета (M, d).
    """
    x = np.asarray(x, dtype=float)
    out = _activations(params, np.atleast_2d(x))[-1]
    return out[0] if x.ndim == 1 else out


def loss(params: MlpParams, data: TaskDataset) -> float:
    """Σ ‖f_θ(x) − y‖² по всем парам."""
    _require(data)
    residual = _activations(params, data.inputs)[-1] - data.targets
    return float(np.sum(residual ** 2))


def _backward(params: MlpParams, acts: List[np.ndarray], delta: np.ndarray) -> MlpParams:
    n_layers = len(params.weights)
    grad_w: List[Optional[np.ndarray]] = [None] * n_layers
    grad_b: List[Optional[np.ndarray]] = [None] * n_layers
    for l in reversed(range(n_layers)):
        grad_w[l] = acts[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l].T) * (1.0 - acts[l] ** 2)
    return MlpParams(grad_w, grad_b)


def grad(params: MlpParams, data: TaskDataset) -> MlpParams:
    """Точный градиент loss по параметрам (обратный проход)."""
    _require(data)
    acts = _activations(params, data.inputs)
    return _backward(params, acts, 2.0 * (acts[-1] - data.targets))


def loss_and_grad(params: MlpParams, data: TaskDataset) -> Tuple[float, MlpParams]:
    _require(data)
    acts = _activations(params, data.inputs)
    residual = acts[-1] - data.targets
    return float(np.sum(residual ** 2)), _backward(params, acts, 2.0 * residual)


def hvp(params: MlpParams, data: TaskDataset, v: MlpParams) -> MlpParams:
    """
    Произведение гессиана loss на направление v (R-оператор).

    Args:
        params: Точка θ
        data: Набор пар
        v: Направление той же формы, что и θ

    Returns:
        H(θ)·v
    """
    _require(data)
    n_layers = len(params.weights)
    acts = _activations(params, data.inputs)

    # Прямой проход R-оператора: r_acts[l] = R{a_l}
    r_acts = [np.zeros_like(data.inputs)]
    for l in range(n_layers):
        r_z = r_acts[l] @ params.weights[l] + acts[l] @ v.weights[l] + v.biases[l]
        if l == n_layers - 1:
            r_acts.append(r_z)
        else:
            r_acts.append((1.0 - acts[l + 1] ** 2) * r_z)

    delta = 2.0 * (acts[-1] - data.targets)
    r_delta = 2.0 * r_acts[-1]

    h_w: List[Optional[np.ndarray]] = [None] * n_layers
    h_b: List[Optional[np.ndarray]] = [None] * n_layers
    for l in reversed(range(n_layers)):
        h_w[l] = r_acts[l].T @ delta + acts[l].T @ r_delta
        h_b[l] = r_delta.sum(axis=0)
        if l > 0:
            w = params.weights[l]
            back = delta @ w.T
            deriv = 1.0 - acts[l] ** 2
            r_delta = (r_delta @ w.T + delta @ v.weights[l].T) * deriv + back * (-2.0 * acts[l] * r_acts[l])
            delta = back * deriv
    return MlpParams(h_w, h_b)


def adapt(params: MlpParams, data: TaskDataset, alpha: float, steps: int) -> MlpParams:
    """
    Внутренние шаги градиентного спуска θ ← θ − α∇ℒ.

    Args:
        params: Начальные параметры
        data: Набор для дообучения
        alpha: Шаг
        steps: Число шагов

    Returns:
        Дообученные параметры (новый объект)
    """
    theta = params.copy()
    for _ in range(steps):
        theta = theta.axpy(-alpha, grad(theta, data))
    return theta


def meta_grad_and_loss(
    params: MlpParams,
    support: TaskDataset,
    query: TaskDataset,
    alpha: float,
    inner_steps: int = 1,
    first_order: bool = False,
) -> Tuple[MlpParams, float]:
    """
    Мета-градиент d/dθ ℒ_query(θ′) и сам ℒ_query(θ′), где θ′ — результат
    inner_steps шагов по support.

    Точный режим распространяет градиент через внутренние шаги:
    v ← v − α·H_support(θ_j)·v в обратном порядке. В режиме first_order
    возвращается ∇ℒ_query(θ′) (приближение FOMAML).
    """
    _require(support)
    _require(query)
    if alpha < 0 or inner_steps < 1:
        raise ValueError(f"Недопустимые alpha={alpha} или inner_steps={inner_steps}")

    trajectory = [params]
    for _ in range(inner_steps):
        trajectory.append(trajectory[-1].axpy(-alpha, grad(trajectory[-1], support)))

    query_loss, v = loss_and_grad(trajectory[-1], query)
    if not first_order and alpha > 0:
        for theta_j in reversed(trajectory[:-1]):
            v = v.axpy(-alpha, hvp(theta_j, support, v))
    return v, query_loss


def meta_grad(
    params: MlpParams,
    support: TaskDataset,
    query: TaskDataset,
    alpha: float,
    inner_steps: int = 1,
    first_order: bool = False,
) -> MlpParams:
    """Мета-градиент без значения потерь (см. meta_grad_and_loss)."""
    return meta_grad_and_loss(params, support, query, alpha, inner_steps, first_order)[0]
