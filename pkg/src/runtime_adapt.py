"""
Адаптация во время полёта.

Цикл: разогрев на K шагах без коррекции, дообучение мета-модели,
затем на каждом шаге — предсказание следующего положения, отклонение от
траектории, ПИД-коррекция опорной траектории, проверка предсказания и
переобучение на отобранных k-means данных при потере достоверности.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import RecoveryError
from .neuralnet import MlpParams, TaskDataset, adapt, forward, loss
from .quadrotor_sim import FaultSpec, QuadState, RunLog, SimSetup, TrackingSimulator
from .trajgen import Trajectory, TrajectoryError, closest_point_on_traj

logger = logging.getLogger(__name__)

ADAPT_TRACE_COLUMNS = [
    "k", "s", "relearn", "pred_err",
    "dev_x", "dev_y", "dev_z", "corr_x", "corr_y", "corr_z",
]

KMEANS_MAX_ITER = 100


class WarmupError(RecoveryError, ValueError):
    """Недостаточно данных разогрева для начальной адаптации."""

    code = "warm-up incomplete"


class HistoryError(RecoveryError, ValueError):
    """История полёта короче требуемого числа отобранных точек."""

    code = "history too short"


@dataclass(frozen=True)
class CorrectionGains:
    """Коэффициенты ПИД-коррекции опорной траектории."""

    kp: float = 0.8
    kd: float = 0.3
    ki: float = 0.05

    def __post_init__(self):
        if min(self.kp, self.kd, self.ki) < 0:
            raise ValueError(f"Коэффициенты коррекции должны быть неотрицательными: {self}")

    @classmethod
    def zero(cls) -> "CorrectionGains":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class AdaptConfig:
    """Параметры адаптации во время полёта."""

    K: int = 20
    delta: float = 0.02
    gains: CorrectionGains = field(default_factory=CorrectionGains)
    alpha: float = 0.01
    inner_steps: int = 5
    history_cap: int = 500
    integrator_limit: float = 2.0
    axis_mask: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    readapt_from: str = "meta"
    relearn_acceptance: str = "improves"
    reference_velocity: str = "feedforward"
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K должно быть не меньше 1: {self.K}")
        if not self.delta > 0:
            raise ValueError(f"Порог δ должен быть положительным: {self.delta}")
        if self.history_cap < self.K:
            raise ValueError(f"history_cap ({self.history_cap}) меньше K ({self.K})")
        if self.inner_steps < 0 or self.alpha < 0:
            raise ValueError("alpha и inner_steps не могут быть отрицательными")
        if self.readapt_from not in ("meta", "current"):
            raise ValueError(f"Неизвестная точка переобучения: {self.readapt_from}")
        if self.relearn_acceptance not in ("always", "improves"):
            raise ValueError(f"Неизвестное правило принятия переобучения: {self.relearn_acceptance}")
        if self.reference_velocity not in ("feedforward", "finite_difference"):
            raise ValueError(f"Неизвестный режим опорной скорости: {self.reference_velocity}")

    @classmethod
    def from_dict(cls, data) -> "AdaptConfig":
        data = dict(data or {})
        gains = data.pop("gains", None)
        if isinstance(gains, dict):
            data["gains"] = CorrectionGains(**{k: float(v) for k, v in gains.items()})
        if "axis_mask" in data:
            data["axis_mask"] = tuple(float(v) for v in data["axis_mask"])
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        result = {name: getattr(self, name) for name in self.__dataclass_fields__}
        result["gains"] = {"kp": self.gains.kp, "kd": self.gains.kd, "ki": self.gains.ki}
        result["axis_mask"] = list(self.axis_mask)
        return result


class OnlineHistory:
    """
    История полёта: применённые опорные сигналы r*(1..k), r_v*(1..k)
    и фактические положения p*(0..k), скорости v*(0..k).
    """

    def __init__(self, position, velocity):
        self.refs: List[np.ndarray] = []
        self.ref_vels: List[np.ndarray] = []
        self.positions: List[np.ndarray] = [np.asarray(position, dtype=float).copy()]
        self.velocities: List[np.ndarray] = [np.asarray(velocity, dtype=float).copy()]

    def __len__(self):
        """Число переходов (пар обучающей выборки)."""
        return len(self.refs)

    def record(self, ref, ref_vel, position, velocity):
        """Добавление перехода: применённый опорный сигнал и состояние после шага."""
        self.refs.append(np.asarray(ref, dtype=float).copy())
        self.ref_vels.append(np.asarray(ref_vel, dtype=float).copy())
        self.positions.append(np.asarray(position, dtype=float).copy())
        self.velocities.append(np.asarray(velocity, dtype=float).copy())

    def cap(self, limit: int):
        """Удаление самых старых переходов сверх limit."""
        excess = len(self) - limit
        if excess > 0:
            del self.refs[:excess]
            del self.ref_vels[:excess]
            del self.positions[:excess]
            del self.velocities[:excess]

    def dataset(self, last: Optional[int] = None) -> TaskDataset:
        """
        X*(j) = [r*(j+1); r_v*(j+1)] − [p*(j); v*(j)],  Y*(j) = p*(j+1) − p*(j).

        Args:
            last: Взять только последние last переходов
        """
        if len(self) == 0:
            return TaskDataset(np.zeros((0, 6)), np.zeros((0, 3)), "online")
        refs, ref_vels = np.array(self.refs), np.array(self.ref_vels)
        p, v = np.array(self.positions), np.array(self.velocities)
        inputs = np.hstack([refs - p[:-1], ref_vels - v[:-1]])
        targets = p[1:] - p[:-1]
        if last is not None:
            inputs, targets = inputs[-last:], targets[-last:]
        return TaskDataset(inputs, targets, "online")


@dataclass
class AdaptState:
    """Учёт адаптации: текущие параметры, отклонения, интегратор, достоверность."""

    params: MlpParams
    delta: float
    K: int
    history_cap: int
    deviation_history: List[np.ndarray] = field(default_factory=list)
    integrator: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_correction: np.ndarray = field(default_factory=lambda: np.zeros(3))
    validity: int = 1
    relearn_count: int = 0

    def push_deviation(self, d):
        self.deviation_history.append(np.asarray(d, dtype=float).copy())
        excess = len(self.deviation_history) - self.history_cap
        if excess > 0:
            del self.deviation_history[:excess]


@dataclass(frozen=True)
class AdaptRow:
    k: int
    s: int
    relearn: int
    pred_err: float
    deviation: np.ndarray
    correction: np.ndarray


class AdaptTrace:
    """Пошаговый след адаптации после разогрева."""

    def __init__(self):
        self.rows: List[AdaptRow] = []

    def __len__(self):
        return len(self.rows)

    def append(self, row: AdaptRow):
        self.rows.append(row)

    @property
    def relearn_steps(self) -> List[int]:
        return [row.k for row in self.rows if row.relearn]

    @property
    def relearn_count(self) -> int:
        return sum(row.relearn for row in self.rows)

    @property
    def corrections(self) -> np.ndarray:
        return np.array([row.correction for row in self.rows]).reshape(-1, 3)

    @property
    def prediction_errors(self) -> np.ndarray:
        return np.array([row.pred_err for row in self.rows])

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(ADAPT_TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow([row.k, row.s, row.relearn, repr(float(row.pred_err))]
                                + [repr(float(v)) for v in row.deviation]
                                + [repr(float(v)) for v in row.correction])


@dataclass
class AdaptResult:
    """Результат полёта с адаптацией."""

    run: RunLog
    trace: AdaptTrace
    state: AdaptState
    warmup_steps: int


def initial_adapt(theta_meta: MlpParams, history: OnlineHistory, alpha: float,
                  inner_steps: int, K: Optional[int] = None) -> MlpParams:
    """
    Дообучение мета-модели на K переходах разогрева.

    Raises:
        WarmupError: в истории меньше K переходов (или ни одного)
    """
    K = len(history) if K is None else K
    if K < 1 or len(history) < K:
        raise WarmupError(f"Разогрев не завершён: {len(history)} из {K} переходов")
    return adapt(theta_meta, history.dataset(last=K), alpha, inner_steps)


def predict_next(params: MlpParams, p, v, ref_p_next, ref_v_next) -> np.ndarray:
    """p̃(k+1) = f_θ([r_p(k+1); r_v(k+1)] − [p; v]) + p."""
    p = np.asarray(p, dtype=float)
    relative = np.concatenate([np.asarray(ref_p_next, dtype=float) - p,
                               np.asarray(ref_v_next, dtype=float) - np.asarray(v, dtype=float)])
    return forward(params, relative) + p


def predicted_deviation(traj: Trajectory, p_pred) -> np.ndarray:
    """d̃ = p̄_τ − p̃, где p̄_τ — ближайший отсчёт траектории."""
    _, closest = closest_point_on_traj(traj, p_pred)
    return closest - np.asarray(p_pred, dtype=float)


def correction(gains: CorrectionGains, d_pred, dev_history: Sequence[np.ndarray], integrator) -> np.ndarray:
    """
    c(k+1) = κp·d̃ + κd·(d̃ − d(k)) + κi·(Σd + d̃).

    d(k) — последний элемент истории отклонений (ноль, если история пуста).
    """
    d_pred = np.asarray(d_pred, dtype=float)
    d_last = np.asarray(dev_history[-1], dtype=float) if len(dev_history) else np.zeros(3)
    integrator = np.asarray(integrator, dtype=float)
    return gains.kp * d_pred + gains.kd * (d_pred - d_last) + gains.ki * (integrator + d_pred)


def updated_reference(traj: Trajectory, k: int, c, prev_ref, dt: float,
                      mode: str = "finite_difference") -> Tuple[np.ndarray, np.ndarray]:
    """
    Опорный сигнал на шаг k+1: r = p_τ(k+1) + c.

    Опорная скорость:
      finite_difference — r_v = (r(k+1) − r(k))/Δk;
      feedforward — r_v = v_τ(k+1) + [(r(k+1) − r(k)) − (p_τ(k+1) − p_τ(k))]/Δk.

    Raises:
        TrajectoryError: k+1 вне траектории
    """
    if not 0 <= k < len(traj) - 1:
        raise TrajectoryError(f"Индекс {k}+1 вне траектории длиной {len(traj)}")
    prev_ref = np.asarray(prev_ref, dtype=float)
    ref = traj.pos[k + 1] + np.asarray(c, dtype=float)
    if mode == "feedforward":
        ref_vel = traj.vel[k + 1] + ((ref - prev_ref) - (traj.pos[k + 1] - traj.pos[k])) / dt
    elif mode == "finite_difference":
        ref_vel = (ref - prev_ref) / dt
    else:
        raise ValueError(f"Неизвестный режим опорной скорости: {mode}")
    return ref, ref_vel


def validation_error(params: MlpParams, p, v, r_next, r_v_next, p_actual_next) -> float:
    """‖p̃_r(k+1) − p(k+1)‖ для предсказания под применённым опорным сигналом."""
    p_pred = predict_next(params, p, v, r_next, r_v_next)
    return float(np.linalg.norm(p_pred - np.asarray(p_actual_next, dtype=float)))


def validate(params: MlpParams, p, v, r_next, r_v_next, p_actual_next, delta: float) -> int:
    """
    Проверка предсказания под применённым опорным сигналом.

    Returns:
        s = 0, если ‖p̃_r − p_actual‖ > δ, иначе 1
    """
    return 0 if validation_error(params, p, v, r_next, r_v_next, p_actual_next) > delta else 1


def kmeans_plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Начальные центроиды k-means++ (вероятности пропорциональны D²)."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(0, n)]
    closest_d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest_d2.sum()
        if total > 0:
            index = rng.choice(n, p=closest_d2 / total)
        else:
            index = rng.integers(0, n)
        centroids[j] = X[index]
        closest_d2 = np.minimum(closest_d2, np.sum((X - centroids[j]) ** 2, axis=1))
    return centroids


def _sq_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)


def kmeans(X, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER) -> Tuple[np.ndarray, np.ndarray]:
    """
    Алгоритм Ллойда от центроидов k-means++.

    Останов при неизменном разбиении или после max_iter итераций.
    Пустой кластер получает самую удалённую от своего центроида точку.

    Returns:
        (центроиды (k, d), метки (n,))
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not 1 <= k <= X.shape[0]:
        raise HistoryError(f"Нельзя разбить {X.shape[0]} точек на {k} кластеров")

    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus_init(X, k, rng)
    labels = None
    for _ in range(max_iter):
        d2 = _sq_distances(X, centroids)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        own_d2 = d2[np.arange(X.shape[0]), labels]
        for j in range(k):
            members = labels == j
            if np.any(members):
                centroids[j] = X[members].mean(axis=0)
            else:
                farthest = int(np.argmax(own_d2))
                centroids[j] = X[farthest]
                own_d2[farthest] = 0.0
    return centroids, labels


def select_representatives(X, centroids) -> np.ndarray:
    """
    Ближайшая к каждому центроиду точка (при равенстве — меньший индекс);
    при совпадении индексов берётся следующая по близости.

    Returns:
        Индексы отобранных точек в порядке центроидов
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d2 = _sq_distances(X, np.asarray(centroids, dtype=float))
    taken = set()
    selected = []
    for j in range(d2.shape[1]):
        for index in np.argsort(d2[:, j], kind="stable"):
            if int(index) not in taken:
                taken.add(int(index))
                selected.append(int(index))
                break
    return np.array(selected, dtype=int)


def prune_history(history: OnlineHistory, K: int, seed: int = 0) -> TaskDataset:
    """
    K представительных переходов истории: k-means по входам и ближайшая к центроиду точка.

    Raises:
        HistoryError: в истории меньше K переходов
    """
    data = history.dataset()
    if len(data) < K:
        raise HistoryError(f"История короче K: {len(data)} < {K}")
    centroids, _ = kmeans(data.inputs, K, seed)
    return data.subset(select_representatives(data.inputs, centroids))


def accept_relearn(candidate: MlpParams, current: MlpParams, recent: TaskDataset) -> bool:
    """Кандидат принимается, если ошибка на последних переходах не выше, чем у текущей модели."""
    return loss(candidate, recent) <= loss(current, recent)


def run_adaptive_tracking(
    theta_meta: MlpParams,
    traj: Trajectory,
    fault: FaultSpec,
    cfg: AdaptConfig,
    setup: SimSetup,
    initial: Optional[QuadState] = None,
) -> AdaptResult:
    """
    Полёт с адаптацией: разогрев, коррекция опорной траектории, проверка и переобучение.

    Args:
        theta_meta: Мета-обученные параметры
        traj: Желаемая траектория
        fault: Отказ
        cfg: Параметры адаптации
        setup: Объект и регулятор
        initial: Начальное состояние (по умолчанию — покой в начале траектории)

    Returns:
        AdaptResult с журналом полёта и следом адаптации

    Raises:
        WarmupError: траектория не длиннее K
        DivergenceError: расходимость (с номером шага)
    """
    K = cfg.K
    if len(traj) <= K:
        raise WarmupError(f"Траектория ({len(traj)} отсчётов) не длиннее K={K}")

    initial = initial or QuadState.at_rest(traj.pos[0])
    step = traj.dt
    mask = np.asarray(cfg.axis_mask, dtype=float)
    sim = TrackingSimulator(initial, setup, fault, step)
    run = RunLog(step)
    run.append(initial, traj.pos[0], traj.vel[0], traj.pos[0], traj.vel[0])
    history = OnlineHistory(initial.position, initial.velocity)
    state = AdaptState(params=theta_meta, delta=cfg.delta, K=K, history_cap=cfg.history_cap)

    # Разогрев: опорный сигнал совпадает с желаемой траекторией
    for k in range(K):
        ref_pos, ref_vel = traj.pos[k + 1], traj.vel[k + 1]
        x = sim.advance(ref_pos, ref_vel)
        run.append(x, ref_pos, ref_vel, traj.pos[k + 1], traj.vel[k + 1])
        history.record(ref_pos, ref_vel, x.position, x.velocity)
        state.push_deviation(closest_point_on_traj(traj, x.position)[1] - x.position)

    state.params = initial_adapt(theta_meta, history, cfg.alpha, cfg.inner_steps, K)
    logger.info(f"Разогрев завершён: {K} шагов, модель дообучена ({cfg.inner_steps} шагов, α={cfg.alpha})")

    trace = AdaptTrace()
    prev_ref = traj.pos[K]
    for k in range(K, len(traj) - 1):
        x = sim.state
        p_pred = predict_next(state.params, x.position, x.velocity, traj.pos[k + 1], traj.vel[k + 1])
        d_pred = predicted_deviation(traj, p_pred)
        c = mask * correction(cfg.gains, d_pred, state.deviation_history, state.integrator)
        ref_pos, ref_vel = updated_reference(traj, k, c, prev_ref, step, cfg.reference_velocity)

        x_next = sim.advance(ref_pos, ref_vel)
        run.append(x_next, ref_pos, ref_vel, traj.pos[k + 1], traj.vel[k + 1])
        history.record(ref_pos, ref_vel, x_next.position, x_next.velocity)
        history.cap(cfg.history_cap)

        d = closest_point_on_traj(traj, x_next.position)[1] - x_next.position
        state.push_deviation(d)
        integrator = state.integrator + d
        norm = np.linalg.norm(integrator)
        if norm > cfg.integrator_limit:
            integrator = integrator * (cfg.integrator_limit / norm)
        state.integrator = integrator
        state.last_correction = c

        pred_err = validation_error(state.params, x.position, x.velocity, ref_pos, ref_vel, x_next.position)
        s = 0 if pred_err > cfg.delta else 1
        state.validity = s

        if s == 0:
            pruned = prune_history(history, K, cfg.seed + k)
            anchor = theta_meta if cfg.readapt_from == "meta" else state.params
            candidate = adapt(anchor, pruned, cfg.alpha, cfg.inner_steps)
            state.relearn_count += 1
            accepted = (cfg.relearn_acceptance == "always"
                        or accept_relearn(candidate, state.params, history.dataset(last=K)))
            if accepted:
                state.params = candidate
            logger.info(f"Шаг {k}: ошибка предсказания {pred_err:.4f} м > δ, переобучение "
                        f"#{state.relearn_count}" + ("" if accepted else " (модель не изменена)"))

        trace.append(AdaptRow(k=k, s=s, relearn=1 - s, pred_err=pred_err,
                              deviation=d_pred, correction=c))
        prev_ref = ref_pos

    logger.info(f"Полёт с адаптацией «{fault.name}»: {len(run)} шагов, переобучений {state.relearn_count}, "
                f"средняя ошибка {run.average_deviation(K + 1):.4f} м")
    return AdaptResult(run=run, trace=trace, state=state, warmup_steps=K)
