"""
Мета-обучение (MAML) предсказателя по множеству отказов.

Для каждого отказа собирается набор пар из журналов полёта без коррекции,
затем внешний цикл минимизирует потери на query-выборке после внутренних
шагов дообучения на support-выборке.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import RecoveryError, read_json, write_json_atomic
from .neuralnet import DatasetError, MlpParams, TaskDataset, adapt, loss, meta_grad_and_loss
from .quadrotor_sim import DivergenceError, FaultSpec, QuadState, RunLog, SimSetup, simulate_tracking
from .trajgen import Trajectory

logger = logging.getLogger(__name__)

CORPUS_MANIFEST = "manifest.json"
CORPUS_FORMAT = "meta-recovery-corpus"


class RunTooShortError(DatasetError):
    """Журнал полёта короче двух отсчётов."""

    code = "run too short"


class CorpusError(RecoveryError, ValueError):
    """Некорректный или несогласованный корпус обучающих задач."""

    code = "invalid corpus"


class MetaTrainingError(RecoveryError, RuntimeError):
    """Нечисловые потери во время мета-обучения."""

    code = "non-finite loss"


@dataclass(frozen=True)
class MetaConfig:
    """Гиперпараметры мета-обучения."""

    alpha: float = 0.01
    beta: float = 0.001
    inner_steps: int = 1
    meta_iterations: int = 10000
    support_size: int = 20
    query_size: int = 20
    seed: int = 0
    optimizer: str = "sgd"
    first_order: bool = False
    log_every: int = 500
    tasks_per_iteration: Optional[int] = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha и beta должны быть положительными: {self.alpha}, {self.beta}")
        if self.inner_steps < 1 or self.support_size < 1 or self.query_size < 1:
            raise ValueError("inner_steps, support_size и query_size должны быть не меньше 1")
        if self.meta_iterations < 0:
            raise ValueError(f"Отрицательное число итераций: {self.meta_iterations}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"Неизвестный оптимизатор: {self.optimizer}")

    @classmethod
    def from_dict(cls, data) -> "MetaConfig":
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class FaultTaskSet:
    """Задачи мета-обучения: пары (отказ, набор данных) и сведения о пропусках."""

    tasks: List[Tuple[FaultSpec, TaskDataset]]
    skips: List[dict] = field(default_factory=list)
    provenance: List[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.tasks)

    @property
    def faults(self) -> List[FaultSpec]:
        return [fault for fault, _ in self.tasks]

    @property
    def datasets(self) -> List[TaskDataset]:
        return [data for _, data in self.tasks]

    def validate(self):
        """Не меньше двух задач, среди них — номинальная."""
        if len(self.tasks) < 2:
            raise CorpusError(f"Нужно не меньше двух задач, получено {len(self.tasks)}")
        if not any(fault.is_nominal for fault in self.faults):
            raise CorpusError("Корпус не содержит номинальной задачи (без отказа)")
        for fault, data in self.tasks:
            if len(data) < 2:
                raise CorpusError(f"Задача «{fault.name}» содержит меньше двух пар")


@dataclass
class MetaTrainingResult:
    """Мета-обученные параметры и след обучения."""

    params: MlpParams
    trace: List[float]
    config: MetaConfig
    init_seed: int = 0


def build_dataset(run: RunLog, fault_id: str = "") -> TaskDataset:
    """
    Обучающие пары из журнала полёта.

    x(k) = [p_τ(k+1); v_τ(k+1)] − [p(k); v(k)],  y(k) = p(k+1) − p(k),  k = 0..T−2.

    Raises:
        RunTooShortError: в журнале меньше двух отсчётов
    """
    if len(run) < 2:
        raise RunTooShortError(f"Журнал слишком короткий: {len(run)} отсчётов", fault_id=fault_id)
    p, v = run.positions, run.velocities
    inputs = np.hstack([run.des_pos[1:] - p[:-1], run.des_vel[1:] - v[:-1]])
    targets = p[1:] - p[:-1]
    return TaskDataset(inputs, targets, fault_id)


def generate_training_corpus(
    faults: Sequence[FaultSpec],
    trajectories: Sequence[Trajectory],
    setup: SimSetup,
    provenance: Optional[Sequence[dict]] = None,
) -> FaultTaskSet:
    """
    Полёты по всем траекториям под каждым отказом без коррекции.

    Расходящиеся пары (отказ, траектория) пропускаются и записываются в skips.

    Args:
        faults: Отказы (задачи)
        trajectories: Обучающие траектории
        setup: Объект и регулятор
        provenance: Описание траекторий для манифеста

    Returns:
        FaultTaskSet, по одной задаче на отказ
    """
    if not faults:
        raise CorpusError("Пустой список отказов")
    if not trajectories:
        raise CorpusError("Пустой список траекторий")

    tasks, skips = [], []
    for fault in faults:
        dataset = TaskDataset(np.zeros((0, 6)), np.zeros((0, 3)), fault.name)
        for j, traj in enumerate(trajectories):
            try:
                run = simulate_tracking(QuadState.at_rest(traj.pos[0]), traj, fault, setup)
            except DivergenceError as e:
                logger.warning(f"Пропуск: отказ «{fault.name}», траектория {j}: {e}")
                skips.append({"fault": fault.name, "trajectory": j,
                              "step": e.details.get("step"), "reason": str(e)})
                continue
            dataset = dataset.concat(build_dataset(run, fault.name))
        if len(dataset) == 0:
            logger.warning(f"Отказ «{fault.name}» не дал ни одной пары, задача пропущена")
            continue
        tasks.append((fault, dataset))
        logger.info(f"Задача «{fault.name}»: {len(dataset)} пар")

    return FaultTaskSet(tasks=tasks, skips=skips,
                        provenance=list(provenance) if provenance else [])


# Выборка задач на одну итерацию: список пар (support, query)
TaskSampler = Callable[[np.random.Generator, int], List[Tuple[TaskDataset, TaskDataset]]]


def split_support_query(data: TaskDataset, support_size: int, query_size: int,
                        rng: np.random.Generator) -> Tuple[TaskDataset, TaskDataset]:
    """
    Непересекающиеся support и query из одной задачи.

    Если пар меньше support_size + query_size, набор делится пополам.
    """
    n = len(data)
    if n < 2:
        raise DatasetError(f"Для разбиения нужно не меньше двух пар: {n}", fault_id=data.fault_id)
    perm = rng.permutation(n)
    if n >= support_size + query_size:
        s, q = support_size, query_size
    else:
        s = max(1, n // 2)
        q = n - s
    return data.subset(perm[:s]), data.subset(perm[s:s + q])


def dataset_sampler(datasets: Sequence[TaskDataset], cfg: MetaConfig) -> TaskSampler:
    """Сэмплер, использующий все задачи на каждой итерации (в порядке индексов)."""

    def sample(rng, iteration):
        chosen = range(len(datasets))
        if cfg.tasks_per_iteration and cfg.tasks_per_iteration < len(datasets):
            chosen = sorted(rng.choice(len(datasets), cfg.tasks_per_iteration, replace=False))
        return [split_support_query(datasets[i], cfg.support_size, cfg.query_size, rng) for i in chosen]

    return sample


class _Adam:
    """Adam по плоскому вектору параметров."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def meta_optimize(sampler: TaskSampler, cfg: MetaConfig, init: MlpParams) -> MetaTrainingResult:
    """
    Внешний цикл: θ ← θ − β Σᵢ ∇θ ℒ_queryᵢ(θ′ᵢ) (или шаг Adam по той же сумме).

    Сумма мета-градиентов собирается в фиксированном порядке задач.

    Raises:
        MetaTrainingError: нечисловые потери или градиент
    """
    rng = np.random.default_rng(cfg.seed)
    layer_sizes = init.layer_sizes
    theta = init.copy()
    adam = _Adam(cfg.beta) if cfg.optimizer == "adam" else None
    trace: List[float] = []

    for iteration in range(cfg.meta_iterations):
        pairs = sampler(rng, iteration)
        total = MlpParams.zeros(layer_sizes)
        losses = []
        for support, query in pairs:
            g, query_loss = meta_grad_and_loss(theta, support, query, cfg.alpha,
                                               cfg.inner_steps, cfg.first_order)
            total = total.axpy(1.0, g)
            losses.append(query_loss)

        mean_loss = float(np.mean(losses))
        if not math.isfinite(mean_loss) or not total.is_finite():
            logger.error(f"Нечисловые потери на итерации {iteration}")
            raise MetaTrainingError(f"Нечисловые потери на итерации {iteration}", iteration=iteration)
        trace.append(mean_loss)

        if adam is not None:
            theta = MlpParams.from_flat(layer_sizes, adam.step(theta.flat(), total.flat()))
        else:
            theta = theta.axpy(-cfg.beta, total)

        if cfg.log_every and (iteration + 1) % cfg.log_every == 0:
            window = trace[-cfg.log_every:]
            logger.info(f"Итерация {iteration + 1}/{cfg.meta_iterations}: "
                        f"потери после адаптации {np.mean(window):.6f}")

    return MetaTrainingResult(params=theta, trace=trace, config=cfg)


def meta_train(corpus: FaultTaskSet, cfg: MetaConfig, layer_sizes: Sequence[int],
               init: Optional[MlpParams] = None, init_seed: int = 0) -> MetaTrainingResult:
    """
    Мета-обучение по корпусу отказов.

    Args:
        corpus: Задачи (проверяются validate)
        cfg: Гиперпараметры
        layer_sizes: Топология сети
        init: Начальные параметры (по умолчанию — инициализация с init_seed)
        init_seed: Зерно инициализации

    Returns:
        MetaTrainingResult
    """
    corpus.validate()
    if init is None:
        init = MlpParams.initialize(layer_sizes, init_seed)
    elif tuple(init.layer_sizes) != tuple(layer_sizes):
        raise ValueError(f"Топология начальных параметров {init.layer_sizes} ≠ {tuple(layer_sizes)}")

    logger.info(f"Мета-обучение: {len(corpus)} задач, {cfg.meta_iterations} итераций, "
                f"α={cfg.alpha}, β={cfg.beta}, оптимизатор {cfg.optimizer}")
    result = meta_optimize(dataset_sampler(corpus.datasets, cfg), cfg, init)
    result.init_seed = init_seed
    return result


def finetune(params: MlpParams, data: TaskDataset, alpha: float, steps: int) -> MlpParams:
    """K-shot дообучение: steps шагов градиентного спуска с шагом alpha."""
    return adapt(params, data, alpha, steps)


def adaptation_losses(params: MlpParams, support: TaskDataset, query: TaskDataset,
                      alpha: float, steps: int) -> Tuple[float, float]:
    """Потери на query до и после дообучения на support."""
    return loss(params, query), loss(finetune(params, support, alpha, steps), query)


@dataclass(frozen=True)
class SinusoidTaskFamily:
    """Семейство регрессий y = A·sin(x + φ) для проверки MAML."""

    amplitude_range: Tuple[float, float] = (0.1, 5.0)
    phase_range: Tuple[float, float] = (0.0, math.pi)
    x_range: Tuple[float, float] = (-5.0, 5.0)

    def sample_task(self, rng: np.random.Generator) -> Tuple[float, float]:
        return float(rng.uniform(*self.amplitude_range)), float(rng.uniform(*self.phase_range))

    def dataset(self, amplitude: float, phase: float, n: int, rng: np.random.Generator) -> TaskDataset:
        x = rng.uniform(*self.x_range, size=(n, 1))
        return TaskDataset(x, amplitude * np.sin(x + phase), f"sin A={amplitude:.3f} φ={phase:.3f}")

    def sampler(self, cfg: MetaConfig) -> TaskSampler:
        """Новые задачи на каждой итерации: tasks_per_iteration (по умолчанию 5)."""
        n_tasks = cfg.tasks_per_iteration or 5

        def sample(rng, iteration):
            pairs = []
            for _ in range(n_tasks):
                amplitude, phase = self.sample_task(rng)
                pairs.append((self.dataset(amplitude, phase, cfg.support_size, rng),
                              self.dataset(amplitude, phase, cfg.query_size, rng)))
            return pairs

        return sample


def sinusoid_task_set(n_tasks: int, n_samples: int, seed: int = 0,
                      family: Optional[SinusoidTaskFamily] = None) -> List[TaskDataset]:
    """Фиксированный набор синусоидальных задач."""
    family = family or SinusoidTaskFamily()
    rng = np.random.default_rng(seed)
    tasks = []
    for _ in range(n_tasks):
        amplitude, phase = family.sample_task(rng)
        tasks.append(family.dataset(amplitude, phase, n_samples, rng))
    return tasks


def _task_filename(index: int, name: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
    return f"task_{index}_{safe}.csv"


def save_corpus(corpus: FaultTaskSet, out_dir, config_hash: str = "", extra: Optional[Dict] = None) -> Path:
    """
    Сохранение корпуса: CSV на задачу (x0..x5, y0..y2) и manifest.json.

    Раздел "data" манифеста детерминирован, время создания — в разделе "meta".

    Returns:
        Путь к манифесту
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (fault, data) in enumerate(corpus.tasks):
        filename = _task_filename(i, fault.name)
        n_in, n_out = data.inputs.shape[1], data.targets.shape[1]
        with open(out_dir / filename, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow([f"x{j}" for j in range(n_in)] + [f"y{j}" for j in range(n_out)])
            for x, y in zip(data.inputs, data.targets):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
        entries.append({"file": filename, "fault": fault.to_dict(), "samples": len(data)})

    manifest = {
        "format": CORPUS_FORMAT,
        "data": {
            "tasks": entries,
            "skips": corpus.skips,
            "trajectories": corpus.provenance,
            "config_hash": config_hash,
            **(extra or {}),
        },
        "meta": {"created_at": datetime.now().isoformat(timespec="seconds")},
    }
    path = out_dir / CORPUS_MANIFEST
    write_json_atomic(path, manifest)
    logger.info(f"Корпус сохранён: {out_dir} ({len(entries)} задач, пропусков {len(corpus.skips)})")
    return path


def load_corpus(corpus_dir) -> Tuple[FaultTaskSet, dict]:
    """
    Загрузка корпуса, сохранённого save_corpus.

    Returns:
        (FaultTaskSet, манифест)
    """
    corpus_dir = Path(corpus_dir)
    manifest = read_json(corpus_dir / CORPUS_MANIFEST, "Манифест корпуса")
    if manifest.get("format") != CORPUS_FORMAT or "data" not in manifest:
        raise CorpusError(f"Неизвестный формат корпуса: {corpus_dir}")

    tasks = []
    for entry in manifest["data"].get("tasks", []):
        path = corpus_dir / entry["file"]
        if not path.exists():
            raise CorpusError(f"Файл задачи не найден: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            reader = csv.reader(f)
            header = next(reader, [])
            rows = [[float(v) for v in row] for row in reader if row]
        n_in = sum(1 for h in header if h.startswith("x"))
        table = np.array(rows, dtype=float).reshape(-1, len(header))
        fault = FaultSpec.from_dict(entry["fault"])
        data = TaskDataset(table[:, :n_in], table[:, n_in:], fault.name)
        if len(data) != int(entry.get("samples", len(data))):
            raise CorpusError(f"Число пар в {path} не совпадает с манифестом")
        tasks.append((fault, data))

    corpus = FaultTaskSet(tasks=tasks,
                          skips=list(manifest["data"].get("skips", [])),
                          provenance=list(manifest["data"].get("trajectories", [])))
    logger.info(f"Корпус загружен: {corpus_dir} ({len(tasks)} задач)")
    return corpus, manifest
