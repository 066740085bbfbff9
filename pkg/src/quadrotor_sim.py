"""
Модель квадрокоптера с 12 состояниями, каскадный ПИД-регулятор и внесение отказов винтов.

Схема «крест»: винт 1 — передний правый, 2 — передний левый,
3 — задний левый, 4 — задний правый. Винты 1/3 и 2/4 лежат на диагоналях
и вращаются в одну сторону. Отказ умножает заданную тягу винта на η_i
между выходом регулятора и входом объекта.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .config import ConfigError, RecoveryError
from .trajgen import Trajectory, TrajectoryError, closest_point_on_traj

logger = logging.getLogger(__name__)

# Геометрия винтов в связанной системе координат (x вперёд, y влево, z вверх)
ROTOR_X = np.array([1.0, 1.0, -1.0, -1.0])
ROTOR_Y = np.array([-1.0, 1.0, 1.0, -1.0])
ROTOR_SPIN = np.array([1.0, -1.0, 1.0, -1.0])

# Столбцы журнала полёта
RUNLOG_COLUMNS = [
    "k", "t", "px", "py", "pz", "vx", "vy", "vz",
    "ref_x", "ref_y", "ref_z", "des_x", "des_y", "des_z", "deviation",
]

_TILT_LIMIT = math.pi / 2


class InvalidInputError(RecoveryError, ValueError):
    """Нечисловые (NaN/Inf) состояние или опорный сигнал на входе регулятора."""

    code = "invalid state/reference"


class DivergenceError(RecoveryError, RuntimeError):
    """Расходимость модели: нечисловое состояние или |φ|, |θ| ≥ π/2."""

    code = "diverged"


@dataclass(frozen=True)
class QuadState:
    """Состояние аппарата: положение, скорость, углы ZYX (φ, θ, ψ), угловые скорости в связанных осях."""

    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    angular_rate: np.ndarray

    @classmethod
    def at_rest(cls, position=(0.0, 0.0, 0.0)) -> "QuadState":
        """Неподвижный аппарат в горизонтальном положении."""
        return cls(
            position=np.asarray(position, dtype=float).copy(),
            velocity=np.zeros(3),
            attitude=np.zeros(3),
            angular_rate=np.zeros(3),
        )

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(position=x[0:3].copy(), velocity=x[3:6].copy(),
                   attitude=x[6:9].copy(), angular_rate=x[9:12].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.angular_rate])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


@dataclass(frozen=True)
class QuadParams:
    """Физические параметры аппарата."""

    mass: float
    arm_length: float
    inertia_diag: Tuple[float, float, float]
    thrust_coeff: float
    drag_torque_coeff: float
    gravity: float
    max_rotor_thrust: float

    def __post_init__(self):
        values = [self.mass, self.arm_length, self.thrust_coeff, self.drag_torque_coeff,
                  self.gravity, self.max_rotor_thrust, *self.inertia_diag]
        if len(self.inertia_diag) != 3 or not all(np.isfinite(v) and v > 0 for v in values):
            raise ConfigError("Параметры аппарата должны быть конечными и строго положительными")
        if self.max_rotor_thrust <= self.hover_thrust:
            raise ConfigError(
                f"Висение недостижимо: max_rotor_thrust={self.max_rotor_thrust} ≤ m·g/4={self.hover_thrust:.3f}"
            )

    @property
    def hover_thrust(self) -> float:
        """Тяга одного винта на висении, Н."""
        return self.mass * self.gravity / 4.0

    @property
    def inertia(self) -> np.ndarray:
        return np.asarray(self.inertia_diag, dtype=float)

    @property
    def lever(self) -> float:
        """Плечо винта относительно осей крена и тангажа (схема «крест»)."""
        return self.arm_length / math.sqrt(2.0)

    @property
    def kappa(self) -> float:
        """Отношение реактивного момента к тяге, м."""
        return self.drag_torque_coeff / self.thrust_coeff


@dataclass(frozen=True)
class FaultSpec:
    """
    Отказ: коэффициенты эффективности тяги η_i и смещение команды крена.

    Каждый отказ — отдельная задача мета-обучения.
    """

    rotor_effectiveness: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    roll_bias: float = 0.0
    name: str = "nominal"

    def __post_init__(self):
        eta = tuple(float(v) for v in self.rotor_effectiveness)
        if len(eta) != 4 or not all(0.0 <= v <= 1.0 for v in eta):
            raise ConfigError(f"Эффективность винтов должна лежать в [0, 1]: {self.rotor_effectiveness}")
        if not abs(self.roll_bias) < math.pi / 6:
            raise ConfigError(f"Смещение крена должно быть меньше π/6 по модулю: {self.roll_bias}")
        object.__setattr__(self, "rotor_effectiveness", eta)
        object.__setattr__(self, "roll_bias", float(self.roll_bias))

    @classmethod
    def nominal(cls) -> "FaultSpec":
        return cls()

    @property
    def is_nominal(self) -> bool:
        return self.rotor_effectiveness == (1.0, 1.0, 1.0, 1.0) and self.roll_bias == 0.0

    @classmethod
    def from_dict(cls, data) -> "FaultSpec":
        """
        Чтение отказа из JSON.

        Поддерживаются явный вектор "rotor_effectiveness" и краткая форма
        {"rotor": 2, "effectiveness": 0.7} (нумерация винтов с 1).
        """
        data = data or {}
        if "rotor_effectiveness" in data:
            eta = tuple(data["rotor_effectiveness"])
        elif "rotor" in data:
            rotor = int(data["rotor"])
            if not 1 <= rotor <= 4:
                raise ConfigError(f"Номер винта вне диапазона 1..4: {rotor}")
            eta = [1.0, 1.0, 1.0, 1.0]
            eta[rotor - 1] = float(data.get("effectiveness", 1.0))
            eta = tuple(eta)
        else:
            eta = (1.0, 1.0, 1.0, 1.0)
        return cls(rotor_effectiveness=eta,
                   roll_bias=float(data.get("roll_bias", 0.0)),
                   name=str(data.get("name", "fault")))

    def to_dict(self) -> dict:
        return {"name": self.name,
                "rotor_effectiveness": list(self.rotor_effectiveness),
                "roll_bias": self.roll_bias}


@dataclass(frozen=True)
class ControlCommand:
    """Заданные тяги винтов до отказа, Н."""

    rotor_thrusts: np.ndarray


@dataclass(frozen=True)
class ControllerGains:
    """Замороженные коэффициенты каскадного ПИД-регулятора."""

    pos_kp: Tuple[float, float, float]
    pos_kd: Tuple[float, float, float]
    pos_ki: Tuple[float, float, float]
    att_kp: Tuple[float, float, float]
    att_kd: Tuple[float, float, float]
    att_ki: Tuple[float, float, float]
    max_tilt: float = 0.6
    pos_integrator_limit: float = 1.0
    att_integrator_limit: float = 0.5
    version: str = ""

    def __post_init__(self):
        for name in ("pos_kp", "pos_kd", "pos_ki", "att_kp", "att_kd", "att_ki"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3 or not all(np.isfinite(v) and v >= 0 for v in value):
                raise ConfigError(f"Коэффициенты {name} должны быть тремя неотрицательными числами")
            object.__setattr__(self, name, value)
        if not 0 < self.max_tilt < _TILT_LIMIT:
            raise ConfigError(f"Недопустимый предельный наклон: {self.max_tilt}")


@dataclass(frozen=True)
class ControllerMemory:
    """Интеграторы регулятора и ошибки предыдущего шага (для трапеций)."""

    pos_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    att_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_pos_error: Optional[np.ndarray] = None
    last_att_error: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SimSetup:
    """Объект, регулятор и шаг интегрирования."""

    params: QuadParams
    gains: ControllerGains
    dt: float = 0.001


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _trapezoid(integral, error, last_error, dt, limit):
    previous = error if last_error is None else last_error
    return np.clip(integral + 0.5 * (error + previous) * dt, -limit, limit)


def mixer(collective: float, torques, params: QuadParams) -> np.ndarray:
    """
    Распределение суммарной тяги и моментов по винтам.

    Args:
        collective: Суммарная тяга, Н
        torques: Моменты (τx, τy, τz), Н·м
        params: Параметры аппарата

    Returns:
        Тяги четырёх винтов, Н (без ограничения)
    """
    tx, ty, tz = torques
    d = params.lever
    return 0.25 * (collective + tx / d * ROTOR_Y - ty / d * ROTOR_X + tz / params.kappa * ROTOR_SPIN)


def body_torques(thrusts, params: QuadParams) -> np.ndarray:
    """Моменты от тяг винтов в связанных осях."""
    d = params.lever
    return np.array([
        d * np.dot(ROTOR_Y, thrusts),
        -d * np.dot(ROTOR_X, thrusts),
        params.kappa * np.dot(ROTOR_SPIN, thrusts),
    ])


def controller_step(
    state: QuadState,
    ref_pos,
    ref_vel,
    gains: ControllerGains,
    ctrl_state: ControllerMemory,
    params: QuadParams,
    dt: float,
    roll_bias: float = 0.0,
) -> Tuple[ControlCommand, ControllerMemory]:
    """
    Один такт каскадного регулятора: положение → углы → моменты → тяги винтов.

    Args:
        state: Текущее состояние
        ref_pos: Опорное положение, м
        ref_vel: Опорная скорость, м/с
        gains: Коэффициенты регулятора
        ctrl_state: Память регулятора
        params: Параметры аппарата
        dt: Такт регулятора, с
        roll_bias: Смещение команды крена (отказ), рад

    Returns:
        (ControlCommand, обновлённая ControllerMemory)
    """
    ref_pos = np.asarray(ref_pos, dtype=float)
    ref_vel = np.asarray(ref_vel, dtype=float)
    if not (state.is_finite() and np.all(np.isfinite(ref_pos)) and np.all(np.isfinite(ref_vel))):
        raise InvalidInputError("Нечисловое состояние или опорный сигнал на входе регулятора")

    g = params.gravity
    phi, theta, psi = state.attitude

    # Внешний контур: положение
    pos_error = ref_pos - state.position
    vel_error = ref_vel - state.velocity
    pos_integral = _trapezoid(ctrl_state.pos_integral, pos_error, ctrl_state.last_pos_error,
                              dt, gains.pos_integrator_limit)
    acc = (np.asarray(gains.pos_kp) * pos_error
           + np.asarray(gains.pos_kd) * vel_error
           + np.asarray(gains.pos_ki) * pos_integral)

    c_psi, s_psi = math.cos(psi), math.sin(psi)
    theta_des = float(np.clip((acc[0] * c_psi + acc[1] * s_psi) / g, -gains.max_tilt, gains.max_tilt))
    phi_des = float(np.clip((acc[0] * s_psi - acc[1] * c_psi) / g, -gains.max_tilt, gains.max_tilt))
    phi_des += roll_bias

    collective = max(params.mass * (g + acc[2]) / (math.cos(phi) * math.cos(theta)), 0.0)

    # Внутренний контур: ориентация
    att_error = np.array([phi_des - phi, theta_des - theta, _wrap_angle(0.0 - psi)])
    att_integral = _trapezoid(ctrl_state.att_integral, att_error, ctrl_state.last_att_error,
                              dt, gains.att_integrator_limit)
    ang_acc = (np.asarray(gains.att_kp) * att_error
               - np.asarray(gains.att_kd) * state.angular_rate
               + np.asarray(gains.att_ki) * att_integral)
    torques = params.inertia * ang_acc

    thrusts = np.clip(mixer(collective, torques, params), 0.0, params.max_rotor_thrust)
    memory = ControllerMemory(pos_integral=pos_integral, att_integral=att_integral,
                              last_pos_error=pos_error, last_att_error=att_error)
    return ControlCommand(rotor_thrusts=thrusts), memory


def apply_fault(cmd: ControlCommand, fault: FaultSpec) -> np.ndarray:
    """Фактические тяги винтов: η_i · cmd_i."""
    return np.asarray(fault.rotor_effectiveness) * cmd.rotor_thrusts


def _derivative(x: np.ndarray, thrusts: np.ndarray, params: QuadParams) -> np.ndarray:
    """Правая часть уравнений движения твёрдого тела."""
    phi, theta, psi = x[6:9]
    omega = x[9:12]
    p, q, r = omega

    c_phi, s_phi = math.cos(phi), math.sin(phi)
    c_th, s_th = math.cos(theta), math.sin(theta)
    c_psi, s_psi = math.cos(psi), math.sin(psi)

    force = float(np.sum(thrusts))
    acc = force / params.mass * np.array([
        c_psi * s_th * c_phi + s_psi * s_phi,
        s_psi * s_th * c_phi - c_psi * s_phi,
        c_th * c_phi,
    ])
    acc[2] -= params.gravity

    euler_rates = np.array([
        p + s_phi * math.tan(theta) * q + c_phi * math.tan(theta) * r,
        c_phi * q - s_phi * r,
        (s_phi * q + c_phi * r) / c_th,
    ])

    inertia = params.inertia
    tau = body_torques(thrusts, params)
    omega_dot = (tau - np.cross(omega, inertia * omega)) / inertia

    return np.concatenate([x[3:6], acc, euler_rates, omega_dot])


def plant_step(state: QuadState, actual_thrusts, params: QuadParams, dt: float) -> QuadState:
    """
    Шаг RK4 с постоянными на шаге тягами.

    Raises:
        DivergenceError: нечисловое состояние или |φ|, |θ| ≥ π/2
    """
    thrusts = np.asarray(actual_thrusts, dtype=float)
    if not dt > 0:
        raise InvalidInputError(f"Шаг интегрирования должен быть положительным: {dt}")

    x = state.to_vector()
    with np.errstate(all="ignore"):
        k1 = _derivative(x, thrusts, params)
        k2 = _derivative(x + 0.5 * dt * k1, thrusts, params)
        k3 = _derivative(x + 0.5 * dt * k2, thrusts, params)
        k4 = _derivative(x + dt * k3, thrusts, params)
        x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(x_next)):
        raise DivergenceError("Состояние стало нечисловым")
    if abs(x_next[6]) >= _TILT_LIMIT or abs(x_next[7]) >= _TILT_LIMIT:
        raise DivergenceError(f"Крен или тангаж достигли ±π/2: φ={x_next[6]:.3f}, θ={x_next[7]:.3f}")
    return QuadState.from_vector(x_next)


class TrackingSimulator:
    """
    Пошаговый симулятор: хранит состояние, память регулятора и отказ.

    Один вызов advance — один шаг опорной траектории Δk
    (Δk/dt подшагов RK4, регулятор вычисляется на каждом подшаге).
    """

    def __init__(self, initial: QuadState, setup: SimSetup, fault: FaultSpec, step: float):
        substeps = round(step / setup.dt)
        if substeps < 1 or abs(substeps * setup.dt - step) > 1e-9 * max(1.0, step):
            raise ConfigError(f"Шаг регулятора {setup.dt} не делит шаг траектории {step}")
        self.setup = setup
        self.fault = fault
        self.step = step
        self.substeps = substeps
        self.state = initial
        self.memory = ControllerMemory()
        self.k = 0

    def advance(self, ref_pos, ref_vel) -> QuadState:
        """
        Продвижение на один шаг Δk при постоянном опорном сигнале.

        Returns:
            Состояние в момент k+1
        """
        params, gains, dt = self.setup.params, self.setup.gains, self.setup.dt
        state, memory = self.state, self.memory
        try:
            for _ in range(self.substeps):
                cmd, memory = controller_step(state, ref_pos, ref_vel, gains, memory,
                                              params, dt, self.fault.roll_bias)
                state = plant_step(state, apply_fault(cmd, self.fault), params, dt)
        except DivergenceError as e:
            e.details.setdefault("step", self.k)
            logger.warning(f"Расходимость на шаге {self.k}: {e}")
            raise
        self.state, self.memory = state, memory
        self.k += 1
        return state


class RunLog:
    """Журнал полёта с шагом Δk: состояния, опорный сигнал, желаемая траектория."""

    def __init__(self, dt: float):
        self.dt = dt
        self._states: List[QuadState] = []
        self._ref_pos: List[np.ndarray] = []
        self._ref_vel: List[np.ndarray] = []
        self._des_pos: List[np.ndarray] = []
        self._des_vel: List[np.ndarray] = []

    def append(self, state: QuadState, ref_pos, ref_vel, des_pos, des_vel):
        self._states.append(state)
        self._ref_pos.append(np.asarray(ref_pos, dtype=float).copy())
        self._ref_vel.append(np.asarray(ref_vel, dtype=float).copy())
        self._des_pos.append(np.asarray(des_pos, dtype=float).copy())
        self._des_vel.append(np.asarray(des_vel, dtype=float).copy())

    def __len__(self):
        return len(self._states)

    @property
    def states(self) -> List[QuadState]:
        return list(self._states)

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self._states]).reshape(-1, 3)

    @property
    def velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self._states]).reshape(-1, 3)

    @property
    def ref_pos(self) -> np.ndarray:
        return np.array(self._ref_pos).reshape(-1, 3)

    @property
    def ref_vel(self) -> np.ndarray:
        return np.array(self._ref_vel).reshape(-1, 3)

    @property
    def des_pos(self) -> np.ndarray:
        return np.array(self._des_pos).reshape(-1, 3)

    @property
    def des_vel(self) -> np.ndarray:
        return np.array(self._des_vel).reshape(-1, 3)

    @property
    def deviation(self) -> np.ndarray:
        """‖p(k) − p_τ(k)‖."""
        return np.linalg.norm(self.positions - self.des_pos, axis=1)

    def average_deviation(self, start: int = 0) -> float:
        """Средняя ‖p − p_τ‖ по шагам start..N−1."""
        window = self.deviation[start:]
        return float(np.mean(window)) if window.size else 0.0

    def max_deviation(self, start: int = 0) -> float:
        window = self.deviation[start:]
        return float(np.max(window)) if window.size else 0.0

    def path_deviation(self, traj: Trajectory) -> np.ndarray:
        """Расстояние до ближайшего отсчёта траектории на каждом шаге."""
        return np.array([
            float(np.linalg.norm(p - closest_point_on_traj(traj, p)[1])) for p in self.positions
        ])

    def to_csv(self, path):
        """Сохранение журнала в CSV."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        deviation = self.deviation
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(RUNLOG_COLUMNS)
            for k, state in enumerate(self._states):
                values = [*state.position, *state.velocity, *self._ref_pos[k], *self._des_pos[k], deviation[k]]
                writer.writerow([k, repr(k * self.dt)] + [repr(float(v)) for v in values])
        logger.debug(f"Журнал полёта сохранён: {path} ({len(self)} строк)")


ReferenceOverride = Callable[[int, QuadState], Tuple[np.ndarray, np.ndarray]]


def simulate_tracking(
    initial: QuadState,
    traj: Trajectory,
    fault: FaultSpec,
    setup: SimSetup,
    reference_override: Optional[ReferenceOverride] = None,
) -> RunLog:
    """
    Полёт по траектории с базовым регулятором.

    На интервале k → k+1 регулятор получает (p_τ(k+1), v_τ(k+1)) либо
    значение reference_override(k, состояние(k)).

    Args:
        initial: Начальное состояние
        traj: Желаемая траектория (шаг Δk = traj.dt)
        fault: Отказ
        setup: Объект, регулятор и шаг интегрирования
        reference_override: Источник опорного сигнала вместо траектории

    Returns:
        RunLog длиной len(traj)
    """
    if len(traj) == 0:
        raise TrajectoryError("Пустая траектория")

    sim = TrackingSimulator(initial, setup, fault, traj.dt)
    log = RunLog(traj.dt)
    log.append(initial, traj.pos[0], traj.vel[0], traj.pos[0], traj.vel[0])

    for k in range(len(traj) - 1):
        if reference_override is not None:
            ref_pos, ref_vel = reference_override(k, sim.state)
        else:
            ref_pos, ref_vel = traj.pos[k + 1], traj.vel[k + 1]
        state = sim.advance(ref_pos, ref_vel)
        log.append(state, ref_pos, ref_vel, traj.pos[k + 1], traj.vel[k + 1])

    logger.debug(f"Полёт «{fault.name}»: {len(log)} шагов, средняя ошибка {log.average_deviation():.4f} м")
    return log
