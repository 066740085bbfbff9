"""
Генерация траекторий минимального рывка между путевыми точками.

Каждая ось — полином пятой степени, полностью заданный положением,
скоростью и ускорением на концах отрезка. Траектория дискретизируется
с шагом Δk и хранится как массивы положений, скоростей и ускорений.
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

from .config import RecoveryError

logger = logging.getLogger(__name__)

# Допуск при проверке кратности длительности шагу дискретизации
_GRID_TOL = 1e-9


class TrajectoryError(RecoveryError, ValueError):
    """Некорректные параметры траектории."""

    code = "invalid trajectory"


@dataclass(frozen=True)
class Trajectory:
    """Желаемая траектория: положения, скорости и ускорения с шагом dt."""

    dt: float
    pos: np.ndarray  # (N, 3), м
    vel: np.ndarray  # (N, 3), м/с
    acc: np.ndarray  # (N, 3), м/с²

    def __len__(self):
        return int(self.pos.shape[0])

    @property
    def duration(self) -> float:
        """Длительность (len - 1)·dt."""
        return max(len(self) - 1, 0) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def samples(self) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Отсчёты (pos, vel, acc)."""
        return [(self.pos[k], self.vel[k], self.acc[k]) for k in range(len(self))]

    @property
    def max_speed(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.vel, axis=1)))

    @classmethod
    def empty(cls, dt: float = 0.02) -> "Trajectory":
        z = np.zeros((0, 3))
        return cls(dt=dt, pos=z, vel=z.copy(), acc=z.copy())

    def concat(self, other: "Trajectory") -> "Trajectory":
        """
        Склейка с продолжением: первый отсчёт other совпадает с последним отсчётом self.
        """
        if len(self) == 0:
            return other
        return Trajectory(
            dt=self.dt,
            pos=np.vstack([self.pos, other.pos[1:]]),
            vel=np.vstack([self.vel, other.vel[1:]]),
            acc=np.vstack([self.acc, other.acc[1:]]),
        )

    def to_csv(self, path):
        """
        Экспорт в CSV со столбцами желаемой траектории журнала полёта.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(["k", "t", "des_x", "des_y", "des_z", "des_vx", "des_vy", "des_vz"])
            for k in range(len(self)):
                writer.writerow([k, repr(k * self.dt)]
                                + [repr(float(v)) for v in self.pos[k]]
                                + [repr(float(v)) for v in self.vel[k]])


@dataclass(frozen=True)
class Waypoint:
    """Путевая точка: положение и желаемая скорость прохождения (модуль)."""

    position: Tuple[float, float, float]
    speed: float = 0.0

    @classmethod
    def from_dict(cls, data) -> "Waypoint":
        return cls(position=tuple(float(v) for v in data["position"]),
                   speed=float(data.get("speed", 0.0)))


def quintic_coefficients(p0, v0, a0, p1, v1, a1, T: float) -> np.ndarray:
    """
    Коэффициенты полинома минимального рывка для каждой оси.

    Returns:
        Массив (3, 6): коэффициенты c0..c5 при t^0..t^5
    """
    p0, v0, a0, p1, v1, a1 = (np.asarray(x, dtype=float) for x in (p0, v0, a0, p1, v1, a1))
    dist = p1 - p0
    c0 = p0
    c1 = v0
    c2 = a0 / 2.0
    c3 = (10.0 * dist - (6.0 * v0 + 4.0 * v1) * T - (3.0 * a0 - a1) * T ** 2 / 2.0) / T ** 3
    c4 = (-15.0 * dist + (8.0 * v0 + 7.0 * v1) * T + (3.0 * a0 - 2.0 * a1) * T ** 2 / 2.0) / T ** 4
    c5 = (6.0 * dist - 3.0 * (v0 + v1) * T + (a1 - a0) * T ** 2 / 2.0) / T ** 5
    return np.stack([c0, c1, c2, c3, c4, c5], axis=1)


def min_jerk_segment(p0, v0, a0, p1, v1, a1, T: float, dt: float) -> Trajectory:
    """
    Отрезок минимального рывка с полными граничными условиями.

    Отсчёты берутся в моменты k·dt, k = 0..T/dt; T должна быть кратна dt,
    иначе отсчёт t = T (точка p1) потерялся бы.

    Args:
        p0, v0, a0: Положение, скорость, ускорение в начале
        p1, v1, a1: То же в конце
        T: Длительность, с
        dt: Шаг дискретизации, с

    Returns:
        Trajectory
    """
    if not (T > 0) or not (dt > 0):
        raise TrajectoryError(f"Длительность и шаг должны быть положительными: T={T}, dt={dt}")
    if dt > T:
        raise TrajectoryError(f"Шаг больше длительности: dt={dt} > T={T}")
    if not _is_multiple(T, dt):
        raise TrajectoryError(f"Длительность T={T} не кратна шагу dt={dt}")

    coeffs = quintic_coefficients(p0, v0, a0, p1, v1, a1, T)
    n = int(round(T / dt)) + 1
    t = np.arange(n) * dt

    d1 = np.array([P.polyder(c) for c in coeffs])
    d2 = np.array([P.polyder(c, 2) for c in coeffs])
    pos = np.stack([P.polyval(t, c) for c in coeffs], axis=1)
    vel = np.stack([P.polyval(t, c) for c in d1], axis=1)
    acc = np.stack([P.polyval(t, c) for c in d2], axis=1)
    return Trajectory(dt=dt, pos=pos, vel=vel, acc=acc)


def _is_multiple(T: float, dt: float) -> bool:
    n = round(T / dt)
    return n >= 1 and abs(n * dt - T) <= _GRID_TOL * max(1.0, T)


def _snap_duration(T: float, dt: float) -> float:
    """Длительность отрезка, кратная dt (округление вверх)."""
    if _is_multiple(T, dt):
        return T
    return max(1, math.ceil(T / dt)) * dt


def _waypoint_velocities(points: np.ndarray, speeds: Sequence[float]) -> np.ndarray:
    """Граничные скорости: модуль из подсказки, направление — по соседним точкам."""
    n = len(points)
    vel = np.zeros((n, 3))
    for i in range(n):
        if speeds[i] == 0.0:
            continue
        if i == 0:
            direction = points[1] - points[0]
        elif i == n - 1:
            direction = points[-1] - points[-2]
        else:
            direction = points[i + 1] - points[i - 1]
        norm = np.linalg.norm(direction)
        if norm > 0:
            vel[i] = direction / norm * speeds[i]
    return vel


def multi_waypoint(
    waypoints: Sequence[Waypoint],
    seg_T: Optional[Sequence[float]] = None,
    dt: float = 0.02,
    avg_speed: Optional[float] = None,
) -> Trajectory:
    """
    Траектория через несколько путевых точек из отрезков минимального рывка.

    На стыках скорость общая, ускорение нулевое — траектория класса C².
    Если seg_T не задан, длительность отрезка T = длина / avg_speed.
    Длительности округляются вверх до кратных dt.

    Args:
        waypoints: Путевые точки (не менее двух)
        seg_T: Длительности отрезков, с
        dt: Шаг дискретизации Δk, с
        avg_speed: Средняя скорость, м/с (если seg_T не задан)
    """
    if len(waypoints) < 2:
        raise TrajectoryError(f"Нужно не менее двух путевых точек, получено {len(waypoints)}")

    points = np.array([wp.position for wp in waypoints], dtype=float)
    n_seg = len(points) - 1

    if seg_T is None:
        if avg_speed is None or not avg_speed > 0:
            raise TrajectoryError("Не заданы ни длительности отрезков, ни средняя скорость")
        seg_T = [float(np.linalg.norm(points[i + 1] - points[i])) / avg_speed for i in range(n_seg)]
    if len(seg_T) != n_seg:
        raise TrajectoryError(f"Число длительностей ({len(seg_T)}) не совпадает с числом отрезков ({n_seg})")

    vel = _waypoint_velocities(points, [wp.speed for wp in waypoints])
    zero = np.zeros(3)

    traj = Trajectory.empty(dt)
    for i in range(n_seg):
        T = _snap_duration(float(seg_T[i]), dt)
        segment = min_jerk_segment(points[i], vel[i], zero, points[i + 1], vel[i + 1], zero, T, dt)
        traj = traj.concat(segment)

    logger.debug(f"Траектория: {n_seg} отрезков, {len(traj)} отсчётов, {traj.duration:.2f} с")
    return traj


def closest_point_on_traj(traj: Trajectory, p) -> Tuple[int, np.ndarray]:
    """
    Ближайший к p отсчёт траектории (при равенстве — с меньшим индексом).

    Returns:
        (индекс, положение)
    """
    d2 = np.sum((traj.pos - np.asarray(p, dtype=float)) ** 2, axis=1)
    index = int(np.argmin(d2))
    return index, traj.pos[index]
