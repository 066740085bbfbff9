"""
SVG-графики по CSV-журналам: траектории в плоскости XY и отклонение во времени.

Графики строятся только из сохранённых CSV и на метрики не влияют.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Circle

logger = logging.getLogger(__name__)

# Одинаковые id элементов SVG при повторных запусках
matplotlib.rcParams["svg.hashsalt"] = "meta-recovery"


def read_columns(path, columns: Sequence[str]) -> Dict[str, np.ndarray]:
    """Чтение выбранных столбцов CSV как массивов."""
    with open(path, 'r', encoding='utf-8') as f:
        rows = list(csv.DictReader(f))
    return {c: np.array([float(r[c]) for r in rows]) for c in columns}


def _subplots(figsize):
    # Figure без pyplot: графики строятся из потоков набора сценариев
    fig = Figure(figsize=figsize)
    return fig, fig.subplots()


def _save(fig, out_path):
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    logger.debug(f"График сохранён: {out_path}")


def plot_paths(baseline_csv, adapted_csv, out_path, obstacles: Optional[List[dict]] = None,
               title: str = ""):
    """
    Траектории в плоскости XY: желаемая, без адаптации, с адаптацией, обновлённая опорная.

    Args:
        baseline_csv: Журнал полёта без адаптации
        adapted_csv: Журнал полёта с адаптацией
        out_path: Путь к SVG
        obstacles: Статичные препятствия {"center": [x, y], "radius": r} (только для отображения)
        title: Заголовок
    """
    base = read_columns(baseline_csv, ["px", "py"])
    adapted = read_columns(adapted_csv, ["px", "py", "ref_x", "ref_y", "des_x", "des_y"])

    fig, ax = _subplots((8, 4))
    ax.plot(adapted["des_x"], adapted["des_y"], "k--", linewidth=1.2, label="Желаемая")
    ax.plot(base["px"], base["py"], color="tab:red", linewidth=1.0, label="Без адаптации")
    ax.plot(adapted["px"], adapted["py"], color="tab:blue", linewidth=1.0, label="С адаптацией")
    ax.plot(adapted["ref_x"], adapted["ref_y"], color="tab:green", linewidth=0.8, alpha=0.7,
            label="Обновлённая опорная")
    for obstacle in obstacles or []:
        cx, cy = obstacle["center"][:2]
        ax.add_patch(Circle((cx, cy), obstacle["radius"], color="gray", alpha=0.4))
    ax.set_xlabel("x, м")
    ax.set_ylabel("y, м")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    _save(fig, out_path)


def plot_deviation(baseline_csv, adapted_csv, out_path, warmup_steps: int = 0, title: str = ""):
    """
    Отклонение от желаемой траектории во времени для обоих плеч.
    """
    base = read_columns(baseline_csv, ["t", "deviation"])
    adapted = read_columns(adapted_csv, ["t", "deviation"])

    fig, ax = _subplots((8, 3))
    ax.plot(base["t"], base["deviation"] * 100, color="tab:red", label="Без адаптации")
    ax.plot(adapted["t"], adapted["deviation"] * 100, color="tab:blue", label="С адаптацией")
    if warmup_steps and len(adapted["t"]) > warmup_steps:
        ax.axvline(adapted["t"][warmup_steps], color="gray", linestyle=":", label="Конец разогрева")
    ax.set_xlabel("t, с")
    ax.set_ylabel("Отклонение, см")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    _save(fig, out_path)


def plot_trace(trace_csv, out_path, title: str = ""):
    """Потери после адаптации по итерациям мета-обучения (логарифмическая шкала)."""
    trace = read_columns(trace_csv, ["iteration", "query_loss"])

    fig, ax = _subplots((6, 3))
    ax.semilogy(trace["iteration"], trace["query_loss"], linewidth=0.6)
    ax.set_xlabel("Итерация")
    ax.set_ylabel("Потери на query")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    _save(fig, out_path)
