"""
Модуль метрик оценки: отчёт о полёте без адаптации и с адаптацией.

Отчёт проверяется по JSON-схеме перед записью.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import write_json_atomic

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "metrics_report.schema.json"


def quartile_means(series) -> Dict[str, float]:
    """Средние по первой и последней четверти ряда."""
    series = np.asarray(series, dtype=float)
    n = series.size
    if n == 0:
        return {"first_quartile": 0.0, "last_quartile": 0.0}
    q = max(1, n // 4)
    return {"first_quartile": float(np.mean(series[:q])), "last_quartile": float(np.mean(series[-q:]))}


@dataclass
class MetricsReport:
    """Сводные метрики сценария."""

    scenario: str
    average_deviation_baseline: float
    average_deviation_adapted: float
    average_deviation_baseline_all: float
    average_deviation_adapted_all: float
    max_deviation_baseline: float
    max_deviation_adapted: float
    path_deviation_baseline: float
    path_deviation_adapted: float
    relearn_count: int
    warmup_steps: int
    window: Dict[str, int]
    convergence: Dict[str, object]
    series: Dict[str, str]
    config_hash: str
    seed: int
    nominal_average_deviation: Optional[float] = None
    relearn_steps: List[int] = field(default_factory=list)

    @property
    def improvement(self) -> float:
        """Отношение средних отклонений с адаптацией и без неё."""
        if self.average_deviation_baseline == 0:
            return 1.0
        return self.average_deviation_adapted / self.average_deviation_baseline

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path, schema_path=SCHEMA_PATH):
        """Проверка по схеме и атомарная запись."""
        data = self.to_dict()
        validate_report(data, schema_path)
        write_json_atomic(path, data)
        logger.info(f"Отчёт сохранён: {path}")


def compute_report(
    scenario: str,
    baseline_run,
    adapted_result,
    traj,
    series: Dict[str, str],
    config_hash: str,
    seed: int,
    nominal_run=None,
) -> MetricsReport:
    """
    Метрики по двум плечам на одинаковом окне шагов.

    Основное окно — после разогрева (K+1..N−1), дополнительное — все шаги.

    Args:
        scenario: Имя сценария
        baseline_run: RunLog без адаптации
        adapted_result: AdaptResult
        traj: Желаемая траектория
        series: Имена CSV-файлов рядов
        config_hash: Хеш конфигурации
        seed: Зерно
        nominal_run: RunLog номинального полёта (необязательно)
    """
    adapted_run = adapted_result.run
    start = adapted_result.warmup_steps + 1
    n = len(baseline_run)

    adapted_window = adapted_run.deviation[start:]
    first_last = quartile_means(adapted_window)
    convergence = {
        **first_last,
        "holds": bool(first_last["last_quartile"] <= first_last["first_quartile"]),
    }

    return MetricsReport(
        scenario=scenario,
        average_deviation_baseline=baseline_run.average_deviation(start),
        average_deviation_adapted=adapted_run.average_deviation(start),
        average_deviation_baseline_all=baseline_run.average_deviation(0),
        average_deviation_adapted_all=adapted_run.average_deviation(0),
        max_deviation_baseline=baseline_run.max_deviation(start),
        max_deviation_adapted=adapted_run.max_deviation(start),
        path_deviation_baseline=float(np.mean(baseline_run.path_deviation(traj)[start:])) if n > start else 0.0,
        path_deviation_adapted=float(np.mean(adapted_run.path_deviation(traj)[start:])) if n > start else 0.0,
        relearn_count=int(adapted_result.trace.relearn_count),
        warmup_steps=int(adapted_result.warmup_steps),
        window={"start": int(start), "end": int(n - 1)},
        convergence=convergence,
        series=dict(series),
        config_hash=config_hash,
        seed=int(seed),
        nominal_average_deviation=nominal_run.average_deviation(start) if nominal_run is not None else None,
        relearn_steps=list(adapted_result.trace.relearn_steps),
    )


def load_schema(schema_path=SCHEMA_PATH) -> dict:
    with open(schema_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def validate_report(data: dict, schema_path=SCHEMA_PATH):
    """
    Проверка отчёта по схеме.

    Raises:
        jsonschema.ValidationError: отчёт не соответствует схеме
    """
    import jsonschema
    jsonschema.validate(instance=data, schema=load_schema(schema_path))


def format_centimeters(meters: Optional[float]) -> str:
    """
    Форматирование отклонения для консоли.

    Args:
        meters: Значение в метрах

    Returns:
        Строка вида "2.24 см" или "—"
    """
    if meters is None:
        return "—"
    return f"{meters * 100:.2f} см"


def format_table(rows: List[Dict], columns: List[str]) -> str:
    """Простая текстовая таблица с выравниванием по столбцам."""
    cells = [[str(row.get(c, "")) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)
