"""
Модуль хранения контрольных точек сети.

Контрольная точка — JSON с заголовком топологии и плоским списком параметров.
Загрузка проверяет формат, версию и топологию.
"""
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

from .config import RecoveryError, write_json_atomic
from .neuralnet import ACTIVATION, MlpParams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "meta-recovery-mlp"
CHECKPOINT_VERSION = 1


class CheckpointError(RecoveryError, ValueError):
    """Контрольная точка не соответствует ожидаемой топологии или формату."""

    code = "checkpoint mismatch"


class CheckpointStore:
    """Каталог контрольных точек мета-обученных сетей."""

    def __init__(self, checkpoints_dir):
        """
        Инициализация хранилища.

        Args:
            checkpoints_dir: Директория для хранения контрольных точек
        """
        self.checkpoints_dir = Path(checkpoints_dir)
        self.checkpoints_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, name: str) -> Path:
        return self.checkpoints_dir / f"{name}.json"

    def save(self, name: str, params: MlpParams, seed: int = 0, config_hash: str = "",
             extra: Optional[Dict] = None) -> Path:
        """
        Сохранить параметры.

        Args:
            name: Имя контрольной точки (без расширения)
            params: Параметры сети
            seed: Зерно инициализации
            config_hash: Хеш конфигурации обучения
            extra: Дополнительные поля заголовка

        Returns:
            Путь к файлу
        """
        path = self.path_for(name)
        save_checkpoint(path, params, seed, config_hash, extra)
        return path


def save_checkpoint(path, params: MlpParams, seed: int = 0, config_hash: str = "",
                    extra: Optional[Dict] = None):
    """Запись контрольной точки (детерминированные байты при одинаковых параметрах)."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "activation": ACTIVATION,
        "seed": int(seed),
        "config_hash": config_hash,
    }
    if extra:
        header.update(extra)
    write_json_atomic(path, {"header": header, "params": [float(v) for v in params.flat()]})
    logger.info(f"Контрольная точка сохранена: {path}")


def _read(path) -> Dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Контрольная точка не найдена: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Повреждённая контрольная точка {path}: {e}", path=str(path)) from e
    header = document.get("header") if isinstance(document, dict) else None
    if not header or header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"Неизвестный формат контрольной точки: {path}", path=str(path))
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Неподдерживаемая версия {header.get('version')}: {path}", path=str(path))
    return document


def load_checkpoint(path, expected_layer_sizes: Optional[Sequence[int]] = None) -> Tuple[MlpParams, Dict]:
    """
    Чтение контрольной точки с проверкой топологии.

    Raises:
        CheckpointError: формат, версия, топология или число параметров не совпадают
    """
    document = _read(path)
    header = document["header"]
    layer_sizes = tuple(int(v) for v in header["layer_sizes"])
    if expected_layer_sizes is not None and layer_sizes != tuple(expected_layer_sizes):
        raise CheckpointError(
            f"Топология контрольной точки {layer_sizes} не совпадает с ожидаемой {tuple(expected_layer_sizes)}",
            path=str(path),
        )
    if header.get("activation", ACTIVATION) != ACTIVATION:
        raise CheckpointError(f"Неподдерживаемая функция активации: {header.get('activation')}", path=str(path))
    try:
        params = MlpParams.from_flat(layer_sizes, document["params"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"Некорректные параметры в {path}: {e}", path=str(path)) from e
    logger.debug(f"Контрольная точка загружена: {path} {layer_sizes}")
    return params, header
