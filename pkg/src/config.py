"""
Модуль управления конфигурацией симулятора и конвейеров обучения.
"""
import hashlib
import json
import logging
import tempfile
from pathlib import Path

logger = logging.getLogger(__name__)


class RecoveryError(Exception):
    """Базовая ошибка предметной области с машиночитаемым кодом."""

    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        """Представление ошибки для JSON-вывода CLI."""
        payload = {"error": self.code, "message": str(self)}
        payload.update({k: v for k, v in self.details.items() if v is not None})
        return payload


class ConfigError(RecoveryError, ValueError):
    """Некорректный файл настроек или сценария."""

    code = "invalid config"


def config_hash(obj) -> str:
    """SHA-256 канонического JSON (сортированные ключи, компактные разделители)."""
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def read_json(path, what="файл"):
    """
    Чтение JSON-документа с понятной ошибкой.

    Args:
        path: Путь к файлу
        what: Описание файла для сообщения об ошибке

    Returns:
        Разобранный JSON
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} не найден: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Ошибка JSON в {path}: {e}", path=str(path)) from e


def write_json_atomic(path, data):
    """
    Атомарная запись JSON: временный файл в той же директории, затем replace.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = None
    try:
        with tempfile.NamedTemporaryFile(
            mode='w',
            suffix='.json.tmp',
            dir=str(path.parent),
            delete=False,
            encoding='utf-8'
        ) as tmp:
            json.dump(data, tmp, ensure_ascii=False, indent=2, sort_keys=True)
            tmp.write("\n")
            tmp_path = Path(tmp.name)
        tmp_path.replace(path)
    except Exception as e:
        logger.error(f"Ошибка при сохранении {path}: {e}")
        if tmp_path and tmp_path.exists():
            try:
                tmp_path.unlink()
            except OSError:
                pass
        raise


class Config:
    """Настройки: параметры аппарата, замороженные коэффициенты регулятора, обучение."""

    def __init__(self, config_path="config.json"):
        """
        Инициализация конфигурации.

        Args:
            config_path: Путь к файлу настроек (может быть относительным или абсолютным)
        """
        self.config_path = Path(config_path)
        # Относительный путь не найден: пробуем текущую рабочую директорию
        if not self.config_path.is_absolute() and not self.config_path.exists():
            current_dir = Path.cwd() / self.config_path
            if current_dir.exists():
                self.config_path = current_dir

        self.config = self._load_config()

    def _load_config(self):
        """Загрузка настроек с дополнением значениями по умолчанию."""
        defaults = self._get_default_config()

        if not self.config_path.exists():
            logger.info(f"Файл настроек не найден: {self.config_path}, использую значения по умолчанию")
            return defaults

        with open(self.config_path, 'r', encoding='utf-8') as f:
            content = f.read().strip()

        if not content:
            logger.warning("Файл настроек пуст, использую значения по умолчанию")
            return defaults

        try:
            loaded = json.loads(content)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Ошибка JSON в настройках {self.config_path}: {e}",
                              path=str(self.config_path)) from e

        if not isinstance(loaded, dict):
            raise ConfigError(f"Настройки должны быть JSON-объектом: {self.config_path}",
                              path=str(self.config_path))

        merged = self._deep_merge(defaults, loaded)
        if merged != loaded:
            logger.debug("Настройки дополнены недостающими полями")

        logger.info(f"Настройки загружены из {self.config_path}")
        return merged

    @staticmethod
    def _deep_merge(base: dict, override: dict) -> dict:
        """
        Глубокое слияние словарей.
        base - словарь по умолчанию, override - загруженные значения.
        """
        result = dict(base)
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = Config._deep_merge(result[key], value)
            else:
                result[key] = value
        return result

    @staticmethod
    def _get_default_config():
        """Настройки по умолчанию."""
        return {
            "plant": {
                "mass": 0.5,
                "arm_length": 0.17,
                "inertia_diag": [4.9e-3, 4.9e-3, 8.8e-3],
                "thrust_coeff": 1.0,
                "drag_torque_coeff": 0.016,
                "gravity": 9.81,
                "max_rotor_thrust": 4.0
            },
            "controller": {
                "gains_version": "2026.1",
                "pos_kp": [25.0, 25.0, 25.0],
                "pos_kd": [10.0, 10.0, 10.0],
                "pos_ki": [0.1, 0.1, 0.1],
                "att_kp": [300.0, 300.0, 100.0],
                "att_kd": [30.0, 30.0, 20.0],
                "att_ki": [0.5, 0.5, 0.5],
                "max_tilt": 0.6,
                "pos_integrator_limit": 1.0,
                "att_integrator_limit": 0.5
            },
            "simulation": {
                "dt": 0.001,   # шаг RK4, с
                "step": 0.02   # шаг опорной траектории Δk, с
            },
            "network": {
                "layer_sizes": [6, 40, 40, 3],
                "init_seed": 0
            },
            "meta": {
                "alpha": 0.01,
                "beta": 0.001,
                "inner_steps": 1,
                "meta_iterations": 10000,
                "support_size": 20,
                "query_size": 20,
                "seed": 0,
                "optimizer": "sgd",  # sgd | adam
                "first_order": False,
                "log_every": 500
            },
            "adaptation": {
                "K": 20,
                "delta": 0.02,
                "gains": {"kp": 0.8, "kd": 0.3, "ki": 0.05},
                "alpha": 0.01,
                "inner_steps": 5,
                "history_cap": 500,
                "integrator_limit": 2.0,
                "axis_mask": [1.0, 1.0, 1.0],
                "readapt_from": "meta",  # meta | current
                "relearn_acceptance": "improves",  # improves | always
                "reference_velocity": "feedforward",  # feedforward | finite_difference
                "seed": 0
            },
            "log_level": "INFO"
        }

    def save(self, path=None):
        """
        Атомарное сохранение текущих настроек.

        Args:
            path: Куда сохранить (по умолчанию исходный файл)
        """
        target = Path(path) if path else self.config_path
        write_json_atomic(target, self.config)
        logger.info(f"Настройки сохранены в {target}")

    def get(self, key, default=None):
        """
        Получение значения по ключу с точечной нотацией, например "adaptation.K".
        """
        value = self.config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key, value):
        """
        Установка значения в памяти (файл не перезаписывается, см. save).
        """
        keys = key.split('.')
        config = self.config
        for k in keys[:-1]:
            config = config.setdefault(k, {})
        config[keys[-1]] = value

    def override_seed(self, seed):
        """Подмена всех зёрен значением из --seed."""
        if seed is None:
            return
        for key in ("network.init_seed", "meta.seed", "adaptation.seed"):
            self.set(key, int(seed))
        logger.info(f"Все зёрна переопределены: seed={seed}")

    @property
    def hash(self) -> str:
        """Хеш текущих настроек."""
        return config_hash(self.config)

    @property
    def quad_params(self):
        """Параметры аппарата (QuadParams)."""
        from .quadrotor_sim import QuadParams
        plant = self.get("plant")
        try:
            return QuadParams(
                mass=float(plant["mass"]),
                arm_length=float(plant["arm_length"]),
                inertia_diag=tuple(float(v) for v in plant["inertia_diag"]),
                thrust_coeff=float(plant["thrust_coeff"]),
                drag_torque_coeff=float(plant["drag_torque_coeff"]),
                gravity=float(plant["gravity"]),
                max_rotor_thrust=float(plant["max_rotor_thrust"]),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"Некорректный раздел plant: {e}") from e

    @property
    def controller_gains(self):
        """Замороженные коэффициенты базового регулятора (ControllerGains)."""
        from .quadrotor_sim import ControllerGains
        c = self.get("controller")
        try:
            return ControllerGains(
                pos_kp=tuple(c["pos_kp"]), pos_kd=tuple(c["pos_kd"]), pos_ki=tuple(c["pos_ki"]),
                att_kp=tuple(c["att_kp"]), att_kd=tuple(c["att_kd"]), att_ki=tuple(c["att_ki"]),
                max_tilt=float(c["max_tilt"]),
                pos_integrator_limit=float(c["pos_integrator_limit"]),
                att_integrator_limit=float(c["att_integrator_limit"]),
                version=str(c.get("gains_version", "")),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"Некорректный раздел controller: {e}") from e

    @property
    def sim_dt(self) -> float:
        """Шаг интегрирования, с."""
        return float(self.get("simulation.dt", 0.001))

    @property
    def sim_step(self) -> float:
        """Шаг опорной траектории Δk, с."""
        return float(self.get("simulation.step", 0.02))

    @property
    def sim_setup(self):
        """Связка параметров, регулятора и шага интегрирования (SimSetup)."""
        from .quadrotor_sim import SimSetup
        return SimSetup(params=self.quad_params, gains=self.controller_gains, dt=self.sim_dt)

    @property
    def layer_sizes(self):
        """Топология сети."""
        return tuple(int(v) for v in self.get("network.layer_sizes", [6, 40, 40, 3]))

    @property
    def init_seed(self) -> int:
        """Зерно инициализации весов."""
        return int(self.get("network.init_seed", 0))

    @property
    def meta_config(self):
        """Гиперпараметры мета-обучения (MetaConfig)."""
        from .metalearn import MetaConfig
        return MetaConfig.from_dict(self.get("meta", {}))

    @property
    def adapt_config(self):
        """Параметры адаптации во время полёта (AdaptConfig)."""
        from .runtime_adapt import AdaptConfig
        return AdaptConfig.from_dict(self.get("adaptation", {}))

    @property
    def log_level(self):
        """Уровень логирования."""
        return self.get("log_level", "INFO")
