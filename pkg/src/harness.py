"""
Конвейеры экспериментов: генерация корпуса, мета-обучение, оценка сценария, набор сценариев.

Каждый конвейер воспроизводим по конфигурации и зерну, а его выходные файлы
содержат хеш конфигурации.
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .checkpoint_store import CheckpointStore, load_checkpoint
from .config import Config, RecoveryError, config_hash, read_json
from .metalearn import generate_training_corpus, load_corpus, meta_train, save_corpus
from .metrics import MetricsReport, compute_report, format_centimeters, format_table
from .quadrotor_sim import DivergenceError, FaultSpec, QuadState, simulate_tracking
from .runtime_adapt import AdaptConfig, run_adaptive_tracking
from .trajgen import Trajectory, Waypoint, multi_waypoint

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "meta_checkpoint"
TRACE_FILE = "meta_trace.csv"
SUMMARY_FILE = "summary.csv"
SUMMARY_COLUMNS = [
    "scenario", "fault", "status",
    "average_deviation_baseline", "average_deviation_adapted", "ratio",
    "relearn_count", "converged",
]


class ScenarioError(RecoveryError, ValueError):
    """Некорректный сценарий, набор сценариев или конфигурация корпуса."""

    code = "invalid scenario"


@dataclass
class Scenario:
    """Сценарий оценки: отказ, траектория, параметры адаптации, зерно."""

    name: str
    fault: FaultSpec
    trajectory: dict
    adaptation: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: Optional[str] = None
    obstacles: List[dict] = field(default_factory=list)
    compare_nominal: bool = False
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            name = str(data["name"])
            trajectory = data["trajectory"]
        except (KeyError, TypeError) as e:
            raise ScenarioError(f"В сценарии нет обязательного поля: {e}") from e
        if not name:
            raise ScenarioError("Пустое имя сценария")
        fault_data = dict(data.get("fault") or {})
        fault_data.setdefault("name", name)
        return cls(
            name=name,
            fault=FaultSpec.from_dict(fault_data),
            trajectory=trajectory,
            adaptation=dict(data.get("adaptation") or {}),
            seed=int(data.get("seed", 0)),
            output_dir=data.get("output_dir"),
            obstacles=list(data.get("obstacles") or []),
            compare_nominal=bool(data.get("compare_nominal", False)),
            raw=data,
        )


def load_scenario(path) -> Scenario:
    """Чтение сценария из JSON."""
    return Scenario.from_dict(read_json(path, "Сценарий"))


def build_trajectory(spec: dict, dt: float, avg_speed: Optional[float] = None) -> Trajectory:
    """
    Траектория по описанию из JSON.

    Описание: {"waypoints": [{"position": [...], "speed": v}, ...],
    "avg_speed": v̄} или {"segment_durations": [...]}.
    """
    try:
        waypoints = [Waypoint.from_dict(wp) for wp in spec["waypoints"]]
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"Некорректное описание траектории: {e}") from e
    seg_T = spec.get("segment_durations")
    speed = avg_speed if avg_speed is not None else spec.get("avg_speed")
    return multi_waypoint(waypoints, seg_T=seg_T, dt=float(spec.get("dt", dt)), avg_speed=speed)


def _load_settings(settings) -> Config:
    if isinstance(settings, Config):
        return settings
    return Config(settings or Path(__file__).resolve().parent.parent / "config.json")


def corpus_faults(cfg: dict) -> List[FaultSpec]:
    """Отказы конфигурации корпуса; номинальный режим добавляется первым, если не отключён."""
    faults = [FaultSpec.from_dict(f) for f in cfg.get("faults", [])]
    if cfg.get("include_nominal", True) and not any(f.is_nominal for f in faults):
        faults.insert(0, FaultSpec.nominal())
    if not faults:
        raise ScenarioError("Конфигурация корпуса не содержит отказов")
    return faults


def corpus_trajectories(cfg: dict, dt: float) -> Tuple[List[Trajectory], List[dict]]:
    """
    Траектории конфигурации корпуса: каждая спецификация на каждой средней скорости.

    Returns:
        (траектории, описание происхождения каждой)
    """
    speeds = cfg.get("avg_speeds") or [None]
    trajectories, provenance = [], []
    for i, spec in enumerate(cfg.get("trajectories", [])):
        for speed in speeds:
            traj = build_trajectory(spec, dt, speed)
            provenance.append({"index": len(trajectories), "spec": i, "avg_speed": speed,
                               "samples": len(traj), "waypoints": spec["waypoints"]})
            trajectories.append(traj)
    if not trajectories:
        raise ScenarioError("Конфигурация корпуса не содержит траекторий")
    return trajectories, provenance


def cli_generate_corpus(config_path, out_dir, seed: Optional[int] = None, settings=None) -> Path:
    """
    Генерация обучающего корпуса по конфигурации отказов и траекторий.

    Конфигурация: {"faults": [...], "include_nominal": true,
    "trajectories": [{"waypoints": [...]}, ...], "avg_speeds": [...]}.

    Returns:
        Директория корпуса
    """
    settings = _load_settings(settings)
    settings.override_seed(seed)
    cfg = read_json(config_path, "Конфигурация корпуса")

    faults = corpus_faults(cfg)
    trajectories, provenance = corpus_trajectories(cfg, settings.sim_step)

    logger.info(f"Генерация корпуса: {len(faults)} отказов × {len(trajectories)} траекторий")
    corpus = generate_training_corpus(faults, trajectories, settings.sim_setup, provenance)
    digest = config_hash({"corpus": cfg, "settings": settings.config})
    save_corpus(corpus, out_dir, digest, extra={"name": cfg.get("name", Path(config_path).stem)})
    return Path(out_dir)


def _apply_overrides(settings: Config, overrides: Optional[dict]):
    for section, values in (overrides or {}).items():
        if isinstance(values, dict):
            for key, value in values.items():
                settings.set(f"{section}.{key}", value)
        else:
            settings.set(section, values)


def cli_meta_train(corpus_dir, config_path=None, out_dir=".", seed: Optional[int] = None,
                   settings=None) -> Tuple[Path, Path]:
    """
    Мета-обучение по сохранённому корпусу.

    Конфигурация (необязательная) переопределяет разделы настроек,
    например {"meta": {"meta_iterations": 2000}, "network": {...}}.

    Returns:
        (путь к контрольной точке, путь к CSV следа обучения)
    """
    settings = _load_settings(settings)
    if config_path:
        _apply_overrides(settings, read_json(config_path, "Конфигурация мета-обучения"))
    settings.override_seed(seed)

    corpus, manifest = load_corpus(corpus_dir)
    cfg = settings.meta_config
    result = meta_train(corpus, cfg, settings.layer_sizes, init_seed=settings.init_seed)

    out_dir = Path(out_dir)
    digest = config_hash({"corpus": manifest["data"], "meta": cfg.to_dict(),
                          "network": settings.get("network")})
    checkpoint = CheckpointStore(out_dir).save(CHECKPOINT_NAME, result.params, settings.init_seed, digest,
                                               extra={"meta_iterations": cfg.meta_iterations})

    trace_path = out_dir / TRACE_FILE
    with open(trace_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "query_loss"])
        for i, value in enumerate(result.trace):
            writer.writerow([i, repr(float(value))])

    from .plotting import plot_trace
    plot_trace(trace_path, out_dir / "meta_trace.svg")
    logger.info(f"Мета-обучение завершено: {checkpoint}")
    return checkpoint, trace_path


def _run_arm(arm: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DivergenceError as e:
        e.details["arm"] = arm
        logger.error(f"Расходимость в плече «{arm}» на шаге {e.details.get('step')}")
        raise


def cli_evaluate(scenario_path, checkpoint, out_dir, seed: Optional[int] = None,
                 settings=None) -> MetricsReport:
    """
    Оценка сценария: полёт без адаптации и с адаптацией, отчёт, CSV и SVG.

    Args:
        scenario_path: JSON сценария (или готовый Scenario)
        checkpoint: Путь к контрольной точке
        out_dir: Директория результатов
        seed: Зерно (переопределяет зерно сценария)
        settings: Config или путь к настройкам

    Returns:
        MetricsReport
    """
    settings = _load_settings(settings)
    scenario = scenario_path if isinstance(scenario_path, Scenario) else load_scenario(scenario_path)
    run_seed = scenario.seed if seed is None else int(seed)

    adapt_dict = dict(settings.get("adaptation", {}))
    adapt_dict.update(scenario.adaptation)
    adapt_dict["seed"] = run_seed
    try:
        adapt_cfg = AdaptConfig.from_dict(adapt_dict)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"Некорректные параметры адаптации в «{scenario.name}»: {e}") from e

    traj = build_trajectory(scenario.trajectory, settings.sim_step)
    params, header = load_checkpoint(checkpoint, settings.layer_sizes)
    setup = settings.sim_setup
    initial = QuadState.at_rest(traj.pos[0])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Оценка «{scenario.name}»: отказ {scenario.fault.rotor_effectiveness}, "
                f"смещение крена {scenario.fault.roll_bias}, {len(traj)} шагов")

    baseline = _run_arm("baseline", simulate_tracking, initial, traj, scenario.fault, setup)
    adapted = _run_arm("adapted", run_adaptive_tracking, params, traj, scenario.fault, adapt_cfg, setup, initial)
    nominal = None
    if scenario.compare_nominal:
        nominal = _run_arm("nominal", simulate_tracking, initial, traj, FaultSpec.nominal(), setup)

    series = {"baseline": "baseline_runlog.csv", "adapted": "adapted_runlog.csv",
              "adapt_trace": "adapt_trace.csv", "desired": "desired_trajectory.csv"}
    baseline.to_csv(out_dir / series["baseline"])
    adapted.run.to_csv(out_dir / series["adapted"])
    adapted.trace.to_csv(out_dir / series["adapt_trace"])
    traj.to_csv(out_dir / series["desired"])
    if nominal is not None:
        series["nominal"] = "nominal_runlog.csv"
        nominal.to_csv(out_dir / series["nominal"])

    digest = config_hash({"scenario": scenario.raw, "adaptation": adapt_cfg.to_dict(),
                          "settings": settings.config, "checkpoint": header})
    report = compute_report(scenario.name, baseline, adapted, traj, series, digest, run_seed, nominal)
    report.save(out_dir / "report.json")

    from .plotting import plot_deviation, plot_paths
    plot_paths(out_dir / series["baseline"], out_dir / series["adapted"], out_dir / "paths.svg",
               scenario.obstacles, scenario.name)
    plot_deviation(out_dir / series["baseline"], out_dir / series["adapted"], out_dir / "deviation.svg",
                   adapt_cfg.K, scenario.name)

    logger.info(f"«{scenario.name}»: без адаптации {format_centimeters(report.average_deviation_baseline)}, "
                f"с адаптацией {format_centimeters(report.average_deviation_adapted)}, "
                f"переобучений {report.relearn_count}")
    return report


def _suite_row(scenario: Scenario, report: Optional[MetricsReport], error: Optional[RecoveryError]) -> Dict:
    row = {"scenario": scenario.name, "fault": scenario.fault.name}
    if report is None:
        details = error.details if error is not None else {}
        row["status"] = f"{error.code if error else 'error'}:{details.get('arm', '')}@{details.get('step', '')}"
        return row
    row.update({
        "status": "ok",
        "average_deviation_baseline": f"{report.average_deviation_baseline:.6f}",
        "average_deviation_adapted": f"{report.average_deviation_adapted:.6f}",
        "ratio": f"{report.improvement:.4f}",
        "relearn_count": report.relearn_count,
        "converged": int(report.convergence["holds"]),
    })
    return row


def cli_suite(suite_path, out_dir, seed: Optional[int] = None, workers: int = 1,
              settings=None, checkpoint=None) -> List[Dict]:
    """
    Оценка набора сценариев и сводная таблица (CSV и консоль).

    Набор: {"checkpoint": "...", "scenarios": ["a.json", ...]}; пути — относительно файла набора.
    Сценарии выполняются параллельно, каждый пишет в свою поддиректорию.

    Returns:
        Строки сводной таблицы в порядке набора
    """
    settings = _load_settings(settings)
    suite_path = Path(suite_path)
    suite = read_json(suite_path, "Набор сценариев")
    base = suite_path.parent

    entries = suite.get("scenarios") or []
    if not entries:
        raise ScenarioError(f"Пустой набор сценариев: {suite_path}")

    scenarios = []
    for entry in entries:
        scenarios.append(Scenario.from_dict(entry) if isinstance(entry, dict) else load_scenario(base / entry))
    names = [s.name for s in scenarios]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise ScenarioError(f"Повторяющиеся имена сценариев: {duplicates}")

    checkpoint = checkpoint or suite.get("checkpoint")
    if not checkpoint:
        raise ScenarioError("Не указана контрольная точка набора")
    checkpoint = Path(checkpoint)
    if not checkpoint.is_absolute() and not checkpoint.exists():
        checkpoint = base / checkpoint

    out_dir = Path(out_dir)

    def evaluate(scenario: Scenario):
        try:
            return cli_evaluate(scenario, checkpoint, out_dir / (scenario.output_dir or scenario.name),
                                seed, settings), None
        except DivergenceError as e:
            return None, e

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        results = list(pool.map(evaluate, scenarios))

    rows = [_suite_row(s, report, error) for s, (report, error) in zip(scenarios, results)]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / SUMMARY_FILE, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    print(format_table(rows, SUMMARY_COLUMNS))
    logger.info(f"Набор «{suite.get('name', suite_path.stem)}»: {len(rows)} сценариев, сводка {out_dir / SUMMARY_FILE}")
    return rows
