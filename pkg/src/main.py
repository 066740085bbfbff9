"""
Главный модуль: командная строка конвейеров восстановления траектории.

Команды: generate-corpus, meta-train, evaluate, suite.
"""
import argparse
import json
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from .config import Config, RecoveryError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = 'meta_recovery.log'


def get_base_path():
    """Базовая директория проекта (рядом лежат config.json, scenarios/, schemas/)."""
    return Path(__file__).resolve().parent.parent


def setup_logging(out_dir, level="INFO"):
    """
    Логирование в файл с ротацией и в консоль.

    Args:
        out_dir: Директория для файла журнала
        level: Уровень логирования
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # RotatingFileHandler: макс 5 МБ на файл, хранить 3 backup
    file_handler = RotatingFileHandler(
        str(out_dir / LOG_FILE),
        maxBytes=5*1024*1024,
        backupCount=3,
        encoding='utf-8'
    )
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.addHandler(file_handler)
    root.addHandler(console_handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def build_parser():
    """Разбор аргументов командной строки."""
    parser = argparse.ArgumentParser(
        prog="meta-recovery",
        description="Мета-обучение и восстановление траектории квадрокоптера при отказе винтов",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Зерно (переопределяет зёрна конфигурации)")
    common.add_argument("--out", default="out", help="Директория результатов")
    common.add_argument("--settings", default=None, help="Файл настроек (по умолчанию config.json проекта)")
    common.add_argument("--log-level", default=None, help="Уровень логирования (DEBUG, INFO, ...)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-corpus", parents=[common], help="Генерация обучающего корпуса")
    p.add_argument("--config", required=True, help="Конфигурация отказов и траекторий")

    p = sub.add_parser("meta-train", parents=[common], help="Мета-обучение по корпусу")
    p.add_argument("--corpus", required=True, help="Директория корпуса")
    p.add_argument("--config", default=None, help="Переопределения разделов meta/network")

    p = sub.add_parser("evaluate", parents=[common], help="Оценка сценария")
    p.add_argument("--config", required=True, help="Сценарий")
    p.add_argument("--checkpoint", required=True, help="Контрольная точка сети")

    p = sub.add_parser("suite", parents=[common], help="Оценка набора сценариев")
    p.add_argument("--config", required=True, help="Набор сценариев")
    p.add_argument("--checkpoint", default=None, help="Контрольная точка (вместо указанной в наборе)")
    p.add_argument("--workers", type=int, default=1, help="Число параллельных сценариев")
    return parser


def run(args) -> int:
    """Выполнение команды; код возврата 0 при успехе."""
    from . import harness

    settings = Config(args.settings or get_base_path() / 'config.json')
    setup_logging(args.out, args.log_level or settings.log_level)
    logger.info(f"Команда {args.command}, настройки {settings.config_path}, хеш {settings.hash[:12]}")

    if args.command == "generate-corpus":
        harness.cli_generate_corpus(args.config, args.out, args.seed, settings)
    elif args.command == "meta-train":
        harness.cli_meta_train(args.corpus, args.config, args.out, args.seed, settings)
    elif args.command == "evaluate":
        harness.cli_evaluate(args.config, args.checkpoint, args.out, args.seed, settings)
    elif args.command == "suite":
        harness.cli_suite(args.config, args.out, args.seed, args.workers, settings, args.checkpoint)
    return 0


def main(argv=None):
    """Точка входа."""
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except RecoveryError as e:
        logger.error(f"{e.code}: {e}")
        print(json.dumps(e.to_dict(), ensure_ascii=False), file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        logger.error(f"Файл не найден: {e}")
        print(json.dumps({"error": "not found", "message": str(e)}, ensure_ascii=False), file=sys.stderr)
        return 2
    except Exception as e:
        logger.error(f"Непредвиденная ошибка: {e}", exc_info=True)
        print(json.dumps({"error": "unexpected", "message": str(e)}, ensure_ascii=False), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
