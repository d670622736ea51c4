"""
Командная строка: phantom, train, predict, baseline, eval, mip, table

Коды выхода: 0 - успех, 1 - ошибка выполнения, 2 - ошибка использования
или конфигурации.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from ynet_core.baselines import BaselineKind
from ynet_core.exceptions import (
    BadConfig,
    ConfigMismatch,
    DimMismatch,
    OutputExists,
    YNetError,
)
from ynet_core.volume import read_volume, write_mips
from ynet_core.ynet import PositionSite

from .config import Settings, settings
from .schemas import RunConfig, load_run_config, write_effective_config
from .services import (
    DatasetService,
    EvaluationService,
    PredictionService,
    TrainingService,
)

logger = logging.getLogger("ynet_app")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

USAGE_ERRORS = (BadConfig, ConfigMismatch, DimMismatch, OutputExists, ValidationError)


# Флаг (dest) -> поле RunConfig
CONFIG_FLAGS = {
    "seed": "seed",
    "n_train": "phantom.n_train",
    "n_val": "phantom.n_val",
    "n_test": "phantom.n_test",
    "dims": "phantom.dims",
    "position_site": "model.position_site",
    "n_levels": "model.n_levels",
    "base_kernels": "model.base_kernels",
    "stride_pos": "sampling.stride_pos",
    "max_epochs": "schedule.max_epochs",
    "patience": "schedule.patience",
    "calibration_objective": "calibration_objective",
}


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    given = vars(args)
    return {key: given[dest] for dest, key in CONFIG_FLAGS.items() if dest in given}


def _require(value: Optional[Any], flag: str) -> Any:
    if value is None:
        raise BadConfig(f"Не задан {flag}")
    return value


def _threads(args: argparse.Namespace, env: Settings) -> int:
    threads = getattr(args, "threads", None)
    return env.YNET_THREADS if threads is None else threads


def cmd_phantom(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Генерация набора фантомов"""
    out = _require(args.out or config.data_dir, "--out")
    manifest = DatasetService(config).generate(out, force=args.force)
    write_effective_config(config, out)
    print(f"Записано пар: {len(manifest.pairs)} в {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Обучение модели"""
    data_dir = _require(args.data_dir or config.data_dir, "--data-dir")
    out = _require(args.out or config.out_dir, "--out")
    result = TrainingService(config, env).run(
        data_dir, out, threads=_threads(args, env), force=args.force
    )
    log = result.log
    print(
        f"Лучшая эпоха: {log.best_epoch}, потеря на валидации: {log.best_val_loss:.6f}"
    )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Предсказание по объему"""
    data_dir = args.data_dir or config.data_dir
    out = _require(args.out or config.out_dir, "--out")
    service = PredictionService(config, env, threads=_threads(args, env))
    result = service.run(
        args.checkpoint, args.volume, out, threshold=args.threshold, data_dir=data_dir
    )
    print(f"Порог: {result.threshold:.2f}")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Сегментация эталонным методом"""
    service = EvaluationService(config, env)
    service.run_baseline_file(
        BaselineKind(args.which),
        args.volume,
        args.out,
        frangi_threshold=args.threshold,
        data_dir=args.data_dir or config.data_dir,
    )
    print(f"Сегментация {args.which} сохранена в {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Метрики сегментации относительно разметки"""
    service = EvaluationService(config, env)
    report = service.evaluate_files(args.pred, args.truth)
    name = args.name or Path(args.pred).name
    if args.out:
        service.write_row(name, report, args.out)
    print(
        f"{name}: accuracy={report.accuracy:.5f} sensitivity={report.sensitivity:.5f} "
        f"specificity={report.specificity:.5f} precision={report.precision:.5f} "
        f"DSC={report.dsc:.5f}"
    )
    return EXIT_OK


def cmd_mip(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Три проекции максимальной интенсивности"""
    stem = args.out_stem or str(Path(args.volume).with_suffix(""))
    for path in write_mips(read_volume(args.volume), stem):
        print(path)
    return EXIT_OK


def cmd_table(args: argparse.Namespace, config: RunConfig, env: Settings) -> int:
    """Сводная таблица Y-net и эталонных методов"""
    data_dir = _require(args.data_dir or config.data_dir, "--data-dir")
    out = _require(args.out or config.out_dir, "--out")
    service = EvaluationService(config, env, threads=_threads(args, env))
    frame = service.table(
        args.checkpoint,
        data_dir,
        out,
        extra_thresholds=args.extra_thresholds,
        ablation=args.ablation,
    )
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.5f}"))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser, threads: bool = False) -> None:
    parser.add_argument("--config", type=str, help="JSON файл конфигурации")
    parser.add_argument("--seed", type=int, help="Верхнеуровневое зерно")
    if threads:
        parser.add_argument("--threads", type=int, help="Количество потоков")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ynet", description="Сегментация сосудов в 3D объемах сетью Y-net"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="Сгенерировать набор фантомов")
    _add_common(p)
    p.add_argument("--out", type=str, help="Каталог набора")
    p.add_argument("--train", dest="n_train", type=int)
    p.add_argument("--val", dest="n_val", type=int)
    p.add_argument("--test", dest="n_test", type=int)
    p.add_argument("--dims", type=int, nargs=3, metavar="N")
    p.add_argument("--force", action="store_true", help="Перезаписать каталог")
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("train", help="Обучить модель")
    _add_common(p, threads=True)
    p.add_argument("--data-dir", type=str, help="Каталог набора")
    p.add_argument("--out", type=str, help="Каталог результатов")
    p.add_argument(
        "--position-site", choices=[s.value for s in PositionSite]
    )
    p.add_argument("--n-levels", type=int)
    p.add_argument("--base-kernels", type=int)
    p.add_argument("--stride-pos", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--force", action="store_true", help="Перезаписать каталог")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="Предсказание по объему")
    _add_common(p, threads=True)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--volume", type=str, required=True)
    p.add_argument("--out", type=str, help="Каталог результатов")
    p.add_argument("--threshold", type=float, help="Порог; иначе калибровка")
    p.add_argument("--data-dir", type=str, help="Набор для калибровки порога")
    p.add_argument(
        "--calibrate-dsc",
        dest="calibration_objective",
        action="store_const",
        const="dsc",
        help="Калибровать порог по DSC вместо точности",
    )
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("baseline", help="Эталонный метод сегментации")
    _add_common(p)
    p.add_argument(
        "--which", required=True, choices=[k.value for k in BaselineKind]
    )
    p.add_argument("--volume", type=str, required=True)
    p.add_argument("--out", type=str, required=True, help="Файл YVOL")
    p.add_argument("--threshold", type=float, help="Порог сосудистости Frangi")
    p.add_argument("--data-dir", type=str, help="Набор для калибровки Frangi")
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("eval", help="Метрики сегментации")
    _add_common(p)
    p.add_argument("--pred", type=str, required=True)
    p.add_argument("--truth", type=str, required=True)
    p.add_argument("--name", type=str, help="Имя строки в CSV")
    p.add_argument("--out", type=str, help="CSV файл")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("mip", help="Проекции максимальной интенсивности")
    _add_common(p)
    p.add_argument("--volume", type=str, required=True)
    p.add_argument("--out-stem", type=str, help="Префикс файлов PGM")
    p.set_defaults(handler=cmd_mip)

    p = sub.add_parser("table", help="Сводная таблица сравнения")
    _add_common(p, threads=True)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--ablation", type=str, help="Чекпоинт без позиционного пути")
    p.add_argument("--data-dir", type=str)
    p.add_argument("--out", type=str)
    p.add_argument(
        "--extra-thresholds", type=float, nargs="*", default=[], metavar="T"
    )
    p.add_argument(
        "--calibrate-dsc",
        dest="calibration_objective",
        action="store_const",
        const="dsc",
    )
    p.set_defaults(handler=cmd_table)
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, _overrides(args))


def main(argv: Optional[List[str]] = None) -> int:
    """CLI интерфейс Y-net"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=settings.YNET_LOG_LEVEL.upper(), format="[%(levelname)s] %(message)s"
    )

    try:
        config = _load_config(args)
        return int(args.handler(args, config, settings))
    except USAGE_ERRORS as e:
        print(f"Ошибка: {e}", file=sys.stderr)
        return EXIT_USAGE
    except YNetError as e:
        print(f"Ошибка: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        print(f"Ошибка: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"Ошибка: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
