"""
命令列應用程式
"""

import argparse
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch
from pydantic import ValidationError

from src.api.commands import COMMANDS
from src.core.config import settings
from src.core.exceptions import ConfigurationError, SimulationError
from src.core.logging import logger, run_log
from src.models.specs import RunConfig

RUN_LOG_FILE = "run.log"

# 旗標名稱 -> RunConfig 欄位
FLAG_FIELDS = (
    "data",
    "kind",
    "family",
    "preset",
    "seed",
    "out",
    "checkpoint_dir",
    "bundle",
    "history",
    "scores",
    "n_paths",
    "length",
    "delta",
    "iterations",
    "pca_components",
    "augment",
    "workers",
)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--data", type=Path, help="Price or surface CSV")
    parser.add_argument("--kind", choices=["index", "surface"])
    parser.add_argument("--family", choices=["tagan", "ttgan"])
    parser.add_argument("--preset", choices=["desk", "full"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--checkpoint-dir", dest="checkpoint_dir", type=Path)
    parser.add_argument("--bundle", type=Path, help="Path bundle file")
    parser.add_argument("--history", type=Path, help="Training history file")
    parser.add_argument("--scores", type=Path, help="Score report file")
    parser.add_argument("--n-paths", dest="n_paths", type=int)
    parser.add_argument("--length", type=int)
    parser.add_argument("--delta", type=int)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--pca-components", dest="pca_components", type=int)
    parser.add_argument("--augment", choices=["none", "cumsum", "returns"])
    parser.add_argument("--workers", type=int)
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Hyperparameter override, e.g. generator.d_h=32 (VALUE is JSON)",
    )


def create_app() -> argparse.ArgumentParser:
    """
    創建並配置命令列解析器

    Returns:
        帶有 train / generate / evaluate / repair-arbitrage / report 子命令的解析器
    """
    parser = argparse.ArgumentParser(
        prog="tsgan",
        description=settings.PROJECT_DESCRIPTION,
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {settings.VERSION}"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "Train a generator/discriminator pair",
        "generate": "Sample paths from a trained generator",
        "evaluate": "Score generated paths against historical data",
        "repair-arbitrage": "Remove arbitrage from generated surfaces",
        "report": "Summarize training history and scores",
    }
    for name, text in helps.items():
        _add_common_flags(subparsers.add_parser(name, help=text))
    return parser


def _parse_override(item: str) -> tuple:
    key, sep, raw = item.partition("=")
    section, dot, name = key.partition(".")
    if not sep or not dot or not name:
        raise ConfigurationError(
            "override must look like SECTION.KEY=VALUE", {"override": item}
        )
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, name, value


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """設定檔 + 旗標；旗標優先"""
    fields: Dict[str, Any] = {}
    if args.config is not None:
        try:
            fields.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(
                f"Cannot read config file: {e}", {"path": str(args.config)}
            )
    fields["command"] = args.command
    for name in FLAG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            fields[name] = value

    overrides: Dict[str, Dict[str, Any]] = {
        section: dict(values) for section, values in fields.get("overrides", {}).items()
    }
    for item in args.override:
        section, name, value = _parse_override(item)
        overrides.setdefault(section, {})[name] = value
    fields["overrides"] = overrides

    try:
        return RunConfig(**fields)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid run configuration: {e}")


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令列入口

    Returns:
        行程結束碼：成功 0、設定/資料錯誤 2、訓練發散 4、其他錯誤 1
    """
    parser = create_app()
    args = parser.parse_args(argv)
    torch.set_num_threads(settings.NUM_THREADS)
    try:
        cfg = build_run_config(args)
    except SimulationError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code

    with run_log(Path(cfg.out) / RUN_LOG_FILE):
        logger.info(f"Running {cfg.command} (seed={cfg.seed}, out={cfg.out})")
        try:
            summary = COMMANDS[cfg.command](cfg)
        except SimulationError as exc:
            logger.error(f"{type(exc).__name__}: {exc}")
            return exc.exit_code
        except Exception as exc:
            logger.error(f"Unhandled exception: {str(exc)}")
            return 1
    print(json.dumps(summary, indent=2, default=str))
    return 0
