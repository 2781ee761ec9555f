"""
日誌配置模組

所有模組共用名為 tsgan 的 logger，等級與格式取自 Settings；命令列執行時
另外把日誌複寫到輸出目錄的 run.log，方便事後對照訓練歷史與評分。
"""

import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union

from src.core.config import Settings, settings

LOGGER_NAME = "tsgan"
CONSOLE_HANDLER = "tsgan-console"

# 第三方套件在 INFO 等級的訊息過多
NOISY_LOGGERS = ("matplotlib", "PIL")


def _level(name: str) -> int:
    level = logging.getLevelName(name.upper())
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {name}")
    return level


def setup_logging(config: Optional[Settings] = None) -> logging.Logger:
    """
    依設定建立 tsgan logger 的主控台輸出

    重複呼叫時替換既有的主控台 handler，不會重複輸出。

    Args:
        config: 執行設定，預設為全域 settings (LOG_LEVEL / LOG_FORMAT)

    Returns:
        配置好的logger實例
    """
    config = config or settings
    level = _level(config.LOG_LEVEL)
    log = logging.getLogger(LOGGER_NAME)
    for handler in [h for h in log.handlers if h.get_name() == CONSOLE_HANDLER]:
        log.removeHandler(handler)

    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(logging.Formatter(config.LOG_FORMAT))
    console.set_name(CONSOLE_HANDLER)
    log.addHandler(console)
    log.setLevel(level)
    log.propagate = False

    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
    return log


@contextmanager
def run_log(
    path: Union[str, Path], config: Optional[Settings] = None
) -> Iterator[Path]:
    """
    在區塊執行期間把 tsgan 日誌同時寫入檔案

    Args:
        path: 日誌檔路徑，上層目錄不存在時自動建立
        config: 執行設定，取用 LOG_FORMAT 與 RUN_LOG_LEVEL
    """
    config = config or settings
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(config.LOG_FORMAT))
    handler.setLevel(_level(config.RUN_LOG_LEVEL))
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()


# 建立全域logger實例
logger = setup_logging()
