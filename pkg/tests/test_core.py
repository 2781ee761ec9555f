"""
核心模組測試
"""

import logging
import os
import sys

import pytest

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from src.core.config import Settings
from src.core.logging import (
    CONSOLE_HANDLER,
    LOGGER_NAME,
    logger,
    run_log,
    setup_logging,
)


@pytest.fixture
def run_settings():
    """可覆寫日誌欄位的設定實例"""
    config = Settings()
    config.LOG_LEVEL = "WARNING"
    config.LOG_FORMAT = "[%(levelname)s] %(message)s"
    config.RUN_LOG_LEVEL = "WARNING"
    yield config
    setup_logging()


class TestLogging:
    """測試日誌設定"""

    def test_level_and_format_from_settings(self, run_settings):
        log = setup_logging(run_settings)
        assert log.name == LOGGER_NAME
        assert log.level == logging.WARNING
        consoles = [h for h in log.handlers if h.get_name() == CONSOLE_HANDLER]
        assert len(consoles) == 1
        assert consoles[0].formatter._fmt == run_settings.LOG_FORMAT

    def test_repeated_setup_keeps_one_console(self):
        setup_logging()
        setup_logging()
        handlers = logging.getLogger(LOGGER_NAME).handlers
        consoles = [h for h in handlers if h.get_name() == CONSOLE_HANDLER]
        assert len(consoles) == 1

    def test_run_log_uses_settings(self, tmp_path, run_settings):
        path = tmp_path / "nested" / "run.log"
        with run_log(path, run_settings):
            logger.warning("kept")
            logger.info("dropped")
        logger.warning("after")
        assert path.read_text(encoding="utf-8").splitlines() == ["[WARNING] kept"]

    def test_unknown_level(self, run_settings):
        run_settings.LOG_LEVEL = "LOUD"
        with pytest.raises(ValueError, match="Unknown log level"):
            setup_logging(run_settings)
