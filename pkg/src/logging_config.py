"""
ロギング設定モジュール

nonholo-kam 全体のロガーを一度だけ構成する。
DEBUG_MODEに応じてコンソールのレベルを決め、デバッグ時のみ logs/nonholo.log に書き出す。
"""

import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Optional

from debug_control import get_debug_control


LOG_FILE_NAME = "nonholo.log"

_CONSOLE_LEVELS = {
    0: logging.WARNING,
    1: logging.INFO,
    2: logging.DEBUG,
}


class NonholoLogger:
    """ルートロガーの構成を保持するシングルトン"""

    _instance: Optional['NonholoLogger'] = None
    _loggers: dict = {}

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return
        self._initialized = True
        self.debug_control = get_debug_control()
        self.console_handler: Optional[logging.Handler] = None
        self.file_handler: Optional[logging.Handler] = None
        self._setup_logging()

    def _setup_logging(self):
        root_logger = logging.getLogger()
        root_logger.setLevel(logging.DEBUG)

        # 以前の構成が残っていれば自分のハンドラーだけ差し替える
        for handler in (self.console_handler, self.file_handler):
            if handler is not None:
                root_logger.removeHandler(handler)

        simple_formatter = logging.Formatter('%(levelname)s - %(name)s - %(message)s')
        self.console_handler = logging.StreamHandler(sys.stdout)
        self.console_handler.setLevel(self._get_console_log_level())
        self.console_handler.setFormatter(simple_formatter)
        root_logger.addHandler(self.console_handler)

        self.file_handler = None
        if self.debug_control.is_debug_mode():
            self._attach_file_handler(root_logger)

    def _attach_file_handler(self, root_logger: logging.Logger):
        log_dir = Path(__file__).parent.parent / "logs"
        log_dir.mkdir(exist_ok=True)
        detailed_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        self.file_handler = logging.handlers.RotatingFileHandler(
            log_dir / LOG_FILE_NAME,
            maxBytes=10 * 1024 * 1024,
            backupCount=5,
            encoding='utf-8'
        )
        self.file_handler.setLevel(logging.DEBUG)
        self.file_handler.setFormatter(detailed_formatter)
        root_logger.addHandler(self.file_handler)

    def _get_console_log_level(self) -> int:
        return _CONSOLE_LEVELS.get(self.debug_control.get_debug_mode(), logging.DEBUG)

    def get_logger(self, name: str) -> logging.Logger:
        if name not in self._loggers:
            self._loggers[name] = logging.getLogger(name)
        return self._loggers[name]

    def update_log_level(self):
        """DEBUG_MODEの変更を反映する"""
        self.debug_control.refresh()
        if self.console_handler is not None:
            self.console_handler.setLevel(self._get_console_log_level())
        if self.debug_control.is_debug_mode() and self.file_handler is None:
            self._attach_file_handler(logging.getLogger())


_logger_config = NonholoLogger()


def get_logger(name: str) -> logging.Logger:
    """
    モジュール用のロガーを取得

    Args:
        name: モジュール名（通常は__name__）

    Returns:
        構成済みのロガー
    """
    return _logger_config.get_logger(name)


def update_log_levels():
    """環境変数の変更に応じてログレベルを更新"""
    _logger_config.update_log_level()
