"""
error_handling.py
エラー処理モジュール

数値計算・設定・入出力のエラーを AppError の階層で表し、
ErrorHandler で履歴・ログ・終了コードへの対応付けを一元管理します。
"""
import functools
import json
import logging
import sys
import time
import traceback
from enum import Enum, auto
from typing import Any, Callable, Dict, List, Optional, Union

from numpy.linalg import LinAlgError

from logging_config import get_logger

logger = get_logger(__name__)


class ErrorSeverity(Enum):
    """エラーの重大度"""
    DEBUG = auto()
    INFO = auto()
    WARNING = auto()    # 処理は継続（スキップ扱い）
    ERROR = auto()      # その操作は中断
    CRITICAL = auto()   # 実行全体が中断


class ErrorCategory(Enum):
    """エラーのカテゴリ"""
    CONFIG = auto()       # 設定ファイル・引数
    VALIDATION = auto()   # パラメータの不変条件
    NUMERICAL = auto()    # ソルバー・収束・特異ケース
    DOMAIN = auto()       # 状態が定義域・拘束多様体の外
    FILE_IO = auto()      # 入出力
    CHECK = auto()        # 性質チェックの不合格
    OTHER = auto()


# 終了コードの契約: 0 成功, 1 チェック不合格, 2 設定エラー, 3 数値エラー
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

_EXIT_CODES = {
    ErrorCategory.CONFIG: EXIT_CONFIG_ERROR,
    ErrorCategory.VALIDATION: EXIT_CONFIG_ERROR,
    ErrorCategory.FILE_IO: EXIT_CONFIG_ERROR,
    ErrorCategory.NUMERICAL: EXIT_NUMERICAL_ERROR,
    ErrorCategory.DOMAIN: EXIT_NUMERICAL_ERROR,
    ErrorCategory.CHECK: EXIT_CHECK_FAILED,
    ErrorCategory.OTHER: EXIT_NUMERICAL_ERROR,
}


class AppError(Exception):
    """アプリケーション固有のエラー基底クラス

    例外メッセージに加えて、重大度・カテゴリ・失敗した操作名などの
    コンテキストを保持します。サブクラスは default_category を上書きします。
    """

    default_category = ErrorCategory.OTHER
    default_severity = ErrorSeverity.ERROR

    def __init__(
        self,
        message: str,
        severity: Optional[ErrorSeverity] = None,
        category: Optional[ErrorCategory] = None,
        original_exception: Optional[Exception] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        """AppErrorを初期化します。

        Args:
            message (str): エラーメッセージ
            severity (ErrorSeverity, optional): 重大度（省略時はクラス既定）
            category (ErrorCategory, optional): カテゴリ（省略時はクラス既定）
            original_exception (Exception, optional): 元の例外
            context (Dict[str, Any], optional): 操作名や数値などの追加情報
        """
        super().__init__(message)
        self.message = message
        self.severity = severity or self.default_severity
        self.category = category or self.default_category
        self.original_exception = original_exception
        self.context = context or {}
        self.timestamp = time.time()
        self.traceback = traceback.format_exc() if original_exception else None

    @property
    def operation(self) -> Optional[str]:
        return self.context.get("operation")

    def __str__(self) -> str:
        return f"{self.severity.name} [{self.category.name}]: {self.message}"

    def to_dict(self) -> Dict[str, Any]:
        """エラー情報を辞書として返します。"""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "severity": self.severity.name,
            "category": self.category.name,
            "original_exception": str(self.original_exception) if self.original_exception else None,
            "context": self.context,
            "timestamp": self.timestamp,
            "traceback": self.traceback
        }

    @classmethod
    def from_exception(
        cls,
        exception: Exception,
        category: ErrorCategory = ErrorCategory.OTHER,
        severity: ErrorSeverity = ErrorSeverity.ERROR,
        context: Optional[Dict[str, Any]] = None
    ) -> 'AppError':
        """通常の例外からAppErrorを作成します。

        Args:
            exception (Exception): 元の例外
            category (ErrorCategory, optional): 型から推測できない場合のカテゴリ
            severity (ErrorSeverity, optional): 重大度
            context (Dict[str, Any], optional): 追加情報

        Returns:
            AppError: 作成されたインスタンス
        """
        if isinstance(exception, AppError):
            return exception

        if isinstance(exception, (FileNotFoundError, PermissionError, IsADirectoryError)):
            category = ErrorCategory.FILE_IO
        elif isinstance(exception, LinAlgError):
            category = ErrorCategory.NUMERICAL
        elif isinstance(exception, (json.JSONDecodeError, TypeError, KeyError, ValueError)):
            category = ErrorCategory.CONFIG
        elif isinstance(exception, (FloatingPointError, ArithmeticError, OverflowError)):
            category = ErrorCategory.NUMERICAL
        elif isinstance(exception, OSError):
            category = ErrorCategory.FILE_IO

        return cls(
            message=str(exception),
            severity=severity,
            category=category,
            original_exception=exception,
            context=context
        )


# --- 設定・検証 ---

class ConfigError(AppError):
    """設定ファイルや引数が不正"""
    default_category = ErrorCategory.CONFIG


class OutputExists(ConfigError):
    """--force なしで既存の出力を上書きしようとした"""


class InsufficientGrid(ConfigError):
    """有効な格子点が足りない"""


class InvalidParameter(AppError):
    """パラメータが不変条件を満たさない（質量が負など）"""
    default_category = ErrorCategory.VALIDATION


# --- 定義域・拘束 ---

class ConstraintViolation(AppError):
    """状態が拘束多様体の外にある"""
    default_category = ErrorCategory.DOMAIN


class DomainViolation(AppError):
    """結合関数の定義域外"""
    default_category = ErrorCategory.DOMAIN


class PerturbationPresent(AppError):
    """ε ≠ 0 の系に非摂動の操作を適用した"""
    default_category = ErrorCategory.DOMAIN


# --- 数値 ---

class NumericalError(AppError):
    default_category = ErrorCategory.NUMERICAL


class FibreSolveFailure(NumericalError):
    """ファイバー写像の反転に失敗（εが大きすぎる）"""


class NonConvergence(NumericalError):
    """陰的ステップの反復が収束しない"""


class StepSizeUnderflow(NumericalError):
    """参照ソルバーのステップ幅が潰れた"""


class NoClosedOrbit(NumericalError):
    """時間上限内に切断面へ戻らない"""


class NoSectionCrossing(NumericalError):
    """F(q3, 0) = a の根が窓内にない"""


class OmegaZero(NumericalError):
    """ω(a) = 0（平衡点上のトーラス）"""


class NotARotation(NumericalError):
    """行列がSO(3)に入っていない"""


class HalfTurn(NumericalError):
    """回転角がπ（主対数の軸が定まらない）"""


class DegenerateRotation(NumericalError):
    """回転角が0で回転面が定まらない"""


class NoCrossings(NumericalError):
    """軌道がポアンカレ断面を横切らない"""


class InsufficientTrajectory(NumericalError):
    """周波数推定に足りる長さの軌道がない"""


class CheckFailed(AppError):
    """性質チェックの不合格"""
    default_category = ErrorCategory.CHECK


class ErrorHandler:
    """エラー処理を一元管理するクラス

    エラー履歴とカテゴリ別カウントを保持し、重大度に応じたレベルでログへ記録し、
    CLIの終了コードへの対応付けを提供します。
    """

    def __init__(self, app_state: Optional[Dict[str, Any]] = None, max_history_size: int = 100):
        """ErrorHandlerを初期化します。

        Args:
            app_state (Dict[str, Any], optional): CLIのアプリケーション状態
            max_history_size (int): 保持する履歴数
        """
        self.app_state = app_state if app_state is not None else {}
        self.logger = logger
        self.error_history: List[AppError] = []
        self.max_history_size = max_history_size
        self.error_counts: Dict[ErrorCategory, int] = {category: 0 for category in ErrorCategory}

        from debug_control import print_init
        print_init("[OK] ErrorHandler initialized.")

    def handle_error(
        self,
        error: Union[Exception, AppError],
        context: Optional[Dict[str, Any]] = None,
        category: Optional[ErrorCategory] = None,
        severity: Optional[ErrorSeverity] = None
    ) -> AppError:
        """エラーを記録します。

        Args:
            error: 処理するエラー
            context: 追加のコンテキスト
            category: 通常の例外の場合のカテゴリ
            severity: 通常の例外の場合の重大度

        Returns:
            AppError: 記録されたエラー
        """
        if not isinstance(error, AppError):
            app_error = AppError.from_exception(
                error,
                category=category or ErrorCategory.OTHER,
                severity=severity or ErrorSeverity.ERROR,
                context=context
            )
        else:
            app_error = error
            if context:
                app_error.context.update(context)

        self.error_counts[app_error.category] = self.error_counts.get(app_error.category, 0) + 1
        self.error_history.append(app_error)
        if len(self.error_history) > self.max_history_size:
            self.error_history.pop(0)

        self._log_error(app_error)
        return app_error

    def _log_error(self, error: AppError):
        log_level = {
            ErrorSeverity.DEBUG: logging.DEBUG,
            ErrorSeverity.INFO: logging.INFO,
            ErrorSeverity.WARNING: logging.WARNING,
            ErrorSeverity.ERROR: logging.ERROR,
            ErrorSeverity.CRITICAL: logging.CRITICAL,
        }.get(error.severity, logging.ERROR)

        self.logger.log(log_level, f"{error.category.name}: {type(error).__name__}: {error.message}")

        if error.traceback and log_level >= logging.ERROR:
            self.logger.debug(f"Traceback:\n{error.traceback}")

        if error.context:
            context_str = json.dumps(error.context, ensure_ascii=False, default=str)
            self.logger.debug(f"Context: {context_str}")

    @staticmethod
    def exit_code_for(error: Union[Exception, AppError]) -> int:
        """エラーに対応するCLI終了コード"""
        if not isinstance(error, AppError):
            error = AppError.from_exception(error)
        return _EXIT_CODES.get(error.category, EXIT_NUMERICAL_ERROR)

    def get_error_stats(self) -> Dict[str, Any]:
        """エラー統計情報を取得します。"""
        recent_errors = self.error_history[-10:] if self.error_history else []
        return {
            "total_errors": sum(self.error_counts.values()),
            "error_counts_by_category": {category.name: count for category, count in self.error_counts.items()},
            "recent_errors": [error.to_dict() for error in recent_errors],
            "critical_errors": sum(1 for error in self.error_history if error.severity == ErrorSeverity.CRITICAL)
        }

    def clear_error_history(self):
        self.error_history.clear()
        self.error_counts = {category: 0 for category in ErrorCategory}
        self.logger.info("Error history cleared")


def with_error_handling(operation: str, handler_key: str = "error_handler"):
    """CLIコマンド用のエラー処理デコレータ

    例外をAppErrorに変換してErrorHandlerに記録し、失敗した操作名とエラー名を
    標準エラーに一行で出力したうえで、対応する終了コードを返します。
    第一引数のapp_state（またはselfのapp_state）からErrorHandlerを取得します。

    Args:
        operation (str): 診断メッセージに載せる操作名
        handler_key (str): app_state内のErrorHandlerのキー

    Returns:
        Callable: デコレータ関数
    """
    def decorator(func: Callable[..., int]):
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> int:
            first = args[0] if args else None
            app_state = first if isinstance(first, dict) else getattr(first, "app_state", None)
            error_handler = (app_state or {}).get(handler_key) or ErrorHandler()

            try:
                return func(*args, **kwargs)
            except Exception as e:  # noqa: BLE001
                app_error = AppError.from_exception(e, context={"operation": operation})
                app_error.context.setdefault("operation", operation)
                error_handler.handle_error(app_error)
                failing = app_error.context.get("operation", operation)
                print(f"error: {operation}: {type(app_error).__name__} in {failing}: {app_error.message}",
                      file=sys.stderr)
                return error_handler.exit_code_for(app_error)

        return wrapper
    return decorator


def create_error_handler(app_state: Dict[str, Any]) -> ErrorHandler:
    """ErrorHandlerを作成してapp_stateに登録する工場関数"""
    error_handler = ErrorHandler(app_state)
    app_state["error_handler"] = error_handler
    return error_handler
