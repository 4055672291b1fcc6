"""
test_error_handling.py
エラー処理と終了コードのテストモジュール

ErrorHandlerとAppError、with_error_handlingデコレータの機能をテストします。
"""
import json

import numpy as np
import pytest

from error_handling import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ERROR,
    EXIT_OK,
    AppError,
    CheckFailed,
    ConfigError,
    ErrorCategory,
    ErrorHandler,
    ErrorSeverity,
    FibreSolveFailure,
    HalfTurn,
    InvalidParameter,
    OutputExists,
    create_error_handler,
    with_error_handling,
)


@pytest.mark.unit
class TestAppError:
    """AppErrorクラスの単体テスト"""

    def test_app_error_init(self):
        """AppErrorの初期化テスト"""
        error = AppError("テストエラー")
        assert error.message == "テストエラー"
        assert error.severity == ErrorSeverity.ERROR
        assert error.category == ErrorCategory.OTHER
        assert error.original_exception is None
        assert error.context == {}
        assert error.timestamp > 0

        orig_exception = ValueError("元の例外")
        error = AppError(
            "カスタムエラー",
            severity=ErrorSeverity.CRITICAL,
            category=ErrorCategory.NUMERICAL,
            original_exception=orig_exception,
            context={"operation": "monodromy"}
        )
        assert error.severity == ErrorSeverity.CRITICAL
        assert error.category == ErrorCategory.NUMERICAL
        assert error.original_exception is orig_exception
        assert error.operation == "monodromy"

    def test_subclass_categories(self):
        """サブクラスは既定のカテゴリを持つ"""
        assert ConfigError("x").category == ErrorCategory.CONFIG
        assert OutputExists("x").category == ErrorCategory.CONFIG
        assert InvalidParameter("x").category == ErrorCategory.VALIDATION
        assert FibreSolveFailure("x").category == ErrorCategory.NUMERICAL
        assert CheckFailed("x").category == ErrorCategory.CHECK

    def test_app_error_str(self):
        error = AppError("エラーメッセージ", severity=ErrorSeverity.WARNING, category=ErrorCategory.FILE_IO)
        error_str = str(error)
        assert "WARNING" in error_str
        assert "FILE_IO" in error_str
        assert "エラーメッセージ" in error_str

    def test_app_error_to_dict(self):
        error = HalfTurn("half turn", context={"sigma": 3.14159})
        error_dict = error.to_dict()
        assert error_dict["error"] == "HalfTurn"
        assert error_dict["category"] == "NUMERICAL"
        assert error_dict["context"] == {"sigma": 3.14159}
        json.dumps(error_dict)

    @pytest.mark.parametrize("exception,category", [
        (FileNotFoundError("missing.json"), ErrorCategory.FILE_IO),
        (np.linalg.LinAlgError("Singular matrix"), ErrorCategory.NUMERICAL),
        (ValueError("bad value"), ErrorCategory.CONFIG),
        (KeyError("seed"), ErrorCategory.CONFIG),
        (ZeroDivisionError("division by zero"), ErrorCategory.NUMERICAL),
        (RuntimeError("other"), ErrorCategory.OTHER),
    ])
    def test_from_exception(self, exception, category):
        """通常の例外の型からカテゴリを推測する"""
        error = AppError.from_exception(exception)
        assert error.category == category
        assert error.original_exception is exception

    def test_from_exception_keeps_app_error(self):
        original = OutputExists("exists")
        assert AppError.from_exception(original) is original


class NonFatal(AppError):
    default_severity = ErrorSeverity.WARNING


@pytest.mark.unit
class TestErrorHandler:
    """ErrorHandlerクラスの単体テスト"""

    def test_create_registers_handler(self):
        app_state = {}
        handler = create_error_handler(app_state)
        assert app_state["error_handler"] is handler
        assert handler.error_history == []

    def test_handle_error_records_history(self):
        handler = ErrorHandler()
        recorded = handler.handle_error(ValueError("bad"), context={"operation": "load"})
        assert isinstance(recorded, AppError)
        assert recorded.category == ErrorCategory.CONFIG
        assert handler.error_counts[ErrorCategory.CONFIG] == 1
        stats = handler.get_error_stats()
        assert stats["total_errors"] == 1
        assert stats["recent_errors"][0]["context"] == {"operation": "load"}

    def test_history_is_bounded(self):
        handler = ErrorHandler(max_history_size=3)
        for i in range(5):
            handler.handle_error(NonFatal(f"error {i}"))
        assert [e.message for e in handler.error_history] == ["error 2", "error 3", "error 4"]
        handler.clear_error_history()
        assert handler.get_error_stats()["total_errors"] == 0

    @pytest.mark.parametrize("error,code", [
        (ConfigError("x"), EXIT_CONFIG_ERROR),
        (InvalidParameter("x"), EXIT_CONFIG_ERROR),
        (FileNotFoundError("x"), EXIT_CONFIG_ERROR),
        (FibreSolveFailure("x"), EXIT_NUMERICAL_ERROR),
        (HalfTurn("x"), EXIT_NUMERICAL_ERROR),
        (np.linalg.LinAlgError("Singular matrix"), EXIT_NUMERICAL_ERROR),
        (CheckFailed("x"), EXIT_CHECK_FAILED),
    ])
    def test_exit_codes(self, error, code):
        assert ErrorHandler.exit_code_for(error) == code


@pytest.mark.error
class TestWithErrorHandling:
    """with_error_handlingデコレータのテスト"""

    def test_success_passes_through(self):
        @with_error_handling("simulate")
        def command(app_state):
            return EXIT_OK

        assert command({}) == EXIT_OK

    def test_failure_prints_diagnostic(self, capsys):
        app_state = {}
        handler = create_error_handler(app_state)

        @with_error_handling("floquet")
        def command(state):
            raise HalfTurn("rotation angle is a half turn", context={"operation": "so3_log"})

        assert command(app_state) == EXIT_NUMERICAL_ERROR
        err = capsys.readouterr().err
        assert err.startswith("error: floquet: HalfTurn in so3_log:")
        assert handler.error_counts[ErrorCategory.NUMERICAL] == 1

    def test_reads_app_state_from_self(self, capsys):
        class Manager:
            def __init__(self):
                self.app_state = {}
                create_error_handler(self.app_state)

            @with_error_handling("scan")
            def run(self):
                raise ValueError("epsilon grid must contain 0")

        manager = Manager()
        assert manager.run() == EXIT_CONFIG_ERROR
        assert "error: scan: AppError in scan: epsilon grid must contain 0" in capsys.readouterr().err
        assert len(manager.app_state["error_handler"].error_history) == 1
