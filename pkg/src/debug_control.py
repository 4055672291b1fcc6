"""
debug_control.py
デバッグ出力制御

環境変数DEBUG_MODEを読み取り、初期化メッセージと詳細ログの出力可否を決める。
CLIの -v/--verbose はここを経由してモードを切り替える。
"""
import os
from typing import Optional


_ENABLED_VALUES = ("true", "1", "yes", "on")
_VERBOSE_VALUES = ("verbose", "2", "debug")


class DebugControl:
    """
    デバッグモードのシングルトン

    DEBUG_MODEの値:
    - 未設定/"0"/"false": 本番モード（初期化メッセージなし、WARNING以上のみ）
    - "1"/"true": 開発モード（初期化メッセージ、INFO以上）
    - "2"/"verbose": 詳細モード（DEBUGまで全て）
    """

    _instance: Optional['DebugControl'] = None
    _debug_mode: Optional[str] = None
    _raw_value: Optional[str] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialize()
        elif cls._instance._raw_value != os.environ.get("DEBUG_MODE", "0").lower():
            # 環境変数が変わっていれば読み直す
            cls._instance._initialize()
        return cls._instance

    def _initialize(self):
        """環境変数からモードを読み込む"""
        self._raw_value = os.environ.get("DEBUG_MODE", "0").lower()
        if self._raw_value in _ENABLED_VALUES:
            self._debug_mode = "1"
        elif self._raw_value in _VERBOSE_VALUES:
            self._debug_mode = "2"
        else:
            self._debug_mode = "0"

    def refresh(self) -> None:
        """環境変数を再読込する"""
        self._initialize()

    def get_debug_mode(self) -> int:
        """デバッグモードレベル（0/1/2）"""
        return int(self._debug_mode)

    def is_debug_mode(self) -> bool:
        return self.get_debug_mode() >= 1

    def print_init(self, message: str):
        """コンポーネント初期化メッセージ（デバッグモード時のみ表示）"""
        if self.is_debug_mode():
            print(message)

    @classmethod
    def get_instance(cls) -> 'DebugControl':
        return cls()


def print_init(message: str):
    """初期化メッセージの条件付き出力"""
    DebugControl.get_instance().print_init(message)


def get_debug_control() -> DebugControl:
    """デバッグ制御インスタンスを取得"""
    return DebugControl.get_instance()
