"""数値設定マネージャー"""
import json
import os
from typing import Any, Dict, Optional

from logging_config import get_logger

logger = get_logger(__name__)


DEFAULT_SETTINGS: Dict[str, Any] = {
    "h": 0.05,
    "newton_tol": 1e-12,
    "newton_max_iters": 50,
    "reference_tol": 1e-12,
    "resonance_tol": 1e-8,
    "rotation_tol": 1e-9,
    "fd_step": 1e-6,
    "fibre_cond_max": 1e8,
    "projection_tol": 1e-10,
    "orbit_window": [-10.0, 10.0],
    "orbit_time_cap": 1000.0,
    "theta_table_size": 512,
    "sample_dt": 1.0,
    "horizon": 1e4,
    "significance_sigmas": 5.0,
    "secular_factor": 10.0,
    "dependence_tol": 1e-8,
    "min_grid_points": 10,
    "min_periods": 50,
    "reversibility_threshold": 1e-10,
    "threads": 0,
    "format_version": 1,
}


class SettingsManager:
    """数値計算の既定値（刻み幅・許容誤差・判定しきい値）の管理を担当するマネージャー"""

    def __init__(self, settings_file: Optional[str] = None):
        """SettingsManagerの初期化

        Args:
            settings_file: 設定ファイルのパス（省略時は storage/data/settings.json）
        """
        self._settings_file = settings_file or os.path.join(
            os.path.dirname(os.path.dirname(__file__)),
            "storage", "data", "settings.json"
        )
        self._settings: Dict[str, Any] = self._load_settings()

        from debug_control import print_init
        print_init("[OK] SettingsManager initialized.")

    def _load_settings(self) -> Dict[str, Any]:
        """設定ファイルを読み込み、既定値とマージする"""
        settings = dict(DEFAULT_SETTINGS)

        if os.path.exists(self._settings_file):
            try:
                with open(self._settings_file, 'r', encoding='utf-8') as f:
                    loaded = json.load(f)
                unknown = sorted(set(loaded) - set(DEFAULT_SETTINGS))
                if unknown:
                    logger.warning(f"Ignoring unknown settings keys: {unknown}")
                settings.update({k: v for k, v in loaded.items() if k in DEFAULT_SETTINGS})
            except (json.JSONDecodeError, IOError) as e:
                # 読み込めない場合は既定値で続行
                logger.warning(f"Could not read {self._settings_file}: {e}; using defaults")
        else:
            logger.debug(f"Settings file not found: {self._settings_file}; using defaults")

        return settings

    @property
    def settings_file(self) -> str:
        return self._settings_file

    def save_settings(self) -> None:
        """現在の設定をファイルに保存"""
        os.makedirs(os.path.dirname(self._settings_file), exist_ok=True)
        with open(self._settings_file, 'w', encoding='utf-8') as f:
            json.dump(self._settings, f, indent=2, ensure_ascii=False)
        logger.info(f"Settings saved to {self._settings_file}")

    def get_setting(self, key: str, default: Any = None) -> Any:
        """設定値を取得"""
        return self._settings.get(key, default)

    def set_setting(self, key: str, value: Any, persist: bool = False) -> None:
        """設定値を設定

        Args:
            key: 設定キー（既定値に存在するもののみ）
            value: 値
            persist: Trueならファイルにも保存
        """
        if key not in DEFAULT_SETTINGS:
            raise KeyError(f"Unknown setting: {key}")
        self._settings[key] = value
        if persist:
            self.save_settings()

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._settings)

    def __getitem__(self, key: str) -> Any:
        return self._settings[key]


def create_settings_manager(app_state: Dict[str, Any], settings_file: Optional[str] = None) -> SettingsManager:
    """SettingsManagerを作成してapp_stateに登録する工場関数"""
    settings_manager = SettingsManager(settings_file)
    app_state["settings_manager"] = settings_manager
    return settings_manager
