"""
SettingsManagerのテスト
"""
import json
import os

import pytest

from managers.settings_manager import DEFAULT_SETTINGS, SettingsManager, create_settings_manager


@pytest.mark.unit
class TestSettingsManager:
    """数値設定の読み込みと保存"""

    def test_defaults_without_file(self, settings):
        assert settings.as_dict() == DEFAULT_SETTINGS
        assert settings["reversibility_threshold"] == 1e-10

    def test_file_overrides_known_keys(self, temp_dir):
        path = os.path.join(temp_dir, "settings.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"h": 0.01, "mystery": 1}, f)
        manager = SettingsManager(path)
        assert manager.get_setting("h") == 0.01
        assert manager.get_setting("mystery") is None

    def test_unreadable_file_falls_back(self, temp_dir):
        path = os.path.join(temp_dir, "settings.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write("{not json")
        assert SettingsManager(path).as_dict() == DEFAULT_SETTINGS

    def test_persist_round_trip(self, settings):
        settings.set_setting("resonance_tol", 1e-9, persist=True)
        assert SettingsManager(settings.settings_file)["resonance_tol"] == 1e-9

    @pytest.mark.error
    def test_unknown_key_rejected(self, settings):
        with pytest.raises(KeyError):
            settings.set_setting("colour", "blue")

    def test_factory_registers(self, temp_dir):
        app_state = {}
        manager = create_settings_manager(app_state, os.path.join(temp_dir, "s.json"))
        assert app_state["settings_manager"] is manager
