"""
nonholo-kam のマネージャー

設定・成果物・実験の実行を担当するマネージャークラス
"""

from .settings_manager import SettingsManager, create_settings_manager
from .config_manager import ConfigManager, ExperimentConfig, create_config_manager
from .artifact_manager import ArtifactManager, create_artifact_manager
from .experiment_manager import ExperimentManager, create_experiment_manager

__all__ = [
    'SettingsManager', 'create_settings_manager',
    'ConfigManager', 'ExperimentConfig', 'create_config_manager',
    'ArtifactManager', 'create_artifact_manager',
    'ExperimentManager', 'create_experiment_manager',
]
