"""
テスト用の共通フィクスチャと設定を提供するモジュール。
"""
import os
import sys
import tempfile

import pytest

# src/ のモジュールを素の名前でインポートできるようにする
SRC_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)

from floquet import floquet_data, subsystem_orbit  # noqa: E402
from model import (  # noqa: E402
    Params,
    SystemSpec,
    contact_oscillator,
    coupling_linear,
    cvt_oscillator,
    decoupled_oscillator,
    subsystem_quartic,
)


@pytest.fixture
def temp_dir():
    """
    一時ディレクトリを作成して返す。
    テスト終了時に自動的に削除される。
    """
    with tempfile.TemporaryDirectory() as temp_dir:
        yield temp_dir


@pytest.fixture
def contact_spec():
    """f(q₃) = q₃, m = k = 1, 調和部分系"""
    return contact_oscillator()


@pytest.fixture
def decoupled_spec():
    """f ≡ 0"""
    return decoupled_oscillator()


@pytest.fixture
def cvt_spec():
    """f(q₃) = q₃/(1 − q₃)"""
    return cvt_oscillator()


@pytest.fixture
def quartic_spec():
    """線形結合と F = p₃²/2 + q₃⁴/4"""
    return SystemSpec(Params(), coupling_linear(), subsystem_quartic(), label="quartic")


@pytest.fixture
def contact_orbit(contact_spec):
    """接触振動子の a = 0.5 の閉軌道"""
    return subsystem_orbit(contact_spec, 0.5)


@pytest.fixture
def contact_floquet(contact_spec, contact_orbit):
    """接触振動子の a = 0.5 のFloquetデータ"""
    return floquet_data(contact_spec, contact_orbit)


@pytest.fixture
def settings(temp_dir):
    """一時ファイルに保存するSettingsManager"""
    from managers.settings_manager import SettingsManager
    return SettingsManager(os.path.join(temp_dir, "settings.json"))


@pytest.fixture
def app_state(temp_dir):
    """CLIと同じ手順でマネージャーを登録したapp_state"""
    from error_handling import create_error_handler
    from managers import (
        create_artifact_manager,
        create_config_manager,
        create_experiment_manager,
        create_settings_manager,
    )

    state = {"threads": 1}
    create_error_handler(state)
    create_settings_manager(state, os.path.join(temp_dir, "settings.json"))
    create_config_manager(state)
    create_artifact_manager(state)
    create_experiment_manager(state)
    return state
