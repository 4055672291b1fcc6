"""
artifact_manager.py
CSV / JSON 成果物の書き出しを担当するマネージャークラス

すべての成果物は形式バージョンと解決済みの設定全体をヘッダーに持ちます。
数値は最短の往復可能な10進表現（repr）で書き出します。
"""
import csv
import json
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

from error_handling import OutputExists
from logging_config import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = 1


def format_value(value: Any) -> str:
    """CSVセルの文字列表現"""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _json_safe(value: Any) -> Any:
    """NaN / ±inf を null に、numpy のスカラーと配列を組み込み型に"""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "tolist"):
        return _json_safe(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class ArtifactManager:
    """成果物ファイルの書き出しを担当するマネージャー"""

    def __init__(self, app_state: Dict[str, Any], force: bool = False,
                 format_version: int = FORMAT_VERSION):
        """ArtifactManagerの初期化

        Args:
            app_state: アプリケーション状態
            force: 既存ファイルの上書きを許可する
            format_version: ヘッダーに書く形式バージョン
        """
        self.app_state = app_state
        self.force = force
        self.format_version = format_version
        self.written: List[str] = []

        from debug_control import print_init
        print_init("[OK] ArtifactManager initialized.")

    def path_for(self, directory: str, stem: str, suffix: str) -> str:
        return os.path.join(directory, f"{stem}_{suffix}")

    def ensure_writable(self, paths: Iterable[str]) -> None:
        """
        書き出し前に出力先をまとめて検査する

        Raises:
            OutputExists: force なしで既存ファイルがある
        """
        for path in paths:
            if os.path.exists(path) and not self.force:
                raise OutputExists(
                    f"output file '{path}' already exists (use --force to overwrite)",
                    context={"operation": "write_artifact", "path": path}
                )

    def _header(self, config: Dict[str, Any]) -> Dict[str, Any]:
        return {"format_version": self.format_version, "config": config}

    def write_csv(self, path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                  config: Dict[str, Any]) -> str:
        """
        コメントヘッダー付きのCSVを書く

        先頭2行は "# format_version: N" と "# config: {...}"（キー順のJSON）。
        """
        self.ensure_writable([path])
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# format_version: {self.format_version}\n")
            f.write(f"# config: {json.dumps(_json_safe(config), sort_keys=True, separators=(',', ':'))}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            count = 0
            for row in rows:
                writer.writerow([format_value(v) for v in row])
                count += 1
        logger.info(f"Wrote {count} rows to {path}")
        self.written.append(path)
        return path

    def write_json(self, path: str, records: Any, config: Dict[str, Any],
                   extra_header: Optional[Dict[str, Any]] = None) -> str:
        """{"header": {...}, "records": ...} を書く"""
        self.ensure_writable([path])
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        header = self._header(config)
        if extra_header:
            header.update(extra_header)
        document = {"header": header, "records": records}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_json_safe(document), f, sort_keys=True, indent=2, ensure_ascii=False)
            f.write("\n")
        logger.info(f"Wrote {path}")
        self.written.append(path)
        return path


def read_csv_artifact(path: str) -> Dict[str, Any]:
    """ヘッダーと表を読み戻す（テストと後処理用）"""
    with open(path, 'r', encoding='utf-8') as f:
        version_line = f.readline()
        config_line = f.readline()
        reader = csv.reader(f)
        columns = next(reader)
        rows = [row for row in reader]
    return {
        "format_version": int(version_line.split(":", 1)[1]),
        "config": json.loads(config_line.split(":", 1)[1]),
        "columns": columns,
        "rows": rows,
    }


def create_artifact_manager(app_state: Dict[str, Any], force: bool = False) -> ArtifactManager:
    """ArtifactManagerを作成してapp_stateに登録する工場関数"""
    settings_manager = app_state.get("settings_manager")
    version = settings_manager.get_setting("format_version", FORMAT_VERSION) if settings_manager else FORMAT_VERSION
    artifact_manager = ArtifactManager(app_state, force=force, format_version=version)
    app_state["artifact_manager"] = artifact_manager
    return artifact_manager
