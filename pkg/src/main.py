"""
main.py
nonholo-kam のエントリーポイント

設定を読み込み、simulate / floquet / scan / check のサブコマンドを
ExperimentManager に委ねる薄いラッパーです。終了コードは
0 成功, 1 検査の失敗, 2 設定の誤り, 3 数値計算の失敗。
"""
import argparse
import os
import sys
from typing import Any, Dict, List, Optional

# Python環境チェック
if sys.version_info < (3, 12):
    print("[ERROR] nonholo-kam requires Python 3.12 or newer", file=sys.stderr)
    sys.exit(2)

COMMANDS = ("simulate", "floquet", "scan", "check")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonholo-kam",
        description="Action-angle coordinates and KAM stability experiments for a nonholonomic oscillator",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
        sub.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        sub.add_argument("--force", action="store_true", help="overwrite existing artifacts")
        sub.add_argument("--seed", type=int, help="single seed (overrides experiment.seeds)")
        sub.add_argument("--threads", type=int, help="worker threads, 0 = auto (fallback: NONHOLO_THREADS)")
    return parser


def build_app_state(args: argparse.Namespace) -> Dict[str, Any]:
    """マネージャーを生成してapp_stateに登録する"""
    from error_handling import create_error_handler
    from managers import (
        create_artifact_manager,
        create_config_manager,
        create_experiment_manager,
        create_settings_manager,
    )
    from optimizations import resolve_thread_count

    app_state: Dict[str, Any] = {}
    create_error_handler(app_state)
    settings_manager = create_settings_manager(app_state)
    create_config_manager(app_state)
    create_artifact_manager(app_state, force=args.force)

    requested = args.threads
    if requested is None and "NONHOLO_THREADS" not in os.environ:
        requested = settings_manager.get_setting("threads", 0)
    app_state["threads"] = resolve_thread_count(requested)

    create_experiment_manager(app_state)
    return app_state


def main(argv: Optional[List[str]] = None) -> int:
    """
    nonholo-kam のエントリーポイント

    Args:
        argv: コマンドライン引数（省略時は sys.argv）

    Returns:
        int: 終了コード
    """
    args = build_parser().parse_args(argv)

    if args.verbose:
        os.environ["DEBUG_MODE"] = "1"
    from logging_config import get_logger, update_log_levels
    update_log_levels()
    logger = get_logger(__name__)

    from error_handling import AppError, ErrorHandler

    try:
        app_state = build_app_state(args)
    except (ValueError, AppError) as e:
        app_error = AppError.from_exception(e, context={"operation": "startup"})
        print(f"error: startup: {type(app_error).__name__}: {app_error.message}", file=sys.stderr)
        return ErrorHandler.exit_code_for(app_error)

    config_manager = app_state["config_manager"]
    try:
        config_manager.load(args.config)
        config = config_manager.apply_overrides(seed=args.seed, out=args.out)
    except AppError as e:
        app_state["error_handler"].handle_error(e)
        print(f"error: {args.command}: {type(e).__name__} in {e.operation or 'load_config'}: {e.message}",
              file=sys.stderr)
        return ErrorHandler.exit_code_for(e)

    logger.info(f"Running {args.command} (threads={app_state['threads']})")
    return app_state["experiment_manager"].run(args.command, config)


if __name__ == "__main__":
    sys.exit(main())
