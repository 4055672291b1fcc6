"""
optimizations.py
実行効率のためのユーティリティ

トーラスごとのFloquetデータや走査の対照実行をキャッシュするCachedDataManager、
走査の行をワーカースレッドで処理するRowProcessor、
および performance_log デコレータを提供します。
"""
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple
import functools
import os
import queue
import threading
import time
from collections import defaultdict

from logging_config import get_logger

logger = get_logger(__name__)


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """
    ワーカー数を決める

    Args:
        requested: --threads の値（None なら NONHOLO_THREADS を参照、0 は自動）

    Returns:
        1以上のワーカー数
    """
    if requested is None:
        env_value = os.environ.get("NONHOLO_THREADS", "0").strip() or "0"
        try:
            requested = int(env_value)
        except ValueError:
            logger.warning(f"Ignoring non-integer NONHOLO_THREADS={env_value!r}")
            requested = 0
    if requested < 0:
        raise ValueError(f"thread count must be >= 0, got {requested}")
    if requested == 0:
        return os.cpu_count() or 1
    return requested


class CachedDataManager:
    """
    キーごとに計算結果を保持するスレッドセーフなキャッシュ

    上限に達するとアクセス回数の最も少ないエントリを捨てます。
    """

    def __init__(self, cache_size: int = 256):
        """
        Args:
            cache_size (int): 保持するエントリ数の上限
        """
        self.cache_size = cache_size
        self._cache: Dict[Any, Any] = {}
        self._access_count: Dict[Any, int] = defaultdict(int)
        self._lock = threading.RLock()
        self._key_locks: Dict[Any, threading.Lock] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key: Any, load_func: Callable[[], Any]) -> Any:
        """
        キャッシュから取得し、なければ load_func で計算して保存する

        計算はキーごとのロックの下で行い、全体のロックは保持しない。
        同じキーを同時に要求したスレッドは最初の計算結果を待つ。

        Args:
            key: ハッシュ可能なキー
            load_func: キャッシュミス時に呼ぶ関数

        Returns:
            キーに対応する値
        """
        with self._lock:
            if key in self._cache:
                return self._hit(key)
            key_lock = self._key_locks.setdefault(key, threading.Lock())

        with key_lock:
            with self._lock:
                if key in self._cache:
                    return self._hit(key)
                self.misses += 1
            try:
                value = load_func()
                with self._lock:
                    self._store(key, value)
                return value
            finally:
                with self._lock:
                    self._key_locks.pop(key, None)

    def _hit(self, key: Any) -> Any:
        self._access_count[key] += 1
        self.hits += 1
        return self._cache[key]

    def _store(self, key: Any, value: Any) -> None:
        if len(self._cache) >= self.cache_size:
            min_key = min(self._access_count, key=self._access_count.get)
            del self._cache[min_key]
            del self._access_count[min_key]
        self._cache[key] = value
        self._access_count[key] = 1

    def __contains__(self, key: Any) -> bool:
        with self._lock:
            return key in self._cache

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def invalidate(self, key: Any) -> None:
        with self._lock:
            if key in self._cache:
                del self._cache[key]
                del self._access_count[key]

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
            self._access_count.clear()


class RowProcessor:
    """
    作業項目をワーカースレッドで処理し、入力順に結果を返すクラス

    各項目はキューから取り出されて実行されます。結果は項目の添字で保存するため、
    実行順序に関係なく出力は決定的です。
    """

    def __init__(self, max_workers: int = 1, progress: Optional[Callable[[], None]] = None):
        """
        Args:
            max_workers (int): ワーカー数（1ならメインスレッドで逐次実行）
            progress (Callable, optional): 1項目完了ごとに呼ばれるコールバック
        """
        if max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {max_workers}")
        self.max_workers = max_workers
        self._progress = progress
        self._queue: "queue.Queue[Tuple[int, Any]]" = queue.Queue()
        self._results: Dict[int, Any] = {}
        self._errors: Dict[int, BaseException] = {}
        self._lock = threading.Lock()

    def _notify(self) -> None:
        if self._progress is not None:
            with self._lock:
                self._progress()

    def _worker(self, func: Callable[[Any], Any]) -> None:
        while True:
            try:
                index, item = self._queue.get_nowait()
            except queue.Empty:
                return
            try:
                result = func(item)
                with self._lock:
                    self._results[index] = result
            except BaseException as e:  # noqa: BLE001
                with self._lock:
                    self._errors[index] = e
            finally:
                self._queue.task_done()
            self._notify()

    def map_ordered(self, func: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        """
        全項目に func を適用し、入力順の結果リストを返す

        Args:
            func: 各項目に適用する関数
            items: 作業項目

        Returns:
            入力順に並んだ結果

        Raises:
            最初（添字の最小）の項目で発生した例外を全ワーカー停止後に再送出
        """
        items = list(items)
        self._results.clear()
        self._errors.clear()

        if self.max_workers == 1 or len(items) <= 1:
            results = []
            for item in items:
                results.append(func(item))
                self._notify()
            return results

        for index, item in enumerate(items):
            self._queue.put((index, item))

        workers = [
            threading.Thread(target=self._worker, args=(func,), daemon=True)
            for _ in range(min(self.max_workers, len(items)))
        ]
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()

        if self._errors:
            first = min(self._errors)
            raise self._errors[first]

        return [self._results[index] for index in range(len(items))]


def performance_log(label="Function"):
    """
    関数の実行時間をDEBUGログに記録するデコレータ

    Args:
        label (str): ログに表示するラベル
    """
    def decorating_function(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            result = func(*args, **kwargs)
            logger.debug(f"[TIMER] {label} took {time.perf_counter() - start_time:.4f} seconds")
            return result
        return wrapper
    return decorating_function
