# src/utils.py

import os
import time
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, TypeVar, Union

import psutil

from src.config import LOG_LEVEL, VCOD_BENCH_THREADS

T = TypeVar("T")
R = TypeVar("R")


def setup_logger(name="vcod_bench", level=None):
    """
    Sets up a logger instance with timestamps and level info.
    Every module logs through the same named logger with a bracketed component tag.
    """
    logger = logging.getLogger(name)
    if not logger.hasHandlers():
        handler = logging.StreamHandler()
        formatter = logging.Formatter("[%(asctime)s] [%(levelname)s] %(message)s")
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    logger.setLevel(level or LOG_LEVEL)
    return logger


logger = setup_logger()


def profile_time(func):
    """
    Decorator for timing function executions.
    Logs execution time at DEBUG level on completion.
    """
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed = time.perf_counter() - start
        logger.debug(f"[Profile] {func.__name__} executed in {elapsed:.3f} seconds")
        return result
    wrapper.__name__ = func.__name__
    wrapper.__doc__ = func.__doc__
    return wrapper


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """
    Worker count: explicit value, then VCOD_BENCH_THREADS, then logical CPUs.
    """
    if requested is not None:
        count = int(requested)
    elif VCOD_BENCH_THREADS:
        count = int(VCOD_BENCH_THREADS)
    else:
        count = psutil.cpu_count(logical=True) or 1
    if count < 1:
        raise ValueError(f"thread count must be >= 1, got {count}")
    return count


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """
    Map fn over items on a thread pool and return results in input order.
    threads == 1 runs inline, so single-threaded runs have no pool overhead.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        return list(executor.map(fn, items))


def ensure_dir_exists(path):
    """
    Utility to create directories if they don't exist.
    """
    if not os.path.exists(path):
        os.makedirs(path, exist_ok=True)
        return True
    return False


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """
    Write to a temp file next to the target, then rename over it.
    """
    path = Path(path)
    ensure_dir_exists(path.parent)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))
